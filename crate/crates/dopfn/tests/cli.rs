use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dopfn::checkpoint;
use dopfn::io::read_suite;
use dopfn_core::eval::EvalReport;

fn dopfn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dopfn")).args(args).env_remove("DOPFN_SEED").output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = dopfn(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn code(args: &[&str]) -> i32 {
    dopfn(args).status.code().expect("exit code")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out: Vec<(PathBuf, Vec<u8>)> = walk(dir)
        .into_iter()
        .filter(|p| p.file_name().unwrap() != "manifest.json")
        .map(|p| (p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()))
        .collect();
    out.sort();
    out
}

fn walk(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        } else {
            out.push(p);
        }
    }
    out
}

const TINY_CONFIG: &str = "\
steps = 3
batch_size = 2
warmup = 1
eval_every = 0
grid_pairs = 10
prior.k_min = 2
prior.k_max = 3
prior.m_min = 6
prior.m_max = 24
model.embed_dim = 8
model.n_layers = 1
model.n_heads = 2
model.d_max = 4
model.n_max = 32
model.n_bins = 8
model.mlp_ratio = 2
";

#[test]
fn generate_layout_and_determinism() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    ok(&["generate", "--case", "observed_confounder", "--n", "2", "--seed", "7", "--rows", "20", "--out", s(&a)]);
    ok(&["generate", "--case", "observed_confounder", "--n", "2", "--seed", "7", "--rows", "20", "--out", s(&b)]);
    let subdirs: Vec<_> = fs::read_dir(&a).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).collect();
    assert_eq!(subdirs.len(), 2);
    assert!(a.join("0000/obs.csv").exists() && a.join("0001/pair.json").exists());
    assert_eq!(files(&a), files(&b));
    ok(&["verify", s(&a)]);
}

#[test]
fn generate_all_cases() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("all");
    ok(&["generate", "--case", "all", "--n", "1", "--seed", "1", "--rows", "12", "--out", s(&out)]);
    let dirs = fs::read_dir(&out).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(dirs, 9);
    assert_eq!(walk(&out).iter().filter(|p| p.file_name().unwrap() == "manifest.json").count(), 1);
    assert_eq!(read_suite(&out).unwrap().len(), 9);
}

#[test]
fn seed_falls_back_to_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let run = |out: &Path, env: Option<&str>, flag: Option<&str>| {
        let mut c = Command::new(env!("CARGO_BIN_EXE_dopfn"));
        c.args(["generate", "--case", "front_door", "--n", "1", "--rows", "10", "--out", s(out)])
            .env_remove("DOPFN_SEED");
        if let Some(v) = env {
            c.env("DOPFN_SEED", v);
        }
        if let Some(v) = flag {
            c.args(["--seed", v]);
        }
        assert!(c.status().unwrap().success());
    };
    run(&a, Some("42"), None);
    run(&b, None, Some("42"));
    assert_eq!(files(&a), files(&b));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&["generate", "--case", "nonsense", "--n", "1", "--out", s(tmp.path())]), 2);
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "x").unwrap();
    assert_eq!(code(&["generate", "--case", "back_door", "--n", "1", "--out", s(&blocker.join("sub"))]), 3);
    assert_eq!(code(&["frobnicate"]), 2);

    let (o, q) = (tmp.path().join("o.csv"), tmp.path().join("q.csv"));
    fs::write(&o, "t,x1,y\n0,1,2\n3,1,2\n").unwrap();
    fs::write(&q, "t_in,x1\n1,0\n").unwrap();
    let out = dopfn(&["ingest", "--obs", s(&o), "--queries", s(&q), "--out", s(&tmp.path().join("ing"))]);
    assert_eq!(out.status.code(), Some(5));
    let msg = String::from_utf8_lossy(&out.stderr);
    assert!(msg.contains("line 3") && msg.contains("`t`"), "{msg}");
}

#[test]
fn config_dump_lists_defaults() {
    let out = ok(&["config", "--dump"]);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("steps = 50000\n") && text.contains("batch_size = 8\n") && text.contains("lr = 0.0003\n"));
    let parsed = dopfn::config::parse_str(&text, Path::new(".")).unwrap();
    assert_eq!(parsed.config, dopfn_core::training::TrainConfig::default());
}

#[test]
fn train_evaluate_round_trip_and_replay() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("tiny.cfg");
    fs::write(&cfg, TINY_CONFIG).unwrap();
    let (suite, model, rep) = (tmp.path().join("suite"), tmp.path().join("model"), tmp.path().join("rep"));
    ok(&["generate", "--case", "back_door", "--n", "3", "--seed", "5", "--rows", "16", "--out", s(&suite)]);
    ok(&["train", "--config", s(&cfg), "--out", s(&model), "--seed", "2", "--quiet"]);
    assert!(model.join("train_log.jsonl").exists() && model.join("model_card.json").exists());
    ok(&[
        "evaluate",
        "--model",
        s(&model),
        "--suite",
        s(&suite),
        "--methods",
        "dopfn,knn,s_learner_knn,oracle",
        "--out",
        s(&rep),
        "--n-mc",
        "200",
        "--boot",
        "200",
        "--svg",
    ]);
    let report: EvalReport = serde_json::from_str(&fs::read_to_string(rep.join("report.json")).unwrap()).unwrap();
    assert_eq!(report.records.len(), 12);
    assert!(report.records.iter().all(|r| r.picp.iter().all(|p| (0.0..=1.0).contains(p))));
    assert!(rep.join("nmse_cid.svg").exists() && rep.join("records.csv").exists());

    for dir in [&suite, &model, &rep] {
        let again = tmp.path().join(format!("{}-again", dir.file_name().unwrap().to_str().unwrap()));
        ok(&["replay", "--manifest", s(&dir.join("manifest.json")), "--out", s(&again)]);
        assert_eq!(files(dir), files(&again), "{}", dir.display());
    }

    // a changed config no longer replays
    fs::write(&cfg, format!("{TINY_CONFIG}steps = 4\n")).unwrap();
    assert_eq!(code(&["replay", "--manifest", s(&model.join("manifest.json")), "--out", s(&tmp.path().join("x"))]), 4);
}

#[test]
fn checkpoint_schema_mismatch_needs_force() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("case.cfg");
    fs::write(&cfg, format!("{TINY_CONFIG}prior.case = front_door\nsteps = 1\n")).unwrap();
    let (suite, model) = (tmp.path().join("suite"), tmp.path().join("model"));
    ok(&["generate", "--case", "back_door", "--n", "2", "--seed", "1", "--rows", "16", "--out", s(&suite)]);
    ok(&["train", "--config", s(&cfg), "--out", s(&model), "--quiet"]);
    let args = |out: &Path, force: bool| {
        let mut v = vec!["evaluate", "--model", s(&model), "--suite", s(&suite), "--methods", "dopfn", "--boot", "50"];
        v.extend(["--out", s(out)]);
        if force {
            v.push("--force");
        }
        v.into_iter().map(str::to_string).collect::<Vec<_>>()
    };
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let run = |v: Vec<String>| Command::new(env!("CARGO_BIN_EXE_dopfn")).args(v).output().unwrap().status.code();
    assert_eq!(run(args(&a, false)), Some(4));
    assert_eq!(run(args(&b, true)), Some(0));

    // corrupted weights are caught by the recorded hash
    let bin = model.join(checkpoint::BIN_FILE);
    let mut bytes = fs::read(&bin).unwrap();
    bytes[5] ^= 0x40;
    fs::write(&bin, bytes).unwrap();
    assert_eq!(run(args(&tmp.path().join("c"), false)), Some(4));

    // an edited suite file no longer matches the suite manifest
    fs::write(suite.join("0000/obs.csv"), fs::read_to_string(suite.join("0000/obs.csv")).unwrap() + "1,0.5,0.5\n")
        .unwrap();
    assert_eq!(code(&["evaluate", "--suite", s(&suite), "--methods", "knn", "--out", s(&tmp.path().join("d"))]), 4);
}

#[test]
fn ingest_round_trip_matches_generated_scores() {
    let tmp = tempfile::tempdir().unwrap();
    let suite = tmp.path().join("suite");
    ok(&["generate", "--case", "common_effect", "--n", "1", "--seed", "9", "--rows", "40", "--out", s(&suite)]);
    let ing = tmp.path().join("ing");
    ok(&[
        "ingest",
        "--obs",
        s(&suite.join("0000/obs.csv")),
        "--queries",
        s(&suite.join("0000/queries.csv")),
        "--out",
        s(&ing),
    ]);
    let score = |dir: &Path, out: &Path| -> EvalReport {
        ok(&["evaluate", "--suite", s(dir), "--methods", "knn", "--out", s(out), "--boot", "100"]);
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap()
    };
    let a = score(&suite, &tmp.path().join("ra"));
    let b = score(&ing, &tmp.path().join("rb"));
    assert_eq!((a.records[0].nmse_cid, &a.records[0].picp), (b.records[0].nmse_cid, &b.records[0].picp));
    assert!(b.flags.iter().any(|f| f.starts_with("no_scm")));

    // oracle needs an SCM: recorded as a flag, not an error
    let c = tmp.path().join("rc");
    ok(&["evaluate", "--suite", s(&ing), "--methods", "knn,oracle", "--out", s(&c), "--boot", "10"]);
    let r: EvalReport = serde_json::from_str(&fs::read_to_string(c.join("report.json")).unwrap()).unwrap();
    assert!(r.flags.iter().any(|f| f.starts_with("oracle_unavailable")));

    // queries without y_in: predictions only
    fs::write(tmp.path().join("q.csv"), "t_in,x1\n1,0.5\n0,-0.5\n").unwrap();
    let noy = tmp.path().join("noy");
    ok(&[
        "ingest",
        "--obs",
        s(&suite.join("0000/obs.csv")),
        "--queries",
        s(&tmp.path().join("q.csv")),
        "--out",
        s(&noy),
    ]);
    let d = tmp.path().join("rd");
    ok(&["evaluate", "--suite", s(&noy), "--methods", "knn", "--out", s(&d), "--boot", "10"]);
    let r: EvalReport = serde_json::from_str(&fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(r.records[0].nmse_cid, None);
    assert!(r.flags.iter().any(|f| f.starts_with("no_targets")));
}

#[test]
fn ablate_size_on_small_data() {
    let tmp = tempfile::tempdir().unwrap();
    let suite = tmp.path().join("small");
    ok(&["generate", "--case", "small_data", "--n", "60", "--seed", "3", "--out", s(&suite)]);
    let out = tmp.path().join("ab");
    ok(&[
        "ablate",
        "--axis",
        "size",
        "--suite",
        s(&suite),
        "--methods",
        "knn",
        "--buckets",
        "4",
        "--out",
        s(&out),
        "--boot",
        "10",
    ]);
    let ab: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("ablation.json")).unwrap()).unwrap();
    assert_eq!(ab["buckets"].as_array().unwrap().len(), 4);
    assert_eq!(code(&["ablate", "--axis", "colour", "--suite", s(&suite), "--out", s(&out)]), 2);
}
