//! Dataset pairs on disk: `obs.csv`, `queries.csv` and a `pair.json` sidecar
//! per dataset, one numbered subdirectory per suite member.

use std::fs;
use std::path::{Path, PathBuf};

use dopfn_core::prior::{DatasetPair, ObsRow, PriorConfig, Query};
use dopfn_core::scm::Scm;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

pub const OBS_FILE: &str = "obs.csv";
pub const QUERIES_FILE: &str = "queries.csv";
pub const SIDECAR_FILE: &str = "pair.json";

/// Flag recorded for pairs without a generating SCM.
pub const FLAG_NO_SCM: &str = "no_scm";
/// Flag recorded for pairs whose queries carry no `y_in`.
pub const FLAG_NO_TARGETS: &str = "no_targets";

/// Provenance and ground truth stored next to the CSV tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairSidecar {
    pub case_id: Option<String>,
    pub dataset_idx: usize,
    pub seed: Option<u64>,
    pub prior: Option<PriorConfig>,
    pub n_features: usize,
    pub m_ob: usize,
    pub m_in: usize,
    pub flags: Vec<String>,
    pub scm: Option<Scm>,
}

impl PairSidecar {
    pub fn describe(pair: &DatasetPair, case_id: Option<&str>, dataset_idx: usize) -> Self {
        let mut flags = Vec::new();
        if pair.scm.is_none() {
            flags.push(FLAG_NO_SCM.to_string());
        }
        if pair.targets.is_none() {
            flags.push(FLAG_NO_TARGETS.to_string());
        }
        PairSidecar {
            case_id: case_id.map(str::to_string),
            dataset_idx,
            seed: None,
            prior: None,
            n_features: pair.n_features,
            m_ob: pair.m_ob(),
            m_in: pair.m_in(),
            flags,
            scm: pair.scm.clone(),
        }
    }
}

pub fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::unwritable(path, e))
}

pub fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| CliError::unwritable(path, e))
}

pub fn read_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| CliError::read(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::format(path, e))?;
    text.push('\n');
    write_file(path, text)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    serde_json::from_str(&read_string(path)?).map_err(|e| CliError::format(path, e))
}

fn header(first: &str, d: usize, last: Option<&str>) -> Vec<String> {
    let mut h = vec![first.to_string()];
    h.extend((1..=d).map(|j| format!("x{j}")));
    h.extend(last.map(str::to_string));
    h
}

fn csv_bytes(rows: impl Iterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.write_record(&r).expect("writing to memory");
    }
    w.into_inner().expect("flushing to memory")
}

/// `t,x1..xd,y` rows in shortest round-trip decimal form.
pub fn obs_csv(pair: &DatasetPair) -> Vec<u8> {
    let head = header("t", pair.n_features, Some("y"));
    let body = pair.obs.iter().map(|r| {
        let mut v = vec![r.t.to_string()];
        v.extend(r.x.iter().map(f64::to_string));
        v.push(r.y.to_string());
        v
    });
    csv_bytes(std::iter::once(head).chain(body))
}

/// `t_in,x1..xd[,y_in]` rows.
pub fn queries_csv(pair: &DatasetPair) -> Vec<u8> {
    let targets = pair.targets.as_deref();
    let head = header("t_in", pair.n_features, targets.map(|_| "y_in"));
    let body = pair.queries.iter().enumerate().map(|(i, q)| {
        let mut v = vec![q.t.to_string()];
        v.extend(q.x.iter().map(f64::to_string));
        if let Some(y) = targets {
            v.push(y[i].to_string());
        }
        v
    });
    csv_bytes(std::iter::once(head).chain(body))
}

pub fn write_pair(dir: &Path, pair: &DatasetPair, sidecar: &PairSidecar) -> Result<()> {
    create_dir(dir)?;
    write_file(&dir.join(OBS_FILE), obs_csv(pair))?;
    write_file(&dir.join(QUERIES_FILE), queries_csv(pair))?;
    write_json(&dir.join(SIDECAR_FILE), sidecar)
}

struct Table {
    file: String,
    header: Vec<String>,
    rows: Vec<(usize, csv::StringRecord)>,
}

fn schema(file: &str, line: usize, column: &str, message: impl Into<String>) -> CliError {
    CliError::Schema { file: file.to_string(), line, column: column.to_string(), message: message.into() }
}

fn read_table(path: &Path) -> Result<Table> {
    let file = path.display().to_string();
    let text = read_string(path)?;
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(true).from_reader(text.as_bytes());
    let header: Vec<String> =
        rdr.headers().map_err(|e| schema(&file, 1, "", e.to_string()))?.iter().map(|h| h.trim().to_string()).collect();
    if header.iter().all(String::is_empty) {
        return Err(schema(&file, 1, "", "missing header row"));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() as usize);
            schema(&file, line, "", e.to_string())
        })?;
        let line = rec.position().map_or(rows.len() + 2, |p| p.line() as usize);
        if rec.len() != header.len() {
            return Err(schema(&file, line, "", format!("expected {} fields, found {}", header.len(), rec.len())));
        }
        rows.push((line, rec));
    }
    Ok(Table { file, header, rows })
}

/// Number of covariates implied by `first,x1..xd[,last]`, checking names and order.
fn check_header(t: &Table, first: &str, last: &str, last_required: bool) -> Result<(usize, bool)> {
    let h = &t.header;
    if h.first().map(String::as_str) != Some(first) {
        return Err(schema(
            &t.file,
            1,
            h.first().map_or("", |s| s.as_str()),
            format!("first column must be `{first}`"),
        ));
    }
    let has_last = h.len() > 1 && h.last().map(String::as_str) == Some(last);
    if last_required && !has_last {
        return Err(schema(&t.file, 1, h.last().map_or("", |s| s.as_str()), format!("last column must be `{last}`")));
    }
    let d = h.len() - 1 - usize::from(has_last);
    for (j, name) in h[1..1 + d].iter().enumerate() {
        if *name != format!("x{}", j + 1) {
            return Err(schema(&t.file, 1, name, format!("expected covariate column `x{}`", j + 1)));
        }
    }
    Ok((d, has_last))
}

fn parse_t(t: &Table, line: usize, column: &str, raw: &str) -> Result<u8> {
    match raw.trim() {
        "0" => Ok(0),
        "1" => Ok(1),
        other => Err(schema(&t.file, line, column, format!("treatment must be 0 or 1, got `{other}`"))),
    }
}

fn parse_real(t: &Table, line: usize, column: &str, raw: &str) -> Result<f64> {
    match raw.trim().parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(schema(&t.file, line, column, format!("expected a finite number, got `{}`", raw.trim()))),
    }
}

/// Observational and query tables validated against the documented schema.
pub fn read_tables(obs_path: &Path, queries_path: &Path) -> Result<DatasetPair> {
    let obs_t = read_table(obs_path)?;
    let (d, _) = check_header(&obs_t, "t", "y", true)?;
    if obs_t.rows.is_empty() {
        return Err(schema(&obs_t.file, 2, "", "no observational rows"));
    }
    let mut obs = Vec::with_capacity(obs_t.rows.len());
    for (line, rec) in &obs_t.rows {
        let t = parse_t(&obs_t, *line, "t", &rec[0])?;
        let x =
            (0..d).map(|j| parse_real(&obs_t, *line, &obs_t.header[j + 1], &rec[j + 1])).collect::<Result<Vec<_>>>()?;
        let y = parse_real(&obs_t, *line, "y", &rec[d + 1])?;
        obs.push(ObsRow { t, x, y });
    }

    let q_t = read_table(queries_path)?;
    let (dq, has_y) = check_header(&q_t, "t_in", "y_in", false)?;
    if dq != d {
        return Err(schema(&q_t.file, 1, "", format!("{dq} covariate columns, observational table has {d}")));
    }
    let mut queries = Vec::with_capacity(q_t.rows.len());
    let mut targets = Vec::with_capacity(q_t.rows.len());
    for (line, rec) in &q_t.rows {
        let t = parse_t(&q_t, *line, "t_in", &rec[0])?;
        let x = (0..d).map(|j| parse_real(&q_t, *line, &q_t.header[j + 1], &rec[j + 1])).collect::<Result<Vec<_>>>()?;
        if has_y {
            targets.push(parse_real(&q_t, *line, "y_in", &rec[d + 1])?);
        }
        queries.push(Query { t, x });
    }
    Ok(DatasetPair { n_features: d, obs, queries, targets: has_y.then_some(targets), scm: None })
}

/// One dataset directory: tables plus sidecar (the SCM, when present, is reattached).
pub fn read_pair(dir: &Path) -> Result<(DatasetPair, PairSidecar)> {
    let mut pair = read_tables(&dir.join(OBS_FILE), &dir.join(QUERIES_FILE))?;
    let side_path = dir.join(SIDECAR_FILE);
    let sidecar =
        if side_path.exists() { read_json::<PairSidecar>(&side_path)? } else { PairSidecar::describe(&pair, None, 0) };
    if let Some(scm) = &sidecar.scm {
        if scm.n_covariates() != pair.n_features {
            return Err(CliError::format(side_path, "SCM covariate count disagrees with the tables"));
        }
        pair.scm = Some(scm.clone());
    }
    Ok((pair, sidecar))
}

/// A member of a suite directory tree.
#[derive(Clone, Debug)]
pub struct SuiteMember {
    pub case_id: String,
    pub dataset_idx: usize,
    pub dir: PathBuf,
    pub pair: DatasetPair,
    pub sidecar: PairSidecar,
}

fn sorted_subdirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::read(dir, e))? {
        let path = entry.map_err(|e| CliError::read(dir, e))?.path();
        if path.is_dir() {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn load_member(dir: &Path) -> Result<SuiteMember> {
    let (pair, sidecar) = read_pair(dir)?;
    let case_id = sidecar.case_id.clone().unwrap_or_else(|| "external".to_string());
    Ok(SuiteMember { case_id, dataset_idx: sidecar.dataset_idx, dir: dir.to_path_buf(), pair, sidecar })
}

/// Every dataset under `dir`: the directory itself, its numbered children, or
/// one level of per-case directories holding numbered children.
pub fn read_suite(dir: &Path) -> Result<Vec<SuiteMember>> {
    if dir.join(OBS_FILE).exists() {
        return Ok(vec![load_member(dir)?]);
    }
    let mut out = Vec::new();
    for sub in sorted_subdirs(dir)? {
        if sub.join(OBS_FILE).exists() {
            out.push(load_member(&sub)?);
        } else {
            for leaf in sorted_subdirs(&sub)? {
                if leaf.join(OBS_FILE).exists() {
                    out.push(load_member(&leaf)?);
                }
            }
        }
    }
    if out.is_empty() {
        return Err(CliError::format(dir, "no datasets found"));
    }
    Ok(out)
}

pub fn member_dir_name(idx: usize) -> String {
    format!("{idx:04}")
}
