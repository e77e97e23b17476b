//! Reverse-mode differentiable `f32` tensors and the Adam optimizer.

pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod tensor;

pub use graph::{Graph, Var};
pub use optim::{accumulate_grads, global_norm, warmup_cosine, OptimizerState, ParamStore, StepStats};
pub use tensor::Tensor;

#[cfg(test)]
mod tests {
    use super::gradcheck::relative_error;
    use super::*;
    use crate::rng::{stream, Domain};
    use alloc::vec;
    use alloc::vec::Vec;

    const H: f32 = 1e-3;
    const TOL: f64 = 1e-3;

    fn rand(shape: &[usize], seed: u64) -> Tensor {
        Tensor::randn(shape, 1.0, &mut stream(seed, Domain::Init, 0))
    }

    fn positive(shape: &[usize], seed: u64) -> Tensor {
        let mut t = rand(shape, seed);
        for v in t.data_mut() {
            *v = 0.5 + v.abs();
        }
        t
    }

    fn assert_grad(name: &str, inputs: &[Tensor], build: impl Fn(&mut Graph, &[Var]) -> crate::Result<Var>) {
        let err = relative_error(inputs, H, build).unwrap();
        assert!(err < TOL, "{name}: relative error {err}");
    }

    #[test]
    fn primitives_match_finite_differences() {
        assert_grad("matmul", &[rand(&[5, 7], 1), rand(&[7, 3], 2)], |g, v| g.matmul(v[0], v[1]));
        assert_grad("add", &[rand(&[5, 7], 3), rand(&[5, 7], 4)], |g, v| g.add(v[0], v[1]));
        assert_grad("add_row", &[rand(&[5, 7], 5), rand(&[1, 7], 6)], |g, v| g.add(v[0], v[1]));
        assert_grad("mul", &[rand(&[5, 7], 7), rand(&[5, 7], 8)], |g, v| g.mul(v[0], v[1]));
        assert_grad("mul_row", &[rand(&[5, 7], 9), rand(&[1, 7], 10)], |g, v| g.mul(v[0], v[1]));
        assert_grad("scale", &[rand(&[5, 7], 11)], |g, v| Ok(g.scale(v[0], -1.7)));
        assert_grad("layer_norm", &[rand(&[5, 7], 12), rand(&[1, 7], 13), rand(&[1, 7], 14)], |g, v| {
            g.layer_norm(v[0], v[1], v[2])
        });
        assert_grad("softmax", &[rand(&[5, 7], 15)], |g, v| Ok(g.softmax(v[0])));
        assert_grad("log_softmax", &[rand(&[5, 7], 16)], |g, v| Ok(g.log_softmax(v[0])));
        assert_grad("gelu", &[rand(&[5, 7], 17)], |g, v| Ok(g.gelu(v[0])));
        assert_grad("log", &[positive(&[5, 7], 18)], |g, v| Ok(g.log(v[0])));
        assert_grad("embedding", &[rand(&[5, 7], 19)], |g, v| g.embedding(v[0], &[4, 0, 0, 2]));
        assert_grad("gather", &[rand(&[5, 7], 20)], |g, v| g.gather(v[0], &[0, 6, 3, 3, 1]));
        assert_grad("slice_rows", &[rand(&[5, 7], 21)], |g, v| g.slice_rows(v[0], 1, 4));
        assert_grad("sum", &[rand(&[5, 7], 22)], |g, v| Ok(g.sum(v[0])));
        assert_grad("mean", &[rand(&[5, 7], 23)], |g, v| Ok(g.mean(v[0])));
        let qkv = [rand(&[5, 8], 24), rand(&[5, 8], 25), rand(&[5, 8], 26)];
        assert_grad("icl_attention", &qkv, |g, v| g.icl_attention(v[0], v[1], v[2], 3, 2));
    }

    #[test]
    fn three_layer_network_matches_finite_differences() {
        let inputs: Vec<Tensor> = vec![
            rand(&[5, 7], 30),
            rand(&[7, 6], 31),
            rand(&[1, 6], 32),
            rand(&[6, 6], 33),
            rand(&[1, 6], 34),
            rand(&[6, 4], 35),
        ];
        assert_grad("mlp", &inputs, |g, v| {
            let h = g.matmul(v[0], v[1])?;
            let h = g.add(h, v[2])?;
            let h = g.gelu(h);
            let h = g.matmul(h, v[3])?;
            let h = g.add(h, v[4])?;
            let h = g.gelu(h);
            let logits = g.matmul(h, v[5])?;
            let lp = g.log_softmax(logits);
            let picked = g.gather(lp, &[0, 1, 2, 3, 0])?;
            Ok(g.mean(picked))
        });
    }
}
