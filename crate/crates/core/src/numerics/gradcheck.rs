//! Central finite-difference verification of tape gradients.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::Result;
use crate::numerics::graph::{Graph, Var};
use crate::numerics::tensor::Tensor;
use crate::rng::{stream, Domain};

/// Norm-wise relative error between the tape gradient and central finite
/// differences of the scalar `Σ c·out`, where `c` is a fixed random seed
/// vector. All `inputs` become leaves in order and are perturbed by `h`.
pub fn relative_error<F>(inputs: &[Tensor], h: f32, build: F) -> Result<f64>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var>,
{
    let eval = |xs: &[Tensor]| -> Result<(Graph, Vec<Var>, Var)> {
        let mut g = Graph::new();
        let vars: Vec<Var> = xs.iter().map(|t| g.leaf(t.clone())).collect();
        let out = build(&mut g, &vars)?;
        Ok((g, vars, out))
    };
    let (mut g, vars, out) = eval(inputs)?;
    let mut rng = stream(0x6ac, Domain::Init, 0);
    let coef: Vec<f32> = (0..g.value(out).len()).map(|_| rng.random_range(-1.0f32..1.0)).collect();
    let weighted = |g: &Graph, out: Var| -> f64 {
        g.value(out).data().iter().zip(&coef).map(|(&o, &c)| f64::from(o) * f64::from(c)).sum()
    };
    g.backward_with_seed(out, &coef)?;

    let (mut diff2, mut ana2, mut num2) = (0.0f64, 0.0f64, 0.0f64);
    let mut xs = inputs.to_vec();
    for (t, &v) in vars.iter().enumerate() {
        let analytic: Vec<f32> = g.grad(v).map(|s| s.to_vec()).unwrap_or_else(|| alloc::vec![0.0; inputs[t].len()]);
        for i in 0..inputs[t].len() {
            let x0 = inputs[t].data()[i];
            let (xp, xm) = (x0 + h, x0 - h);
            xs[t].data_mut()[i] = xp;
            let (gp, _, op) = eval(&xs)?;
            xs[t].data_mut()[i] = xm;
            let (gm, _, om) = eval(&xs)?;
            xs[t].data_mut()[i] = x0;
            let numeric = (weighted(&gp, op) - weighted(&gm, om)) / f64::from(xp - xm);
            let a = f64::from(analytic[i]);
            diff2 += (a - numeric) * (a - numeric);
            ana2 += a * a;
            num2 += numeric * numeric;
        }
    }
    let denom = libm::sqrt(ana2.max(num2)).max(1e-12);
    Ok(libm::sqrt(diff2) / denom)
}
