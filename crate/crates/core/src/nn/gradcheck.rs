//! Finite-difference verification of the hand-written backward passes.
//!
//! Every gradient in this crate is validated against central differences:
//! perturb one coordinate by ±h, evaluate the scalar loss twice, and compare
//! the quotient to the analytic value. The module exposes the harness and a
//! reportable per-op suite ([`op_suite`]); the full-network sweep lives in
//! [`crate::model::gradcheck_network`].

use crate::nn::ops::{
    batch_norm_masked, batch_norm_masked_backward, channel_dropout, channel_dropout_backward,
    dense_td, dense_td_backward, dilated_conv1d_same, dilated_conv1d_same_backward, glu,
    glu_backward, Activation, BnRunning, Phase, BN_EPS,
};
use crate::nn::{
    combined_loss, combined_loss_backward, concat_channels, concat_channels_backward, Mask,
    Tensor3,
};
use crate::util::stream_seed;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Step size for central differences. With f64 arithmetic this balances
/// truncation error (∝ h²) against cancellation (∝ ulp/h).
pub const GRAD_H: f64 = 1e-5;

/// Threshold for purely linear computations (convolution, dense layers,
/// concatenation), where central differences are exact up to rounding.
pub const TOL_LINEAR: f64 = 1e-6;

/// Threshold for general nonlinear computations.
pub const TOL_GENERAL: f64 = 1e-4;

/// Relative error between an analytic and a numeric derivative:
/// `|a − n| / max(|a|, |n|, 1e-8)`. The floor keeps the comparison
/// meaningful when both values are near zero.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central-difference gradient of `f` at `x`, one coordinate at a time.
pub fn numeric_grad<F: FnMut(&[f64]) -> f64>(mut f: F, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    let mut grad = vec![0.0; x.len()];
    for i in 0..x.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// Worst relative error across a gradient vector.
pub fn max_rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| rel_err(a, n))
        .fold(0.0, f64::max)
}

/// One row of a gradient-check report.
#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckEntry {
    /// What was checked, e.g. `op/conv.dw d=2` or `train/block0.glu.w`.
    pub name: String,
    /// Worst relative error — or, for `flat` rows, the worst absolute
    /// gradient magnitude over both the analytic and numeric sides.
    pub value: f64,
    /// Passing bound on `value`.
    pub bound: f64,
    /// The loss is exactly flat along this tensor (a convolution bias
    /// under train-phase batch norm), so both gradients must vanish
    /// instead of agreeing to a relative tolerance.
    pub flat: bool,
}

impl GradcheckEntry {
    pub fn pass(&self) -> bool {
        self.value < self.bound
    }
}

fn random_data(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
}

fn tensor(seed: u64, b: usize, t: usize, c: usize) -> Tensor3 {
    Tensor3::from_vec(random_data(seed, b * t * c), b, t, c).unwrap()
}

/// Checks every operator's backward pass in isolation against central
/// differences and reports one row per checked gradient. Linear operators
/// (convolution, dense layers, concatenation, dropout scaling, the masked
/// losses off their kinks) are held to [`TOL_LINEAR`]; curved ones (batch
/// statistics, GLU) to [`TOL_GENERAL`]. Deterministic in `seed`.
pub fn op_suite(seed: u64) -> Vec<GradcheckEntry> {
    let s = |label: &str, index| stream_seed(seed, label, index);
    let mut rows = Vec::new();
    let mut row = |name: &str, analytic: &[f64], numeric: &[f64], bound: f64| {
        rows.push(GradcheckEntry {
            name: format!("op/{name}"),
            value: max_rel_err(analytic, numeric),
            bound,
            flat: false,
        });
    };
    // the probe loss Σ r·y drives every output with an independent weight
    let probe = |y: &Tensor3, r: &[f64]| -> f64 { y.data.iter().zip(r).map(|(a, b)| a * b).sum() };

    {
        let (b, t, c_in, c_out) = (2, 8, 3, 4);
        let x = tensor(s("conv", 0), b, t, c_in);
        let w = random_data(s("conv", 1), c_out * c_in * 3);
        let bias = random_data(s("conv", 2), c_out);
        for d in [1usize, 2, 4] {
            let r = random_data(s("conv", 3 + d as u64), b * t * c_out);
            let dy = Tensor3::from_vec(r.clone(), b, t, c_out).unwrap();
            let (dx, dw, db) = dilated_conv1d_same_backward(&x, &w, c_out, d, &dy).unwrap();
            let nx = numeric_grad(
                |v| {
                    let xt = Tensor3::from_vec(v.to_vec(), b, t, c_in).unwrap();
                    probe(&dilated_conv1d_same(&xt, &w, &bias, c_out, d).unwrap(), &r)
                },
                &x.data,
                GRAD_H,
            );
            let nw = numeric_grad(
                |v| probe(&dilated_conv1d_same(&x, v, &bias, c_out, d).unwrap(), &r),
                &w,
                GRAD_H,
            );
            let nb = numeric_grad(
                |v| probe(&dilated_conv1d_same(&x, &w, v, c_out, d).unwrap(), &r),
                &bias,
                GRAD_H,
            );
            row(&format!("conv.dx d={d}"), &dx.data, &nx, TOL_LINEAR);
            row(&format!("conv.dw d={d}"), &dw, &nw, TOL_LINEAR);
            row(&format!("conv.db d={d}"), &db, &nb, TOL_LINEAR);
        }
    }

    {
        let (b, t, c_in, c_out) = (2, 5, 4, 3);
        let x = tensor(s("dense", 0), b, t, c_in);
        let w = random_data(s("dense", 1), c_in * c_out);
        let bias = random_data(s("dense", 2), c_out);
        let r = random_data(s("dense", 3), b * t * c_out);
        for act in [Activation::Linear, Activation::Relu] {
            let y = dense_td(&x, &w, &bias, act).unwrap();
            let dy = Tensor3::from_vec(r.clone(), b, t, c_out).unwrap();
            let (dx, dw, db) = dense_td_backward(&x, &w, act, &y, &dy).unwrap();
            let fwd = |xs: &[f64], ws: &[f64], bs: &[f64]| {
                let xt = Tensor3::from_vec(xs.to_vec(), b, t, c_in).unwrap();
                probe(&dense_td(&xt, ws, bs, act).unwrap(), &r)
            };
            let nx = numeric_grad(|p| fwd(p, &w, &bias), &x.data, GRAD_H);
            let nw = numeric_grad(|p| fwd(&x.data, p, &bias), &w, GRAD_H);
            let nb = numeric_grad(|p| fwd(&x.data, &w, p), &bias, GRAD_H);
            // away from its kinks (random data stays off them) ReLU is linear
            let tag = format!("dense.{act:?}").to_lowercase();
            row(&format!("{tag}.dx"), &dx.data, &nx, TOL_LINEAR);
            row(&format!("{tag}.dw"), &dw, &nw, TOL_LINEAR);
            row(&format!("{tag}.db"), &db, &nb, TOL_LINEAR);
        }
    }

    {
        let (b, t, c) = (2, 7, 3);
        let x = tensor(s("bn", 0), b, t, c);
        let gamma = random_data(s("bn", 1), c);
        let beta = random_data(s("bn", 2), c);
        let r = random_data(s("bn", 3), b * t * c);
        let mut mask = Mask::full(b, t);
        mask.set(0, 6, false);
        mask.set(1, 2, false);
        let running = BnRunning {
            mean: (0..c).map(|i| 0.05 * (i as f64 + 1.0)).collect(),
            var: (0..c).map(|i| 1.0 + 0.2 * i as f64).collect(),
        };
        for phase in [Phase::Train, Phase::Infer] {
            let fwd = |xv: &[f64], gv: &[f64], bv: &[f64]| {
                let xt = Tensor3::from_vec(xv.to_vec(), b, t, c).unwrap();
                let (y, _) = batch_norm_masked(&xt, &mask, gv, bv, &running, phase, BN_EPS).unwrap();
                probe(&y, &r)
            };
            let (_, stats) =
                batch_norm_masked(&x, &mask, &gamma, &beta, &running, phase, BN_EPS).unwrap();
            let dy = Tensor3::from_vec(r.clone(), b, t, c).unwrap();
            let (dx, dgamma, dbeta) =
                batch_norm_masked_backward(&x, &mask, &gamma, &stats, phase, BN_EPS, &dy).unwrap();
            let nx = numeric_grad(|v| fwd(v, &gamma, &beta), &x.data, GRAD_H);
            let ng = numeric_grad(|v| fwd(&x.data, v, &beta), &gamma, GRAD_H);
            let nb = numeric_grad(|v| fwd(&x.data, &gamma, v), &beta, GRAD_H);
            let tag = format!("bn.{phase:?}").to_lowercase();
            // batch statistics make the train pass curved; infer is affine
            let tol_x = if phase == Phase::Train { TOL_GENERAL } else { TOL_LINEAR };
            row(&format!("{tag}.dx"), &dx.data, &nx, tol_x);
            row(&format!("{tag}.dgamma"), &dgamma, &ng, tol_x);
            row(&format!("{tag}.dbeta"), &dbeta, &nb, TOL_LINEAR);
        }
    }

    {
        let (b, t, c) = (2, 6, 4);
        let x = tensor(s("glu", 0), b, t, c);
        let w = random_data(s("glu", 1), c * c);
        let bb = random_data(s("glu", 2), c);
        let v = random_data(s("glu", 3), c * c);
        let cc = random_data(s("glu", 4), c);
        let r = random_data(s("glu", 5), b * t * c);
        let (_, cache) = glu(&x, &w, &bb, &v, &cc).unwrap();
        let dy = Tensor3::from_vec(r.clone(), b, t, c).unwrap();
        let (dx, dw, db, dv, dc) = glu_backward(&x, &w, &v, &cache, &dy).unwrap();
        let fwd = |xs: &[f64], ws: &[f64], bs: &[f64], vs: &[f64], cs: &[f64]| {
            let xt = Tensor3::from_vec(xs.to_vec(), b, t, c).unwrap();
            probe(&glu(&xt, ws, bs, vs, cs).unwrap().0, &r)
        };
        let nx = numeric_grad(|p| fwd(p, &w, &bb, &v, &cc), &x.data, GRAD_H);
        let nw = numeric_grad(|p| fwd(&x.data, p, &bb, &v, &cc), &w, GRAD_H);
        let nb = numeric_grad(|p| fwd(&x.data, &w, p, &v, &cc), &bb, GRAD_H);
        let nv = numeric_grad(|p| fwd(&x.data, &w, &bb, p, &cc), &v, GRAD_H);
        let nc = numeric_grad(|p| fwd(&x.data, &w, &bb, &v, p), &cc, GRAD_H);
        row("glu.dx", &dx.data, &nx, TOL_GENERAL);
        row("glu.dw", &dw, &nw, TOL_GENERAL);
        row("glu.db", &db, &nb, TOL_GENERAL);
        row("glu.dv", &dv, &nv, TOL_GENERAL);
        row("glu.dc", &dc, &nc, TOL_GENERAL);
    }

    {
        let (b, t, c) = (2, 4, 6);
        let x = tensor(s("dropout", 0), b, t, c);
        let r = random_data(s("dropout", 1), b * t * c);
        let p = 0.3;
        let drop_seed = s("dropout", 2);
        let (_, keep) = channel_dropout(&x, p, Phase::Train, drop_seed).unwrap();
        let dy = Tensor3::from_vec(r.clone(), b, t, c).unwrap();
        let dx = channel_dropout_backward(&dy, &keep, p, Phase::Train).unwrap();
        let nx = numeric_grad(
            |v| {
                let xt = Tensor3::from_vec(v.to_vec(), b, t, c).unwrap();
                // fixed seed: the same channels drop on every evaluation
                probe(&channel_dropout(&xt, p, Phase::Train, drop_seed).unwrap().0, &r)
            },
            &x.data,
            GRAD_H,
        );
        row("dropout.dx", &dx.data, &nx, TOL_LINEAR);
    }

    {
        let (b, t) = (2, 3);
        let xa = tensor(s("concat", 0), b, t, 2);
        let xb = tensor(s("concat", 1), b, t, 4);
        let r = random_data(s("concat", 2), b * t * 6);
        let dy = Tensor3::from_vec(r.clone(), b, t, 6).unwrap();
        let parts = concat_channels_backward(&dy, &[2, 4]).unwrap();
        let na = numeric_grad(
            |v| {
                let xt = Tensor3::from_vec(v.to_vec(), b, t, 2).unwrap();
                probe(&concat_channels(&[&xt, &xb]).unwrap(), &r)
            },
            &xa.data,
            GRAD_H,
        );
        let nb = numeric_grad(
            |v| {
                let xt = Tensor3::from_vec(v.to_vec(), b, t, 4).unwrap();
                probe(&concat_channels(&[&xa, &xt]).unwrap(), &r)
            },
            &xb.data,
            GRAD_H,
        );
        row("concat.dx0", &parts[0].data, &na, TOL_LINEAR);
        row("concat.dx1", &parts[1].data, &nb, TOL_LINEAR);
    }

    {
        let (b, t) = (2, 5);
        let preds: Vec<Tensor3> = (0..3).map(|i| tensor(s("loss", i), b, t, 1)).collect();
        let targets: Vec<Tensor3> = (0..3).map(|i| tensor(s("loss", 3 + i), b, t, 1)).collect();
        let mut mask = Mask::full(b, t);
        mask.set(1, 0, false);
        let w = [0.5, 0.3, 0.2];
        let grads = combined_loss_backward(
            [&preds[0], &preds[1], &preds[2]],
            [&targets[0], &targets[1], &targets[2]],
            &mask,
            w,
        )
        .unwrap();
        for k in 0..3 {
            let nk = numeric_grad(
                |v| {
                    let xt = Tensor3::from_vec(v.to_vec(), b, t, 1).unwrap();
                    let ps: [&Tensor3; 3] = match k {
                        0 => [&xt, &preds[1], &preds[2]],
                        1 => [&preds[0], &xt, &preds[2]],
                        _ => [&preds[0], &preds[1], &xt],
                    };
                    combined_loss(ps, [&targets[0], &targets[1], &targets[2]], &mask, w).unwrap()
                },
                &preds[k].data,
                GRAD_H,
            );
            // |·| is piecewise linear; random pred/target stay off the kink
            row(&format!("combined_loss.dpred{k}"), &grads[k].data, &nk, TOL_LINEAR);
        }
    }

    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_vec(seed: u64, n: usize) -> Vec<f64> {
        random_data(seed, n)
    }

    #[test]
    fn harness_agrees_with_a_closed_form_gradient() {
        // f(x) = Σ x_i³ has gradient 3x², a known curved case
        let x = random_vec(50, 10);
        let numeric = numeric_grad(|v| v.iter().map(|a| a * a * a).sum(), &x, GRAD_H);
        let analytic: Vec<f64> = x.iter().map(|a| 3.0 * a * a).collect();
        assert!(max_rel_err(&analytic, &numeric) < 1e-8);
    }

    #[test]
    fn every_operator_passes_its_tolerance() {
        for row in op_suite(9) {
            assert!(row.pass(), "{}: {:.3e} (bound {:.1e})", row.name, row.value, row.bound);
        }
    }

    #[test]
    fn op_suite_is_deterministic_and_covers_every_operator() {
        let a = op_suite(7);
        assert_eq!(a, op_suite(7));
        for op in ["conv", "dense", "bn", "glu", "dropout", "concat", "combined_loss"] {
            assert!(a.iter().any(|r| r.name.contains(op)), "no rows for {op}");
        }
        // both tolerance classes are represented
        assert!(a.iter().any(|r| r.bound == TOL_LINEAR));
        assert!(a.iter().any(|r| r.bound == TOL_GENERAL));
    }
}
