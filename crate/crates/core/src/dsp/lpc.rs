//! Linear prediction: autocorrelation, the Levinson-Durbin solve and the
//! LPC-to-cepstrum recursion.
//!
//! Conventions: the predictor polynomial is `A(z) = 1 + sum a_k z^-k`, so
//! the coefficients returned here are the ones that minimize the forward
//! prediction error when the predictor is `-sum a_k x[n-k]`. The cepstrum
//! recursion below assumes exactly this sign convention.

use crate::error::{Error, Result};

/// Biased, unnormalized autocorrelation `r[k] = sum x[n] x[n-k]` for
/// `k = 0..=max_lag`. Any global scale cancels in the LPC coefficients.
pub fn autocorr(frame: &[f64], max_lag: usize) -> Vec<f64> {
    assert!(max_lag < frame.len(), "lag must be below the frame length");
    let mut r = vec![0.0; max_lag + 1];
    for (k, rk) in r.iter_mut().enumerate() {
        *rk = crate::util::dot(&frame[k..], &frame[..frame.len() - k]);
    }
    r
}

/// Result of a Levinson-Durbin solve.
#[derive(Debug, Clone)]
pub struct LpcSolution {
    /// Coefficients a_1..a_p of `A(z) = 1 + sum a_k z^-k`.
    pub coeffs: Vec<f64>,
    /// Final prediction error energy.
    pub gain: f64,
    /// True if a reflection coefficient had to be clamped to keep `A(z)`
    /// minimum phase (numerically marginal frame).
    pub clamped: bool,
}

const REFLECTION_LIMIT: f64 = 0.999999;

/// Levinson-Durbin recursion for the order-`p` Toeplitz normal equations.
pub fn levinson(r: &[f64], p: usize) -> Result<LpcSolution> {
    assert!(r.len() > p, "need p+1 autocorrelation lags");
    if !(r[0] > 0.0) || !r[0].is_finite() {
        return Err(Error::DegenerateFrame);
    }
    let mut a = vec![0.0; p + 1]; // a[0] = 1 implicit in index 0
    a[0] = 1.0;
    let mut e = r[0];
    let mut clamped = false;
    for m in 1..=p {
        let mut acc = r[m];
        for j in 1..m {
            acc += a[j] * r[m - j];
        }
        let mut k = -acc / e;
        if k.abs() >= 1.0 {
            k = k.signum() * REFLECTION_LIMIT;
            clamped = true;
        }
        // a_j <- a_j + k * a_{m-j}, done symmetrically in place
        for j in 1..=m / 2 {
            let lo = a[j] + k * a[m - j];
            let hi = a[m - j] + k * a[j];
            a[j] = lo;
            a[m - j] = hi;
        }
        a[m] = k;
        e *= 1.0 - k * k;
    }
    Ok(LpcSolution { coeffs: a[1..].to_vec(), gain: e, clamped })
}

/// Cepstral coefficients c_1..c_n of the all-pole model `1/A(z)` via the
/// standard recursion:
///
/// c_n = -a_n - (1/n) sum_{k=1}^{n-1} k c_k a_{n-k}        for n <= p
/// c_n =       -(1/n) sum_{k=n-p}^{n-1} k c_k a_{n-k}      for n >  p
pub fn lpc_to_cepstrum(a: &[f64], n_ceps: usize) -> Vec<f64> {
    let p = a.len();
    let mut c = vec![0.0; n_ceps];
    for n in 1..=n_ceps {
        let mut acc = if n <= p { -a[n - 1] * n as f64 } else { 0.0 };
        let k_lo = n.saturating_sub(p).max(1);
        for k in k_lo..n {
            acc -= k as f64 * c[k - 1] * a[n - k - 1];
        }
        c[n - 1] = acc / n as f64;
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn autocorr_impulse() {
        let mut x = vec![0.0; 32];
        x[0] = 1.0;
        let r = autocorr(&x, 8);
        assert_eq!(r[0], 1.0);
        assert!(r[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn autocorr_zeros() {
        let r = autocorr(&[0.0; 64], 10);
        assert!(r.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn autocorr_matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x: Vec<f64> = (0..480).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = autocorr(&x, 17);
        for k in 0..=17 {
            let mut want = 0.0;
            for n in k..x.len() {
                want += x[n] * x[n - k];
            }
            assert!((r[k] - want).abs() <= 1e-12 * want.abs().max(1.0));
        }
    }

    #[test]
    fn levinson_order_one() {
        let sol = levinson(&[1.0, 0.5], 1).unwrap();
        assert!((sol.coeffs[0] + 0.5).abs() < 1e-15);
        assert!((sol.gain - 0.75).abs() < 1e-15);
        assert!(!sol.clamped);
    }

    #[test]
    fn levinson_white_signal() {
        let sol = levinson(&[1.0, 0.0, 0.0, 0.0, 0.0], 4).unwrap();
        assert!(sol.coeffs.iter().all(|&v| v == 0.0));
        assert!((sol.gain - 1.0).abs() < 1e-15);
    }

    #[test]
    fn levinson_degenerate_errors() {
        assert!(matches!(levinson(&[0.0, 0.0], 1), Err(Error::DegenerateFrame)));
        assert!(matches!(levinson(&[-1.0, 0.0], 1), Err(Error::DegenerateFrame)));
    }

    /// Autocorrelation of a known stable AR process, solved both by the
    /// recursion and by a dense Toeplitz solve. Solution accuracy is the
    /// usual vector-relative error |Δa|∞ / max(1, |a|∞).
    #[test]
    fn levinson_matches_dense_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for case in 0..100 {
            let p = 1 + case % 17;
            let r = random_positive_definite_autocorr(&mut rng, p + 1);
            let sol = levinson(&r, p).unwrap();
            let dense = dense_toeplitz_solve(&r, p);
            let diff =
                sol.coeffs.iter().zip(&dense).map(|(a, d)| (a - d).abs()).fold(0.0, f64::max);
            let scale = dense.iter().fold(1.0f64, |m, d| m.max(d.abs()));
            assert!(
                diff < 1e-10 * scale,
                "order {p}: vector rel err {:.3e}",
                diff / scale
            );
        }
    }

    #[test]
    fn cepstrum_order_one_closed_form() {
        // a1 = -0.5: c_n = 0.5^n / n
        let c = lpc_to_cepstrum(&[-0.5], 3);
        assert!((c[0] - 0.5).abs() < 1e-12);
        assert!((c[1] - 0.125).abs() < 1e-12);
        assert!((c[2] - 0.0416667).abs() < 1e-7);
    }

    #[test]
    fn cepstrum_of_white_model_is_zero() {
        let c = lpc_to_cepstrum(&[0.0; 8], 30);
        assert!(c.iter().all(|&v| v == 0.0));
    }

    /// The recursion against a log-spectrum route: c_n should match the
    /// inverse DFT of log|1/A| on a dense grid.
    #[test]
    fn cepstrum_matches_spectral_log_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for order in 1..=17 {
            let a = random_stable_lpc(&mut rng, order);
            let c = lpc_to_cepstrum(&a, 30);
            let oracle = spectral_log_cepstrum(&a, 30, 4096);
            for n in 0..30 {
                assert!(
                    (c[n] - oracle[n]).abs() < 1e-6,
                    "order {order} c_{}: {} vs {}",
                    n + 1,
                    c[n],
                    oracle[n]
                );
            }
        }
    }

    // ---- test oracles -------------------------------------------------

    /// Dense solve of the Toeplitz system R a = -r via nalgebra LU, with
    /// one step of iterative refinement so the oracle's own rounding error
    /// sits well below the 1e-10 comparison tolerance.
    pub fn dense_toeplitz_solve(r: &[f64], p: usize) -> Vec<f64> {
        let mat = nalgebra::DMatrix::from_fn(p, p, |i, j| r[i.abs_diff(j)]);
        let rhs = nalgebra::DVector::from_fn(p, |i, _| -r[i + 1]);
        let lu = mat.clone().lu();
        let mut sol = lu.solve(&rhs).expect("toeplitz system is singular");
        let residual = &rhs - &mat * &sol;
        if let Some(correction) = lu.solve(&residual) {
            sol += correction;
        }
        sol.iter().cloned().collect()
    }

    /// Autocorrelation sequence of a random stable AR(p) filter driven by
    /// unit white noise, computed by long impulse-response summation.
    pub fn random_positive_definite_autocorr(rng: &mut ChaCha8Rng, lags: usize) -> Vec<f64> {
        let order = lags.max(2);
        let a = random_stable_lpc(rng, order);
        // impulse response of 1/A(z)
        let n = 4096;
        let mut h = vec![0.0; n];
        h[0] = 1.0;
        for i in 1..n {
            let mut acc = 0.0;
            for (k, ak) in a.iter().enumerate() {
                if i > k {
                    acc -= ak * h[i - 1 - k];
                }
            }
            h[i] = acc;
        }
        (0..lags)
            .map(|lag| (lag..n).map(|i| h[i] * h[i - lag]).sum())
            .collect()
    }

    /// Random minimum-phase A(z) built by multiplying out conjugate pole
    /// pairs (plus one real pole for odd orders). Radii stay in
    /// [0.30, 0.70]: resonant enough to be interesting, but far enough
    /// from the unit circle that the Toeplitz systems stay well
    /// conditioned and the cepstrum decays fast against grid aliasing.
    pub fn random_stable_lpc(rng: &mut ChaCha8Rng, order: usize) -> Vec<f64> {
        let mut a = vec![1.0];
        let mut left = order;
        if left % 2 == 1 {
            let r: f64 = rng.gen_range(-0.70..0.70);
            a = poly_mul(&a, &[1.0, -r]);
            left -= 1;
        }
        for _ in 0..left / 2 {
            let r: f64 = rng.gen_range(0.30..0.70);
            let th: f64 = rng.gen_range(0.1..std::f64::consts::PI - 0.1);
            a = poly_mul(&a, &[1.0, -2.0 * r * th.cos(), r * r]);
        }
        a[1..].to_vec()
    }

    fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; a.len() + b.len() - 1];
        for (i, &ai) in a.iter().enumerate() {
            for (j, &bj) in b.iter().enumerate() {
                out[i + j] += ai * bj;
            }
        }
        out
    }

    /// c_n from the log magnitude spectrum of 1/A on an `n_grid`-point
    /// grid: the inverse DFT of an even real sequence, evaluated as a
    /// cosine sum. For minimum-phase A the one-sided cepstrum is twice the
    /// real cepstrum.
    pub fn spectral_log_cepstrum(a: &[f64], n_ceps: usize, n_grid: usize) -> Vec<f64> {
        let log_mag: Vec<f64> = (0..n_grid)
            .map(|k| {
                let w = 2.0 * std::f64::consts::PI * k as f64 / n_grid as f64;
                let mut re = 1.0;
                let mut im = 0.0;
                for (j, aj) in a.iter().enumerate() {
                    let ang = w * (j + 1) as f64;
                    re += aj * ang.cos();
                    im -= aj * ang.sin();
                }
                -0.5 * (re * re + im * im).ln() // log |1/A|
            })
            .collect();
        (1..=n_ceps)
            .map(|n| {
                let mut acc = 0.0;
                for (k, lm) in log_mag.iter().enumerate() {
                    let w = 2.0 * std::f64::consts::PI * k as f64 / n_grid as f64;
                    acc += lm * (w * n as f64).cos();
                }
                2.0 * acc / n_grid as f64
            })
            .collect()
    }
}
