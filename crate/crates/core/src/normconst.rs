//! Log normalising constant of the restricted size density.
//!
//! Given the responses and link parameters, the sizes are independent
//! normals conditioned on their total and restricted to the region where
//! every inclusion probability lies in [0, 1]. The mass of that region is
//! split into a Gaussian closed form, the probability of the coordinate box
//! (a rectangle probability) and the proportion of box-restricted draws that
//! also satisfy the sum constraint (estimated with a short inner Gibbs run).

use crate::dist::{sample_truncated_normal, StructuredCovariance};
use crate::gibbs::{Eta, GibbsState};
use crate::model::ObservedData;
use crate::mvn::{log_mvn_rectangle_prob, Covariance, MvnEstimate, RectangleProblem};
use crate::{Error, Result};
use rand::RngCore;
use serde::{Deserialize, Serialize};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Number of batches used for the batch-means error of the proportion.
const BATCHES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormConstConfig {
    pub inner_burn_in: usize,
    pub inner_draws: usize,
    pub mvn_rel_error: f64,
    pub mvn_abs_error: f64,
    pub mvn_max_points: usize,
    pub mvn_initial_points: usize,
    pub mvn_randomizations: usize,
}

impl Default for NormConstConfig {
    fn default() -> Self {
        Self {
            inner_burn_in: 200,
            inner_draws: 1000,
            mvn_rel_error: 1e-3,
            mvn_abs_error: 0.0,
            mvn_max_points: 1 << 12,
            mvn_initial_points: 16,
            mvn_randomizations: 8,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConstantFlag {
    #[default]
    Ok,
    /// The rectangle probability missed its error target.
    Unconverged,
    /// Some factor is zero, so the constant is zero (`log_c = -inf`).
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstantEstimate {
    pub log_c: f64,
    /// `log N - N log(sqrt(2 pi) sigma_e) - (t^2/N - 2 (t/N) sum(theta)) / (2 sigma_e^2)`.
    pub log_prefactor: f64,
    /// Gaussian integral of the unrestricted kernel.
    pub log_c0_factor: f64,
    /// `log_c0_factor + log_r1_prob`.
    pub log_c0: f64,
    pub log_r1_prob: f64,
    pub r2_proportion: f64,
    /// Approximate standard error of `log_c`.
    pub mc_error: f64,
    pub inner_draws: usize,
    pub flag: ConstantFlag,
}

/// Mean of the unrestricted kernel: `theta_i - mean(theta)` for `i < N`.
pub fn mu_prime(theta: &[f64]) -> Result<Vec<f64>> {
    if theta.len() < 2 {
        return Err(Error::Domain("need at least two units".into()));
    }
    let mean = theta.iter().sum::<f64>() / theta.len() as f64;
    Ok(theta[..theta.len() - 1].iter().map(|v| v - mean).collect())
}

/// Log of the Gaussian integral of the kernel over all of space.
pub fn log_c0_factor(theta: &[f64], sigma_e2: f64) -> Result<f64> {
    let big_n = theta.len();
    let mp = mu_prime(theta)?;
    let sc = StructuredCovariance::new(big_n - 1, sigma_e2)?;
    let sum_mp: f64 = mp.iter().sum();
    let sq_mp: f64 = mp.iter().map(|v| v * v).sum();
    let sq_theta: f64 = theta.iter().map(|v| v * v).sum();
    let exponent = sq_theta - sum_mp * sum_mp - sq_mp;
    Ok(-exponent / (2.0 * sigma_e2) + 0.5 * (big_n - 1) as f64 * LN_2PI + 0.5 * sc.log_det())
}

fn box_bounds(t: f64, n: usize, big_n: usize) -> (f64, f64) {
    let zn = t / big_n as f64;
    (-zn, t / n as f64 - zn)
}

/// `log C0`: the closed-form factor plus the log probability of the
/// coordinate box under the kernel's normal distribution.
pub fn log_c0<R: RngCore + ?Sized>(
    theta: &[f64],
    sigma_e2: f64,
    t: f64,
    n: usize,
    cfg: &NormConstConfig,
    rng: &mut R,
) -> Result<(f64, MvnEstimate)> {
    let big_n = theta.len();
    let factor = log_c0_factor(theta, sigma_e2)?;
    let sc = StructuredCovariance::new(big_n - 1, sigma_e2)?;
    let (lo, hi) = box_bounds(t, n, big_n);
    let mut problem = RectangleProblem::new(
        mu_prime(theta)?,
        Covariance::Structured(sc),
        vec![lo; big_n - 1],
        vec![hi; big_n - 1],
    )?;
    problem.target_rel_error = cfg.mvn_rel_error;
    problem.target_abs_error = cfg.mvn_abs_error;
    problem.max_points = cfg.mvn_max_points;
    problem.initial_points = cfg.mvn_initial_points;
    problem.randomizations = cfg.mvn_randomizations;
    let r1 = log_mvn_rectangle_prob(&problem, rng)?;
    Ok((factor + r1.log_prob, r1))
}

/// Fraction of box-restricted kernel draws whose sum also satisfies the
/// sum constraint, with its batch-means standard error.
///
/// `sum_bounds` defaults to the feasible range `[t/N - t/n, t/N]`; `start`
/// (if inside the box) seeds the chain.
#[allow(clippy::too_many_arguments)]
pub fn r2_proportion<R: RngCore + ?Sized>(
    theta: &[f64],
    sigma_e2: f64,
    t: f64,
    n: usize,
    burn_in: usize,
    inner_draws: usize,
    sum_bounds: Option<(f64, f64)>,
    start: Option<&[f64]>,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let big_n = theta.len();
    let m = big_n - 1;
    if inner_draws < BATCHES {
        return Err(Error::Config(format!("inner_draws must be at least {BATCHES}")));
    }
    let (lo, hi) = box_bounds(t, n, big_n);
    let zn = t / big_n as f64;
    let (s_lo, s_hi) = sum_bounds.unwrap_or((zn - t / n as f64, zn));
    let mp = mu_prime(theta)?;
    let mut z: Vec<f64> = match start {
        Some(s) if s.len() == m && s.iter().all(|v| *v >= lo && *v <= hi) => s.to_vec(),
        _ => mp.iter().map(|v| v.clamp(lo, hi)).collect(),
    };
    let sd = (0.5 * sigma_e2).sqrt();
    let theta_last = theta[m];

    let per_batch = inner_draws / BATCHES;
    let mut batch_hits = vec![0usize; BATCHES];
    let kept = per_batch * BATCHES;
    for scan in 0..burn_in + kept {
        let mut total: f64 = z.iter().sum();
        for i in 0..m {
            let others = total - z[i];
            let mean = 0.5 * (theta[i] - others - theta_last);
            let new = sample_truncated_normal(mean, sd, lo, hi, rng)?;
            total = others + new;
            z[i] = new;
        }
        if scan >= burn_in && total >= s_lo && total <= s_hi {
            batch_hits[(scan - burn_in) / per_batch] += 1;
        }
    }
    let means: Vec<f64> = batch_hits.iter().map(|&h| h as f64 / per_batch as f64).collect();
    let p = means.iter().sum::<f64>() / BATCHES as f64;
    let var = means.iter().map(|v| (v - p).powi(2)).sum::<f64>() / (BATCHES - 1) as f64;
    Ok((p, (var / BATCHES as f64).sqrt()))
}

/// `log C` for responses `y` (all `N` units) and link parameters `eta`.
/// The response parameters do not enter the constant.
pub fn log_c<R: RngCore + ?Sized>(
    y: &[f64],
    eta: &Eta,
    t: f64,
    n: usize,
    cfg: &NormConstConfig,
    start: Option<&[f64]>,
    rng: &mut R,
) -> Result<ConstantEstimate> {
    let big_n = y.len();
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Domain(format!("population total must be positive, got {t}")));
    }
    if !(eta.sigma_e2 > 0.0) || y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("log_c needs finite responses and sigma_e2 > 0".into()));
    }
    if n == 0 || n > big_n || big_n < 2 {
        return Err(Error::Domain(format!("invalid sizes n={n}, N={big_n}")));
    }
    let theta: Vec<f64> = y.iter().map(|v| eta.beta0 + eta.beta1 * v).collect();
    let s2 = eta.sigma_e2;
    let nf = big_n as f64;
    let log_prefactor = nf.ln() - nf * 0.5 * (LN_2PI + s2.ln())
        - (t * t / nf - 2.0 * (t / nf) * theta.iter().sum::<f64>()) / (2.0 * s2);

    let (c0, r1) = log_c0(&theta, s2, t, n, cfg, rng)?;
    let log_c0_factor = c0 - r1.log_prob;
    let (r2, r2_se) = if r1.log_prob == f64::NEG_INFINITY {
        (0.0, 0.0)
    } else {
        r2_proportion(&theta, s2, t, n, cfg.inner_burn_in, cfg.inner_draws, None, start, rng)?
    };

    let log_c = log_prefactor + log_c0_factor + r1.log_prob + r2.ln();
    let flag = if log_c == f64::NEG_INFINITY {
        ConstantFlag::Zero
    } else if !r1.converged {
        ConstantFlag::Unconverged
    } else {
        ConstantFlag::Ok
    };
    let rel_r2 = if r2 > 0.0 { r2_se / r2 } else { 0.0 };
    Ok(ConstantEstimate {
        log_c,
        log_prefactor,
        log_c0_factor,
        log_c0: c0,
        log_r1_prob: r1.log_prob,
        r2_proportion: r2,
        mc_error: ((r1.log_error / 3.0).powi(2) + rel_r2 * rel_r2).sqrt(),
        inner_draws: cfg.inner_draws,
        flag,
    })
}

/// `log C` at a Gibbs state, warm-starting the inner chain at the state's
/// sizes.
pub fn log_c_for_state<R: RngCore + ?Sized>(
    state: &GibbsState,
    data: &ObservedData,
    cfg: &NormConstConfig,
    rng: &mut R,
) -> Result<ConstantEstimate> {
    let head = state.z_head(data);
    log_c(&state.y_full(data), &state.eta, data.t, data.n, cfg, Some(&head), rng)
}
