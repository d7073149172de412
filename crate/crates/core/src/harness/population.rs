//! Finite populations drawn from the superpopulation.

use crate::dist::RandomStream;
use crate::model::{FinitePopulation, SuperParams};
use crate::{Error, Result};

/// Largest number of consecutive rejected link errors for one unit.
pub const MAX_REJECTIONS: usize = 10_000;

/// Draw `N` units with lognormal responses and linear-Gaussian sizes.
///
/// A unit whose size is non-positive, or so large that it would be a
/// certainty unit for a sample of `n`, has its link error redrawn. The
/// population is therefore a draw from the superpopulation truncated to
/// designs with every inclusion probability below one.
pub fn generate_population(params: &SuperParams, big_n: usize, n: usize, rng: &mut RandomStream) -> Result<FinitePopulation> {
    params.validate()?;
    if n == 0 || n > big_n {
        return Err(Error::InfeasibleDesign(format!("sample size {n} for population of {big_n}")));
    }
    let sigma = params.sigma2.sqrt();
    let sigma_e = params.sigma_e2.sqrt();
    let y: Vec<f64> = (0..big_n).map(|_| rng.normal(params.mu, sigma).exp()).collect();
    let mean_nu = |i: usize| params.beta0 + params.beta1 * y[i];

    let mut rejections = vec![0usize; big_n];
    let draw = |i: usize, rejections: &mut [usize], rng: &mut RandomStream| -> Result<f64> {
        loop {
            let v = rng.normal(mean_nu(i), sigma_e);
            if v > 0.0 {
                return Ok(v);
            }
            rejections[i] += 1;
            if rejections[i] >= MAX_REJECTIONS {
                return Err(Error::Fault(format!(
                    "unit {i}: {MAX_REJECTIONS} consecutive non-positive sizes; parameters {params:?} are infeasible"
                )));
            }
        }
    };
    let mut nu = Vec::with_capacity(big_n);
    for i in 0..big_n {
        nu.push(draw(i, &mut rejections, rng)?);
    }
    if n < big_n {
        loop {
            let t: f64 = nu.iter().sum();
            let offending: Vec<usize> = (0..big_n).filter(|&i| n as f64 * nu[i] >= t).collect();
            if offending.is_empty() {
                break;
            }
            for i in offending {
                rejections[i] += 1;
                if rejections[i] >= MAX_REJECTIONS {
                    return Err(Error::Fault(format!(
                        "unit {i}: {MAX_REJECTIONS} consecutive certainty-unit sizes; parameters {params:?} are infeasible"
                    )));
                }
                nu[i] = draw(i, &mut rejections, rng)?;
            }
        }
    }
    FinitePopulation::new(y, nu)
}

/// Pearson correlation of responses and sizes.
pub fn correlation(pop: &FinitePopulation) -> f64 {
    let n = pop.size() as f64;
    let my = pop.mean_y();
    let mv = pop.t / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (y, v) in pop.y.iter().zip(&pop.nu) {
        sxy += (y - my) * (v - mv);
        sxx += (y - my).powi(2);
        syy += (v - mv).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}
