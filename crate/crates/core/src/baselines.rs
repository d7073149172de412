//! Comparison methods: systematic pps sampling, the Horvitz-Thompson
//! estimator and inference under the ignorable model.

use crate::dist::{normal, sample_inverse_gamma, RandomStream};
use crate::gibbs::ModelVariant;
use crate::sir::{summarize, IntervalEstimate, IntervalKind, Summary};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

/// Systematic pps sample of size `n` after a random shuffle of the frame.
/// Returned indices are sorted.
pub fn systematic_pps<R: RngCore + ?Sized>(nu: &[f64], n: usize, rng: &mut R) -> Result<Vec<usize>> {
    let big_n = nu.len();
    if n == big_n && n > 0 {
        return Ok((0..big_n).collect());
    }
    let mut order: Vec<usize> = (0..big_n).collect();
    order.shuffle(rng);
    let t: f64 = nu.iter().sum();
    let start = crate::dist::open01(rng) * t / n as f64;
    systematic_pps_ordered(nu, &order, n, start)
}

/// Systematic pps over the frame `order` with a fixed start in `[0, t/n)`.
pub fn systematic_pps_ordered(nu: &[f64], order: &[usize], n: usize, start: f64) -> Result<Vec<usize>> {
    let big_n = nu.len();
    if n == 0 || n > big_n {
        return Err(Error::InfeasibleDesign(format!("sample size {n} for population of {big_n}")));
    }
    if nu.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::Domain("size measures must be positive".into()));
    }
    let t: f64 = nu.iter().sum();
    let skip = t / n as f64;
    if let Some(i) = (0..big_n).find(|&i| n as f64 * nu[i] >= t) {
        return Err(Error::InfeasibleDesign(format!("unit {i} is a certainty unit (n*nu = {} >= t = {t})", n as f64 * nu[i])));
    }
    if !(0.0..skip).contains(&start) {
        return Err(Error::Domain(format!("start {start} outside [0, {skip})")));
    }
    let mut picks = Vec::with_capacity(n);
    let mut cum = 0.0;
    let mut k = 0;
    for &i in order {
        cum += nu[i];
        // a unit is shorter than the skip, so it holds at most one point
        if k < n && start + k as f64 * skip < cum {
            picks.push(i);
            k += 1;
        }
    }
    if picks.len() != n {
        return Err(Error::Fault(format!("systematic pps selected {} of {n} units", picks.len())));
    }
    picks.sort_unstable();
    Ok(picks)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HtInterval {
    /// `estimate +- z * sqrt(v)`.
    #[default]
    Rooted,
    /// `estimate +- z * v`, the variance used directly as a half-width scale.
    Literal,
}

impl std::str::FromStr for HtInterval {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rooted" => Ok(HtInterval::Rooted),
            "literal" => Ok(HtInterval::Literal),
            other => Err(Error::Config(format!("unknown HT interval form {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HTResult {
    pub total_hat: f64,
    pub var_hat: f64,
    pub ci: IntervalEstimate,
}

impl HTResult {
    /// The same estimate expressed for the population mean.
    pub fn mean(&self, big_n: usize) -> HTResult {
        let n = big_n as f64;
        HTResult {
            total_hat: self.total_hat / n,
            var_hat: self.var_hat / (n * n),
            ci: IntervalEstimate {
                point: self.ci.point / n,
                lo: self.ci.lo / n,
                hi: self.ci.hi / n,
                ..self.ci
            },
        }
    }
}

/// Horvitz-Thompson total with the with-replacement variance estimator.
pub fn ht_estimate(y_s: &[f64], nu_s: &[f64], t: f64, level: f64, form: HtInterval) -> Result<HTResult> {
    let n = y_s.len();
    if nu_s.len() != n {
        return Err(Error::Domain("y_s and nu_s differ in length".into()));
    }
    if n < 2 {
        return Err(Error::Domain("HT variance needs at least two sampled units".into()));
    }
    if nu_s.iter().any(|v| !(*v > 0.0)) || !(t > 0.0) {
        return Err(Error::Domain("size measures must be positive".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("interval level must be in (0, 1), got {level}")));
    }
    let expanded: Vec<f64> = y_s.iter().zip(nu_s).map(|(y, v)| y * t / v).collect();
    let total_hat = expanded.iter().sum::<f64>() / n as f64;
    let var_hat = expanded.iter().map(|e| (e - total_hat).powi(2)).sum::<f64>() / (n * (n - 1)) as f64;
    let z = normal::quantile(0.5 + level / 2.0);
    let half = match form {
        HtInterval::Rooted => z * var_hat.sqrt(),
        HtInterval::Literal => z * var_hat,
    };
    Ok(HTResult {
        total_hat,
        var_hat,
        ci: IntervalEstimate {
            point: total_hat,
            lo: total_hat - half,
            hi: total_hat + half,
            kind: IntervalKind::Normal,
            level,
        },
    })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IgResult {
    pub ybar: Summary,
    pub ey: Summary,
    pub mean_nonsampled: f64,
}

/// Posterior draws for the ignorable model: the response model fitted to the
/// sample alone under the prior `p(mu, sigma2) ∝ 1/sigma2`, with predictive
/// draws for the non-sampled units.
pub fn ig_infer(
    y_s: &[f64],
    big_n: usize,
    m0: usize,
    level: f64,
    variant: ModelVariant,
    rng: &mut RandomStream,
) -> Result<IgResult> {
    let n = y_s.len();
    if n < 3 {
        return Err(Error::Domain(format!("ignorable-model inference needs n >= 3, got {n}")));
    }
    if big_n < n {
        return Err(Error::Domain(format!("population size {big_n} below sample size {n}")));
    }
    if m0 == 0 {
        return Err(Error::Domain("need at least one posterior draw".into()));
    }
    if variant == ModelVariant::LognormalY && y_s.iter().any(|y| !(*y > 0.0)) {
        return Err(Error::Domain("lognormal response model needs positive responses".into()));
    }
    let w: Vec<f64> = y_s.iter().map(|&y| variant.working(y)).collect();
    let wbar = w.iter().sum::<f64>() / n as f64;
    let ss: f64 = w.iter().map(|x| (x - wbar).powi(2)).sum();
    if !(ss > 0.0) {
        return Err(Error::Fault("zero sample variance in the ignorable model".into()));
    }
    let sum_s: f64 = y_s.iter().sum();
    let n_ns = big_n - n;
    let mut ybar = Vec::with_capacity(m0);
    let mut ey = Vec::with_capacity(m0);
    let mut ns_mean = 0.0;
    for _ in 0..m0 {
        let sigma2 = sample_inverse_gamma((n - 1) as f64 / 2.0, ss / 2.0, rng)?;
        let mu = rng.normal(wbar, (sigma2 / n as f64).sqrt());
        let sd = sigma2.sqrt();
        let mut imputed = 0.0;
        for _ in 0..n_ns {
            let x = rng.normal(mu, sd);
            imputed += match variant {
                ModelVariant::AppendixBLiteral => x,
                ModelVariant::LognormalY => x.exp(),
            };
        }
        if n_ns > 0 {
            ns_mean += imputed / n_ns as f64;
        }
        ybar.push((sum_s + imputed) / big_n as f64);
        ey.push(variant.mean_y(mu, sigma2));
    }
    Ok(IgResult {
        ybar: summarize(&ybar, level)?,
        ey: summarize(&ey, level)?,
        mean_nonsampled: ns_mean / m0 as f64,
    })
}
