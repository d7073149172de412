//! Sampling importance resampling of Gibbs output and posterior summaries.
//!
//! Gibbs draws target the posterior with the restricted size density's
//! normalising constant left out, so each draw is weighted by `1/C` and a
//! subsample is drawn without replacement.

use crate::dist::{log_sum_exp, RandomStream};
use crate::gibbs::{run_gibbs, Diagnostics, GibbsConfig, GibbsState, ModelVariant};
use crate::model::ObservedData;
use crate::normconst::{log_c_for_state, ConstantEstimate, NormConstConfig};
use crate::{Error, Result};
use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GibbsDraw {
    pub state: GibbsState,
    pub constant: ConstantEstimate,
}

#[derive(Clone, Debug)]
pub struct WeightedDraws {
    pub draws: Vec<GibbsDraw>,
    /// Unnormalised log weights, `-log_c`; `-inf` for zero-weight draws.
    pub log_weights: Vec<f64>,
    pub normalized: Vec<f64>,
}

impl WeightedDraws {
    /// Effective sample size `1 / sum(w^2)`.
    pub fn ess(&self) -> f64 {
        ess(&self.normalized)
    }
}

pub fn ess(normalized: &[f64]) -> f64 {
    1.0 / normalized.iter().map(|w| w * w).sum::<f64>()
}

/// Normalised weights proportional to `exp(-log_c)`.
pub fn normalized_weights(log_c: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    if let Some(v) = log_c.iter().find(|v| v.is_nan() || **v == f64::INFINITY) {
        return Err(Error::Fault(format!("invalid log constant {v}")));
    }
    let log_w: Vec<f64> = log_c
        .iter()
        .map(|&c| if c == f64::NEG_INFINITY { f64::NEG_INFINITY } else { -c })
        .collect();
    let total = log_sum_exp(&log_w);
    if total == f64::NEG_INFINITY {
        return Err(Error::Fault("every importance weight is zero".into()));
    }
    let w = log_w.iter().map(|l| (l - total).exp()).collect();
    Ok((log_w, w))
}

pub fn compute_weights(draws: Vec<GibbsDraw>) -> Result<WeightedDraws> {
    let log_c: Vec<f64> = draws.iter().map(|d| d.constant.log_c).collect();
    let (log_weights, normalized) = normalized_weights(&log_c)?;
    Ok(WeightedDraws {
        draws,
        log_weights,
        normalized,
    })
}

/// Indices of `m0` draws chosen without replacement, in selection order.
///
/// Uses exponential keys `ln(u)/w`: the largest key is a draw from `w`, the
/// next largest a draw from the renormalised remainder, and so on, which is
/// the sequential pick-and-renormalise scheme.
pub fn resample_without_replacement<R: RngCore + ?Sized>(
    weights: &[f64],
    m0: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let positive = weights.iter().filter(|w| **w > 0.0).count();
    if m0 > positive {
        return Err(Error::Fault(format!(
            "cannot draw {m0} without replacement from {positive} positive weights"
        )));
    }
    let mut keys: Vec<(f64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| {
            let u = crate::dist::open01(rng);
            let key = if w > 0.0 { u.ln() / w } else { f64::NEG_INFINITY };
            (key, i)
        })
        .collect();
    keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(keys.into_iter().take(m0).map(|(_, i)| i).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IntervalKind {
    EqualTail,
    Hpd,
    /// Symmetric normal-theory interval around a point estimate.
    Normal,
}

impl std::str::FromStr for IntervalKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "equal-tail" | "et" => Ok(IntervalKind::EqualTail),
            "hpd" | "HPD" => Ok(IntervalKind::Hpd),
            other => Err(Error::Config(format!("unknown interval kind {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntervalEstimate {
    pub point: f64,
    pub lo: f64,
    pub hi: f64,
    pub kind: IntervalKind,
    pub level: f64,
}

impl IntervalEstimate {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn covers(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub equal_tail: IntervalEstimate,
    pub hpd: IntervalEstimate,
}

impl Summary {
    pub fn get(&self, kind: IntervalKind) -> Result<&IntervalEstimate> {
        match kind {
            IntervalKind::EqualTail => Ok(&self.equal_tail),
            IntervalKind::Hpd => Ok(&self.hpd),
            IntervalKind::Normal => Err(Error::Config("posterior summaries carry equal-tail and HPD intervals only".into())),
        }
    }
}

/// Posterior mean with equal-tail and HPD intervals, both spanning
/// `ceil(level * M)` consecutive order statistics.
pub fn summarize(samples: &[f64], level: f64) -> Result<Summary> {
    if samples.is_empty() {
        return Err(Error::Domain("cannot summarise an empty sample".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Domain(format!("interval level must be in (0, 1), got {level}")));
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fault("non-finite posterior sample".into()));
    }
    let m = samples.len();
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let point = samples.iter().sum::<f64>() / m as f64;
    let k = ((level * m as f64).ceil() as usize).clamp(1, m);

    let et = (m - k) / 2;
    let hpd = (0..=m - k)
        .min_by(|&a, &b| (x[a + k - 1] - x[a]).total_cmp(&(x[b + k - 1] - x[b])))
        .unwrap_or(0);
    let interval = |start: usize, kind| IntervalEstimate {
        point,
        lo: x[start],
        hi: x[start + k - 1],
        kind,
        level,
    };
    Ok(Summary {
        equal_tail: interval(et, IntervalKind::EqualTail),
        hpd: interval(hpd, IntervalKind::Hpd),
    })
}

/// Finite-population mean and superpopulation mean at one draw.
pub fn finite_population_functionals(state: &GibbsState, data: &ObservedData, variant: ModelVariant) -> (f64, f64) {
    let total: f64 = data.y_s.iter().chain(&state.y_ns).sum();
    let ybar = total / data.big_n as f64;
    (ybar, variant.mean_y(state.psi.mu, state.psi.sigma2))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NigSettings {
    pub gibbs: GibbsConfig,
    pub constants: NormConstConfig,
    pub m0: usize,
    pub level: f64,
}

impl Default for NigSettings {
    fn default() -> Self {
        Self {
            gibbs: GibbsConfig::default(),
            constants: NormConstConfig::default(),
            m0: 200,
            level: 0.95,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct NigResult {
    pub ybar: Summary,
    pub ey: Summary,
    /// Posterior mean of the average non-sampled response.
    pub mean_nonsampled: f64,
    pub ess: f64,
    pub zero_weight_draws: usize,
    pub diagnostics: Diagnostics,
}

/// Gibbs sampling, normalising constants for every retained draw, and SIR.
///
/// Constants are computed in parallel, each on its own substream, so the
/// result does not depend on the thread count.
pub fn nig_infer(data: &ObservedData, settings: &NigSettings, rng: &RandomStream) -> Result<NigResult> {
    let run = run_gibbs(data, &settings.gibbs, &mut rng.substream(&[0]))?;
    let constants: Vec<ConstantEstimate> = run
        .states
        .par_iter()
        .enumerate()
        .map(|(k, s)| log_c_for_state(s, data, &settings.constants, &mut rng.substream(&[1, k as u64])))
        .collect::<Result<_>>()?;
    let draws: Vec<GibbsDraw> = run
        .states
        .into_iter()
        .zip(constants)
        .map(|(state, constant)| GibbsDraw { state, constant })
        .collect();
    let weighted = compute_weights(draws)?;
    let zero_weight_draws = weighted.normalized.iter().filter(|w| **w == 0.0).count();
    let picks = resample_without_replacement(&weighted.normalized, settings.m0, &mut rng.substream(&[2]))?;

    let variant = settings.gibbs.variant;
    let mut ybar = Vec::with_capacity(picks.len());
    let mut ey = Vec::with_capacity(picks.len());
    let mut ns_mean = 0.0;
    for &i in &picks {
        let s = &weighted.draws[i].state;
        let (yb, e) = finite_population_functionals(s, data, variant);
        ybar.push(yb);
        ey.push(e);
        ns_mean += s.y_ns.iter().sum::<f64>() / s.y_ns.len() as f64;
    }
    Ok(NigResult {
        ybar: summarize(&ybar, settings.level)?,
        ey: summarize(&ey, settings.level)?,
        mean_nonsampled: ns_mean / picks.len() as f64,
        ess: weighted.ess(),
        zero_weight_draws,
        diagnostics: run.diagnostics,
    })
}
