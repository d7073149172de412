//! Gibbs sampler for the approximate posterior of the non-sampled responses,
//! the non-sampled transformed sizes and the superpopulation parameters.
//!
//! The approximate posterior drops the normalising constant of the
//! restricted size density; SIR reweighting restores it afterwards.

use crate::dist::{sample_inverse_gamma, sample_truncated_normal, RandomStream};
use crate::model::{in_region_r, ObservedData};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::RngCore;
use serde::{Deserialize, Serialize};

/// Truncation intervals narrower than this are left alone for the sweep.
const MIN_INTERVAL: f64 = 1e-12;

/// Proposals tried per site before the selection-factor rejection step gives
/// up and keeps the current value.
const MAX_SELECTION_TRIES: usize = 1000;

/// How the response enters the superpopulation model.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelVariant {
    /// Responses are normal with mean `mu` and variance `sigma2`; every
    /// full conditional is conjugate.
    #[default]
    #[serde(rename = "appendixB-literal")]
    AppendixBLiteral,
    /// `log y` is normal with mean `mu` and variance `sigma2`; responses are
    /// updated with an independence Metropolis step.
    #[serde(rename = "lognormal-Y")]
    LognormalY,
}

impl ModelVariant {
    /// The scale on which `(mu, sigma2)` describe the response.
    pub fn working(&self, y: f64) -> f64 {
        match self {
            ModelVariant::AppendixBLiteral => y,
            ModelVariant::LognormalY => y.ln(),
        }
    }

    /// Superpopulation mean of the response implied by `(mu, sigma2)`.
    pub fn mean_y(&self, mu: f64, sigma2: f64) -> f64 {
        match self {
            ModelVariant::AppendixBLiteral => mu,
            ModelVariant::LognormalY => (mu + 0.5 * sigma2).exp(),
        }
    }
}

impl std::str::FromStr for ModelVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "appendixB-literal" | "literal" => Ok(ModelVariant::AppendixBLiteral),
            "lognormal-Y" | "lognormal" => Ok(ModelVariant::LognormalY),
            other => Err(Error::Config(format!("unknown model variant {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Psi {
    pub mu: f64,
    pub sigma2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Eta {
    pub beta0: f64,
    pub beta1: f64,
    pub sigma_e2: f64,
}

/// One state of the chain. Non-sampled units occupy positions `n..N`; the
/// last unit has no free size coordinate because the total fixes it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GibbsState {
    /// Responses of units `n..N`.
    pub y_ns: Vec<f64>,
    /// Transformed sizes of units `n..N-1`.
    pub z_ns: Vec<f64>,
    pub psi: Psi,
    pub eta: Eta,
}

impl GibbsState {
    pub fn y_full(&self, data: &ObservedData) -> Vec<f64> {
        data.y_s.iter().chain(&self.y_ns).copied().collect()
    }

    /// `z_1..z_{N-1}`.
    pub fn z_head(&self, data: &ObservedData) -> Vec<f64> {
        data.z_s_head().iter().chain(&self.z_ns).copied().collect()
    }

    pub fn nu_full(&self, data: &ObservedData) -> Vec<f64> {
        let zn = data.z_n();
        let head = self.z_head(data);
        let mut nu: Vec<f64> = head.iter().map(|z| z + zn).collect();
        nu.push(zn - head.iter().sum::<f64>());
        nu
    }

    pub fn theta(&self, data: &ObservedData) -> Vec<f64> {
        self.y_full(data)
            .iter()
            .map(|y| self.eta.beta0 + self.eta.beta1 * y)
            .collect()
    }

    fn check(&self, data: &ObservedData) -> Result<()> {
        if !(self.psi.sigma2 > 0.0 && self.eta.sigma_e2 > 0.0) {
            return Err(Error::Fault(format!("non-positive variance in state {self:?}")));
        }
        if !in_region_r(&self.z_ns, data.z_s_head(), data.t, data.n, data.big_n) {
            return Err(Error::Fault(format!("size coordinates left the feasible region: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub enum InitPolicy {
    /// Equal split of the unsampled size total, moment fits for the
    /// parameters and predictive draws for the responses.
    #[default]
    Centroid,
    FromState(GibbsState),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GibbsConfig {
    pub burn_in: usize,
    pub keep: usize,
    pub thin: usize,
    pub variant: ModelVariant,
    pub init: InitPolicy,
    /// Shuffle the block order every sweep instead of y, z, psi, eta.
    pub random_scan: bool,
    /// Include the non-selection probabilities of the unsampled units in the
    /// size-coordinate updates.
    pub selection_factor: bool,
}

impl Default for GibbsConfig {
    fn default() -> Self {
        Self {
            burn_in: 5000,
            keep: 1000,
            thin: 1,
            variant: ModelVariant::default(),
            init: InitPolicy::default(),
            random_scan: false,
            selection_factor: true,
        }
    }
}

impl GibbsConfig {
    pub fn validate(&self) -> Result<()> {
        if self.keep == 0 || self.thin == 0 {
            return Err(Error::Config("keep and thin must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    pub sweeps: usize,
    /// Size-coordinate updates skipped because the interval was degenerate.
    pub skipped_sites: usize,
    /// Truncated-normal proposals rejected by the selection factor.
    pub selection_rejections: usize,
    /// Sites where the rejection step hit its cap and kept the old value.
    pub selection_cap_hits: usize,
    pub mh_proposed: usize,
    pub mh_accepted: usize,
}

#[derive(Clone, Debug)]
pub struct GibbsRun {
    pub states: Vec<GibbsState>,
    pub diagnostics: Diagnostics,
}

/// Update every non-sampled response given sizes and parameters.
pub fn cond_draw_y_ns<R: RngCore + ?Sized>(
    state: &mut GibbsState,
    data: &ObservedData,
    variant: ModelVariant,
    diag: &mut Diagnostics,
    rng: &mut R,
) -> Result<()> {
    let Psi { mu, sigma2 } = state.psi;
    let Eta { beta0, beta1, sigma_e2 } = state.eta;
    let zn = data.z_n();
    let sum_head = data.sum_z_s() + state.z_ns.iter().sum::<f64>();
    let m = state.y_ns.len();

    let t1 = -0.5 / sigma2 - 0.5 * beta1 * beta1 / sigma_e2;
    let sd = (-0.5 / t1).sqrt();
    for j in 0..m {
        let nu = if j + 1 < m { state.z_ns[j] + zn } else { zn - sum_head };
        let y = match variant {
            ModelVariant::AppendixBLiteral => {
                let ti = mu / sigma2 + beta1 * (nu - beta0) / sigma_e2;
                -ti / (2.0 * t1) + sd * crate::dist::normal::quantile(crate::dist::open01(rng))
            }
            ModelVariant::LognormalY => {
                lognormal_site(state.y_ns[j], nu, mu, sigma2, beta0, beta1, sigma_e2, diag, rng)
            }
        };
        if !y.is_finite() {
            return Err(Error::Fault(format!("response update overflowed at unit {}: {state:?}", data.n + j)));
        }
        state.y_ns[j] = y;
    }
    Ok(())
}

/// Independence Metropolis step for one response under the lognormal model.
///
/// The proposal combines a normal with the lognormal's mean and variance and
/// the normal link, so the link cancels in the acceptance ratio and only the
/// lognormal-to-normal density ratio remains.
#[allow(clippy::too_many_arguments)]
fn lognormal_site<R: RngCore + ?Sized>(
    current: f64,
    nu: f64,
    mu: f64,
    sigma2: f64,
    beta0: f64,
    beta1: f64,
    sigma_e2: f64,
    diag: &mut Diagnostics,
    rng: &mut R,
) -> f64 {
    let m = (mu + 0.5 * sigma2).exp();
    let v = (sigma2.exp() - 1.0) * (2.0 * mu + sigma2).exp();
    let prec = 1.0 / v + beta1 * beta1 / sigma_e2;
    let mean = (m / v + beta1 * (nu - beta0) / sigma_e2) / prec;
    let sd = prec.recip().sqrt();

    let log_ratio = |y: f64| {
        let ly = y.ln();
        -ly - (ly - mu).powi(2) / (2.0 * sigma2) + (y - m).powi(2) / (2.0 * v)
    };
    let proposal = mean + sd * crate::dist::normal::quantile(crate::dist::open01(rng));
    diag.mh_proposed += 1;
    if proposal <= 0.0 {
        return current;
    }
    let log_alpha = log_ratio(proposal) - log_ratio(current);
    if log_alpha >= 0.0 || crate::dist::open01(rng).ln() < log_alpha {
        diag.mh_accepted += 1;
        proposal
    } else {
        current
    }
}

/// Single-site truncated-normal updates of the non-sampled size coordinates.
///
/// Each coordinate is confined to the slice of the feasible region at the
/// other coordinates. With `selection_factor` the draw is additionally
/// accepted with probability proportional to the non-selection probabilities
/// of the unit itself and of the last unit, the only factors of the selection
/// likelihood that move with it.
pub fn cond_draw_z_ns<R: RngCore + ?Sized>(
    state: &mut GibbsState,
    data: &ObservedData,
    selection_factor: bool,
    diag: &mut Diagnostics,
    rng: &mut R,
) -> Result<()> {
    let Eta { beta0, beta1, sigma_e2 } = state.eta;
    let zn = data.z_n();
    let t = data.t;
    let step = t / data.n as f64;
    let a = data.n as f64 / t;
    let sd = (0.5 * sigma_e2).sqrt();
    let theta_last = beta0 + beta1 * state.y_ns[state.y_ns.len() - 1];
    let mut sum_head = data.sum_z_s() + state.z_ns.iter().sum::<f64>();

    for j in 0..state.z_ns.len() {
        let zi = state.z_ns[j];
        let others = sum_head - zi;
        // both bounds are inclusive; the first is the coordinate bound, the
        // second keeps the last unit's size within [0, t/n]
        let lo = (-zn).max(zn - step - others);
        let hi = (step - zn).min(zn - others);
        if hi - lo < MIN_INTERVAL {
            if hi < lo - MIN_INTERVAL * step.max(1.0) {
                return Err(Error::Fault(format!(
                    "empty truncation interval [{lo}, {hi}] at unit {}: {state:?}",
                    data.n + j
                )));
            }
            diag.skipped_sites += 1;
            continue;
        }
        let theta_i = beta0 + beta1 * state.y_ns[j];
        let mean = 0.5 * (theta_i - others - theta_last);

        let new = if selection_factor {
            let factor = |x: f64| (1.0 - a * (zn + x)) * (1.0 - a * (zn - others - x));
            let peak = factor((-0.5 * others).clamp(lo, hi));
            let mut accepted = None;
            for _ in 0..MAX_SELECTION_TRIES {
                let x = sample_truncated_normal(mean, sd, lo, hi, rng)?;
                if crate::dist::open01(rng) * peak <= factor(x) {
                    accepted = Some(x);
                    break;
                }
                diag.selection_rejections += 1;
            }
            match accepted {
                Some(x) => x,
                None => {
                    diag.selection_cap_hits += 1;
                    zi
                }
            }
        } else {
            sample_truncated_normal(mean, sd, lo, hi, rng)?
        };
        state.z_ns[j] = new;
        sum_head = others + new;
    }
    Ok(())
}

/// Draw `mu` then `sigma2` from their conditionals given every response.
pub fn cond_draw_psi<R: RngCore + ?Sized>(
    state: &mut GibbsState,
    data: &ObservedData,
    variant: ModelVariant,
    rng: &mut R,
) -> Result<()> {
    let w: Vec<f64> = data
        .y_s
        .iter()
        .chain(&state.y_ns)
        .map(|&y| variant.working(y))
        .collect();
    if w.iter().any(|v| !v.is_finite()) {
        return Err(Error::Fault(format!("response outside the model support: {state:?}")));
    }
    let big_n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / big_n;
    let mu = mean + (state.psi.sigma2 / big_n).sqrt() * crate::dist::normal::quantile(crate::dist::open01(rng));
    let ss: f64 = w.iter().map(|v| (v - mu).powi(2)).sum();
    if !(ss > 0.0) {
        return Err(Error::Fault("responses have zero spread about mu".into()));
    }
    let sigma2 = sample_inverse_gamma(0.5 * big_n, 0.5 * ss, rng)?;
    state.psi = Psi { mu, sigma2 };
    Ok(())
}

/// Draw `sigma_e2`, `beta0` and `beta1` in turn from their conditionals.
pub fn cond_draw_eta<R: RngCore + ?Sized>(state: &mut GibbsState, data: &ObservedData, rng: &mut R) -> Result<()> {
    let y = state.y_full(data);
    let nu = state.nu_full(data);
    let big_n = y.len() as f64;
    let Eta { mut beta0, mut beta1, .. } = state.eta;

    let t4: f64 = y.iter().zip(&nu).map(|(y, v)| (v - beta0 - beta1 * y).powi(2)).sum();
    if !(t4 > 0.0) || !t4.is_finite() {
        return Err(Error::Fault(format!("link residual sum of squares is {t4}: {state:?}")));
    }
    let sigma_e2 = sample_inverse_gamma(0.5 * big_n, 0.5 * t4, rng)?;

    let (m0, v0) = beta0_moments(&y, data.t, beta1, sigma_e2);
    beta0 = m0 + v0.sqrt() * std_normal(rng);
    let (m1, v1) = beta1_moments(&y, &nu, beta0, sigma_e2)?;
    beta1 = m1 + v1.sqrt() * std_normal(rng);

    state.eta = Eta { beta0, beta1, sigma_e2 };
    Ok(())
}

/// Mean and variance of the intercept given the slope.
pub fn beta0_moments(y: &[f64], t: f64, beta1: f64, sigma_e2: f64) -> (f64, f64) {
    let big_n = y.len() as f64;
    ((t - beta1 * y.iter().sum::<f64>()) / big_n, sigma_e2 / big_n)
}

/// Mean and variance of the slope given the intercept.
pub fn beta1_moments(y: &[f64], nu: &[f64], beta0: f64, sigma_e2: f64) -> Result<(f64, f64)> {
    let syy: f64 = y.iter().map(|v| v * v).sum();
    if !(syy > 0.0) {
        return Err(Error::Fault("responses are all zero".into()));
    }
    let t5: f64 = y.iter().zip(nu).map(|(y, v)| y * (beta0 - v)).sum();
    Ok((-t5 / syy, sigma_e2 / syy))
}

fn std_normal<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    crate::dist::normal::quantile(crate::dist::open01(rng))
}

/// Feasible starting state: centroid sizes, moment fits and predictive
/// responses.
pub fn initial_state(data: &ObservedData, variant: ModelVariant, rng: &mut RandomStream) -> Result<GibbsState> {
    let n = data.n;
    let big_n = data.big_n;
    if n + 1 > big_n {
        return Err(Error::Domain("the sampler needs at least one non-sampled unit".into()));
    }
    let zn = data.z_n();
    let remaining = data.t - data.sum_nu_s();
    if !(remaining > 0.0) {
        return Err(Error::InfeasibleDesign(format!(
            "sampled sizes exhaust the population total (remaining {remaining})"
        )));
    }
    let z_ns = vec![remaining / (big_n - n) as f64 - zn; big_n - n - 1];
    if !in_region_r(&z_ns, data.z_s_head(), data.t, n, big_n) {
        return Err(Error::Fault("equal-split initialisation is infeasible".into()));
    }

    let w: Vec<f64> = data.y_s.iter().map(|&y| variant.working(y)).collect();
    let (w_mean, w_var) = mean_var(&w);
    let ss = w_var * (n as f64 - 1.0);
    let (mu, sigma2) = if n >= 2 && ss > 0.0 {
        let s2 = sample_inverse_gamma(0.5 * (n as f64 - 1.0), 0.5 * ss, rng)?;
        (w_mean + (s2 / n as f64).sqrt() * rng.std_normal(), s2)
    } else {
        (w_mean, 1.0)
    };
    let y_ns: Vec<f64> = (0..big_n - n)
        .map(|_| {
            let draw = mu + sigma2.sqrt() * rng.std_normal();
            match variant {
                ModelVariant::AppendixBLiteral => draw,
                ModelVariant::LognormalY => draw.exp(),
            }
        })
        .collect();

    let (y_bar, y_var) = mean_var(&data.y_s);
    let (nu_bar, nu_var) = mean_var(&data.nu_s);
    let scale = (data.t / big_n as f64).powi(2);
    let eta = if n >= 3 && y_var > 0.0 {
        let cov = data
            .y_s
            .iter()
            .zip(&data.nu_s)
            .map(|(y, v)| (y - y_bar) * (v - nu_bar))
            .sum::<f64>()
            / (n as f64 - 1.0);
        let beta1 = cov / y_var;
        let beta0 = nu_bar - beta1 * y_bar;
        let rss: f64 = data
            .y_s
            .iter()
            .zip(&data.nu_s)
            .map(|(y, v)| (v - beta0 - beta1 * y).powi(2))
            .sum();
        Eta {
            beta0,
            beta1,
            sigma_e2: (rss / (n as f64 - 2.0)).max(1e-6 * scale),
        }
    } else {
        Eta {
            beta0: zn,
            beta1: 0.0,
            sigma_e2: nu_var.max(1e-6 * scale),
        }
    };

    Ok(GibbsState {
        y_ns,
        z_ns,
        psi: Psi {
            mu,
            sigma2: sigma2.max(1e-12),
        },
        eta,
    })
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = if x.len() > 1 {
        x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// One sweep over the four blocks.
pub fn sweep(
    state: &mut GibbsState,
    data: &ObservedData,
    cfg: &GibbsConfig,
    diag: &mut Diagnostics,
    rng: &mut RandomStream,
) -> Result<()> {
    let mut order = [0u8, 1, 2, 3];
    if cfg.random_scan {
        order.shuffle(rng);
    }
    for block in order {
        match block {
            0 => cond_draw_y_ns(state, data, cfg.variant, diag, rng)?,
            1 => cond_draw_z_ns(state, data, cfg.selection_factor, diag, rng)?,
            2 => cond_draw_psi(state, data, cfg.variant, rng)?,
            _ => cond_draw_eta(state, data, rng)?,
        }
    }
    diag.sweeps += 1;
    Ok(())
}

/// Run the chain: `burn_in` sweeps discarded, then `keep` states retained
/// every `thin` sweeps.
pub fn run_gibbs(data: &ObservedData, cfg: &GibbsConfig, rng: &mut RandomStream) -> Result<GibbsRun> {
    cfg.validate()?;
    let mut state = match &cfg.init {
        InitPolicy::Centroid => initial_state(data, cfg.variant, rng)?,
        InitPolicy::FromState(s) => s.clone(),
    };
    state.check(data)?;
    let mut diag = Diagnostics::default();
    for _ in 0..cfg.burn_in {
        sweep(&mut state, data, cfg, &mut diag, rng)?;
    }
    let mut states = Vec::with_capacity(cfg.keep);
    for _ in 0..cfg.keep {
        for _ in 0..cfg.thin {
            sweep(&mut state, data, cfg, &mut diag, rng)?;
        }
        state.check(data)?;
        states.push(state.clone());
    }
    Ok(GibbsRun {
        states,
        diagnostics: diag,
    })
}
