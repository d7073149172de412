//! Domain types, the size-measure transform and its feasibility regions, and
//! the Poisson selection likelihood.
//!
//! Units are always ordered so that the `n` sampled units come first. Size
//! measures `nu` are replaced by `z_i = nu_i - t/N` for `i < N` plus the
//! constant `z_N = t/N`, which turns the known-total constraint into a
//! constraint on `z_N` alone.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};

const TOTAL_TOLERANCE: f64 = 1e-8;

/// Superpopulation parameters: `log Y ~ N(mu, sigma2)` and
/// `nu = beta0 + beta1 * Y + e`, `e ~ N(0, sigma_e2)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuperParams {
    pub mu: f64,
    pub sigma2: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub sigma_e2: f64,
}

impl SuperParams {
    /// `sigma_e2 = 0` is accepted so populations with an exact linear link
    /// can be generated; samplers require it to be positive.
    pub fn new(mu: f64, sigma2: f64, beta0: f64, beta1: f64, sigma_e2: f64) -> Result<Self> {
        let p = Self {
            mu,
            sigma2,
            beta0,
            beta1,
            sigma_e2,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if ![self.mu, self.sigma2, self.beta0, self.beta1, self.sigma_e2]
            .iter()
            .all(|v| v.is_finite())
        {
            return Err(Error::Domain(format!("non-finite parameter in {self:?}")));
        }
        if !(self.sigma2 > 0.0) {
            return Err(Error::Domain(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        if self.sigma_e2 < 0.0 {
            return Err(Error::Domain(format!(
                "sigma_e2 must be non-negative, got {}",
                self.sigma_e2
            )));
        }
        Ok(())
    }

    /// Superpopulation mean of the lognormal response.
    pub fn mean_y(&self) -> f64 {
        (self.mu + 0.5 * self.sigma2).exp()
    }
}

/// Responses and size measures of all `N` units together with `t = sum(nu)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinitePopulation {
    pub y: Vec<f64>,
    pub nu: Vec<f64>,
    pub t: f64,
}

impl FinitePopulation {
    pub fn new(y: Vec<f64>, nu: Vec<f64>) -> Result<Self> {
        if y.len() != nu.len() {
            return Err(Error::Domain(format!(
                "{} responses but {} size measures",
                y.len(),
                nu.len()
            )));
        }
        if y.len() < 2 {
            return Err(Error::Domain("a population needs at least two units".into()));
        }
        if let Some(v) = y.iter().chain(&nu).find(|v| !(v.is_finite() && **v > 0.0)) {
            return Err(Error::Domain(format!("responses and sizes must be positive, found {v}")));
        }
        let t = nu.iter().sum();
        Ok(Self { y, nu, t })
    }

    pub fn size(&self) -> usize {
        self.y.len()
    }

    pub fn mean_y(&self) -> f64 {
        self.y.iter().sum::<f64>() / self.size() as f64
    }
}

/// What the analyst sees: sampled responses, their inclusion probabilities,
/// and the population size and total. Sampled units are positions `0..n`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservedData {
    /// Original population index of each sampled unit.
    pub sample_idx: Vec<usize>,
    pub y_s: Vec<f64>,
    pub pi_s: Vec<f64>,
    pub nu_s: Vec<f64>,
    /// `z_1..z_n` followed by `z_N = t/N`.
    pub z_s: Vec<f64>,
    pub t: f64,
    pub n: usize,
    pub big_n: usize,
}

impl ObservedData {
    pub fn new(sample_idx: Vec<usize>, y_s: Vec<f64>, pi_s: Vec<f64>, t: f64, big_n: usize) -> Result<Self> {
        let n = y_s.len();
        if n == 0 || pi_s.len() != n || sample_idx.len() != n {
            return Err(Error::Domain("sample vectors must be non-empty and of equal length".into()));
        }
        if n > big_n {
            return Err(Error::Domain(format!("sample size {n} exceeds population size {big_n}")));
        }
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Domain(format!("population total must be positive, got {t}")));
        }
        if let Some(p) = pi_s.iter().find(|p| !(**p > 0.0 && **p <= 1.0)) {
            return Err(Error::InfeasibleDesign(format!("inclusion probability {p} outside (0, 1]")));
        }
        let zn = t / big_n as f64;
        let nu_s: Vec<f64> = pi_s.iter().map(|p| p * t / n as f64).collect();
        let mut z_s: Vec<f64> = nu_s.iter().map(|v| v - zn).collect();
        z_s.push(zn);
        Ok(Self {
            sample_idx,
            y_s,
            pi_s,
            nu_s,
            z_s,
            t,
            n,
            big_n,
        })
    }

    /// Observe `pop` through the sample `idx`.
    pub fn from_population(pop: &FinitePopulation, idx: &[usize]) -> Result<Self> {
        let pi = inclusion_probs(&pop.nu, idx.len())?;
        Self::new(
            idx.to_vec(),
            idx.iter().map(|&i| pop.y[i]).collect(),
            idx.iter().map(|&i| pi[i]).collect(),
            pop.t,
            pop.size(),
        )
    }

    pub fn z_n(&self) -> f64 {
        self.t / self.big_n as f64
    }

    /// `z_1..z_n`.
    pub fn z_s_head(&self) -> &[f64] {
        &self.z_s[..self.n]
    }

    pub fn sum_z_s(&self) -> f64 {
        self.z_s_head().iter().sum()
    }

    pub fn sum_nu_s(&self) -> f64 {
        self.nu_s.iter().sum()
    }

    /// Number of non-sampled units.
    pub fn n_ns(&self) -> usize {
        self.big_n - self.n
    }
}

/// Transformed size measures `z_1..z_{N-1}, z_N` with `z_N = t/N`.
#[derive(Clone, Debug, PartialEq)]
pub struct ZVector {
    pub z: Vec<f64>,
}

impl ZVector {
    pub fn new(z: Vec<f64>) -> Result<Self> {
        if z.len() < 2 {
            return Err(Error::Domain("z needs at least two coordinates".into()));
        }
        if !(z[z.len() - 1] > 0.0) {
            return Err(Error::ConstraintViolation("z_N = t/N must be positive".into()));
        }
        Ok(Self { z })
    }

    pub fn size(&self) -> usize {
        self.z.len()
    }

    pub fn head(&self) -> &[f64] {
        &self.z[..self.z.len() - 1]
    }

    pub fn z_n(&self) -> f64 {
        self.z[self.z.len() - 1]
    }

    pub fn total(&self) -> f64 {
        self.z_n() * self.size() as f64
    }
}

pub fn nu_to_z(nu: &[f64], t: f64) -> Result<ZVector> {
    let big_n = nu.len();
    if big_n < 2 {
        return Err(Error::Domain("need at least two units".into()));
    }
    let sum: f64 = nu.iter().sum();
    if !((sum - t).abs() <= TOTAL_TOLERANCE * t.abs()) {
        return Err(Error::ConstraintViolation(format!("sizes sum to {sum}, expected total {t}")));
    }
    let zn = t / big_n as f64;
    let mut z: Vec<f64> = nu[..big_n - 1].iter().map(|v| v - zn).collect();
    z.push(zn);
    ZVector::new(z)
}

/// Reverse transform; the last size is whatever completes the total.
pub fn z_to_nu(z: &ZVector) -> Vec<f64> {
    let zn = z.z_n();
    let head = z.head();
    let mut nu: Vec<f64> = head.iter().map(|v| v + zn).collect();
    nu.push(zn - head.iter().sum::<f64>());
    nu
}

/// Poisson-sampling inclusion probabilities `n * nu_i / sum(nu)`.
pub fn inclusion_probs(nu: &[f64], n: usize) -> Result<Vec<f64>> {
    if let Some(v) = nu.iter().find(|v| !(**v > 0.0)) {
        return Err(Error::Domain(format!("size measures must be positive, found {v}")));
    }
    let t: f64 = nu.iter().sum();
    let pi: Vec<f64> = nu.iter().map(|v| n as f64 * v / t).collect();
    if let Some((i, p)) = pi.iter().enumerate().find(|(_, p)| **p >= 1.0) {
        return Err(Error::InfeasibleDesign(format!(
            "unit {i} has inclusion probability {p} >= 1"
        )));
    }
    Ok(pi)
}

/// Membership of `z_1..z_{N-1}` in the region where every implied inclusion
/// probability lies in `[0, 1]`.
pub fn in_region_r0(z_head: &[f64], t: f64, n: usize, big_n: usize) -> bool {
    let zn = t / big_n as f64;
    let step = t / n as f64;
    let coords = z_head.iter().all(|&z| z >= -zn && z <= step - zn);
    let s: f64 = z_head.iter().sum();
    coords && s >= zn - step && s <= zn
}

/// Membership of the non-sampled `z_{n+1}..z_{N-1}` in the slice of the
/// feasible region at the observed `z_1..z_n`.
pub fn in_region_r(z_ns: &[f64], z_s_head: &[f64], t: f64, n: usize, big_n: usize) -> bool {
    let zn = t / big_n as f64;
    let step = t / n as f64;
    let coords = z_ns.iter().all(|&z| z >= -zn && z <= step - zn);
    let s_s: f64 = z_s_head.iter().sum();
    let s: f64 = z_ns.iter().sum();
    coords && s >= zn - step - s_s && s <= zn - s_s
}

/// Log probability of selecting exactly the first `n` units under Poisson
/// sampling with sizes implied by `z`. `-inf` when any factor is not positive.
pub fn selection_log_prob(z: &ZVector, n: usize) -> f64 {
    let nu = z_to_nu(z);
    let a = n as f64 / z.total();
    let mut lp = 0.0;
    for (i, v) in nu.iter().enumerate() {
        let f = if i < n { a * v } else { 1.0 - a * v };
        if !(f > 0.0) {
            return f64::NEG_INFINITY;
        }
        lp += f.ln();
    }
    lp
}

/// Log of the non-sampled factor of [`selection_log_prob`],
/// `sum_{i > n} log(1 - pi_i)` including unit `N`.
pub fn log_l(z: &ZVector, n: usize) -> f64 {
    let nu = z_to_nu(z);
    let a = n as f64 / z.total();
    let mut lp = 0.0;
    for v in &nu[n..] {
        let f = 1.0 - a * v;
        if !(f > 0.0) {
            return f64::NEG_INFINITY;
        }
        lp += f.ln();
    }
    lp
}
