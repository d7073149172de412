//! Multivariate normal rectangle probabilities by separation of variables
//! with randomized lattice rules.
//!
//! The integrand follows Genz: after a Cholesky factorization each variable
//! is replaced by a uniform that selects a quantile of its conditional normal
//! interval, and the probability is the expectation of the product of those
//! conditional interval masses. Products are accumulated as logs so that
//! probabilities far below `f64::MIN_POSITIVE` are still representable.

use crate::dist::{log_sum_exp, normal, StructuredCovariance};
use crate::{Error, Result};
use nalgebra::DMatrix;
use rand::RngCore;

/// Dimension above which plain Monte Carlo replaces the lattice rule.
const LATTICE_MAX_DIM: usize = 200;

/// Standardized interval widths below this are reported as degenerate.
const DEGENERATE_WIDTH: f64 = 1e-12;

#[derive(Clone, Debug)]
pub enum Covariance {
    Structured(StructuredCovariance),
    Dense(DMatrix<f64>),
}

impl Covariance {
    fn dim(&self) -> usize {
        match self {
            Covariance::Structured(s) => s.dim(),
            Covariance::Dense(d) => d.nrows(),
        }
    }

    fn variance(&self, i: usize) -> f64 {
        match self {
            Covariance::Structured(s) => s.entry(i, i),
            Covariance::Dense(d) => d[(i, i)],
        }
    }
}

#[derive(Clone, Debug)]
pub struct RectangleProblem {
    pub mean: Vec<f64>,
    pub covariance: Covariance,
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    /// Stop once the error bound is below this absolute value...
    pub target_abs_error: f64,
    /// ...or below this fraction of the estimate.
    pub target_rel_error: f64,
    /// Budget of integrand evaluations summed over randomizations.
    pub max_points: usize,
    /// Independent random shifts used for the error estimate.
    pub randomizations: usize,
    /// Lattice points per randomization in the first pass.
    pub initial_points: usize,
}

impl RectangleProblem {
    pub fn new(mean: Vec<f64>, covariance: Covariance, lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        let m = covariance.dim();
        if m == 0 || mean.len() != m || lo.len() != m || hi.len() != m {
            return Err(Error::Domain(format!(
                "rectangle problem dimensions disagree: mean {}, covariance {m}, lo {}, hi {}",
                mean.len(),
                lo.len(),
                hi.len()
            )));
        }
        if let Covariance::Dense(d) = &covariance {
            if !d.is_square() || (d - d.transpose()).abs().max() > 1e-12 * d.abs().max() {
                return Err(Error::Decomposition("covariance is not symmetric".into()));
            }
        }
        if let Some(i) = (0..m).find(|&i| !(lo[i] < hi[i])) {
            return Err(Error::ConstraintViolation(format!(
                "rectangle side {i} is empty: [{}, {}]",
                lo[i], hi[i]
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("rectangle mean must be finite".into()));
        }
        Ok(Self {
            mean,
            covariance,
            lo,
            hi,
            target_abs_error: 0.0,
            target_rel_error: 1e-3,
            max_points: 1 << 16,
            randomizations: 8,
            initial_points: 16,
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MvnEstimate {
    pub prob: f64,
    pub log_prob: f64,
    /// Three standard errors, absolute, on the probability scale.
    pub est_error: f64,
    /// `est_error / prob`, the matching error on the log scale.
    pub log_error: f64,
    /// Whether the error target was met within the point budget.
    pub converged: bool,
    /// Whether the rectangle has (numerically) zero measure.
    pub degenerate: bool,
    pub points: usize,
}

pub fn mvn_rectangle_prob<R: RngCore + ?Sized>(p: &RectangleProblem, rng: &mut R) -> Result<MvnEstimate> {
    log_mvn_rectangle_prob(p, rng)
}

/// Rectangle probability with its error, accumulated in the log domain.
pub fn log_mvn_rectangle_prob<R: RngCore + ?Sized>(p: &RectangleProblem, rng: &mut R) -> Result<MvnEstimate> {
    let integrand = Integrand::new(p)?;
    let degenerate = integrand.degenerate;

    if integrand.m == 1 {
        let lp = integrand.log_eval(&[]);
        return Ok(finish(lp, 0.0, true, degenerate, 1));
    }

    let r = p.randomizations.max(2);
    let udim = integrand.m - 1;
    let lattice = integrand.m <= LATTICE_MAX_DIM;
    let generator: Vec<f64> = if lattice {
        primes(udim).into_iter().map(|q| (q as f64).sqrt().fract()).collect()
    } else {
        Vec::new()
    };
    let shifts: Vec<Vec<f64>> = (0..r)
        .map(|_| (0..udim).map(|_| crate::dist::open01(rng)).collect())
        .collect();

    let mut acc = vec![LogAccumulator::default(); r];
    let mut u = vec![0.0; udim];
    let mut done = 0usize;
    let mut batch = p.initial_points.max(1);
    loop {
        for (k, a) in acc.iter_mut().enumerate() {
            for i in done..done + batch {
                if lattice {
                    let step = (i + 1) as f64;
                    for (j, uj) in u.iter_mut().enumerate() {
                        let x = (step * generator[j] + shifts[k][j]).fract();
                        *uj = (1.0 - (2.0 * x - 1.0).abs()).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
                    }
                } else {
                    for uj in u.iter_mut() {
                        *uj = crate::dist::open01(rng);
                    }
                }
                a.push(integrand.log_eval(&u));
            }
        }
        done += batch;

        let means: Vec<f64> = acc.iter().map(|a| a.log_mean()).collect();
        let lp = log_sum_exp(&means) - (r as f64).ln();
        let rel_se = if lp == f64::NEG_INFINITY {
            0.0
        } else {
            let ratios: Vec<f64> = means.iter().map(|m| (m - lp).exp()).collect();
            let var = ratios.iter().map(|x| (x - 1.0).powi(2)).sum::<f64>() / ((r - 1) as f64);
            (var / r as f64).sqrt()
        };
        let prob = lp.exp();
        let err = 3.0 * rel_se * prob;
        let target = p.target_abs_error.max(p.target_rel_error * prob);
        let converged = err <= target;
        if converged || lp == f64::NEG_INFINITY || r * (done + batch) > p.max_points {
            return Ok(finish(lp, 3.0 * rel_se, converged, degenerate || lp == f64::NEG_INFINITY, r * done));
        }
        batch = done;
    }
}

fn finish(log_prob: f64, log_error: f64, converged: bool, degenerate: bool, points: usize) -> MvnEstimate {
    let prob = log_prob.exp();
    MvnEstimate {
        prob,
        log_prob,
        est_error: log_error * prob,
        log_error,
        converged,
        degenerate,
        points,
    }
}

#[derive(Clone, Copy, Debug)]
struct LogAccumulator {
    max: f64,
    sum: f64,
    count: usize,
}

impl Default for LogAccumulator {
    fn default() -> Self {
        Self {
            max: f64::NEG_INFINITY,
            sum: 0.0,
            count: 0,
        }
    }
}

impl LogAccumulator {
    fn push(&mut self, x: f64) {
        self.count += 1;
        if x == f64::NEG_INFINITY {
            return;
        }
        if x > self.max {
            self.sum = self.sum * (self.max - x).exp() + 1.0;
            self.max = x;
        } else {
            self.sum += (x - self.max).exp();
        }
    }

    fn log_mean(&self) -> f64 {
        if self.max == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        self.max + self.sum.ln() - (self.count as f64).ln()
    }
}

enum Factor {
    /// Diagonal and constant sub-diagonal per column.
    Structured { diag: Vec<f64>, sub: Vec<f64> },
    Dense(DMatrix<f64>),
}

/// The separation-of-variables integrand with variables already reordered.
struct Integrand {
    m: usize,
    mean: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    factor: Factor,
    degenerate: bool,
}

impl Integrand {
    fn new(p: &RectangleProblem) -> Result<Self> {
        let m = p.dim();
        // most constraining variables first
        let mut order: Vec<usize> = (0..m).collect();
        let marginal: Vec<f64> = (0..m)
            .map(|i| {
                let sd = p.covariance.variance(i).sqrt();
                normal::ln_interval((p.lo[i] - p.mean[i]) / sd, (p.hi[i] - p.mean[i]) / sd)
            })
            .collect();
        order.sort_by(|&a, &b| marginal[a].total_cmp(&marginal[b]));

        let factor = match &p.covariance {
            Covariance::Structured(s) => Factor::Structured {
                diag: (0..m).map(|k| s.cholesky_diag(k)).collect(),
                sub: (0..m).map(|k| s.cholesky_sub(k)).collect(),
            },
            Covariance::Dense(d) => {
                let permuted = DMatrix::from_fn(m, m, |i, j| d[(order[i], order[j])]);
                let chol = nalgebra::Cholesky::new(permuted)
                    .ok_or_else(|| Error::Decomposition("covariance is not positive definite".into()))?;
                Factor::Dense(chol.l())
            }
        };
        let degenerate = (0..m).any(|i| {
            (p.hi[i] - p.lo[i]) / p.covariance.variance(i).sqrt() < DEGENERATE_WIDTH
        });
        Ok(Self {
            m,
            mean: order.iter().map(|&i| p.mean[i]).collect(),
            lo: order.iter().map(|&i| p.lo[i]).collect(),
            hi: order.iter().map(|&i| p.hi[i]).collect(),
            factor,
            degenerate,
        })
    }

    /// Log of the integrand at `u` (length `m - 1`; the last variable only
    /// contributes its interval mass).
    fn log_eval(&self, u: &[f64]) -> f64 {
        let mut lf = 0.0;
        match &self.factor {
            Factor::Structured { diag, sub } => {
                let mut s = 0.0;
                for k in 0..self.m {
                    let c = self.mean[k] + s;
                    let a = (self.lo[k] - c) / diag[k];
                    let b = (self.hi[k] - c) / diag[k];
                    let uk = u.get(k).copied().unwrap_or(0.5);
                    let (lm, w) = normal::interval_quantile(a, b, uk);
                    lf += lm;
                    if lf == f64::NEG_INFINITY {
                        return lf;
                    }
                    s += sub[k] * w;
                }
            }
            Factor::Dense(l) => {
                let mut w = vec![0.0; self.m];
                for k in 0..self.m {
                    let c = self.mean[k] + (0..k).map(|j| l[(k, j)] * w[j]).sum::<f64>();
                    let d = l[(k, k)];
                    let a = (self.lo[k] - c) / d;
                    let b = (self.hi[k] - c) / d;
                    let uk = u.get(k).copied().unwrap_or(0.5);
                    let (lm, x) = normal::interval_quantile(a, b, uk);
                    lf += lm;
                    if lf == f64::NEG_INFINITY {
                        return lf;
                    }
                    w[k] = x;
                }
            }
        }
        lf
    }
}

fn primes(count: usize) -> Vec<u64> {
    let mut out = Vec::with_capacity(count);
    let mut c = 2u64;
    while out.len() < count {
        if out.iter().take_while(|&&p| p * p <= c).all(|&p| c % p != 0) {
            out.push(c);
        }
        c += 1;
    }
    out
}
