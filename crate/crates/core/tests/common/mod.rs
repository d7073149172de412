//! Independent oracles shared by the integration tests: numerical
//! normalisation of one-dimensional densities, Kolmogorov-Smirnov tests,
//! adaptive quadrature, the joint density of the approximate posterior and a
//! brute-force normalising constant.

#![allow(dead_code)]

pub mod checks;

use fpbayes::dist::RandomStream;
use fpbayes::gibbs::{Eta, GibbsState, Psi};
use fpbayes::model::{FinitePopulation, ObservedData};
use nalgebra::{DMatrix, DVector};

pub const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Standard normal distribution function from the complementary error function.
pub fn phi_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

pub fn normal_ln_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -0.5 * (LN_2PI + z * z) - sd.ln()
}

/// Asymptotic p-value of the one-sample Kolmogorov-Smirnov statistic.
pub fn ks_pvalue(d: f64, n: usize) -> f64 {
    let sn = (n as f64).sqrt();
    let lambda = (sn + 0.12 + 0.11 / sn) * d;
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = 2.0 * (-1.0f64).powi(k - 1) * (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += term;
        if term.abs() < 1e-12 {
            break;
        }
    }
    sum.clamp(0.0, 1.0)
}

/// KS statistic of `samples` against a distribution function.
pub fn ks_statistic(samples: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut x = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// KS test of uniform probability-integral-transform values.
pub fn ks_uniform(u: &[f64]) -> (f64, f64) {
    let d = ks_statistic(u, |x| x.clamp(0.0, 1.0));
    (d, ks_pvalue(d, u.len()))
}

/// A one-dimensional density known up to a constant, normalised on a grid.
pub struct GridDensity {
    x: Vec<f64>,
    cum: Vec<f64>,
}

impl GridDensity {
    /// Normalise `exp(log_f)` on `[a, b]`. A pass of `coarse` nodes finds
    /// where the mass lies, a pass of `points` nodes integrates it.
    pub fn new(log_f: impl Fn(f64) -> f64, a: f64, b: f64, coarse: usize, points: usize) -> Self {
        let h = (b - a) / (coarse - 1) as f64;
        let vals: Vec<f64> = (0..coarse).map(|i| log_f(a + h * i as f64)).collect();
        let top = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(top.is_finite(), "density vanishes on [{a}, {b}]");
        let keep: Vec<usize> = (0..coarse).filter(|&i| vals[i] > top - 40.0).collect();
        let lo = a + h * (*keep.first().unwrap() as f64 - 1.0).max(0.0);
        let hi = (a + h * (*keep.last().unwrap() as f64 + 1.0)).min(b);
        let h = (hi - lo) / (points - 1) as f64;
        let x: Vec<f64> = (0..points).map(|i| lo + h * i as f64).collect();
        let lf: Vec<f64> = x.iter().map(|&v| log_f(v)).collect();
        let top = lf.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let f: Vec<f64> = lf.iter().map(|v| (v - top).exp()).collect();
        let mut cum = vec![0.0; points];
        for i in 1..points {
            cum[i] = cum[i - 1] + 0.5 * h * (f[i] + f[i - 1]);
        }
        let total = cum[points - 1];
        cum.iter_mut().for_each(|c| *c /= total);
        Self { x, cum }
    }

    pub fn cdf(&self, v: f64) -> f64 {
        if v <= self.x[0] {
            return 0.0;
        }
        let last = self.x.len() - 1;
        if v >= self.x[last] {
            return 1.0;
        }
        let h = self.x[1] - self.x[0];
        let i = (((v - self.x[0]) / h) as usize).min(last - 1);
        let w = (v - self.x[i]) / h;
        self.cum[i] + w * (self.cum[i + 1] - self.cum[i])
    }

    pub fn mean(&self) -> f64 {
        (1..self.x.len())
            .map(|i| 0.5 * (self.x[i] + self.x[i - 1]) * (self.cum[i] - self.cum[i - 1]))
            .sum()
    }

    /// Inverse distribution function by bisection on the grid.
    pub fn quantile(&self, p: f64) -> f64 {
        let i = self.cum.partition_point(|&c| c < p).clamp(1, self.x.len() - 1);
        let (c0, c1) = (self.cum[i - 1], self.cum[i]);
        let w = if c1 > c0 { (p - c0) / (c1 - c0) } else { 0.5 };
        self.x[i - 1] + w * (self.x[i] - self.x[i - 1])
    }
}

/// Adaptive Simpson quadrature.
pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let (flm, frm) = (f(lm), f(rm));
        let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
        let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            return left + right + delta / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1) + rec(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    rec(f, a, b, fa, fm, fb, whole, tol, 40)
}

/// Probability of a three-dimensional box under `N(mean, cov)`: a nested
/// two-dimensional quadrature of the first two coordinates times the exact
/// conditional probability of the third.
pub fn mvn3_box_oracle(mean: &[f64; 3], cov: &DMatrix<f64>, lo: &[f64; 3], hi: &[f64; 3]) -> f64 {
    let s12 = cov.view((0, 0), (2, 2)).into_owned();
    let s12_inv = s12.clone().try_inverse().unwrap();
    let s3x = DVector::from_vec(vec![cov[(2, 0)], cov[(2, 1)]]);
    let gain = s12_inv.clone() * s3x.clone();
    let cond_sd = (cov[(2, 2)] - s3x.dot(&gain)).sqrt();
    let det = s12.determinant();
    let norm = 1.0 / (2.0 * std::f64::consts::PI * det.sqrt());
    // clip each outer range to +-12 marginal sd for the quadrature
    let clip = |i: usize| {
        let sd = cov[(i, i)].sqrt();
        (lo[i].max(mean[i] - 12.0 * sd), hi[i].min(mean[i] + 12.0 * sd))
    };
    let (a1, b1) = clip(0);
    let (a2, b2) = clip(1);
    if a1 >= b1 || a2 >= b2 {
        return 0.0;
    }
    let (p11, p12, p22) = (s12_inv[(0, 0)], s12_inv[(0, 1)], s12_inv[(1, 1)]);
    let (g1, g2) = (gain[0], gain[1]);
    let inner = |x1: f64| {
        let g = |x2: f64| {
            let (d1, d2) = (x1 - mean[0], x2 - mean[1]);
            let q = p11 * d1 * d1 + 2.0 * p12 * d1 * d2 + p22 * d2 * d2;
            let c = mean[2] + g1 * d1 + g2 * d2;
            let p3 = phi_cdf((hi[2] - c) / cond_sd) - phi_cdf((lo[2] - c) / cond_sd);
            norm * (-0.5 * q).exp() * p3
        };
        adaptive_simpson(&g, a2, b2, 1e-11)
    };
    adaptive_simpson(&inner, a1, b1, 1e-10)
}

/// Log joint density of the approximate posterior, up to a constant, at
/// responses `y` and sizes `nu` of all `N` units (sampled units first).
/// `-inf` outside the feasible region.
#[allow(clippy::too_many_arguments)]
pub fn log_pi_a(y: &[f64], nu: &[f64], psi: Psi, eta: Eta, n: usize, t: f64, lognormal: bool) -> f64 {
    let big_n = y.len();
    assert_eq!(nu.len(), big_n);
    let total: f64 = nu.iter().sum();
    assert!((total - t).abs() <= 1e-9 * t.max(1.0), "sizes do not sum to the total");
    let cap = t / n as f64;
    if nu.iter().any(|&v| v < 0.0 || v > cap) || psi.sigma2 <= 0.0 || eta.sigma_e2 <= 0.0 {
        return f64::NEG_INFINITY;
    }
    let nf = big_n as f64;
    let mut lp = -0.5 * (nf + 2.0) * (psi.sigma2.ln() + eta.sigma_e2.ln());
    for (i, (&yi, &vi)) in y.iter().zip(nu).enumerate() {
        let w = if lognormal {
            if yi <= 0.0 {
                return f64::NEG_INFINITY;
            }
            lp -= yi.ln();
            yi.ln()
        } else {
            yi
        };
        lp -= (w - psi.mu).powi(2) / (2.0 * psi.sigma2);
        lp -= (vi - eta.beta0 - eta.beta1 * yi).powi(2) / (2.0 * eta.sigma_e2);
        if i >= n {
            lp += (1.0 - vi / cap).ln();
        }
    }
    lp
}

/// Sizes of all units at a state, computed from the size coordinates
/// directly: `nu_i = z_i + t/N` and the last unit takes the remainder.
pub fn sizes_at(state: &GibbsState, data: &ObservedData) -> Vec<f64> {
    let zn = data.t / data.big_n as f64;
    let mut nu: Vec<f64> = data.nu_s.clone();
    nu.extend(state.z_ns.iter().map(|z| z + zn));
    let head: f64 = nu.iter().sum();
    nu.push(data.t - head);
    nu
}

pub fn responses_at(state: &GibbsState, data: &ObservedData) -> Vec<f64> {
    data.y_s.iter().chain(&state.y_ns).copied().collect()
}

/// Brute-force normalising constant: `N E[phi(t - sum_{i<N} nu_i; theta_N, sigma_e)
/// 1{every size in [0, t/n]}]` with `nu_i ~ N(theta_i, sigma_e^2)` for `i < N`.
/// Returns the estimate and its standard error.
pub fn brute_force_c(y: &[f64], eta: Eta, t: f64, n: usize, draws: usize, rng: &mut RandomStream) -> (f64, f64) {
    let big_n = y.len();
    let theta: Vec<f64> = y.iter().map(|v| eta.beta0 + eta.beta1 * v).collect();
    let se = eta.sigma_e2.sqrt();
    let cap = t / n as f64;
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..draws {
        let mut head = 0.0;
        let mut inside = true;
        for th in &theta[..big_n - 1] {
            let v = rng.normal(*th, se);
            inside &= (0.0..=cap).contains(&v);
            head += v;
        }
        let last = t - head;
        let val = if inside && (0.0..=cap).contains(&last) {
            normal_ln_pdf(last, theta[big_n - 1], se).exp()
        } else {
            0.0
        };
        s += val;
        s2 += val * val;
    }
    let d = draws as f64;
    let mean = s / d;
    let var = (s2 / d - mean * mean).max(0.0);
    (big_n as f64 * mean, big_n as f64 * (var / d).sqrt())
}

/// `ln P(Z > x)` for a standard normal `Z`, accurate far into the tail.
pub fn ln_upper_tail(x: f64) -> f64 {
    if x < 30.0 {
        (0.5 * libm::erfc(x / std::f64::consts::SQRT_2)).ln()
    } else {
        let r = 1.0 / (x * x);
        -0.5 * x * x - x.ln() - 0.5 * LN_2PI + (1.0 - r + 3.0 * r * r - 15.0 * r * r * r).ln()
    }
}

/// Standard normal restricted to `[a, b]`; returns the draw and the log
/// mass of the interval.
pub fn truncated_std_normal(a: f64, b: f64, rng: &mut RandomStream) -> (f64, f64) {
    use statrs::distribution::{ContinuousCDF, Normal};
    if a + b < 0.0 {
        let (x, lm) = truncated_std_normal(-b, -a, rng);
        return (-x, lm);
    }
    let (qa, qb) = (ln_upper_tail(a), ln_upper_tail(b));
    let log_mass = qa + (-(qb - qa).exp()).ln_1p();
    if a < 1.0 {
        let (pa, pb) = (qa.exp(), qb.exp());
        let q = pa - rng.open01() * (pa - pb);
        let x = -Normal::new(0.0, 1.0).unwrap().inverse_cdf(q);
        return (x.clamp(a, b), log_mass);
    }
    let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
    let x = if lambda * (b - a) < 1.0 {
        loop {
            let x = a + (b - a) * rng.open01();
            if rng.open01().ln() <= -0.5 * (x * x - a * a) {
                break x;
            }
        }
    } else {
        loop {
            let x = a - rng.open01().ln() / lambda;
            if x <= b && rng.open01().ln() <= -0.5 * (x - lambda).powi(2) {
                break x;
            }
        }
    };
    (x, log_mass)
}

/// The same constant as [`brute_force_c`] through the density of the size
/// total: `N f_S(t) P(every size in [0, t/n] | S = t)`. The probability is
/// estimated by sequential conditioning: each size is drawn from its normal
/// conditional given the earlier ones and the total, truncated to the values
/// that leave the remaining sizes feasible, and the estimate averages the
/// product of the truncated masses.
pub fn sequential_log_c(y: &[f64], eta: Eta, t: f64, n: usize, draws: usize, rng: &mut RandomStream) -> f64 {
    let big_n = y.len();
    let theta: Vec<f64> = y.iter().map(|v| eta.beta0 + eta.beta1 * v).collect();
    let se = eta.sigma_e2.sqrt();
    let cap = t / n as f64;
    // tail sums of theta
    let mut tail = vec![0.0; big_n + 1];
    for j in (0..big_n).rev() {
        tail[j] = tail[j + 1] + theta[j];
    }
    let mut logs = Vec::with_capacity(draws);
    for _ in 0..draws {
        let mut rem = t;
        let mut lp = 0.0;
        for j in 0..big_n - 1 {
            let k = (big_n - j) as f64;
            let mean = theta[j] + (rem - tail[j]) / k;
            let sd = se * (1.0 - 1.0 / k).sqrt();
            let lo = (rem - (k - 1.0) * cap).max(0.0);
            let hi = rem.min(cap);
            if lo >= hi {
                lp = f64::NEG_INFINITY;
                break;
            }
            let (x, lm) = truncated_std_normal((lo - mean) / sd, (hi - mean) / sd, rng);
            lp += lm;
            rem -= (mean + sd * x).clamp(lo, hi);
        }
        logs.push(lp);
    }
    let top = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if top == f64::NEG_INFINITY {
        return top;
    }
    let log_p = top + (logs.iter().map(|l| (l - top).exp()).sum::<f64>() / draws as f64).ln();
    let sum_theta: f64 = theta.iter().sum();
    (big_n as f64).ln() + normal_ln_pdf(t, sum_theta, (big_n as f64).sqrt() * se) + log_p
}

/// Five or six units, the first two sampled.
pub fn toy_data(big_n: usize) -> ObservedData {
    assert!(big_n == 5 || big_n == 6);
    let y = [2.4, 1.9, 1.2, 1.5, 1.1, 1.7][..big_n].to_vec();
    let nu = [2.2, 2.0, 1.3, 1.6, 1.0, 1.4][..big_n].to_vec();
    let pop = FinitePopulation::new(y, nu).unwrap();
    ObservedData::from_population(&pop, &[0, 1]).unwrap()
}

pub fn toy_state(big_n: usize) -> GibbsState {
    GibbsState {
        y_ns: [1.3, 1.4, 1.2, 1.6][..big_n - 2].to_vec(),
        z_ns: [-0.3, -0.1, -0.5][..big_n - 3].to_vec(),
        psi: Psi { mu: 1.5, sigma2: 0.3 },
        eta: Eta {
            beta0: 0.1,
            beta1: 0.9,
            sigma_e2: 0.2,
        },
    }
}
