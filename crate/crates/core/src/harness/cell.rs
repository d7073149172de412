//! One simulation cell: `K` populations, a sample from each, the three
//! methods, and the aggregate metrics.

use super::population::{correlation, generate_population};
use crate::baselines::{ht_estimate, ig_infer, systematic_pps, HTResult, HtInterval, IgResult};
use crate::dist::{derive_stream_id, RandomStream};
use crate::gibbs::{Diagnostics, GibbsConfig};
use crate::model::{ObservedData, SuperParams};
use crate::normconst::NormConstConfig;
use crate::sir::{nig_infer, IntervalEstimate, IntervalKind, NigResult, NigSettings};
use crate::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::sync::atomic::{AtomicUsize, Ordering};

/// Fraction of failed replications above which a cell fails.
pub const MAX_FAILURE_RATE: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Nig,
    Ig,
    Ht,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentCell {
    pub name: String,
    pub params: SuperParams,
    pub big_n: usize,
    pub n: usize,
    pub k: usize,
    pub methods: Vec<Method>,
    pub gibbs: GibbsConfig,
    pub constants: NormConstConfig,
    pub sir_m0: usize,
    pub level: f64,
    /// Interval used for widths and coverage of the posterior methods.
    pub interval: IntervalKind,
    pub ht_form: HtInterval,
    pub seed: u64,
}

impl ExperimentCell {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.gibbs.validate()?;
        if self.k == 0 {
            return Err(Error::Config(format!("cell {}: K must be at least 1", self.name)));
        }
        if self.n == 0 || self.n > self.big_n {
            return Err(Error::Config(format!("cell {}: need 0 < n <= N", self.name)));
        }
        if self.interval == IntervalKind::Normal {
            return Err(Error::Config("posterior intervals are equal-tail or HPD".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::Config(format!("cell {}: no methods", self.name)));
        }
        Ok(())
    }

    pub fn runs(&self, m: Method) -> bool {
        self.methods.contains(&m)
    }

    /// Stream of replication `rep`, fixed by the seed, the cell name and `rep`.
    pub fn replication_stream(&self, rep: usize) -> RandomStream {
        RandomStream::new(self.seed, derive_stream_id(fnv1a(self.name.as_bytes()), &[rep as u64]))
    }

    fn nig_settings(&self) -> NigSettings {
        NigSettings {
            gibbs: self.gibbs.clone(),
            constants: self.constants.clone(),
            m0: self.sir_m0,
            level: self.level,
        }
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3))
}

#[derive(Clone, Debug)]
pub struct ReplicationResult {
    pub rep: usize,
    pub corr: f64,
    pub truth_ybar: f64,
    pub truth_ey: f64,
    pub sample_mean: f64,
    pub nig: Option<NigResult>,
    pub ig: Option<IgResult>,
    /// Estimate for the population mean.
    pub ht: Option<HTResult>,
}

pub fn run_replication(cell: &ExperimentCell, rep: usize) -> Result<ReplicationResult> {
    let stream = cell.replication_stream(rep);
    let pop = generate_population(&cell.params, cell.big_n, cell.n, &mut stream.substream(&[0]))?;
    let idx = systematic_pps(&pop.nu, cell.n, &mut stream.substream(&[1]))?;
    let census = cell.n == cell.big_n;
    let data = if census {
        ObservedData::new(idx, pop.y.clone(), vec![1.0; cell.big_n], pop.t, cell.big_n)?
    } else {
        ObservedData::from_population(&pop, &idx)?
    };

    let need_ig = cell.runs(Method::Ig) || (census && cell.runs(Method::Nig));
    let ig = if need_ig {
        Some(ig_infer(&data.y_s, cell.big_n, cell.sir_m0, cell.level, cell.gibbs.variant, &mut stream.substream(&[3]))?)
    } else {
        None
    };
    let nig = if !cell.runs(Method::Nig) {
        None
    } else if census {
        // with every unit observed the selection carries no information
        let ig = ig.as_ref().expect("census inference computed above");
        Some(NigResult {
            ybar: ig.ybar,
            ey: ig.ey,
            mean_nonsampled: f64::NAN,
            ess: cell.sir_m0 as f64,
            zero_weight_draws: 0,
            diagnostics: Diagnostics::default(),
        })
    } else {
        Some(nig_infer(&data, &cell.nig_settings(), &stream.substream(&[2]))?)
    };
    let ht = if !cell.runs(Method::Ht) {
        None
    } else if census {
        let total: f64 = pop.y.iter().sum();
        Some(HTResult {
            total_hat: total,
            var_hat: 0.0,
            ci: IntervalEstimate {
                point: total,
                lo: total,
                hi: total,
                kind: IntervalKind::Normal,
                level: cell.level,
            },
        }.mean(cell.big_n))
    } else {
        Some(ht_estimate(&data.y_s, &data.nu_s, data.t, cell.level, cell.ht_form)?.mean(cell.big_n))
    };
    Ok(ReplicationResult {
        rep,
        corr: correlation(&pop),
        truth_ybar: pop.mean_y(),
        truth_ey: cell.params.mean_y(),
        sample_mean: data.y_s.iter().sum::<f64>() / data.n as f64,
        nig,
        ig: if cell.runs(Method::Ig) { ig } else { None },
        ht,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReplicationFailure {
    pub rep: usize,
    pub message: String,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TargetMetrics {
    pub relative_bias: f64,
    pub mean_width: f64,
    pub coverage: f64,
    pub coverage_se: f64,
    /// Coverage after matching each interval's width to the paired NIG interval.
    pub adjusted_coverage: Option<f64>,
    pub adjusted_coverage_se: Option<f64>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MethodMetrics {
    pub ybar: TargetMetrics,
    pub ey: Option<TargetMetrics>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CellMetrics {
    pub replications: usize,
    pub failures: usize,
    pub corr: f64,
    pub nig: Option<MethodMetrics>,
    pub ig: Option<MethodMetrics>,
    pub ht: Option<MethodMetrics>,
    /// Mean effective sample size of the importance weights.
    pub nig_mean_ess: Option<f64>,
    pub nig_low_ess: usize,
}

#[derive(Clone, Debug)]
pub struct CellResult {
    pub cell: ExperimentCell,
    pub replications: Vec<ReplicationResult>,
    pub failures: Vec<ReplicationFailure>,
    pub metrics: CellMetrics,
}

impl CellResult {
    pub fn failed(&self) -> bool {
        self.failures.len() as f64 > MAX_FAILURE_RATE * self.cell.k as f64
    }
}

/// Coverage of intervals `a` after each is recentred at its midpoint and
/// given the width of the matching interval in `b`.
pub fn adjust_width(a: &[IntervalEstimate], b: &[IntervalEstimate], truth: &[f64]) -> Result<f64> {
    if a.len() != b.len() || a.len() != truth.len() {
        return Err(Error::Fault(format!(
            "interval lists differ in length ({}, {}, {})",
            a.len(),
            b.len(),
            truth.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Fault("no intervals to adjust".into()));
    }
    let covered = a
        .iter()
        .zip(b)
        .zip(truth)
        .filter(|((ia, ib), &x)| {
            let mid = 0.5 * (ia.lo + ia.hi);
            let half = 0.5 * ib.width();
            mid - half <= x && x <= mid + half
        })
        .count();
    Ok(covered as f64 / a.len() as f64)
}

fn binomial_se(p: f64, k: usize) -> f64 {
    (p * (1.0 - p) / k as f64).sqrt()
}

fn target_metrics(intervals: &[IntervalEstimate], truth: &[f64], reference: Option<&[IntervalEstimate]>) -> Result<TargetMetrics> {
    let k = intervals.len();
    let kf = k as f64;
    let relative_bias = intervals.iter().zip(truth).map(|(i, t)| (i.point - t) / t).sum::<f64>() / kf;
    let mean_width = intervals.iter().map(|i| i.width()).sum::<f64>() / kf;
    let coverage = intervals.iter().zip(truth).filter(|(i, t)| i.covers(**t)).count() as f64 / kf;
    let adjusted_coverage = reference.map(|r| adjust_width(intervals, r, truth)).transpose()?;
    Ok(TargetMetrics {
        relative_bias,
        mean_width,
        coverage,
        coverage_se: binomial_se(coverage, k),
        adjusted_coverage,
        adjusted_coverage_se: adjusted_coverage.map(|p| binomial_se(p, k)),
    })
}

/// Aggregate metrics over successful replications.
pub fn cell_metrics(cell: &ExperimentCell, reps: &[ReplicationResult], failures: usize) -> Result<CellMetrics> {
    let k = reps.len();
    let mut m = CellMetrics {
        replications: k,
        failures,
        ..Default::default()
    };
    if k == 0 {
        return Ok(m);
    }
    m.corr = reps.iter().map(|r| r.corr).sum::<f64>() / k as f64;
    let kind = cell.interval;
    let truth_ybar: Vec<f64> = reps.iter().map(|r| r.truth_ybar).collect();
    let truth_ey: Vec<f64> = reps.iter().map(|r| r.truth_ey).collect();

    let nig_ybar: Option<Vec<IntervalEstimate>> = reps
        .iter()
        .map(|r| r.nig.as_ref().map(|x| *x.ybar.get(kind).expect("validated kind")))
        .collect();
    let nig_ey: Option<Vec<IntervalEstimate>> = reps
        .iter()
        .map(|r| r.nig.as_ref().map(|x| *x.ey.get(kind).expect("validated kind")))
        .collect();
    if let (Some(yb), Some(ey)) = (&nig_ybar, &nig_ey) {
        m.nig = Some(MethodMetrics {
            ybar: target_metrics(yb, &truth_ybar, None)?,
            ey: Some(target_metrics(ey, &truth_ey, None)?),
        });
        let ess: Vec<f64> = reps.iter().filter_map(|r| r.nig.as_ref().map(|x| x.ess)).collect();
        m.nig_mean_ess = Some(ess.iter().sum::<f64>() / k as f64);
        let floor = cell.gibbs.keep as f64 / 20.0;
        m.nig_low_ess = ess.iter().filter(|e| **e < floor).count();
    }

    let ig_ybar: Option<Vec<IntervalEstimate>> = reps
        .iter()
        .map(|r| r.ig.as_ref().map(|x| *x.ybar.get(kind).expect("validated kind")))
        .collect();
    let ig_ey: Option<Vec<IntervalEstimate>> = reps
        .iter()
        .map(|r| r.ig.as_ref().map(|x| *x.ey.get(kind).expect("validated kind")))
        .collect();
    if let (Some(yb), Some(ey)) = (&ig_ybar, &ig_ey) {
        m.ig = Some(MethodMetrics {
            ybar: target_metrics(yb, &truth_ybar, nig_ybar.as_deref())?,
            ey: Some(target_metrics(ey, &truth_ey, nig_ey.as_deref())?),
        });
    }

    let ht: Option<Vec<IntervalEstimate>> = reps.iter().map(|r| r.ht.map(|h| h.ci)).collect();
    if let Some(ht) = &ht {
        m.ht = Some(MethodMetrics {
            ybar: target_metrics(ht, &truth_ybar, nig_ybar.as_deref())?,
            ey: None,
        });
    }
    Ok(m)
}

/// Run all `K` replications in parallel. Every replication owns its stream,
/// so results do not depend on the number of workers.
pub fn run_cell(cell: &ExperimentCell, progress: bool) -> Result<CellResult> {
    cell.validate()?;
    let done = AtomicUsize::new(0);
    let outcomes: Vec<Result<ReplicationResult>> = (0..cell.k)
        .into_par_iter()
        .map(|rep| {
            let r = run_replication(cell, rep);
            let d = done.fetch_add(1, Ordering::Relaxed) + 1;
            if progress {
                match &r {
                    Ok(_) => eprintln!("[{}] replication {rep} done ({d}/{})", cell.name, cell.k),
                    Err(e) => eprintln!("[{}] replication {rep} failed: {e} ({d}/{})", cell.name, cell.k),
                }
            }
            r
        })
        .collect();
    let mut replications = Vec::with_capacity(cell.k);
    let mut failures = Vec::new();
    for (rep, o) in outcomes.into_iter().enumerate() {
        match o {
            Ok(r) => replications.push(r),
            Err(e) => failures.push(ReplicationFailure {
                rep,
                message: e.to_string(),
            }),
        }
    }
    let metrics = cell_metrics(cell, &replications, failures.len())?;
    Ok(CellResult {
        cell: cell.clone(),
        replications,
        failures,
        metrics,
    })
}
