//! Study configuration: a TOML file with global defaults and a list of cells.
//!
//! ```toml
//! seed = 1
//!
//! [defaults]
//! N = 100
//! n = 10
//! K = 200
//!
//! [[cells]]
//! name = "mu0.5-s0.16"
//! tables = [1, 2, 3]
//! figures = [1, 2]
//! mu = 0.5
//! sigma = 0.16
//! beta0 = 0.0
//! beta1 = 1.0
//! sigma_e = 1.0
//! ```
//!
//! Every key of `[defaults]` may also be set on a cell; command-line values
//! override both.

use super::cell::{ExperimentCell, Method};
use crate::baselines::HtInterval;
use crate::gibbs::{GibbsConfig, ModelVariant};
use crate::model::SuperParams;
use crate::normconst::NormConstConfig;
use crate::sir::IntervalKind;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;
use std::path::Path;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Overrides {
    #[serde(rename = "N", skip_serializing_if = "Option::is_none")]
    pub big_n: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(rename = "K", skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub keep: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub thin: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sir_m0: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub level: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub interval: Option<IntervalKind>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub variant: Option<ModelVariant>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ht_ci: Option<HtInterval>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub selection_factor: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner_burn_in: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inner_draws: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mvn_rel_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mvn_max_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mvn_initial_points: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mvn_randomizations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<Method>>,
}

const OVERRIDE_KEYS: &[&str] = &[
    "N",
    "n",
    "K",
    "burn_in",
    "keep",
    "thin",
    "sir_m0",
    "level",
    "interval",
    "variant",
    "ht_ci",
    "selection_factor",
    "inner_burn_in",
    "inner_draws",
    "mvn_rel_error",
    "mvn_max_points",
    "mvn_initial_points",
    "mvn_randomizations",
    "methods",
];
const CELL_KEYS: &[&str] = &["name", "tables", "figures", "mu", "sigma", "beta0", "beta1", "sigma_e"];

impl Overrides {
    /// `self` with every value set in `top` replaced.
    pub fn with(&self, top: &Overrides) -> Overrides {
        macro_rules! pick {
            ($($f:ident),*) => { Overrides { $($f: top.$f.clone().or_else(|| self.$f.clone())),* } };
        }
        pick!(
            big_n,
            n,
            k,
            burn_in,
            keep,
            thin,
            sir_m0,
            level,
            interval,
            variant,
            ht_ci,
            selection_factor,
            inner_burn_in,
            inner_draws,
            mvn_rel_error,
            mvn_max_points,
            mvn_initial_points,
            mvn_randomizations,
            methods
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellSpec {
    pub name: String,
    #[serde(default)]
    pub tables: Vec<u8>,
    #[serde(default)]
    pub figures: Vec<u8>,
    pub mu: f64,
    pub sigma: f64,
    pub beta0: f64,
    pub beta1: f64,
    pub sigma_e: f64,
    #[serde(flatten)]
    pub overrides: Overrides,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub seed: u64,
    #[serde(default)]
    pub defaults: Overrides,
    pub cells: Vec<CellSpec>,
}

impl StudyConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let raw: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        check_keys(&raw)?;
        let cfg: StudyConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut names = BTreeSet::new();
        for c in &cfg.cells {
            if !names.insert(&c.name) {
                return Err(Error::Config(format!("duplicate cell name {:?}", c.name)));
            }
        }
        Ok(cfg)
    }

    /// Cells tagged with any of `tables` or `figures`; all cells when both are empty.
    pub fn select(&self, tables: &[u8], figures: &[u8]) -> Vec<&CellSpec> {
        self.cells
            .iter()
            .filter(|c| {
                (tables.is_empty() && figures.is_empty())
                    || c.tables.iter().any(|t| tables.contains(t))
                    || c.figures.iter().any(|f| figures.contains(f))
            })
            .collect()
    }

    /// Full cell definition with defaults, cell values and `cli` applied in
    /// increasing priority.
    pub fn resolve(&self, spec: &CellSpec, cli: &Overrides, seed: Option<u64>) -> Result<ExperimentCell> {
        let o = self.defaults.with(&spec.overrides).with(cli);
        let gibbs_default = GibbsConfig::default();
        let nc_default = NormConstConfig::default();
        let cell = ExperimentCell {
            name: spec.name.clone(),
            params: SuperParams::new(spec.mu, spec.sigma * spec.sigma, spec.beta0, spec.beta1, spec.sigma_e * spec.sigma_e)?,
            big_n: o.big_n.unwrap_or(100),
            n: o.n.unwrap_or(10),
            k: o.k.unwrap_or(200),
            methods: o.methods.unwrap_or_else(|| vec![Method::Nig, Method::Ig, Method::Ht]),
            gibbs: GibbsConfig {
                burn_in: o.burn_in.unwrap_or(gibbs_default.burn_in),
                keep: o.keep.unwrap_or(gibbs_default.keep),
                thin: o.thin.unwrap_or(gibbs_default.thin),
                variant: o.variant.unwrap_or_default(),
                selection_factor: o.selection_factor.unwrap_or(gibbs_default.selection_factor),
                ..gibbs_default
            },
            constants: NormConstConfig {
                inner_burn_in: o.inner_burn_in.unwrap_or(nc_default.inner_burn_in),
                inner_draws: o.inner_draws.unwrap_or(nc_default.inner_draws),
                mvn_rel_error: o.mvn_rel_error.unwrap_or(nc_default.mvn_rel_error),
                mvn_max_points: o.mvn_max_points.unwrap_or(nc_default.mvn_max_points),
                mvn_initial_points: o.mvn_initial_points.unwrap_or(nc_default.mvn_initial_points),
                mvn_randomizations: o.mvn_randomizations.unwrap_or(nc_default.mvn_randomizations),
                ..nc_default
            },
            sir_m0: o.sir_m0.unwrap_or(200),
            level: o.level.unwrap_or(0.95),
            interval: o.interval.unwrap_or(IntervalKind::EqualTail),
            ht_form: o.ht_ci.unwrap_or_default(),
            seed: seed.unwrap_or(self.seed),
        };
        cell.validate()?;
        Ok(cell)
    }
}

fn check_keys(raw: &toml::Table) -> Result<()> {
    for key in raw.keys() {
        if !["seed", "defaults", "cells"].contains(&key.as_str()) {
            return Err(Error::Config(format!("unknown top-level key {key:?}")));
        }
    }
    if let Some(d) = raw.get("defaults").and_then(|v| v.as_table()) {
        if let Some(k) = d.keys().find(|k| !OVERRIDE_KEYS.contains(&k.as_str())) {
            return Err(Error::Config(format!("unknown key {k:?} in [defaults]")));
        }
    }
    if let Some(cells) = raw.get("cells").and_then(|v| v.as_array()) {
        for c in cells.iter().filter_map(|c| c.as_table()) {
            if let Some(k) = c
                .keys()
                .find(|k| !OVERRIDE_KEYS.contains(&k.as_str()) && !CELL_KEYS.contains(&k.as_str()))
            {
                return Err(Error::Config(format!("unknown key {k:?} in cell")));
            }
        }
    }
    Ok(())
}
