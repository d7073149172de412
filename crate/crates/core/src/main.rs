use clap::Parser;
use fpbayes::baselines::HtInterval;
use fpbayes::gibbs::ModelVariant;
use fpbayes::harness::{emit_outputs, run_cell, Overrides, StudyConfig};
use fpbayes::sir::IntervalKind;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

/// Run the informative-sampling simulation study and write table and figure data.
#[derive(Parser, Debug)]
#[command(version)]
struct Cli {
    /// Study configuration (TOML).
    #[arg(long, default_value = "configs/paper_grid.toml")]
    config: PathBuf,
    /// Run only the cells of these tables (1-4); repeatable.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=4))]
    table: Vec<u8>,
    /// Run only the cells of these figures (1-3); repeatable.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    figure: Vec<u8>,
    /// Override the configured seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// appendixB-literal or lognormal-Y.
    #[arg(long)]
    variant: Option<ModelVariant>,
    /// rooted or literal.
    #[arg(long)]
    ht_ci: Option<HtInterval>,
    /// equal-tail or hpd.
    #[arg(long)]
    interval: Option<IntervalKind>,
    #[arg(long)]
    gibbs_keep: Option<usize>,
    #[arg(long)]
    burn_in: Option<usize>,
    #[arg(long)]
    sir_m0: Option<usize>,
    /// Populations per cell.
    #[arg(long)]
    replications: Option<usize>,
    /// Retained draws of the inner run that estimates the sum-constraint proportion.
    #[arg(long)]
    inner_draws: Option<usize>,
    #[arg(long)]
    inner_burn_in: Option<usize>,
    /// Point budget of each rectangle probability.
    #[arg(long)]
    mvn_max_points: Option<usize>,
    #[arg(long)]
    mvn_rel_error: Option<f64>,
    /// Lattice points per randomization in the first batch.
    #[arg(long)]
    mvn_initial_points: Option<usize>,
    #[arg(long)]
    mvn_randomizations: Option<usize>,
    /// Suppress per-replication progress.
    #[arg(long)]
    quiet: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: &Cli) -> fpbayes::Result<bool> {
    if let Some(w) = cli.workers {
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| fpbayes::Error::Config(e.to_string()))?;
    }
    let study = StudyConfig::load(&cli.config)?;
    let overrides = Overrides {
        k: cli.replications,
        burn_in: cli.burn_in,
        keep: cli.gibbs_keep,
        sir_m0: cli.sir_m0,
        interval: cli.interval,
        variant: cli.variant,
        ht_ci: cli.ht_ci,
        inner_burn_in: cli.inner_burn_in,
        inner_draws: cli.inner_draws,
        mvn_rel_error: cli.mvn_rel_error,
        mvn_max_points: cli.mvn_max_points,
        mvn_initial_points: cli.mvn_initial_points,
        mvn_randomizations: cli.mvn_randomizations,
        ..Default::default()
    };
    let seed = cli.seed.unwrap_or(study.seed);
    let specs = study.select(&cli.table, &cli.figure);
    if specs.is_empty() {
        return Err(fpbayes::Error::Config("no cells match the requested tables and figures".into()));
    }
    eprintln!("{} cells, seed {seed}, {} workers", specs.len(), rayon::current_num_threads());
    let mut runs = Vec::with_capacity(specs.len());
    let mut ok = true;
    for spec in specs {
        let cell = study.resolve(spec, &overrides, Some(seed))?;
        let start = Instant::now();
        let result = run_cell(&cell, !cli.quiet)?;
        eprintln!(
            "[{}] finished in {:.1}s, {} of {} replications failed",
            cell.name,
            start.elapsed().as_secs_f64(),
            result.failures.len(),
            cell.k
        );
        if let Some(ess) = result.metrics.nig_mean_ess {
            if result.metrics.nig_low_ess > 0 {
                eprintln!(
                    "[{}] warning: {} replications with ESS below keep/20 (mean ESS {ess:.1})",
                    cell.name, result.metrics.nig_low_ess
                );
            }
        }
        if result.failed() {
            eprintln!("[{}] cell failed", cell.name);
            ok = false;
        }
        runs.push((spec.clone(), result));
    }
    for path in emit_outputs(&runs, seed, &cli.out_dir)? {
        eprintln!("wrote {}", path.display());
    }
    Ok(ok)
}
