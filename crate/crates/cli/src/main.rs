//! `hct`: hybrid-control-trial analysis with an omitted-variable-bias
//! sensitivity analysis.
//!
//! Subcommands mirror the analysis workflow: `analyze` estimates the
//! trial-specific effect and its sensitivity region, `contour` sweeps
//! confounding strengths and reports the robustness value, `benchmark`
//! calibrates strengths from observed covariates, `simulate` runs the
//! replicated experiments, and `oracle` prints closed-form scenario truths.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hct_core::config::RunConfig;
use hct_core::pipeline::{self, OracleRequest};
use hct_core::{Error, ErrorKind};

#[derive(Parser)]
#[command(name = "hct", version, about = "Hybrid control trial analysis with bias-bound sensitivity analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Cap the worker thread pool.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Args)]
struct ConfigArgs {
    /// Path to the TOML run configuration.
    config: PathBuf,
    /// Override a config key, e.g. --set crossfit.folds=10 (repeatable).
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Output directory; defaults to the config's output.dir.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Estimate the trial-specific ATE and its sensitivity region.
    Analyze(ConfigArgs),
    /// Emit the confidence-bound contour grid and robustness value.
    Contour(ConfigArgs),
    /// Leave-one-out benchmarking of confounding strengths per covariate.
    Benchmark(ConfigArgs),
    /// Run a replicated simulation experiment preset.
    Simulate(ConfigArgs),
    /// Print closed-form scenario truths (no data needed).
    Oracle(OracleArgs),
}

#[derive(Args)]
struct OracleArgs {
    /// Scenario preset, e.g. fig2-weak or fig3-nobias.
    #[arg(long, conflicts_with_all = ["zeta", "beta"])]
    preset: Option<String>,
    /// Trial-participation probability.
    #[arg(long, default_value_t = 0.5)]
    q: f64,
    /// External-control confounder rate P(Z=1 | D=0).
    #[arg(long)]
    zeta: Option<f64>,
    /// Treatment effect on the latent outcome score.
    #[arg(long)]
    beta: Option<f64>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            eprintln!("error: cannot configure {threads} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let code = match err.downcast_ref::<Error>() {
                Some(e) => match e.kind() {
                    ErrorKind::Config => 2,
                    ErrorKind::Data => 3,
                    ErrorKind::Numeric => 4,
                },
                None => 1,
            };
            ExitCode::from(code)
        }
    }
}

fn load_config(args: &ConfigArgs) -> Result<(RunConfig, PathBuf), Error> {
    let text = std::fs::read_to_string(&args.config).map_err(|e| {
        Error::Config(format!("cannot read config {}: {e}", args.config.display()))
    })?;
    let config = RunConfig::from_toml_str(&text, &args.set)?;
    let out = args.out.clone().unwrap_or_else(|| config.output.dir.clone());
    Ok((config, out))
}

fn print_warnings(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Analyze(args) => {
            let (config, out) = load_config(&args)?;
            let result = pipeline::run_analyze(&config, &out)?;
            print_warnings(&result.warnings);
            let e = &result.estimate;
            let s = &result.sensitivity;
            println!("psi_hat      = {:.6}", e.estimate);
            println!("se           = {:.6}", e.standard_error);
            println!("ci           = [{:.6}, {:.6}]", e.ci_low, e.ci_high);
            println!("b_hat        = {:.6}", s.b_hat);
            println!("bounds       = [{:.6}, {:.6}]", s.psi_minus, s.psi_plus);
            println!("region       = [{:.6}, {:.6}]", s.region_low, s.region_high);
            println!("wrote {}", result.files.estimate.display());
            println!("wrote {}", result.files.sensitivity.display());
            if let Some(p) = &result.files.influence {
                println!("wrote {}", p.display());
            }
            if let Some(p) = &result.files.provenance {
                println!("wrote {}", p.display());
            }
        }
        Command::Contour(args) => {
            let (config, out) = load_config(&args)?;
            let result = pipeline::run_contour(&config, &out)?;
            print_warnings(&result.warnings);
            println!(
                "robustness_value = {:.6} (achieved = {})",
                result.rv.rv, result.rv.achieved
            );
            println!("wrote {}", result.files.grid.display());
            println!("wrote {}", result.files.summary.display());
        }
        Command::Benchmark(args) => {
            let (config, out) = load_config(&args)?;
            let result = pipeline::run_benchmark(&config, &out)?;
            print_warnings(&result.warnings);
            println!("covariate  c2_y      c2_d      rho       implied_bound");
            for (gains, implied, name) in &result.rows {
                println!(
                    "{name:<10} {:<9.5} {:<9.5} {:<9.5} {:.6}",
                    gains.c2_y, gains.c2_d, gains.rho, implied
                );
            }
            println!("wrote {}", result.file.display());
        }
        Command::Simulate(args) => {
            let (config, out) = load_config(&args)?;
            let result = pipeline::run_simulate(&config, &out)?;
            println!("wrote {}", result.files.results.display());
            println!("wrote {}", result.files.summary.display());
        }
        Command::Oracle(args) => {
            let request = match (&args.preset, args.zeta, args.beta) {
                (Some(name), _, _) => OracleRequest::Preset {
                    name: name.clone(),
                    q: args.q,
                },
                (None, Some(zeta), Some(beta)) => OracleRequest::Explicit {
                    q: args.q,
                    zeta,
                    beta,
                },
                _ => {
                    return Err(Error::Config(
                        "oracle needs --preset NAME or both --zeta and --beta".into(),
                    )
                    .into())
                }
            };
            let o = pipeline::run_oracle(&request)?;
            println!("psi_star   = {}", o.psi_star);
            println!("psi_obs    = {}", o.psi_obs);
            println!("b          = {}", o.b);
            println!("c2_y_true  = {}", o.c2_y_true);
            println!("c2_d_true  = {}", o.c2_d_true);
            println!("s_true     = {}", o.s_true);
        }
    }
    Ok(())
}
