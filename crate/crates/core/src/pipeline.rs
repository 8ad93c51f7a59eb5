//! End-to-end runs wiring config, data, analysis, and outputs. The CLI is a
//! thin wrapper over these functions.

use std::path::{Path, PathBuf};

use crate::config::RunConfig;
use crate::crossfit::{crossfit_nuisances, NuisanceFits};
use crate::data::{load_csv, validate, HctDataset, Severity};
use crate::error::{Error, Result};
use crate::estimation::{
    bias_bound, estimate_psi_hct, estimate_scale, BiasBoundInputs, EstimateReport, InfluenceVector,
    ScaleEstimate,
};
use crate::report;
use crate::sensitivity::{
    bounds_with_region, contour_grid, robustness_value, robustness_value_point, AnalysisContext,
    GridSpec, SensitivityReport,
};
use crate::simulation::{
    oracle_values, preset, run_bias_bound_experiment, run_power_experiment, run_type1_experiment,
    ExperimentPreset, OracleValues, Scenario, SizeSpec,
};

/// Loaded dataset plus fitted nuisances and estimates; shared by the
/// analyze/contour/benchmark commands.
pub struct FittedAnalysis {
    pub dataset: HctDataset,
    pub fits: NuisanceFits,
    pub estimate: EstimateReport,
    pub phi: InfluenceVector,
    pub scale: ScaleEstimate,
    pub warnings: Vec<String>,
}

fn load_dataset(config: &RunConfig) -> Result<(HctDataset, Vec<String>)> {
    let path = config
        .data
        .path
        .as_ref()
        .ok_or_else(|| Error::Config("data.path is required for this command".into()))?;
    let ds = load_csv(path, &config.data.csv_options())?;
    let warnings = validate(&ds)
        .into_iter()
        .filter(|v| v.severity == Severity::Warning)
        .map(|v| v.to_string())
        .collect();
    Ok((ds, warnings))
}

/// Load, cross-fit, and estimate the trial-specific effect and bound scale.
pub fn fit_analysis(config: &RunConfig) -> Result<FittedAnalysis> {
    let (dataset, warnings) = load_dataset(config)?;
    let fits = crossfit_nuisances(&dataset, &config.plan())?;
    let (estimate, phi) = estimate_psi_hct(&dataset, &fits, config.sensitivity.eta)?;
    let scale = estimate_scale(&dataset, &fits)?;
    Ok(FittedAnalysis {
        dataset,
        fits,
        estimate,
        phi,
        scale,
        warnings,
    })
}

fn sensitivity_report(config: &RunConfig, fitted: &FittedAnalysis) -> Result<SensitivityReport> {
    let inputs = BiasBoundInputs::new(
        config.sensitivity.c2_y,
        config.sensitivity.c2_d,
        config.sensitivity.rho,
    )?;
    let (b_hat, phi_b) = bias_bound(&fitted.scale, &inputs)?;
    bounds_with_region(
        &fitted.estimate,
        &fitted.phi,
        b_hat,
        &phi_b,
        &inputs,
        config.sensitivity.eta,
    )
}

pub struct AnalyzeOutput {
    pub files: report::AnalysisFiles,
    pub estimate: EstimateReport,
    pub sensitivity: SensitivityReport,
    pub warnings: Vec<String>,
}

/// The `analyze` command: load, validate, cross-fit, estimate, bound.
pub fn run_analyze(config: &RunConfig, out_dir: &Path) -> Result<AnalyzeOutput> {
    let fitted = fit_analysis(config)?;
    let sens = sensitivity_report(config, &fitted)?;
    let files = report::write_analysis(
        out_dir,
        config,
        &fitted.dataset,
        &fitted.fits,
        &fitted.estimate,
        &fitted.phi,
        &fitted.scale,
        &sens,
    )?;
    Ok(AnalyzeOutput {
        files,
        estimate: fitted.estimate,
        sensitivity: sens,
        warnings: fitted.warnings,
    })
}

pub struct ContourOutput {
    pub files: report::ContourFiles,
    pub rv: crate::sensitivity::RobustnessValue,
    pub warnings: Vec<String>,
}

/// The `contour` command: grid of regions plus the robustness value.
pub fn run_contour(config: &RunConfig, out_dir: &Path) -> Result<ContourOutput> {
    let fitted = fit_analysis(config)?;
    let ctx = AnalysisContext::new(
        fitted.estimate.clone(),
        fitted.phi.clone(),
        fitted.scale.clone(),
        config.sensitivity.rho,
    );
    let spec = GridSpec::from(&config.sensitivity.grid);
    let threshold = config.sensitivity.threshold;
    let eta = config.sensitivity.eta;
    let grid = contour_grid(&ctx, &spec, threshold, eta)?;
    let rv = if config.sensitivity.rv_point_estimate {
        robustness_value_point(&ctx, threshold, config.sensitivity.rv_max)?
    } else {
        robustness_value(&ctx, threshold, eta, config.sensitivity.rv_max)?
    };
    let naive = ctx.evaluate(0.0, 0.0, eta)?;
    let files = report::write_contour(out_dir, config, &grid, &rv, &naive)?;
    Ok(ContourOutput {
        files,
        rv,
        warnings: fitted.warnings,
    })
}

pub struct BenchmarkOutput {
    pub file: PathBuf,
    pub rows: Vec<(crate::sensitivity::BenchmarkGains, f64, String)>,
    pub warnings: Vec<String>,
}

/// The `benchmark` command: leave-one-out confounding strengths for every
/// covariate, sorted by the bound each implies.
pub fn run_benchmark(config: &RunConfig, out_dir: &Path) -> Result<BenchmarkOutput> {
    let fitted = fit_analysis(config)?;
    let plan = config.plan();
    let names = &config.data.columns.covariates;
    let mut rows = Vec::new();
    for j in 0..fitted.dataset.k() {
        let gains = crate::sensitivity::benchmark_leave_one_out(&fitted.dataset, &plan, j)?;
        let implied = gains.rho.abs() * (gains.c2_y * gains.c2_d).sqrt() * fitted.scale.s_hat;
        let name = names.get(j).cloned().unwrap_or_else(|| format!("x{j}"));
        rows.push((gains, implied, name));
    }
    rows.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
    let file = report::write_benchmark(out_dir, config, &rows)?;
    Ok(BenchmarkOutput {
        file,
        rows,
        warnings: fitted.warnings,
    })
}

pub struct SimulateOutput {
    pub files: report::SimulationFiles,
}

/// The `simulate` command: run the preset experiment with config overrides.
pub fn run_simulate(config: &RunConfig, out_dir: &Path) -> Result<SimulateOutput> {
    let name = config
        .simulation
        .preset
        .as_deref()
        .ok_or_else(|| Error::Config("simulation.preset is required".into()))?;
    let mut resolved = preset(
        name,
        config.experiment_settings(),
        config.simulation.replicates,
    )?;
    match &mut resolved {
        ExperimentPreset::BiasBound(cfg) => {
            if let Some(qs) = &config.simulation.q_grid {
                cfg.q_grid = qs.clone();
            }
            if let Some(n1) = config.simulation.target_n1 {
                cfg.target_n1 = n1;
            }
        }
        ExperimentPreset::Type1(cfg) | ExperimentPreset::Power(cfg) => {
            if let Some(n1s) = &config.simulation.n1_grid {
                cfg.n1_grid = n1s.clone();
            }
            if let Some(n0s) = &config.simulation.n0_grid {
                cfg.n0_grid = n0s.clone();
            }
            cfg.threshold = config.sensitivity.threshold;
        }
    }
    let files = match resolved {
        ExperimentPreset::BiasBound(cfg) => {
            let cells = run_bias_bound_experiment(&cfg)?;
            report::write_bias_bound_results(out_dir, config, &cells)?
        }
        ExperimentPreset::Type1(cfg) => {
            let cells = run_type1_experiment(&cfg)?;
            report::write_rejection_results(out_dir, config, &cells, None)?
        }
        ExperimentPreset::Power(cfg) => {
            let (cells, summaries) = run_power_experiment(&cfg)?;
            report::write_rejection_results(out_dir, config, &cells, Some(&summaries))?
        }
    };
    Ok(SimulateOutput { files })
}

/// The `oracle` command: closed-form truths for a scenario preset or
/// explicit (q, zeta, beta).
pub fn run_oracle(name_or_params: &OracleRequest) -> Result<OracleValues> {
    let sc = match name_or_params {
        OracleRequest::Preset { name, q } => {
            let (zeta, beta) = crate::simulation::scenario_preset(name)?;
            Scenario::new(name, *q, zeta, beta, SizeSpec::Total { n: 2 })?
        }
        OracleRequest::Explicit { q, zeta, beta } => {
            Scenario::new("explicit", *q, *zeta, *beta, SizeSpec::Total { n: 2 })?
        }
    };
    oracle_values(&sc)
}

pub enum OracleRequest {
    Preset { name: String, q: f64 },
    Explicit { q: f64, zeta: f64, beta: f64 },
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_demo_csv(dir: &Path, n: usize) -> PathBuf {
        use rand::rngs::StdRng;
        use rand::{Rng, SeedableRng};
        let mut rng = StdRng::seed_from_u64(42);
        let path = dir.join("demo.csv");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "d,a,y,x1").unwrap();
        writeln!(f, "1,1,1,1").unwrap();
        writeln!(f, "1,0,0,0").unwrap();
        writeln!(f, "0,0,1,1").unwrap();
        for _ in 3..n {
            let d = u8::from(rng.gen_bool(0.4));
            let a = if d == 1 { u8::from(rng.gen_bool(0.5)) } else { 0 };
            let x = u8::from(rng.gen_bool(0.6));
            let y = u8::from(rng.gen_bool(0.3 + 0.2 * f64::from(x) + 0.15 * f64::from(a)));
            writeln!(f, "{d},{a},{y},{x}").unwrap();
        }
        path
    }

    fn demo_config(dir: &Path, n: usize) -> RunConfig {
        let data_path = write_demo_csv(dir, n);
        let toml = format!(
            r#"
seed = 11
[data]
path = "{}"
[learner]
kind = "forest"
trees = 20
max_depth = 3
[sensitivity]
c2_y = 0.04
c2_d = 0.03
"#,
            data_path.display()
        );
        RunConfig::from_toml_str(&toml, &[]).unwrap()
    }

    #[test]
    fn analyze_pipeline_writes_reports() {
        let tmp = tempfile::tempdir().unwrap();
        let mut config = demo_config(tmp.path(), 240);
        config.output.influence_dump = true;
        let out = run_analyze(&config, tmp.path()).unwrap();
        assert!(out.files.estimate.exists());
        assert!(out.files.sensitivity.exists());
        assert!(out.files.influence.as_ref().unwrap().exists());
        let text = std::fs::read_to_string(&out.files.sensitivity).unwrap();
        assert!(text.contains("psi_hat"));
        assert!(text.contains("# seed = 11"));
        // region must contain the bounds
        assert!(out.sensitivity.region_low <= out.sensitivity.psi_minus);
        assert!(out.sensitivity.region_high >= out.sensitivity.psi_plus);
    }

    #[test]
    fn zero_c2_region_matches_naive_ci_through_pipeline() {
        let tmp = tempfile::tempdir().unwrap();
        let mut config = demo_config(tmp.path(), 240);
        config.sensitivity.c2_y = 0.0;
        config.sensitivity.c2_d = 0.0;
        let out = run_analyze(&config, tmp.path()).unwrap();
        assert!((out.sensitivity.region_low - out.estimate.ci_low).abs() < 1e-10);
        assert!((out.sensitivity.region_high - out.estimate.ci_high).abs() < 1e-10);
    }

    #[test]
    fn contour_pipeline_emits_grid_and_rv() {
        let tmp = tempfile::tempdir().unwrap();
        let mut config = demo_config(tmp.path(), 240);
        config.sensitivity.grid.points = 5;
        let out = run_contour(&config, tmp.path()).unwrap();
        let grid_text = std::fs::read_to_string(&out.files.grid).unwrap();
        let data_lines = grid_text
            .lines()
            .filter(|l| !l.starts_with('#') && !l.is_empty())
            .count();
        assert_eq!(data_lines, 1 + 25); // header + 5x5 cells
    }

    #[test]
    fn oracle_request_paths() {
        let o = run_oracle(&OracleRequest::Preset {
            name: "fig3-nobias".into(),
            q: 0.5,
        })
        .unwrap();
        assert_eq!(o.b, 0.0);
        assert!(o.psi_star.abs() < 1e-15);
        let o = run_oracle(&OracleRequest::Explicit {
            q: 0.5,
            zeta: 0.4,
            beta: 0.75,
        })
        .unwrap();
        assert!(o.b > 0.0);
    }
}
