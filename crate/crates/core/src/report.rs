//! Output files: structured TOML reports and tidy CSVs, each carrying a
//! reproducibility header with the resolved config and seed.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::config::RunConfig;
use crate::crossfit::NuisanceFits;
use crate::data::HctDataset;
use crate::error::{Error, Result};
use crate::estimation::{riesz_alpha, EstimateReport, InfluenceVector, ScaleEstimate};
use crate::sensitivity::{BenchmarkGains, ContourGrid, RobustnessValue, SensitivityReport};
use crate::simulation::{BiasBoundCell, PowerSummary, RejectionCell};

/// Comment-prefixed header embedded at the top of every emitted file.
pub fn repro_header(config: &RunConfig) -> String {
    let mut out = String::new();
    out.push_str("# reproducibility header\n");
    out.push_str(&format!("# seed = {}\n", config.seed));
    for line in config.resolved_toml().lines() {
        out.push_str("# ");
        out.push_str(line);
        out.push('\n');
    }
    out.push('\n');
    out
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(contents.as_bytes())?;
    f.flush()?;
    Ok(())
}

fn toml_report<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string_pretty(value).map_err(|e| Error::Numeric(format!("report serialization: {e}")))
}

/// `analyze` outputs: estimate + sensitivity reports, optional dumps.
pub struct AnalysisFiles {
    pub estimate: PathBuf,
    pub sensitivity: PathBuf,
    pub influence: Option<PathBuf>,
    pub provenance: Option<PathBuf>,
}

#[derive(Serialize)]
struct EstimateDoc<'a> {
    estimate: &'a EstimateReport,
}

#[derive(Serialize)]
struct SensitivityDoc<'a> {
    sensitivity: &'a SensitivityReport,
}

#[allow(clippy::too_many_arguments)]
pub fn write_analysis(
    dir: &Path,
    config: &RunConfig,
    ds: &HctDataset,
    fits: &NuisanceFits,
    estimate: &EstimateReport,
    phi: &InfluenceVector,
    scale: &ScaleEstimate,
    sensitivity: &SensitivityReport,
) -> Result<AnalysisFiles> {
    let header = repro_header(config);
    let estimate_path = dir.join("estimate.toml");
    write_file(
        &estimate_path,
        &format!("{header}{}", toml_report(&EstimateDoc { estimate })?),
    )?;
    let sensitivity_path = dir.join("sensitivity.toml");
    write_file(
        &sensitivity_path,
        &format!("{header}{}", toml_report(&SensitivityDoc { sensitivity })?),
    )?;

    let influence = if config.output.influence_dump {
        let path = dir.join("influence.csv");
        let mut body = String::from("row,phi_psi,phi_sigma2,phi_nu2,alpha,mu1_hat,mu0_hat,p_hat,pi_hat\n");
        for (slot, &row) in fits.row_ids.iter().enumerate() {
            let alpha = riesz_alpha(ds.row(row), fits.p_hat[slot], fits.pi_hat[slot], fits.q_hat);
            body.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                row,
                phi.values[slot],
                scale.phi_sigma2.values[slot],
                scale.phi_nu2.values[slot],
                alpha,
                fits.mu1_hat[slot],
                fits.mu0_hat[slot],
                fits.p_hat[slot],
                fits.pi_hat[slot],
            ));
        }
        write_file(&path, &format!("{header}{body}"))?;
        Some(path)
    } else {
        None
    };

    let provenance = if config.output.provenance_dump {
        let path = dir.join("provenance.csv");
        let mut buf = Vec::new();
        fits.write_provenance_csv(&mut buf)?;
        let body = String::from_utf8(buf)
            .map_err(|e| Error::Numeric(format!("provenance encoding: {e}")))?;
        write_file(&path, &format!("{header}{body}"))?;
        Some(path)
    } else {
        None
    };

    Ok(AnalysisFiles {
        estimate: estimate_path,
        sensitivity: sensitivity_path,
        influence,
        provenance,
    })
}

pub struct ContourFiles {
    pub grid: PathBuf,
    pub summary: PathBuf,
}

#[derive(Serialize)]
struct ContourSummaryDoc<'a> {
    robustness: &'a RobustnessValue,
    naive_region_low: f64,
    naive_region_high: f64,
    threshold: f64,
}

pub fn write_contour(
    dir: &Path,
    config: &RunConfig,
    grid: &ContourGrid,
    rv: &RobustnessValue,
    naive: &SensitivityReport,
) -> Result<ContourFiles> {
    let header = repro_header(config);
    let grid_path = dir.join("contour.csv");
    let mut body = String::from("c2_d,c2_y,lower,upper,significant\n");
    for cell in &grid.cells {
        body.push_str(&format!(
            "{},{},{},{},{}\n",
            cell.c2_d, cell.c2_y, cell.lower, cell.upper, cell.significant
        ));
    }
    write_file(&grid_path, &format!("{header}{body}"))?;

    let summary_path = dir.join("robustness.toml");
    let doc = ContourSummaryDoc {
        robustness: rv,
        naive_region_low: naive.region_low,
        naive_region_high: naive.region_high,
        threshold: grid.threshold,
    };
    write_file(&summary_path, &format!("{header}{}", toml_report(&doc)?))?;
    Ok(ContourFiles {
        grid: grid_path,
        summary: summary_path,
    })
}

/// Per-covariate benchmark table, sorted by the bound each implies.
pub fn write_benchmark(
    dir: &Path,
    config: &RunConfig,
    rows: &[(BenchmarkGains, f64, String)],
) -> Result<PathBuf> {
    let header = repro_header(config);
    let path = dir.join("benchmark.csv");
    let mut body = String::from("covariate,name,c2_y,c2_d,rho,implied_bound\n");
    for (gains, implied, name) in rows {
        body.push_str(&format!(
            "{},{},{},{},{},{}\n",
            gains.covariate, name, gains.c2_y, gains.c2_d, gains.rho, implied
        ));
    }
    write_file(&path, &format!("{header}{body}"))?;
    Ok(path)
}

pub struct SimulationFiles {
    pub results: PathBuf,
    pub summary: PathBuf,
}

pub fn write_bias_bound_results(
    dir: &Path,
    config: &RunConfig,
    cells: &[BiasBoundCell],
) -> Result<SimulationFiles> {
    let header = repro_header(config);
    let results = dir.join("results.csv");
    let mut body = String::from(
        "scenario,zeta,beta,q,n_target,replicates,failures,mean_b_hat,sd_b_hat,ci_low,ci_high,mean_se_b_hat,frac_bound_holds,b_true,bound_true\n",
    );
    for c in cells {
        body.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            c.scenario,
            c.zeta,
            c.beta,
            c.q,
            c.n_target,
            c.replicates,
            c.failures,
            c.mean_b_hat,
            c.sd_b_hat,
            c.ci_low,
            c.ci_high,
            c.mean_se_b_hat,
            c.frac_bound_holds,
            c.b_true,
            c.bound_true
        ));
    }
    write_file(&results, &format!("{header}{body}"))?;

    let summary = dir.join("summary.toml");
    #[derive(Serialize)]
    struct Doc<'a> {
        cells: &'a [BiasBoundCell],
    }
    write_file(&summary, &format!("{header}{}", toml_report(&Doc { cells })?))?;
    Ok(SimulationFiles { results, summary })
}

pub fn write_rejection_results(
    dir: &Path,
    config: &RunConfig,
    cells: &[RejectionCell],
    power_summaries: Option<&[PowerSummary]>,
) -> Result<SimulationFiles> {
    let header = repro_header(config);
    let results = dir.join("results.csv");
    let mut body = String::from(
        "method,n1,n0,zeta,beta,scenario,replicates,failures,reject_rate,ci_low,ci_high,mean_width\n",
    );
    for c in cells {
        body.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{}\n",
            c.method.label(),
            c.n1,
            c.n0,
            c.zeta,
            c.beta,
            c.scenario,
            c.replicates,
            c.failures,
            c.reject_rate,
            c.ci_low,
            c.ci_high,
            c.mean_width
        ));
    }
    write_file(&results, &format!("{header}{body}"))?;

    let summary = dir.join("summary.toml");
    #[derive(Serialize)]
    struct Doc<'a> {
        #[serde(skip_serializing_if = "Option::is_none")]
        power_80: Option<Vec<PowerLine>>,
        cells: &'a [RejectionCell],
    }
    #[derive(Serialize)]
    struct PowerLine {
        scenario: String,
        n0: usize,
        method: &'static str,
        n1_at_80: Option<usize>,
    }
    let power_80 = power_summaries.map(|s| {
        s.iter()
            .map(|p| PowerLine {
                scenario: p.scenario.clone(),
                n0: p.n0,
                method: p.method.label(),
                n1_at_80: p.n1_at_80,
            })
            .collect()
    });
    write_file(
        &summary,
        &format!("{header}{}", toml_report(&Doc { power_80, cells })?),
    )?;
    Ok(SimulationFiles { results, summary })
}
