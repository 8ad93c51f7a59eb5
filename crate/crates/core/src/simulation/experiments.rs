//! Replicated-trial experiment runners: bias-bound coverage over the
//! trial-share grid, type-I error control, and power curves, each comparing
//! the within-trial analysis, the naive pooled analysis, and the pooled
//! analysis with the sensitivity region.
//!
//! Replicates run in parallel on per-replicate RNG substreams, so results do
//! not depend on scheduling. A failed draw (for example a fold losing its
//! treated subgroup at small trial sizes) is resampled once and counted; a
//! cell aborts when more than 5% of its replicates fail outright.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use rand::SeedableRng;

use crate::crossfit::{crossfit_nuisances, rct_only_nuisances, CrossfitPlan};
use crate::error::{Error, Result};
use crate::estimation::{
    bias_bound, estimate_psi_hct, estimate_psi_rct, estimate_scale, BiasBoundInputs,
};
use crate::learners::LearnerSpec;
use crate::sensitivity::bounds_with_region;
use crate::simulation::dgp::{draw_trial, Scenario, SizeSpec};
use crate::simulation::oracle::oracle_values;
use crate::stats::{derive_seed, mean, normal_quantile, std_dev};

/// Analysis knobs shared by every replicate.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentSettings {
    pub folds: usize,
    pub repetitions: usize,
    pub clip_epsilon: f64,
    pub learner: LearnerSpec,
    pub eta: f64,
    pub seed: u64,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            folds: 5,
            repetitions: 1,
            clip_epsilon: 0.01,
            learner: LearnerSpec::forest(),
            eta: 0.05,
            seed: 509,
        }
    }
}

impl ExperimentSettings {
    pub fn plan(&self) -> CrossfitPlan {
        let mut plan = CrossfitPlan::new(
            self.folds,
            self.repetitions,
            self.seed,
            self.learner.clone(),
        );
        plan.clip_epsilon = self.clip_epsilon;
        plan
    }
}

/// One scenario label for grid experiments.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub zeta: f64,
}

/// Analysis method compared in the rejection experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rct,
    NaiveHct,
    HctSens,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Rct, Method::NaiveHct, Method::HctSens];

    pub fn label(&self) -> &'static str {
        match self {
            Method::Rct => "rct",
            Method::NaiveHct => "naive_hct",
            Method::HctSens => "hct_sens",
        }
    }
}

// ---------------------------------------------------------------------------
// bias-bound experiment
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct BiasBoundConfig {
    /// (name, zeta, beta) per bias strength.
    pub scenarios: Vec<(String, f64, f64)>,
    pub q_grid: Vec<f64>,
    pub target_n1: usize,
    pub replicates: usize,
    pub settings: ExperimentSettings,
}

#[derive(Debug, Clone, Serialize)]
pub struct BiasBoundCell {
    pub scenario: String,
    pub zeta: f64,
    pub beta: f64,
    pub q: f64,
    pub n_target: usize,
    pub replicates: usize,
    pub failures: usize,
    pub mean_b_hat: f64,
    pub sd_b_hat: f64,
    /// Normal CI for the mean bound across replicates.
    pub ci_low: f64,
    pub ci_high: f64,
    /// Mean of the per-replicate influence-based standard errors of B.
    pub mean_se_b_hat: f64,
    /// Share of replicates whose estimated bound exceeded the true bias.
    pub frac_bound_holds: f64,
    pub b_true: f64,
    pub bound_true: f64,
}

pub fn run_bias_bound_experiment(cfg: &BiasBoundConfig) -> Result<Vec<BiasBoundCell>> {
    if cfg.q_grid.iter().any(|&q| !(q > 0.0 && q < 1.0)) {
        return Err(Error::Config("bias-bound q grid must lie in (0,1)".into()));
    }
    let mut cells = Vec::new();
    for (si, (name, zeta, beta)) in cfg.scenarios.iter().enumerate() {
        for (qi, &q) in cfg.q_grid.iter().enumerate() {
            let sc = Scenario::new(
                name,
                q,
                *zeta,
                *beta,
                SizeSpec::TargetTrial { n1: cfg.target_n1 },
            )?;
            let truth = oracle_values(&sc)?;
            let inputs = BiasBoundInputs::new(truth.c2_y_true, truth.c2_d_true, 1.0)?;
            let cell_tag = derive_seed(cfg.settings.seed, &[0xb1a5, si as u64, qi as u64]);

            let outcomes: Vec<Attempted<(f64, f64)>> = (0..cfg.replicates)
                .into_par_iter()
                .map(|rep| {
                    with_retry(cell_tag, rep, |rng_seed| {
                        bias_bound_replicate(&sc, &inputs, &cfg.settings, rng_seed)
                    })
                })
                .collect();

            let kept: Vec<(f64, f64)> = outcomes.iter().filter_map(|o| o.value).collect();
            let failures = outcomes.iter().filter(|o| o.failed).count();
            check_failures(failures, cfg.replicates)?;
            if kept.is_empty() {
                return Err(Error::Numeric("every replicate failed".into()));
            }
            let b_hats: Vec<f64> = kept.iter().map(|(b, _)| *b).collect();
            let se_b: Vec<f64> = kept.iter().map(|(_, se)| *se).collect();
            let m = mean(&b_hats);
            let sd = std_dev(&b_hats);
            let z = normal_quantile(1.0 - cfg.settings.eta / 2.0);
            let half = z * sd / (b_hats.len() as f64).sqrt();
            let holds = b_hats.iter().filter(|&&b| b > truth.b).count() as f64
                / b_hats.len() as f64;
            cells.push(BiasBoundCell {
                scenario: name.clone(),
                zeta: *zeta,
                beta: *beta,
                q,
                n_target: sc.total_n(),
                replicates: b_hats.len(),
                failures,
                mean_b_hat: m,
                sd_b_hat: sd,
                ci_low: m - half,
                ci_high: m + half,
                mean_se_b_hat: mean(&se_b),
                frac_bound_holds: holds,
                b_true: truth.b,
                bound_true: (truth.c2_y_true * truth.c2_d_true).sqrt() * truth.s_true,
            });
        }
    }
    Ok(cells)
}

fn bias_bound_replicate(
    sc: &Scenario,
    inputs: &BiasBoundInputs,
    settings: &ExperimentSettings,
    rng_seed: u64,
) -> Result<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let trial = draw_trial(sc, &mut rng)?;
    let mut plan = settings.plan();
    plan.seed = derive_seed(rng_seed, &[1]);
    let fits = crossfit_nuisances(&trial.dataset, &plan)?;
    let scale = estimate_scale(&trial.dataset, &fits)?;
    let (b_hat, phi_b) = bias_bound(&scale, inputs)?;
    let se = phi_b.sd() / (phi_b.len() as f64).sqrt();
    Ok((b_hat, se))
}

// ---------------------------------------------------------------------------
// rejection experiments (type-I error and power)
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize)]
pub struct RejectionConfig {
    pub scenarios: Vec<ScenarioSpec>,
    pub beta: f64,
    pub n1_grid: Vec<usize>,
    pub n0_grid: Vec<usize>,
    pub replicates: usize,
    /// Null value the tests reject against.
    pub threshold: f64,
    pub settings: ExperimentSettings,
}

/// One (scenario, n1, n0, method) rejection summary.
#[derive(Debug, Clone, Serialize)]
pub struct RejectionCell {
    pub scenario: String,
    pub method: Method,
    pub n1: usize,
    pub n0: usize,
    pub zeta: f64,
    pub beta: f64,
    pub replicates: usize,
    pub failures: usize,
    pub reject_rate: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub mean_width: f64,
}

/// Smallest grid trial size reaching 80% power, per scenario, external size,
/// and method.
#[derive(Debug, Clone, Serialize)]
pub struct PowerSummary {
    pub scenario: String,
    pub n0: usize,
    pub method: Method,
    pub n1_at_80: Option<usize>,
}

pub fn run_type1_experiment(cfg: &RejectionConfig) -> Result<Vec<RejectionCell>> {
    if cfg.beta != 0.0 {
        return Err(Error::Config(
            "type-I experiment requires a null effect (beta = 0)".into(),
        ));
    }
    run_rejection_grid(cfg)
}

pub fn run_power_experiment(
    cfg: &RejectionConfig,
) -> Result<(Vec<RejectionCell>, Vec<PowerSummary>)> {
    if cfg.beta == 0.0 {
        return Err(Error::Config(
            "power experiment requires a non-null effect (beta != 0)".into(),
        ));
    }
    let cells = run_rejection_grid(cfg)?;
    let mut summaries = Vec::new();
    for spec in &cfg.scenarios {
        for &n0 in &cfg.n0_grid {
            for method in Method::ALL {
                let mut n1_at_80 = None;
                let mut n1s: Vec<usize> = cfg.n1_grid.clone();
                n1s.sort_unstable();
                for n1 in n1s {
                    let cell = cells.iter().find(|c| {
                        c.scenario == spec.name && c.n0 == n0 && c.n1 == n1 && c.method == method
                    });
                    if let Some(c) = cell {
                        if c.reject_rate >= 0.8 {
                            n1_at_80 = Some(n1);
                            break;
                        }
                    }
                }
                summaries.push(PowerSummary {
                    scenario: spec.name.clone(),
                    n0,
                    method,
                    n1_at_80,
                });
            }
        }
    }
    Ok((cells, summaries))
}

struct ReplicateRejections {
    reject: [bool; 3],
    width: [f64; 3],
}

fn run_rejection_grid(cfg: &RejectionConfig) -> Result<Vec<RejectionCell>> {
    if cfg.n1_grid.is_empty() || cfg.n0_grid.is_empty() {
        return Err(Error::Config("rejection grids must be non-empty".into()));
    }
    let mut cells = Vec::new();
    for (si, spec) in cfg.scenarios.iter().enumerate() {
        for &n0 in &cfg.n0_grid {
            for &n1 in &cfg.n1_grid {
                let sc = Scenario::with_arms(&spec.name, n1, n0, spec.zeta, cfg.beta)?;
                let truth = oracle_values(&sc)?;
                let inputs = BiasBoundInputs::new(truth.c2_y_true, truth.c2_d_true, 1.0)?;
                let cell_tag =
                    derive_seed(cfg.settings.seed, &[0x4e11, si as u64, n1 as u64, n0 as u64]);

                let outcomes: Vec<Attempted<ReplicateRejections>> = (0..cfg.replicates)
                    .into_par_iter()
                    .map(|rep| {
                        with_retry(cell_tag, rep, |rng_seed| {
                            rejection_replicate(&sc, &inputs, cfg, rng_seed)
                        })
                    })
                    .collect();
                let kept: Vec<&ReplicateRejections> =
                    outcomes.iter().filter_map(|o| o.value.as_ref()).collect();
                let failures = outcomes.iter().filter(|o| o.failed).count();
                check_failures(failures, cfg.replicates)?;
                if kept.is_empty() {
                    return Err(Error::Numeric("every replicate failed".into()));
                }

                let z = normal_quantile(1.0 - cfg.settings.eta / 2.0);
                for (mi, method) in Method::ALL.into_iter().enumerate() {
                    let rejects = kept.iter().filter(|r| r.reject[mi]).count() as f64;
                    let reps = kept.len() as f64;
                    let rate = rejects / reps;
                    let se = (rate * (1.0 - rate) / reps).sqrt();
                    let widths: Vec<f64> = kept.iter().map(|r| r.width[mi]).collect();
                    cells.push(RejectionCell {
                        scenario: spec.name.clone(),
                        method,
                        n1,
                        n0,
                        zeta: spec.zeta,
                        beta: cfg.beta,
                        replicates: kept.len(),
                        failures,
                        reject_rate: rate,
                        ci_low: (rate - z * se).max(0.0),
                        ci_high: (rate + z * se).min(1.0),
                        mean_width: mean(&widths),
                    });
                }
            }
        }
    }
    Ok(cells)
}

fn rejection_replicate(
    sc: &Scenario,
    inputs: &BiasBoundInputs,
    cfg: &RejectionConfig,
    rng_seed: u64,
) -> Result<ReplicateRejections> {
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let trial = draw_trial(sc, &mut rng)?;
    let ds = &trial.dataset;
    let mut plan = cfg.settings.plan();
    plan.seed = derive_seed(rng_seed, &[1]);
    let eta = cfg.settings.eta;
    let t = cfg.threshold;

    // pooled analysis: naive interval and sensitivity region share the fits
    let fits = crossfit_nuisances(ds, &plan)?;
    let (psi, phi) = estimate_psi_hct(ds, &fits, eta)?;
    let scale = estimate_scale(ds, &fits)?;
    let (b_hat, phi_b) = bias_bound(&scale, inputs)?;
    let region = bounds_with_region(&psi, &phi, b_hat, &phi_b, inputs, eta)?;

    // within-trial analysis
    let rct_fits = rct_only_nuisances(ds, &plan)?;
    let (rct, _) = estimate_psi_rct(ds, &rct_fits, eta)?;

    let reject_rct = t < rct.ci_low || t > rct.ci_high;
    let reject_naive = t < psi.ci_low || t > psi.ci_high;
    let reject_sens = region.significant_against(t);
    Ok(ReplicateRejections {
        reject: [reject_rct, reject_naive, reject_sens],
        width: [
            rct.ci_high - rct.ci_low,
            psi.ci_high - psi.ci_low,
            region.region_high - region.region_low,
        ],
    })
}

// ---------------------------------------------------------------------------
// shared plumbing
// ---------------------------------------------------------------------------

/// Result of running one replicate with the resample-once policy.
struct Attempted<T> {
    value: Option<T>,
    /// True when the first draw failed, whether or not the resample saved it.
    failed: bool,
}

fn with_retry<T>(cell_tag: u64, replicate: usize, f: impl Fn(u64) -> Result<T>) -> Attempted<T> {
    match f(derive_seed(cell_tag, &[replicate as u64, 0])) {
        Ok(v) => Attempted {
            value: Some(v),
            failed: false,
        },
        Err(_) => match f(derive_seed(cell_tag, &[replicate as u64, 1])) {
            Ok(v) => Attempted {
                value: Some(v),
                failed: true,
            },
            Err(_) => Attempted {
                value: None,
                failed: true,
            },
        },
    }
}

fn check_failures(failures: usize, replicates: usize) -> Result<()> {
    if (failures as f64) > 0.05 * replicates as f64 {
        return Err(Error::Numeric(format!(
            "{failures} of {replicates} replicates failed (> 5%); aborting experiment"
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// presets
// ---------------------------------------------------------------------------

/// A named experiment configuration mirroring the simulation study layout.
#[derive(Debug, Clone)]
pub enum ExperimentPreset {
    BiasBound(BiasBoundConfig),
    Type1(RejectionConfig),
    Power(RejectionConfig),
}

/// Resolve a preset name. Bias-strength presets run the q sweep at a target
/// trial size of 100; rejection presets sweep trial sizes against external
/// arms of 100/500/1000.
pub fn preset(name: &str, settings: ExperimentSettings, replicates: usize) -> Result<ExperimentPreset> {
    let bias_bound = |label: &str, zeta: f64| {
        ExperimentPreset::BiasBound(BiasBoundConfig {
            scenarios: vec![(label.to_string(), zeta, 0.75)],
            q_grid: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            target_n1: 100,
            replicates,
            settings: settings.clone(),
        })
    };
    let rejection = |label: &str, zeta: f64, beta: f64| RejectionConfig {
        scenarios: vec![ScenarioSpec {
            name: label.to_string(),
            zeta,
        }],
        beta,
        n1_grid: vec![50, 100, 150, 200, 250],
        n0_grid: vec![100, 500, 1000],
        replicates,
        threshold: 0.0,
        settings: settings.clone(),
    };
    Ok(match name {
        "fig2-weak" => bias_bound("weak", 0.4),
        "fig2-medium" => bias_bound("medium", 0.6),
        "fig2-strong" => bias_bound("strong", 0.9),
        "fig3-nobias" => ExperimentPreset::Type1(rejection("nobias", 0.3, 0.0)),
        "fig3-bias" => ExperimentPreset::Type1(rejection("bias", 0.4, 0.0)),
        "fig4-nobias" => ExperimentPreset::Power(rejection("nobias", 0.3, 0.6)),
        "fig4-favorable" => ExperimentPreset::Power(rejection("favorable", 0.4, 0.6)),
        "fig4-unfavorable" => ExperimentPreset::Power(rejection("unfavorable", 0.2, 0.6)),
        other => {
            return Err(Error::Config(format!(
                "unknown preset `{other}`; expected fig2-weak|medium|strong, \
                 fig3-bias|nobias, or fig4-nobias|favorable|unfavorable"
            )))
        }
    })
}

/// Scenario presets for the oracle subcommand, matching the experiment
/// tables.
pub fn scenario_preset(name: &str) -> Result<(f64, f64)> {
    Ok(match name {
        "fig2-weak" => (0.4, 0.75),
        "fig2-medium" => (0.6, 0.75),
        "fig2-strong" => (0.9, 0.75),
        "fig3-nobias" => (0.3, 0.0),
        "fig3-bias" => (0.4, 0.0),
        "fig4-nobias" => (0.3, 0.6),
        "fig4-favorable" => (0.4, 0.6),
        "fig4-unfavorable" => (0.2, 0.6),
        other => {
            return Err(Error::Config(format!(
                "unknown scenario preset `{other}`"
            )))
        }
    })
}
