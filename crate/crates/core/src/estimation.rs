//! Influence-function algebra for the trial-specific average treatment
//! effect and the omitted-variable bias bound.
//!
//! The trial-specific ATE estimator is the efficient estimating-equations
//! (AIPW-style) form
//!
//! ```text
//! psi_hat = (1/q) E_n[ D (mu1 - mu0) + (D A / p - W)(Y - mu(A, X)) ]
//! W       = pi [ D(1-A) + (1-D) ] / ( pi (1-p) + (1-pi) )
//! ```
//!
//! with a binary outcome, so the control-arm variance ratio in W is 1. The
//! weight `(DA/p - W)/q` is the plug-in Riesz representer `alpha` of the
//! estimand's linear functional. The bias-bound machinery estimates the scale
//! `S = sqrt(E[(Y-mu)^2] E[alpha^2])` and maps posited confounding strengths
//! (c2_y, c2_d, rho) to the bound `B = |rho| sqrt(c2_y c2_d) S`, with
//! influence functions for everything so that one-sided bound inference is
//! possible downstream.

use serde::{Deserialize, Serialize};

use crate::crossfit::NuisanceFits;
use crate::data::{HctDataset, Observation};
use crate::error::{Error, Result};
use crate::stats::{mean, normal_quantile, pairwise_sum, std_dev};

/// Which estimand an influence vector belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimandTag {
    PsiHct,
    PsiRct,
    Sigma2,
    Nu2,
    BiasBound,
    LowerBound,
    UpperBound,
}

/// Per-row influence values for one estimand.
#[derive(Debug, Clone)]
pub struct InfluenceVector {
    pub tag: EstimandTag,
    pub values: Vec<f64>,
}

impl InfluenceVector {
    pub fn new(tag: EstimandTag, values: Vec<f64>) -> Self {
        InfluenceVector { tag, values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Sample standard deviation (divisor n) of the influence values.
    pub fn sd(&self) -> f64 {
        std_dev(&self.values)
    }
}

/// Weight diagnostics surfaced with every estimate: the representer weights
/// blow up as q or p approach their boundaries, and users need to see it.
#[derive(Debug, Clone, Default, Serialize)]
pub struct WeightDiagnostics {
    pub max_abs_alpha: f64,
    pub min_p_hat: f64,
    pub max_p_hat: f64,
    pub p_clip_count: usize,
    pub pi_clip_count: usize,
}

/// Point estimate with influence-based standard error and a two-sided
/// normal confidence interval at level 1 - eta.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub estimate: f64,
    pub standard_error: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub eta: f64,
    pub n_used: usize,
    pub diagnostics: WeightDiagnostics,
}

/// Posited confounding strengths for the bias bound.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BiasBoundInputs {
    /// Nonparametric R^2 gain in the outcome regression from the unobserved
    /// confounders.
    pub c2_y: f64,
    /// Relative gain in the representer second moment.
    pub c2_d: f64,
    /// Correlation between the two confounding residuals; 1 is adversarial.
    pub rho: f64,
}

impl Default for BiasBoundInputs {
    fn default() -> Self {
        BiasBoundInputs {
            c2_y: 0.0,
            c2_d: 0.0,
            rho: 1.0,
        }
    }
}

impl BiasBoundInputs {
    pub fn new(c2_y: f64, c2_d: f64, rho: f64) -> Result<Self> {
        let inputs = BiasBoundInputs { c2_y, c2_d, rho };
        inputs.validate()?;
        Ok(inputs)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c2_y >= 0.0 && self.c2_d >= 0.0) {
            return Err(Error::Config("c2_y and c2_d must be >= 0".into()));
        }
        if !(-1.0..=1.0).contains(&self.rho) {
            return Err(Error::Config("rho must lie in [-1, 1]".into()));
        }
        Ok(())
    }
}

/// Plug-in Riesz representer value for one observation.
///
/// alpha = (1/q) ( d a / p - W ),  W = pi [ d(1-a) + (1-d) ] / ( pi(1-p) + 1-pi ).
#[inline]
pub fn riesz_alpha(obs: &Observation, p_hat: f64, pi_hat: f64, q_hat: f64) -> f64 {
    let d = f64::from(obs.d);
    let a = f64::from(obs.a);
    (d * a / p_hat - control_weight(d, a, p_hat, pi_hat)) / q_hat
}

#[inline]
fn control_weight(d: f64, a: f64, p_hat: f64, pi_hat: f64) -> f64 {
    pi_hat * (d * (1.0 - a) + (1.0 - d)) / (pi_hat * (1.0 - p_hat) + (1.0 - pi_hat))
}

fn weight_diagnostics(ds: &HctDataset, fits: &NuisanceFits) -> WeightDiagnostics {
    let mut diag = WeightDiagnostics {
        max_abs_alpha: 0.0,
        min_p_hat: f64::INFINITY,
        max_p_hat: f64::NEG_INFINITY,
        p_clip_count: fits.p_clip_count,
        pi_clip_count: fits.pi_clip_count,
    };
    for (slot, &row) in fits.row_ids.iter().enumerate() {
        let alpha = riesz_alpha(ds.row(row), fits.p_hat[slot], fits.pi_hat[slot], fits.q_hat);
        diag.max_abs_alpha = diag.max_abs_alpha.max(alpha.abs());
        diag.min_p_hat = diag.min_p_hat.min(fits.p_hat[slot]);
        diag.max_p_hat = diag.max_p_hat.max(fits.p_hat[slot]);
    }
    diag
}

fn report_from_influence(
    estimate: f64,
    phi: &[f64],
    eta: f64,
    diagnostics: WeightDiagnostics,
) -> EstimateReport {
    let n = phi.len();
    let se = std_dev(phi) / (n as f64).sqrt();
    let z = normal_quantile(1.0 - eta / 2.0);
    EstimateReport {
        estimate,
        standard_error: se,
        ci_low: estimate - z * se,
        ci_high: estimate + z * se,
        eta,
        n_used: n,
        diagnostics,
    }
}

/// Trial-specific ATE on the pooled dataset.
pub fn estimate_psi_hct(
    ds: &HctDataset,
    fits: &NuisanceFits,
    eta: f64,
) -> Result<(EstimateReport, InfluenceVector)> {
    check_eta(eta)?;
    if fits.q_hat <= 0.0 {
        return Err(Error::Numeric("q_hat is zero: no trial rows".into()));
    }
    let n = fits.len();
    let mut terms = Vec::with_capacity(n);
    for (slot, &row) in fits.row_ids.iter().enumerate() {
        let r = ds.row(row);
        let d = f64::from(r.d);
        let a = f64::from(r.a);
        let y = f64::from(r.y);
        let mu1 = fits.mu1_hat[slot];
        let mu0 = fits.mu0_hat[slot];
        let mu_at = if r.a == 1 { mu1 } else { mu0 };
        let w = control_weight(d, a, fits.p_hat[slot], fits.pi_hat[slot]);
        terms.push(d * (mu1 - mu0) + (d * a / fits.p_hat[slot] - w) * (y - mu_at));
    }
    let psi = mean(&terms) / fits.q_hat;

    let mut phi = Vec::with_capacity(n);
    for (slot, &row) in fits.row_ids.iter().enumerate() {
        let d = f64::from(ds.row(row).d);
        phi.push((terms[slot] - d * psi) / fits.q_hat);
    }
    let report = report_from_influence(psi, &phi, eta, weight_diagnostics(ds, fits));
    Ok((report, InfluenceVector::new(EstimandTag::PsiHct, phi)))
}

/// Standard AIPW average treatment effect over the trial rows only. The fits
/// must come from [`crate::crossfit::rct_only_nuisances`].
pub fn estimate_psi_rct(
    ds: &HctDataset,
    fits: &NuisanceFits,
    eta: f64,
) -> Result<(EstimateReport, InfluenceVector)> {
    check_eta(eta)?;
    let mut treated = 0usize;
    let mut controls = 0usize;
    for &row in &fits.row_ids {
        let r = ds.row(row);
        if r.d != 1 {
            return Err(Error::Numeric(
                "rct estimator requires trial-only nuisance fits".into(),
            ));
        }
        if r.a == 1 {
            treated += 1;
        } else {
            controls += 1;
        }
    }
    if treated == 0 || controls == 0 {
        return Err(Error::Numeric(
            "rct estimator needs both treated and control trial rows".into(),
        ));
    }

    let n = fits.len();
    let mut terms = Vec::with_capacity(n);
    for (slot, &row) in fits.row_ids.iter().enumerate() {
        let r = ds.row(row);
        let a = f64::from(r.a);
        let y = f64::from(r.y);
        let mu1 = fits.mu1_hat[slot];
        let mu0 = fits.mu0_hat[slot];
        let mu_at = if r.a == 1 { mu1 } else { mu0 };
        let p = fits.p_hat[slot];
        terms.push(mu1 - mu0 + (a / p - (1.0 - a) / (1.0 - p)) * (y - mu_at));
    }
    let psi = mean(&terms);
    let phi: Vec<f64> = terms.iter().map(|t| t - psi).collect();
    let report = report_from_influence(psi, &phi, eta, weight_diagnostics(ds, fits));
    Ok((report, InfluenceVector::new(EstimandTag::PsiRct, phi)))
}

/// Scale factor of the bias bound plus the influence pieces of its two
/// moments.
#[derive(Debug, Clone)]
pub struct ScaleEstimate {
    /// S = sqrt(sigma2 * nu2).
    pub s_hat: f64,
    /// Mean squared outcome residual E_n[(y - mu(a, x))^2].
    pub sigma2_hat: f64,
    /// Representer second moment E_n[alpha^2].
    pub nu2_hat: f64,
    pub phi_sigma2: InfluenceVector,
    pub phi_nu2: InfluenceVector,
}

/// Estimate S and the moment influence functions.
pub fn estimate_scale(ds: &HctDataset, fits: &NuisanceFits) -> Result<ScaleEstimate> {
    if fits.q_hat <= 0.0 {
        return Err(Error::Numeric("q_hat is zero: no trial rows".into()));
    }
    let n = fits.len();
    let mut sq_resid = Vec::with_capacity(n);
    let mut sq_alpha = Vec::with_capacity(n);
    for (slot, &row) in fits.row_ids.iter().enumerate() {
        let r = ds.row(row);
        let y = f64::from(r.y);
        let mu_at = if r.a == 1 {
            fits.mu1_hat[slot]
        } else {
            fits.mu0_hat[slot]
        };
        let alpha = riesz_alpha(r, fits.p_hat[slot], fits.pi_hat[slot], fits.q_hat);
        sq_resid.push((y - mu_at) * (y - mu_at));
        sq_alpha.push(alpha * alpha);
    }
    let sigma2 = mean(&sq_resid);
    let nu2 = mean(&sq_alpha);
    let phi_sigma2: Vec<f64> = sq_resid.iter().map(|v| v - sigma2).collect();
    let phi_nu2: Vec<f64> = sq_alpha.iter().map(|v| v - nu2).collect();
    Ok(ScaleEstimate {
        s_hat: (sigma2 * nu2).sqrt(),
        sigma2_hat: sigma2,
        nu2_hat: nu2,
        phi_sigma2: InfluenceVector::new(EstimandTag::Sigma2, phi_sigma2),
        phi_nu2: InfluenceVector::new(EstimandTag::Nu2, phi_nu2),
    })
}

/// Bias bound B = |rho| sqrt(c2_y c2_d) S with its influence function
///
/// ```text
/// phi_B = (|rho|/2) (C_Y C_D / S) (sigma2 phi_nu2 + nu2 phi_sigma2)
/// ```
///
/// When S or the posited gains are zero the bound is identically zero and so
/// is its influence function.
pub fn bias_bound(scale: &ScaleEstimate, inputs: &BiasBoundInputs) -> Result<(f64, InfluenceVector)> {
    inputs.validate()?;
    let cycd = (inputs.c2_y * inputs.c2_d).sqrt() * inputs.rho.abs();
    let b_hat = cycd * scale.s_hat;
    let n = scale.phi_sigma2.len();
    let values = if b_hat == 0.0 {
        vec![0.0; n]
    } else {
        let factor = 0.5 * cycd / scale.s_hat;
        (0..n)
            .map(|i| {
                factor
                    * (scale.sigma2_hat * scale.phi_nu2.values[i]
                        + scale.nu2_hat * scale.phi_sigma2.values[i])
            })
            .collect()
    };
    Ok((b_hat, InfluenceVector::new(EstimandTag::BiasBound, values)))
}

fn check_eta(eta: f64) -> Result<()> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::Config(format!("eta must lie in (0,1), got {eta}")));
    }
    Ok(())
}

/// Sample mean of the influence values; zero to numerical tolerance for
/// the plug-in-centered psi estimands.
pub fn influence_mean(phi: &InfluenceVector) -> f64 {
    pairwise_sum(&phi.values) / phi.values.len() as f64
}
