//! Partial-identification machinery around the bias bound: one-sided bound
//! estimates psi +/- B, a uniform confidence region, robustness values,
//! contour grids, and leave-one-out benchmarking of confounding strengths.
//!
//! The confidence region follows the one-sided-bound construction with
//! critical value c_eta solving
//!
//! ```text
//! Phi( c + sqrt(n) (psi_plus - psi_minus) / max(sigma_minus, sigma_plus) ) - Phi(-c) = 1 - eta
//! ```
//!
//! which bridges smoothly between the two-sided quantile (no bias, gap 0)
//! and the one-sided quantile (dominant bias, gap large), keeping coverage
//! uniform in the bound magnitude.

use rayon::prelude::*;
use serde::Serialize;

use crate::crossfit::{crossfit_nuisances, CrossfitPlan, NuisanceFits};
use crate::data::HctDataset;
use crate::error::{Error, Result};
use crate::estimation::{
    bias_bound, BiasBoundInputs, EstimandTag, EstimateReport, InfluenceVector, ScaleEstimate,
};
use crate::stats::{correlation, mean, normal_cdf, normal_quantile, std_dev};

/// Bound estimates with the uniform confidence region.
#[derive(Debug, Clone, Serialize)]
pub struct SensitivityReport {
    pub psi_hat: f64,
    pub b_hat: f64,
    pub psi_minus: f64,
    pub psi_plus: f64,
    pub sigma_minus: f64,
    pub sigma_plus: f64,
    pub c_eta: f64,
    pub region_low: f64,
    pub region_high: f64,
    pub eta: f64,
    pub inputs: BiasBoundInputs,
}

impl SensitivityReport {
    /// Does the confidence region exclude the threshold?
    pub fn significant_against(&self, threshold: f64) -> bool {
        threshold < self.region_low || threshold > self.region_high
    }
}

/// Solve the defining equation for the critical value c_eta given
/// `gap = sqrt(n) (psi_plus - psi_minus) / max(sigma_minus, sigma_plus)`.
///
/// g(c) = Phi(c + gap) - Phi(-c) - (1 - eta) is strictly increasing with a
/// guaranteed root bracket [z_{1-eta}, z_{1-eta/2}]; bisection converges to
/// a residual below 1e-10. A gap of exactly zero short-circuits to the
/// two-sided quantile so the no-bias region reproduces the naive confidence
/// interval to rounding error.
pub fn solve_c_eta(gap: f64, eta: f64) -> Result<f64> {
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::Config(format!("eta must lie in (0,1), got {eta}")));
    }
    if gap.is_nan() || gap < 0.0 {
        return Err(Error::Numeric(format!("gap must be finite and >= 0, got {gap}")));
    }
    if gap == 0.0 {
        return Ok(normal_quantile(1.0 - eta / 2.0));
    }
    let g = |c: f64| normal_cdf(c + gap) - normal_cdf(-c) - (1.0 - eta);
    let mut lo = normal_quantile(1.0 - eta);
    let mut hi = normal_quantile(1.0 - eta / 2.0);
    // g(lo) <= 0 <= g(hi) by construction; tighten until the bracket is at
    // floating-point resolution.
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let root = 0.5 * (lo + hi);
    debug_assert!(g(root).abs() <= 1e-10);
    Ok(root)
}

/// Build the bound pair and its uniform confidence region from a point
/// estimate, its influence values, and the bias bound pieces.
pub fn bounds_with_region(
    psi: &EstimateReport,
    phi_psi: &InfluenceVector,
    b_hat: f64,
    phi_b: &InfluenceVector,
    inputs: &BiasBoundInputs,
    eta: f64,
) -> Result<SensitivityReport> {
    if phi_psi.len() != phi_b.len() {
        return Err(Error::Numeric(
            "influence vectors have mismatched lengths".into(),
        ));
    }
    let n = phi_psi.len() as f64;
    let phi_minus: Vec<f64> = phi_psi
        .values
        .iter()
        .zip(&phi_b.values)
        .map(|(p, b)| p - b)
        .collect();
    let phi_plus: Vec<f64> = phi_psi
        .values
        .iter()
        .zip(&phi_b.values)
        .map(|(p, b)| p + b)
        .collect();
    let sigma_minus = std_dev(&phi_minus);
    let sigma_plus = std_dev(&phi_plus);
    let psi_minus = psi.estimate - b_hat;
    let psi_plus = psi.estimate + b_hat;

    let sigma_max = sigma_minus.max(sigma_plus);
    let gap = if sigma_max > 0.0 {
        n.sqrt() * (psi_plus - psi_minus) / sigma_max
    } else {
        0.0 // degenerate: zero-variance bounds give a point region below
    };
    let c_eta = solve_c_eta(gap, eta)?;
    let sqrt_n = n.sqrt();
    Ok(SensitivityReport {
        psi_hat: psi.estimate,
        b_hat,
        psi_minus,
        psi_plus,
        sigma_minus,
        sigma_plus,
        c_eta,
        region_low: psi_minus - c_eta * sigma_minus / sqrt_n,
        region_high: psi_plus + c_eta * sigma_plus / sqrt_n,
        eta,
        inputs: *inputs,
    })
}

/// Everything needed to re-evaluate the region at new confounding strengths.
#[derive(Debug, Clone)]
pub struct AnalysisContext {
    pub psi: EstimateReport,
    pub phi_psi: InfluenceVector,
    pub scale: ScaleEstimate,
    pub rho: f64,
}

impl AnalysisContext {
    pub fn new(
        psi: EstimateReport,
        phi_psi: InfluenceVector,
        scale: ScaleEstimate,
        rho: f64,
    ) -> Self {
        AnalysisContext {
            psi,
            phi_psi,
            scale,
            rho,
        }
    }

    /// Region at posited (c2_y, c2_d) with this context's rho.
    pub fn evaluate(&self, c2_y: f64, c2_d: f64, eta: f64) -> Result<SensitivityReport> {
        let inputs = BiasBoundInputs::new(c2_y, c2_d, self.rho)?;
        let (b_hat, phi_b) = bias_bound(&self.scale, &inputs)?;
        bounds_with_region(&self.psi, &self.phi_psi, b_hat, &phi_b, &inputs, eta)
    }
}

/// Smallest common confounding strength c2 = c2_y = c2_d that makes the
/// confidence region cover the threshold.
#[derive(Debug, Clone, Serialize)]
pub struct RobustnessValue {
    pub rv: f64,
    /// False when the naive analysis is already insignificant (rv = 0) or no
    /// strength up to rv_max flips the finding (rv = rv_max).
    pub achieved: bool,
}

pub fn robustness_value(
    ctx: &AnalysisContext,
    threshold: f64,
    eta: f64,
    rv_max: f64,
) -> Result<RobustnessValue> {
    if rv_max.is_nan() || rv_max <= 0.0 {
        return Err(Error::Config("rv_max must be positive".into()));
    }
    let naive = ctx.evaluate(0.0, 0.0, eta)?;
    if !naive.significant_against(threshold) {
        return Ok(RobustnessValue {
            rv: 0.0,
            achieved: false,
        });
    }
    let significant_at = |c2: f64| -> Result<bool> {
        Ok(ctx.evaluate(c2, c2, eta)?.significant_against(threshold))
    };
    if significant_at(rv_max)? {
        return Ok(RobustnessValue {
            rv: rv_max,
            achieved: false,
        });
    }
    // Region width grows with c2, so significance flips exactly once.
    let mut lo = 0.0;
    let mut hi = rv_max;
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if significant_at(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(RobustnessValue {
        rv: hi,
        achieved: true,
    })
}

/// Grid specification for contour emission.
#[derive(Debug, Clone, Serialize)]
pub struct GridSpec {
    pub c2_d_max: f64,
    pub c2_y_max: f64,
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            c2_d_max: 0.3,
            c2_y_max: 0.3,
            points: 21,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ContourCell {
    pub c2_d: f64,
    pub c2_y: f64,
    pub lower: f64,
    pub upper: f64,
    pub significant: bool,
}

/// Confidence-bound surface over a (c2_d, c2_y) grid.
#[derive(Debug, Clone, Serialize)]
pub struct ContourGrid {
    pub c2_d_axis: Vec<f64>,
    pub c2_y_axis: Vec<f64>,
    pub threshold: f64,
    /// Row-major over (c2_d outer, c2_y inner).
    pub cells: Vec<ContourCell>,
}

pub fn contour_grid(
    ctx: &AnalysisContext,
    grid: &GridSpec,
    threshold: f64,
    eta: f64,
) -> Result<ContourGrid> {
    if grid.points < 2 {
        return Err(Error::Config("grid needs at least 2 points per axis".into()));
    }
    if !(grid.c2_d_max > 0.0 && grid.c2_y_max > 0.0) {
        return Err(Error::Config("grid maxima must be positive".into()));
    }
    let axis = |max: f64| -> Vec<f64> {
        (0..grid.points)
            .map(|i| max * i as f64 / (grid.points - 1) as f64)
            .collect()
    };
    let c2_d_axis = axis(grid.c2_d_max);
    let c2_y_axis = axis(grid.c2_y_max);
    let cells: Vec<ContourCell> = c2_d_axis
        .par_iter()
        .flat_map_iter(|&c2_d| c2_y_axis.iter().map(move |&c2_y| (c2_d, c2_y)))
        .map(|(c2_d, c2_y)| {
            let report = ctx.evaluate(c2_y, c2_d, eta)?;
            Ok(ContourCell {
                c2_d,
                c2_y,
                lower: report.region_low,
                upper: report.region_high,
                significant: report.significant_against(threshold),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ContourGrid {
        c2_d_axis,
        c2_y_axis,
        threshold,
        cells,
    })
}

/// Benchmarked confounding strengths from treating observed covariate `j`
/// as unobserved.
#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkGains {
    pub covariate: usize,
    pub c2_y: f64,
    pub c2_d: f64,
    pub rho: f64,
}

/// Leave-one-out benchmarking: refit the nuisances without covariate `j`
/// (the short fits) and with it (the long fits), then compare outcome
/// regressions and representers.
pub fn benchmark_leave_one_out(
    ds: &HctDataset,
    plan: &CrossfitPlan,
    j: usize,
) -> Result<BenchmarkGains> {
    if ds.k() < 2 {
        return Err(Error::Config(
            "leave-one-out benchmarking needs at least 2 covariates".into(),
        ));
    }
    if j >= ds.k() {
        return Err(Error::Config(format!(
            "covariate index {} out of range (k = {})",
            j,
            ds.k()
        )));
    }
    let long_fits = crossfit_nuisances(ds, plan)?;
    let short_ds = ds.drop_covariate(j)?;
    let short_fits = crossfit_nuisances(&short_ds, plan)?;
    Ok(gains_from_fits(ds, &long_fits, &short_fits, j))
}

fn gains_from_fits(
    ds: &HctDataset,
    long: &NuisanceFits,
    short: &NuisanceFits,
    j: usize,
) -> BenchmarkGains {
    let n = long.len();
    let mut mu_diff = Vec::with_capacity(n);
    let mut alpha_diff = Vec::with_capacity(n);
    let mut sq_alpha_long = Vec::with_capacity(n);
    let mut sq_alpha_short = Vec::with_capacity(n);
    let mut sq_resid_short = Vec::with_capacity(n);
    for (slot, &row) in long.row_ids.iter().enumerate() {
        let r = ds.row(row);
        let y = f64::from(r.y);
        let mu_long = if r.a == 1 {
            long.mu1_hat[slot]
        } else {
            long.mu0_hat[slot]
        };
        let mu_short = if r.a == 1 {
            short.mu1_hat[slot]
        } else {
            short.mu0_hat[slot]
        };
        let a_long =
            crate::estimation::riesz_alpha(r, long.p_hat[slot], long.pi_hat[slot], long.q_hat);
        let a_short =
            crate::estimation::riesz_alpha(r, short.p_hat[slot], short.pi_hat[slot], short.q_hat);
        mu_diff.push(mu_long - mu_short);
        alpha_diff.push(a_long - a_short);
        sq_alpha_long.push(a_long * a_long);
        sq_alpha_short.push(a_short * a_short);
        sq_resid_short.push((y - mu_short) * (y - mu_short));
    }
    let nu2_long = mean(&sq_alpha_long);
    let nu2_short = mean(&sq_alpha_short);
    let sq_mu_diff: Vec<f64> = mu_diff.iter().map(|v| v * v).collect();
    // Finite-sample moment differences can dip below the population floor of
    // zero; the reported gain is floored accordingly.
    let c2_d = ((nu2_long - nu2_short) / nu2_short).max(0.0);
    let c2_y = mean(&sq_mu_diff) / mean(&sq_resid_short);
    let rho = correlation(&mu_diff, &alpha_diff);
    BenchmarkGains {
        covariate: j,
        c2_y,
        c2_d,
        rho,
    }
}

/// Point-estimate variant of the robustness value: smallest c2 where the
/// bound interval [psi - B, psi + B] itself covers the threshold, ignoring
/// sampling uncertainty.
pub fn robustness_value_point(
    ctx: &AnalysisContext,
    threshold: f64,
    rv_max: f64,
) -> Result<RobustnessValue> {
    if rv_max.is_nan() || rv_max <= 0.0 {
        return Err(Error::Config("rv_max must be positive".into()));
    }
    let covered = |c2: f64| -> Result<bool> {
        let inputs = BiasBoundInputs::new(c2, c2, ctx.rho)?;
        let (b_hat, _) = bias_bound(&ctx.scale, &inputs)?;
        Ok(threshold >= ctx.psi.estimate - b_hat && threshold <= ctx.psi.estimate + b_hat)
    };
    if covered(0.0)? {
        return Ok(RobustnessValue {
            rv: 0.0,
            achieved: false,
        });
    }
    if !covered(rv_max)? {
        return Ok(RobustnessValue {
            rv: rv_max,
            achieved: false,
        });
    }
    let mut lo = 0.0;
    let mut hi = rv_max;
    while hi - lo > 1e-6 {
        let mid = 0.5 * (lo + hi);
        if covered(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(RobustnessValue {
        rv: hi,
        achieved: true,
    })
}

/// Synthetic context helper for tests and dry runs.
pub fn context_from_parts(
    psi: EstimateReport,
    phi_psi: Vec<f64>,
    scale: ScaleEstimate,
    rho: f64,
) -> AnalysisContext {
    AnalysisContext::new(
        psi,
        InfluenceVector::new(EstimandTag::PsiHct, phi_psi),
        scale,
        rho,
    )
}
