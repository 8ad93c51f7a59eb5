//! Synthetic trial generator.
//!
//! One binary observed covariate X, one binary latent confounder Z whose
//! distribution differs between trial and external units, a randomized
//! binary treatment inside the trial, and a binary outcome thresholded from
//! a Gaussian latent score:
//!
//! ```text
//! D ~ Bern(q)            X ~ Bern(0.6)
//! Z | D=1 ~ Bern(0.3)    Z | D=0 ~ Bern(zeta)
//! A | D=1 ~ Bern(0.5)    A = 0 when D = 0
//! Y* = 9.5 + beta A - 0.45 X + 0.75 Z + N(0,1),   Y = 1{Y* >= 10}
//! ```
//!
//! Z is returned in a sidecar and never enters the analysis path unless a
//! benchmarking variant explicitly promotes it to an observed covariate.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{HctDataset, Observation};
use crate::error::{Error, Result};
use crate::stats::standard_normal;

pub const TRIAL_Z_RATE: f64 = 0.3;
pub const COVARIATE_RATE: f64 = 0.6;
pub const TREAT_RATE: f64 = 0.5;
pub const LATENT_INTERCEPT: f64 = 9.5;
pub const LATENT_X_COEF: f64 = -0.45;
pub const LATENT_Z_COEF: f64 = 0.75;
pub const LATENT_CUTOFF: f64 = 10.0;

/// How the total sample size is pinned down.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SizeSpec {
    /// Desired trial size; n = round(n1 / q).
    TargetTrial { n1: usize },
    /// Desired arm sizes; q = n1 / (n1 + n0).
    Arms { n1: usize, n0: usize },
    /// Total size used as-is.
    Total { n: usize },
}

/// DGP parameter bundle for one simulated configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    /// Trial-participation probability.
    pub q: f64,
    /// P(Z = 1 | D = 0); the trial-side rate is fixed at 0.3.
    pub zeta: f64,
    /// Treatment effect on the latent score.
    pub beta: f64,
    pub size: SizeSpec,
    pub replicates: usize,
    pub seed: u64,
}

impl Scenario {
    pub fn new(name: &str, q: f64, zeta: f64, beta: f64, size: SizeSpec) -> Result<Self> {
        let sc = Scenario {
            name: name.to_string(),
            q,
            zeta,
            beta,
            size,
            replicates: 500,
            seed: 509,
        };
        sc.validate()?;
        Ok(sc)
    }

    /// Arm-sized scenario; q is derived. A zero external arm gives q = 1 and
    /// a trial-only draw.
    pub fn with_arms(name: &str, n1: usize, n0: usize, zeta: f64, beta: f64) -> Result<Self> {
        let q = n1 as f64 / (n1 + n0) as f64;
        Scenario::new(name, q, zeta, beta, SizeSpec::Arms { n1, n0 })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0 && self.q <= 1.0) {
            return Err(Error::Config(format!(
                "scenario q must lie in (0, 1], got {}",
                self.q
            )));
        }
        if !(self.zeta > 0.0 && self.zeta < 1.0) {
            return Err(Error::Config(format!(
                "scenario zeta must lie in (0, 1), got {}",
                self.zeta
            )));
        }
        if self.total_n() < 2 {
            return Err(Error::Config("scenario size gives n < 2".into()));
        }
        Ok(())
    }

    pub fn total_n(&self) -> usize {
        match self.size {
            SizeSpec::TargetTrial { n1 } => (n1 as f64 / self.q).round() as usize,
            SizeSpec::Arms { n1, n0 } => n1 + n0,
            SizeSpec::Total { n } => n,
        }
    }
}

/// A drawn dataset with the latent confounder kept aside for oracle use.
#[derive(Debug, Clone)]
pub struct SimulatedTrial {
    pub dataset: HctDataset,
    /// Z per row, aligned with `dataset`.
    pub z: Vec<u8>,
}

/// Latent-score outcome for given arm, covariate, confounder, and noise.
#[inline]
pub fn latent_outcome(beta: f64, a: f64, x: f64, z: f64, noise: f64) -> u8 {
    let score = LATENT_INTERCEPT + beta * a + LATENT_X_COEF * x + LATENT_Z_COEF * z + noise;
    u8::from(score >= LATENT_CUTOFF)
}

struct DrawnRow {
    obs: Observation,
    z: u8,
}

fn draw_row<R: Rng>(sc: &Scenario, observe_z: bool, rng: &mut R) -> DrawnRow {
    let d = u8::from(rng.gen_bool(sc.q));
    let x = f64::from(rng.gen_bool(COVARIATE_RATE));
    let z_rate = if d == 1 { TRIAL_Z_RATE } else { sc.zeta };
    let z = u8::from(rng.gen_bool(z_rate));
    let a = if d == 1 {
        u8::from(rng.gen_bool(TREAT_RATE))
    } else {
        0
    };
    let noise = standard_normal(rng);
    let y = latent_outcome(sc.beta, f64::from(a), x, f64::from(z), noise);
    let covariates = if observe_z {
        vec![x, f64::from(z)]
    } else {
        vec![x]
    };
    DrawnRow {
        obs: Observation::new(d, a, covariates, y),
        z,
    }
}

fn draw_impl<R: Rng>(sc: &Scenario, observe_z: bool, rng: &mut R) -> Result<SimulatedTrial> {
    sc.validate()?;
    let n = sc.total_n();
    let mut rows = Vec::with_capacity(n);
    let mut zs = Vec::with_capacity(n);
    for _ in 0..n {
        let drawn = draw_row(sc, observe_z, rng);
        rows.push(drawn.obs);
        zs.push(drawn.z);
    }
    Ok(SimulatedTrial {
        dataset: HctDataset::new(rows)?,
        z: zs,
    })
}

/// Draw one trial with X as the only observed covariate.
pub fn draw_trial<R: Rng>(sc: &Scenario, rng: &mut R) -> Result<SimulatedTrial> {
    draw_impl(sc, false, rng)
}

/// Draw with Z promoted to an observed covariate (columns [x, z]); used to
/// validate leave-one-out benchmarking against the oracle strengths.
pub fn draw_trial_observed_z<R: Rng>(sc: &Scenario, rng: &mut R) -> Result<SimulatedTrial> {
    draw_impl(sc, true, rng)
}
