//! Ground-truth quantities for simulated scenarios.
//!
//! The observable support is finite (12 cells over d, a, x, z), so every
//! population quantity — the causal and observable trial-specific ATEs, the
//! bias between them, the confounding strengths, and the bound scale — has a
//! closed form by enumerating cell probabilities and Gaussian-threshold cell
//! means. A sampling-based oracle with batch-mean standard errors is kept as
//! an independent cross-check of the enumeration.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::crossfit::NuisanceFits;
use crate::error::{Error, Result};
use crate::simulation::dgp::{
    latent_outcome, Scenario, SimulatedTrial, COVARIATE_RATE, LATENT_CUTOFF, LATENT_INTERCEPT,
    LATENT_X_COEF, LATENT_Z_COEF, TREAT_RATE, TRIAL_Z_RATE,
};
use crate::stats::{derive_seed, normal_cdf, standard_normal};

/// Population truths for one scenario.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OracleValues {
    /// Causal trial-specific ATE E[Y1 - Y0 | D = 1].
    pub psi_star: f64,
    /// Observable estimand under pooling (short regressions).
    pub psi_obs: f64,
    /// True bias |psi_star - psi_obs|.
    pub b: f64,
    /// True outcome-regression confounding strength.
    pub c2_y_true: f64,
    /// True representer confounding strength.
    pub c2_d_true: f64,
    /// Population bound scale S = sqrt(sigma2 nu2).
    pub s_true: f64,
}

/// True P(Y=1 | A=a, X=x, Z=z): Gaussian threshold of the latent score.
#[inline]
pub fn cell_mean(beta: f64, a: f64, x: f64, z: f64) -> f64 {
    normal_cdf(LATENT_INTERCEPT + beta * a + LATENT_X_COEF * x + LATENT_Z_COEF * z - LATENT_CUTOFF)
}

#[derive(Clone, Copy)]
struct Cell {
    d: usize,
    a: usize,
    x: usize,
    z: usize,
    prob: f64,
}

fn z_rate(sc: &Scenario, d: usize) -> f64 {
    if d == 1 {
        TRIAL_Z_RATE
    } else {
        sc.zeta
    }
}

fn cells(sc: &Scenario) -> Vec<Cell> {
    let mut out = Vec::with_capacity(12);
    for d in 0..2usize {
        let pd = if d == 1 { sc.q } else { 1.0 - sc.q };
        for a in 0..2usize {
            let pa = if d == 1 {
                if a == 1 {
                    TREAT_RATE
                } else {
                    1.0 - TREAT_RATE
                }
            } else if a == 0 {
                1.0
            } else {
                0.0
            };
            if pa == 0.0 {
                continue;
            }
            for x in 0..2usize {
                let px = if x == 1 {
                    COVARIATE_RATE
                } else {
                    1.0 - COVARIATE_RATE
                };
                for z in 0..2usize {
                    let pz = if z == 1 {
                        z_rate(sc, d)
                    } else {
                        1.0 - z_rate(sc, d)
                    };
                    out.push(Cell {
                        d,
                        a,
                        x,
                        z,
                        prob: pd * pa * px * pz,
                    });
                }
            }
        }
    }
    out
}

struct ShortFunctions {
    /// mu1(x) = E[Y | A=1, X=x, D=1]
    mu1: [f64; 2],
    /// Pooled mu0(x) = E[Y | A=0, X=x] over both arms.
    mu0_pool: [f64; 2],
    /// Trial-only control regression, for the causal estimand.
    mu0_trial: [f64; 2],
}

fn short_functions(sc: &Scenario) -> ShortFunctions {
    let mix = |d: usize, a: usize, x: usize| -> f64 {
        let pz1 = z_rate(sc, d);
        (1.0 - pz1) * cell_mean(sc.beta, a as f64, x as f64, 0.0)
            + pz1 * cell_mean(sc.beta, a as f64, x as f64, 1.0)
    };
    let mut mu1 = [0.0; 2];
    let mut mu0_trial = [0.0; 2];
    let mut mu0_ext = [0.0; 2];
    for x in 0..2 {
        mu1[x] = mix(1, 1, x);
        mu0_trial[x] = mix(1, 0, x);
        mu0_ext[x] = mix(0, 0, x);
    }
    // P(D=1 | A=0) weights the pooled control regression. If the confounder
    // distribution matches across arms the mixture collapses exactly.
    let w = TREAT_RATE * sc.q / (1.0 - TREAT_RATE * sc.q);
    let mut mu0_pool = [0.0; 2];
    for x in 0..2 {
        mu0_pool[x] = if sc.zeta == TRIAL_Z_RATE {
            mu0_trial[x]
        } else {
            w * mu0_trial[x] + (1.0 - w) * mu0_ext[x]
        };
    }
    ShortFunctions {
        mu1,
        mu0_pool,
        mu0_trial,
    }
}

/// Short (observable) representer value; pi(x) = q because X and D are
/// independent under the generator, p(x) = 1/2.
fn alpha_short(sc: &Scenario, d: usize, a: usize) -> f64 {
    if d == 1 && a == 1 {
        return 1.0 / (sc.q * TREAT_RATE);
    }
    let denom = sc.q * (1.0 - TREAT_RATE) + (1.0 - sc.q);
    -(sc.q / denom) / sc.q
}

/// Long representer value; the long selection propensity conditions on Z.
fn alpha_long(sc: &Scenario, d: usize, a: usize, z: usize) -> f64 {
    if d == 1 && a == 1 {
        return 1.0 / (sc.q * TREAT_RATE);
    }
    let pi = if sc.zeta == TRIAL_Z_RATE {
        sc.q
    } else {
        let pz_trial = if z == 1 { TRIAL_Z_RATE } else { 1.0 - TRIAL_Z_RATE };
        let pz_ext = if z == 1 { sc.zeta } else { 1.0 - sc.zeta };
        sc.q * pz_trial / (sc.q * pz_trial + (1.0 - sc.q) * pz_ext)
    };
    let w = pi / (pi * (1.0 - TREAT_RATE) + (1.0 - pi));
    -w / sc.q
}

/// Exact oracle by cell enumeration.
pub fn oracle_values(sc: &Scenario) -> Result<OracleValues> {
    sc.validate()?;
    let cells = cells(sc);
    let short = short_functions(sc);

    let px = [1.0 - COVARIATE_RATE, COVARIATE_RATE];
    let mut psi_star = 0.0;
    let mut psi_obs = 0.0;
    for (x, p) in px.iter().enumerate() {
        psi_star += p * (short.mu1[x] - short.mu0_trial[x]);
        psi_obs += p * (short.mu1[x] - short.mu0_pool[x]);
    }
    let b = if sc.zeta == TRIAL_Z_RATE {
        0.0
    } else {
        (psi_star - psi_obs).abs()
    };

    let mu_short_at = |a: usize, x: usize| -> f64 {
        if a == 1 {
            short.mu1[x]
        } else {
            short.mu0_pool[x]
        }
    };

    let mut sigma2 = 0.0;
    let mut nu2 = 0.0;
    let mut nu2_long = 0.0;
    let mut c2y_num = 0.0;
    for c in &cells {
        let m = cell_mean(sc.beta, c.a as f64, c.x as f64, c.z as f64);
        let fitted = mu_short_at(c.a, c.x);
        // E[(Y - fitted)^2 | cell] for binary Y with mean m
        sigma2 += c.prob * (m - 2.0 * fitted * m + fitted * fitted);
        c2y_num += c.prob * (m - fitted) * (m - fitted);
        let a_s = alpha_short(sc, c.d, c.a);
        nu2 += c.prob * a_s * a_s;
        let a_l = alpha_long(sc, c.d, c.a, c.z);
        nu2_long += c.prob * a_l * a_l;
    }
    let c2_d_true = if sc.zeta == TRIAL_Z_RATE {
        0.0
    } else {
        ((nu2_long - nu2) / nu2).max(0.0)
    };
    Ok(OracleValues {
        psi_star,
        psi_obs,
        b,
        c2_y_true: c2y_num / sigma2,
        c2_d_true,
        s_true: (sigma2 * nu2).sqrt(),
    })
}

/// Batch-mean standard errors for the sampled oracle; `diff` refers to the
/// signed gap psi_star - psi_obs that underlies b.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct OracleStdErrs {
    pub psi_star: f64,
    pub psi_obs: f64,
    pub diff: f64,
    pub c2_y: f64,
    pub c2_d: f64,
    pub s: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct McOracle {
    pub values: OracleValues,
    pub se: OracleStdErrs,
    pub draws: usize,
    pub batches: usize,
}

#[derive(Default, Clone, Copy)]
struct CellStat {
    count: f64,
    sum_y: f64,
}

/// Sampled oracle over hypothetical participants, reproducing the generator
/// exactly and reducing to the same cell functionals as the enumeration.
/// Counterfactual outcomes share the noise draw, so causal consistency holds
/// row by row. Point estimates come from the pooled cell table (keeping the
/// plug-in bias of the nonlinear functionals at the full sample size);
/// standard errors come from batch-mean dispersion.
pub fn oracle_values_mc(sc: &Scenario, draws: usize, batches: usize, seed: u64) -> Result<McOracle> {
    sc.validate()?;
    if batches < 2 || draws < batches * 1000 {
        return Err(Error::Config(
            "mc oracle needs >= 2 batches and >= 1000 draws per batch".into(),
        ));
    }
    let per_batch = draws / batches;
    let mut batch_vals: Vec<[f64; 6]> = Vec::with_capacity(batches);
    let mut pooled = [CellStat::default(); 16];
    let mut pooled_n1 = 0.0f64;
    let mut pooled_cf_diff = 0.0f64;

    for batch in 0..batches {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[0x0_bac1e, batch as u64]));
        // cell index: d*8 + a*4 + x*2 + z over the latent support
        let mut stats = [CellStat::default(); 16];
        let mut n1 = 0.0f64;
        let mut sum_cf_diff = 0.0f64;
        for _ in 0..per_batch {
            let d = usize::from(rng.gen_bool(sc.q));
            let x = usize::from(rng.gen_bool(COVARIATE_RATE));
            let z = usize::from(rng.gen_bool(z_rate(sc, d)));
            let a = if d == 1 {
                usize::from(rng.gen_bool(TREAT_RATE))
            } else {
                0
            };
            let noise = standard_normal(&mut rng);
            let y1 = latent_outcome(sc.beta, 1.0, x as f64, z as f64, noise);
            let y0 = latent_outcome(sc.beta, 0.0, x as f64, z as f64, noise);
            let y = if a == 1 { y1 } else { y0 };
            let idx = d * 8 + a * 4 + x * 2 + z;
            stats[idx].count += 1.0;
            stats[idx].sum_y += f64::from(y);
            if d == 1 {
                n1 += 1.0;
                sum_cf_diff += f64::from(y1) - f64::from(y0);
            }
        }
        for (p, s) in pooled.iter_mut().zip(&stats) {
            p.count += s.count;
            p.sum_y += s.sum_y;
        }
        pooled_n1 += n1;
        pooled_cf_diff += sum_cf_diff;
        batch_vals.push(batch_functionals(&stats, per_batch as f64, n1, sum_cf_diff)?);
    }

    let point = batch_functionals(
        &pooled,
        (per_batch * batches) as f64,
        pooled_n1,
        pooled_cf_diff,
    )?;
    let se_of = |idx: usize| -> f64 {
        let vals: Vec<f64> = batch_vals.iter().map(|b| b[idx]).collect();
        crate::stats::std_dev(&vals) / (batches as f64).sqrt()
    };
    Ok(McOracle {
        values: OracleValues {
            psi_star: point[0],
            psi_obs: point[1],
            b: point[2].abs(),
            c2_y_true: point[3],
            c2_d_true: point[4],
            s_true: point[5],
        },
        se: OracleStdErrs {
            psi_star: se_of(0),
            psi_obs: se_of(1),
            diff: se_of(2),
            c2_y: se_of(3),
            c2_d: se_of(4),
            s: se_of(5),
        },
        draws: per_batch * batches,
        batches,
    })
}

/// Reduce one batch's cell table to the six tracked functionals.
fn batch_functionals(
    stats: &[CellStat; 16],
    total: f64,
    n1: f64,
    sum_cf_diff: f64,
) -> Result<[f64; 6]> {
    let get = |d: usize, a: usize, x: usize, z: usize| stats[d * 8 + a * 4 + x * 2 + z];
    let marg = |d: usize, a: usize, x: usize| -> CellStat {
        let c0 = get(d, a, x, 0);
        let c1 = get(d, a, x, 1);
        CellStat {
            count: c0.count + c1.count,
            sum_y: c0.sum_y + c1.sum_y,
        }
    };
    for d in 0..2 {
        for x in 0..2 {
            for z in 0..2 {
                let a_range: &[usize] = if d == 1 { &[0, 1] } else { &[0] };
                for &a in a_range {
                    if get(d, a, x, z).count == 0.0 {
                        return Err(Error::Numeric(
                            "mc oracle batch has an empty support cell; increase draws".into(),
                        ));
                    }
                }
            }
        }
    }

    let psi_star_b = sum_cf_diff / n1;

    // empirical short regressions
    let mut mu1 = [0.0f64; 2];
    let mut mu0_pool = [0.0f64; 2];
    let mut p_hat = [0.0f64; 2];
    let mut pi_hat = [0.0f64; 2];
    let mut px = [0.0f64; 2];
    for x in 0..2 {
        let t = marg(1, 1, x);
        mu1[x] = t.sum_y / t.count;
        let c_trial = marg(1, 0, x);
        let c_ext = marg(0, 0, x);
        mu0_pool[x] = (c_trial.sum_y + c_ext.sum_y) / (c_trial.count + c_ext.count);
        let trial_x = t.count + c_trial.count;
        p_hat[x] = t.count / trial_x;
        let all_x = trial_x + c_ext.count;
        pi_hat[x] = trial_x / all_x;
        px[x] = all_x / total;
    }
    let q_hat = n1 / total;

    let mut psi_obs_b = 0.0;
    for x in 0..2 {
        psi_obs_b += px[x] * (mu1[x] - mu0_pool[x]);
    }

    // empirical long regressions and representers over the latent support
    let mut sigma2 = 0.0;
    let mut nu2 = 0.0;
    let mut nu2_long = 0.0;
    let mut c2y_num = 0.0;
    for d in 0..2 {
        let a_range: &[usize] = if d == 1 { &[0, 1] } else { &[0] };
        for &a in a_range {
            for x in 0..2 {
                for z in 0..2 {
                    let cell = get(d, a, x, z);
                    let prob = cell.count / total;
                    let m_long = cell.sum_y / cell.count;
                    let fitted = if a == 1 { mu1[x] } else { mu0_pool[x] };
                    sigma2 += prob * (m_long - 2.0 * fitted * m_long + fitted * fitted);
                    c2y_num += prob * (m_long - fitted) * (m_long - fitted);

                    let a_s = empirical_alpha(q_hat, p_hat[x], pi_hat[x], d, a);
                    nu2 += prob * a_s * a_s;
                    // long pi from cell counts: P(D=1 | x, z)
                    let trial_xz = get(1, 0, x, z).count + get(1, 1, x, z).count;
                    let all_xz = trial_xz + get(0, 0, x, z).count;
                    let pi_long = trial_xz / all_xz;
                    let p_long = get(1, 1, x, z).count / trial_xz;
                    let a_l = empirical_alpha(q_hat, p_long, pi_long, d, a);
                    nu2_long += prob * a_l * a_l;
                }
            }
        }
    }
    let c2_d_b = (nu2_long - nu2) / nu2;
    let c2_y_b = c2y_num / sigma2;
    let s_b = (sigma2 * nu2).sqrt();
    Ok([
        psi_star_b,
        psi_obs_b,
        psi_star_b - psi_obs_b,
        c2_y_b,
        c2_d_b,
        s_b,
    ])
}

fn empirical_alpha(q: f64, p: f64, pi: f64, d: usize, a: usize) -> f64 {
    if d == 1 && a == 1 {
        return 1.0 / (q * p);
    }
    let w = pi / (pi * (1.0 - p) + (1.0 - pi));
    -w / q
}

/// Nuisance fits filled with the population truths; the backbone of the
/// estimator consistency and representer-identity checks.
pub fn oracle_nuisance_fits(trial: &SimulatedTrial, sc: &Scenario) -> NuisanceFits {
    let ds = &trial.dataset;
    let short = short_functions(sc);
    let n = ds.n();
    let mut mu1 = Vec::with_capacity(n);
    let mut mu0 = Vec::with_capacity(n);
    for r in ds.rows() {
        let x = usize::from(r.x[0] == 1.0);
        mu1.push(short.mu1[x]);
        mu0.push(short.mu0_pool[x]);
    }
    NuisanceFits {
        row_ids: (0..n).collect(),
        mu1_hat: mu1,
        mu0_hat: mu0,
        p_hat: vec![TREAT_RATE; n],
        pi_hat: vec![sc.q; n],
        q_hat: ds.n1() as f64 / n as f64,
        fold_assignments: vec![],
        p_clip_count: 0,
        pi_clip_count: 0,
    }
}
