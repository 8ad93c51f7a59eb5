//! K-fold cross-fitting of the nuisance regressions.
//!
//! Every row receives out-of-fold predictions for the four nuisances:
//! mu1(x) = E[Y | A=1, X, D=1], trained on treated trial rows;
//! mu0(x) = E[Y | A=0, X], trained on pooled control rows (both arms);
//! p(x) = P(A=1 | X, D=1), trained on trial rows;
//! pi(x) = P(D=1 | X), trained on all rows.
//! Folds are stratified by the (d, a) cell so small subgroups appear in every
//! training split. Optional repeated cross-fitting re-partitions the data and
//! aggregates predictions by the elementwise median.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::HctDataset;
use crate::error::{Error, Result};
use crate::learners::{clip_probability, fit, FeatureMatrix, LearnerSpec};
use crate::stats::derive_seed;

/// Cross-fitting configuration: fold count, repetitions, and a learner spec
/// per nuisance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CrossfitPlan {
    pub folds: usize,
    pub repetitions: usize,
    pub seed: u64,
    pub clip_epsilon: f64,
    pub mu1: LearnerSpec,
    pub mu0: LearnerSpec,
    pub p: LearnerSpec,
    pub pi: LearnerSpec,
}

impl CrossfitPlan {
    /// Default plan: K=5, R=1, one learner spec cloned across nuisances.
    pub fn new(folds: usize, repetitions: usize, seed: u64, learner: LearnerSpec) -> Self {
        CrossfitPlan {
            folds,
            repetitions,
            seed,
            clip_epsilon: 0.01,
            mu1: learner.clone(),
            mu0: learner.clone(),
            p: learner.clone(),
            pi: learner,
        }
    }

    fn validate(&self, n: usize) -> Result<()> {
        if self.folds < 2 {
            return Err(Error::Config("crossfit: folds must be >= 2".into()));
        }
        if self.folds > n {
            return Err(Error::Config(format!(
                "crossfit: folds {} exceed rows {}",
                self.folds, n
            )));
        }
        if self.repetitions < 1 {
            return Err(Error::Config("crossfit: repetitions must be >= 1".into()));
        }
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 0.5) {
            return Err(Error::Config(
                "crossfit: clip_epsilon must be in (0, 0.5)".into(),
            ));
        }
        Ok(())
    }
}

/// Out-of-fold nuisance predictions plus provenance.
#[derive(Debug, Clone)]
pub struct NuisanceFits {
    /// Row indices (into the source dataset) the predictions refer to.
    pub row_ids: Vec<usize>,
    pub mu1_hat: Vec<f64>,
    pub mu0_hat: Vec<f64>,
    pub p_hat: Vec<f64>,
    pub pi_hat: Vec<f64>,
    /// Sample trial share n1/n, exactly.
    pub q_hat: f64,
    /// Fold id per row, per repetition.
    pub fold_assignments: Vec<Vec<u32>>,
    /// How many p-hat / pi-hat values the clip actually bound.
    pub p_clip_count: usize,
    pub pi_clip_count: usize,
}

impl NuisanceFits {
    pub fn len(&self) -> usize {
        self.row_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.row_ids.is_empty()
    }

    /// Audit dump: one row per observation and repetition with its fold id.
    pub fn write_provenance_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "row,repetition,fold")?;
        for (rep, folds) in self.fold_assignments.iter().enumerate() {
            for (i, f) in folds.iter().enumerate() {
                writeln!(w, "{},{},{}", self.row_ids[i], rep, f)?;
            }
        }
        Ok(())
    }
}

const NUISANCE_MU1: u64 = 0;
const NUISANCE_MU0: u64 = 1;
const NUISANCE_P: u64 = 2;
const NUISANCE_PI: u64 = 3;

/// Cross-fit all four nuisances on the full dataset.
pub fn crossfit_nuisances(ds: &HctDataset, plan: &CrossfitPlan) -> Result<NuisanceFits> {
    plan.validate(ds.n())?;
    let n = ds.n();

    let mut per_rep: Vec<RepPredictions> = (0..plan.repetitions)
        .into_par_iter()
        .map(|rep| run_repetition(ds, plan, rep))
        .collect::<Result<Vec<_>>>()?;

    let mut fits = aggregate_repetitions(&mut per_rep, n);
    fits.q_hat = ds.n1() as f64 / n as f64;

    // Clip the propensities that enter ratios. A dataset with no external
    // rows has pi identically 1 by construction, not by estimation, and the
    // upper clip is skipped so downstream algebra reduces exactly to the
    // within-trial estimator.
    let eps = plan.clip_epsilon;
    for p in fits.p_hat.iter_mut() {
        let clipped = clip_probability(*p, eps);
        if clipped != *p {
            fits.p_clip_count += 1;
            *p = clipped;
        }
    }
    if ds.n0() == 0 {
        for pi in fits.pi_hat.iter_mut() {
            *pi = 1.0;
        }
    } else {
        for pi in fits.pi_hat.iter_mut() {
            let clipped = clip_probability(*pi, eps);
            if clipped != *pi {
                fits.pi_clip_count += 1;
                *pi = clipped;
            }
        }
    }
    Ok(fits)
}

/// Cross-fit restricted to trial rows, with mu0 trained on trial controls
/// only. Used by the within-trial (RCT) analysis; `row_ids` refer to the
/// original dataset.
pub fn rct_only_nuisances(ds: &HctDataset, plan: &CrossfitPlan) -> Result<NuisanceFits> {
    let (trial, ids) = ds.trial_subset()?;
    // On the trial subset the pooled control set *is* the trial-control set,
    // so the standard procedure applies unchanged.
    let mut fits = crossfit_nuisances(&trial, plan)?;
    fits.row_ids = ids;
    Ok(fits)
}

struct RepPredictions {
    mu1: Vec<f64>,
    mu0: Vec<f64>,
    p: Vec<f64>,
    pi: Vec<f64>,
    folds: Vec<u32>,
}

fn run_repetition(ds: &HctDataset, plan: &CrossfitPlan, rep: usize) -> Result<RepPredictions> {
    let n = ds.n();
    let folds = stratified_folds(ds, plan.folds, derive_seed(plan.seed, &[rep as u64, 0xf01d]));

    let fold_outputs: Vec<(Vec<usize>, [Vec<f64>; 4])> = (0..plan.folds)
        .into_par_iter()
        .map(|f| run_fold(ds, plan, rep, f as u32, &folds))
        .collect::<Result<Vec<_>>>()?;

    let mut out = RepPredictions {
        mu1: vec![f64::NAN; n],
        mu0: vec![f64::NAN; n],
        p: vec![f64::NAN; n],
        pi: vec![f64::NAN; n],
        folds,
    };
    for (rows, [mu1, mu0, p, pi]) in fold_outputs {
        for (slot, &row) in rows.iter().enumerate() {
            out.mu1[row] = mu1[slot];
            out.mu0[row] = mu0[slot];
            out.p[row] = p[slot];
            out.pi[row] = pi[slot];
        }
    }
    Ok(out)
}

type FoldOutput = (Vec<usize>, [Vec<f64>; 4]);

fn run_fold(
    ds: &HctDataset,
    plan: &CrossfitPlan,
    rep: usize,
    fold: u32,
    assignment: &[u32],
) -> Result<FoldOutput> {
    let held: Vec<usize> = (0..ds.n()).filter(|&i| assignment[i] == fold).collect();
    let train: Vec<usize> = (0..ds.n()).filter(|&i| assignment[i] != fold).collect();

    let subgroup = |pred: &dyn Fn(&crate::data::Observation) -> bool| -> Vec<usize> {
        train.iter().cloned().filter(|&i| pred(ds.row(i))).collect()
    };
    let treated_trial = subgroup(&|r| r.d == 1 && r.a == 1);
    let pooled_controls = subgroup(&|r| r.a == 0);
    let trial = subgroup(&|r| r.d == 1);

    let require = |rows: &[usize], name: &'static str| -> Result<()> {
        if rows.is_empty() {
            Err(Error::EmptyTrainingSubgroup {
                repetition: rep,
                fold: fold as usize,
                subgroup: name,
            })
        } else {
            Ok(())
        }
    };
    require(&treated_trial, "treated trial (d=1, a=1)")?;
    require(&pooled_controls, "pooled control (a=0)")?;
    require(&trial, "trial (d=1)")?;

    let features = |rows: &[usize]| -> FeatureMatrix {
        FeatureMatrix::from_rows(&rows.iter().map(|&i| ds.row(i).x.as_slice()).collect::<Vec<_>>())
    };
    let labels = |rows: &[usize], get: &dyn Fn(&crate::data::Observation) -> f64| -> Vec<f64> {
        rows.iter().map(|&i| get(ds.row(i))).collect()
    };

    let held_x = features(&held);
    let seed_for = |nuisance: u64| derive_seed(plan.seed, &[rep as u64, fold as u64, nuisance]);

    let mu1_model = fit(
        &plan.mu1.clone().with_seed(seed_for(NUISANCE_MU1)),
        &features(&treated_trial),
        &labels(&treated_trial, &|r| f64::from(r.y)),
    )?;
    let mu0_model = fit(
        &plan.mu0.clone().with_seed(seed_for(NUISANCE_MU0)),
        &features(&pooled_controls),
        &labels(&pooled_controls, &|r| f64::from(r.y)),
    )?;
    let p_model = fit(
        &plan.p.clone().with_seed(seed_for(NUISANCE_P)),
        &features(&trial),
        &labels(&trial, &|r| f64::from(r.a)),
    )?;
    let pi_model = fit(
        &plan.pi.clone().with_seed(seed_for(NUISANCE_PI)),
        &features(&train),
        &labels(&train, &|r| f64::from(r.d)),
    )?;

    let predict = |m: &crate::learners::FittedModel| crate::learners::predict_proba(m, &held_x);
    Ok((
        held,
        [
            predict(&mu1_model)?,
            predict(&mu0_model)?,
            predict(&p_model)?,
            predict(&pi_model)?,
        ],
    ))
}

/// Fold assignment stratified by the (d, a) cell; global fold sizes differ by
/// at most one because strata are dealt round-robin off a shared counter.
fn stratified_folds(ds: &HctDataset, k: usize, seed: u64) -> Vec<u32> {
    let mut strata: [Vec<usize>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for (i, r) in ds.rows().iter().enumerate() {
        let s = match (r.d, r.a) {
            (1, 1) => 0,
            (1, 0) => 1,
            _ => 2,
        };
        strata[s].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0u32; ds.n()];
    let mut counter = 0usize;
    for stratum in strata.iter_mut() {
        stratum.shuffle(&mut rng);
        for &row in stratum.iter() {
            assignment[row] = (counter % k) as u32;
            counter += 1;
        }
    }
    assignment
}

fn aggregate_repetitions(reps: &mut [RepPredictions], n: usize) -> NuisanceFits {
    let median_at = |values: &mut Vec<f64>| -> f64 {
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = values.len();
        if m % 2 == 1 {
            values[m / 2]
        } else {
            0.5 * (values[m / 2 - 1] + values[m / 2])
        }
    };
    let mut fits = NuisanceFits {
        row_ids: (0..n).collect(),
        mu1_hat: Vec::with_capacity(n),
        mu0_hat: Vec::with_capacity(n),
        p_hat: Vec::with_capacity(n),
        pi_hat: Vec::with_capacity(n),
        q_hat: f64::NAN,
        fold_assignments: reps.iter().map(|r| r.folds.clone()).collect(),
        p_clip_count: 0,
        pi_clip_count: 0,
    };
    let mut buf = Vec::with_capacity(reps.len());
    for i in 0..n {
        for (dst, get) in [
            (&mut fits.mu1_hat, 0usize),
            (&mut fits.mu0_hat, 1),
            (&mut fits.p_hat, 2),
            (&mut fits.pi_hat, 3),
        ] {
            buf.clear();
            for r in reps.iter() {
                buf.push(match get {
                    0 => r.mu1[i],
                    1 => r.mu0[i],
                    2 => r.p[i],
                    _ => r.pi[i],
                });
            }
            dst.push(median_at(&mut buf));
        }
    }
    fits
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Observation;
    use rand::rngs::StdRng;
    use rand::Rng;

    fn toy_dataset(n: usize, seed: u64) -> HctDataset {
        let mut rng = StdRng::seed_from_u64(seed);
        let mut rows = Vec::with_capacity(n);
        // guarantee all three strata
        rows.push(Observation::new(1, 1, vec![1.0], 1));
        rows.push(Observation::new(1, 0, vec![0.0], 0));
        rows.push(Observation::new(0, 0, vec![1.0], 1));
        while rows.len() < n {
            let d = u8::from(rng.gen_bool(0.5));
            let a = if d == 1 { u8::from(rng.gen_bool(0.5)) } else { 0 };
            let x = f64::from(rng.gen_bool(0.6));
            let y = u8::from(rng.gen_bool(0.3 + 0.2 * x));
            rows.push(Observation::new(d, a, vec![x], y));
        }
        HctDataset::new(rows).unwrap()
    }

    fn quick_plan(folds: usize, reps: usize, seed: u64) -> CrossfitPlan {
        let learner = LearnerSpec {
            trees: 20,
            max_depth: 3,
            ..LearnerSpec::forest()
        };
        CrossfitPlan::new(folds, reps, seed, learner)
    }

    #[test]
    fn folds_partition_rows_and_balance_sizes() {
        let ds = toy_dataset(10, 1);
        let fits = crossfit_nuisances(&ds, &quick_plan(2, 1, 7)).unwrap();
        let folds = &fits.fold_assignments[0];
        assert_eq!(folds.len(), 10);
        let c0 = folds.iter().filter(|&&f| f == 0).count();
        let c1 = folds.iter().filter(|&&f| f == 1).count();
        assert_eq!(c0 + c1, 10);
        assert!(c0.abs_diff(c1) <= 1);
    }

    #[test]
    fn out_of_fold_property_holds() {
        let ds = toy_dataset(40, 2);
        let plan = quick_plan(5, 2, 11);
        let fits = crossfit_nuisances(&ds, &plan).unwrap();
        assert_eq!(fits.fold_assignments.len(), 2);
        for rep in &fits.fold_assignments {
            assert!(rep.iter().all(|&f| (f as usize) < plan.folds));
        }
    }

    #[test]
    fn own_label_never_leaks_into_prediction() {
        // Exactly one treated trial row has y = 1. The models that predict
        // that row train on all-zero treated labels and must output exactly
        // 0 there; any leak of the row's own label would pull it above 0.
        let mut rows = vec![Observation::new(1, 1, vec![1.0], 1)];
        for i in 0..30 {
            rows.push(Observation::new(1, 1, vec![f64::from(i % 2)], 0));
            rows.push(Observation::new(1, 0, vec![f64::from(i % 2)], 0));
            rows.push(Observation::new(0, 0, vec![f64::from(i % 2)], 0));
        }
        let ds = HctDataset::new(rows).unwrap();
        for reps in [1usize, 2] {
            let fits = crossfit_nuisances(&ds, &quick_plan(5, reps, 77)).unwrap();
            assert_eq!(fits.mu1_hat[0], 0.0, "own outcome leaked into mu1 fit");
        }
    }

    #[test]
    fn determinism_under_fixed_seed() {
        let ds = toy_dataset(60, 3);
        let plan = quick_plan(5, 2, 21);
        let a = crossfit_nuisances(&ds, &plan).unwrap();
        let b = crossfit_nuisances(&ds, &plan).unwrap();
        assert_eq!(a.mu1_hat, b.mu1_hat);
        assert_eq!(a.mu0_hat, b.mu0_hat);
        assert_eq!(a.p_hat, b.p_hat);
        assert_eq!(a.pi_hat, b.pi_hat);
        assert_eq!(a.fold_assignments, b.fold_assignments);
    }

    #[test]
    fn q_hat_is_exact_trial_share() {
        let ds = toy_dataset(50, 4);
        let fits = crossfit_nuisances(&ds, &quick_plan(5, 1, 1)).unwrap();
        assert_eq!(fits.q_hat, ds.n1() as f64 / ds.n() as f64);
    }

    #[test]
    fn predictions_respect_bounds_after_clipping() {
        let ds = toy_dataset(80, 5);
        let plan = quick_plan(4, 1, 9);
        let fits = crossfit_nuisances(&ds, &plan).unwrap();
        let eps = plan.clip_epsilon;
        for i in 0..fits.len() {
            assert!(fits.mu1_hat[i].is_finite() && (0.0..=1.0).contains(&fits.mu1_hat[i]));
            assert!(fits.mu0_hat[i].is_finite() && (0.0..=1.0).contains(&fits.mu0_hat[i]));
            assert!(fits.p_hat[i] >= eps && fits.p_hat[i] <= 1.0 - eps);
            assert!(fits.pi_hat[i] >= eps && fits.pi_hat[i] <= 1.0 - eps);
        }
    }

    #[test]
    fn two_repetitions_aggregate_to_elementwise_mean() {
        let ds = toy_dataset(30, 6);
        let plan = quick_plan(3, 2, 33);
        let fits = crossfit_nuisances(&ds, &plan).unwrap();
        let single_rep: Vec<RepPredictions> = (0..2)
            .map(|rep| run_repetition(&ds, &plan, rep).unwrap())
            .collect();
        for i in 0..ds.n() {
            let want = 0.5 * (single_rep[0].mu1[i] + single_rep[1].mu1[i]);
            assert!((fits.mu1_hat[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn constant_learner_equivalent_gives_subgroup_means() {
        // All-same outcomes in the mu1 training group force the degenerate
        // constant fit regardless of K.
        let mut rows = Vec::new();
        for _ in 0..10 {
            rows.push(Observation::new(1, 1, vec![0.0], 1));
            rows.push(Observation::new(1, 0, vec![1.0], 0));
            rows.push(Observation::new(0, 0, vec![0.0], 0));
        }
        let ds = HctDataset::new(rows).unwrap();
        for k in [2, 5] {
            let fits = crossfit_nuisances(&ds, &quick_plan(k, 1, 3)).unwrap();
            assert!(fits.mu1_hat.iter().all(|&v| v == 1.0));
            assert!(fits.mu0_hat.iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn rct_only_matches_full_crossfit_when_no_external_rows() {
        let mut rows = Vec::new();
        let mut rng = StdRng::seed_from_u64(8);
        for _ in 0..40 {
            let a = u8::from(rng.gen_bool(0.5));
            let x = f64::from(rng.gen_bool(0.6));
            let y = u8::from(rng.gen_bool(0.4));
            rows.push(Observation::new(1, a, vec![x], y));
        }
        let ds = HctDataset::new(rows).unwrap();
        let plan = quick_plan(4, 1, 17);
        let full = crossfit_nuisances(&ds, &plan).unwrap();
        let rct = rct_only_nuisances(&ds, &plan).unwrap();
        assert_eq!(full.mu0_hat, rct.mu0_hat);
        assert_eq!(full.p_hat, rct.p_hat);
        assert_eq!(full.q_hat, 1.0);
        assert_eq!(rct.q_hat, 1.0);
        assert!(full.pi_hat.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn folds_exceeding_trial_rows_error() {
        let ds = toy_dataset(30, 10);
        let plan = quick_plan(ds.n1() + 1, 1, 2);
        assert!(matches!(
            rct_only_nuisances(&ds, &plan),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn empty_training_subgroup_is_reported_with_fold() {
        // Exactly one treated trial row: the fold holding it trains without
        // any treated trial units.
        let mut rows = vec![Observation::new(1, 1, vec![0.0], 1)];
        for i in 0..9 {
            rows.push(Observation::new(1, 0, vec![f64::from(i % 2)], 0));
            rows.push(Observation::new(0, 0, vec![f64::from(i % 2)], 1));
        }
        let ds = HctDataset::new(rows).unwrap();
        let err = crossfit_nuisances(&ds, &quick_plan(2, 1, 1)).unwrap_err();
        match err {
            Error::EmptyTrainingSubgroup { subgroup, .. } => {
                assert!(subgroup.contains("treated trial"));
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn provenance_csv_has_expected_shape() {
        let ds = toy_dataset(12, 12);
        let fits = crossfit_nuisances(&ds, &quick_plan(3, 2, 5)).unwrap();
        let mut buf = Vec::new();
        fits.write_provenance_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 12 * 2);
        assert!(text.starts_with("row,repetition,fold"));
    }
}
