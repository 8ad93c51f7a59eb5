//! Monte-Carlo checks of the estimation pipeline against generator truths
//! that are not already part of the acceptance gates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hct_core::crossfit::{crossfit_nuisances, rct_only_nuisances, CrossfitPlan};
use hct_core::estimation::{estimate_psi_hct, estimate_psi_rct, estimate_scale};
use hct_core::learners::LearnerSpec;
use hct_core::simulation::{
    draw_trial, oracle_nuisance_fits, oracle_values, run_type1_experiment, ExperimentSettings,
    RejectionConfig, Scenario, ScenarioSpec, SizeSpec,
};
use hct_core::stats::mean;

fn quick_forest() -> LearnerSpec {
    LearnerSpec {
        trees: 60,
        max_depth: 4,
        ..LearnerSpec::forest()
    }
}

#[test]
fn selection_propensity_recovers_trial_share() {
    // X and D are independent under the generator, so pi(x) = q.
    let sc = Scenario::new("pi", 0.5, 0.4, 0.75, SizeSpec::Total { n: 20_000 }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let trial = draw_trial(&sc, &mut rng).unwrap();
    let plan = CrossfitPlan::new(5, 1, 3, quick_forest());
    let fits = crossfit_nuisances(&trial.dataset, &plan).unwrap();
    let mean_pi = mean(&fits.pi_hat);
    assert!((mean_pi - 0.5).abs() < 0.02, "mean pi {mean_pi}");
}

#[test]
fn treatment_propensity_recovers_randomization_rate() {
    let sc = Scenario::new("p", 0.5, 0.4, 0.75, SizeSpec::Total { n: 20_000 }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let trial = draw_trial(&sc, &mut rng).unwrap();
    let plan = CrossfitPlan::new(5, 1, 3, quick_forest());
    let fits = rct_only_nuisances(&trial.dataset, &plan).unwrap();
    let mean_p = mean(&fits.p_hat);
    assert!((mean_p - 0.5).abs() < 0.02, "mean p {mean_p}");
}

#[test]
fn null_effect_estimates_are_centered() {
    // beta = 0 with oracle nuisances on a large draw: both estimators sit
    // within 3 standard errors of zero.
    let sc = Scenario::new("null", 0.5, 0.3, 0.0, SizeSpec::Total { n: 1_000_000 }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let trial = draw_trial(&sc, &mut rng).unwrap();
    let fits = oracle_nuisance_fits(&trial, &sc);
    let (hct, _) = estimate_psi_hct(&trial.dataset, &fits, 0.05).unwrap();
    assert!(
        hct.estimate.abs() <= 3.0 * hct.standard_error,
        "psi_hct {} vs se {}",
        hct.estimate,
        hct.standard_error
    );

    let plan = CrossfitPlan::new(5, 1, 5, quick_forest());
    let sc_small = Scenario::new("null", 0.5, 0.3, 0.0, SizeSpec::Total { n: 30_000 }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let trial = draw_trial(&sc_small, &mut rng).unwrap();
    let rfits = rct_only_nuisances(&trial.dataset, &plan).unwrap();
    let (rct, _) = estimate_psi_rct(&trial.dataset, &rfits, 0.05).unwrap();
    assert!(
        rct.estimate.abs() <= 3.0 * rct.standard_error,
        "psi_rct {} vs se {}",
        rct.estimate,
        rct.standard_error
    );
}

#[test]
fn effect_estimate_matches_closed_form_with_oracle_nuisances() {
    let sc = Scenario::new("effect", 0.5, 0.3, 0.6, SizeSpec::Total { n: 100_000 }).unwrap();
    let truth = oracle_values(&sc).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let trial = draw_trial(&sc, &mut rng).unwrap();
    let fits = oracle_nuisance_fits(&trial, &sc);
    let (hct, _) = estimate_psi_hct(&trial.dataset, &fits, 0.05).unwrap();
    assert!(
        (hct.estimate - truth.psi_star).abs() <= 3.0 * hct.standard_error,
        "psi_hat {} vs psi_star {}",
        hct.estimate,
        truth.psi_star
    );
}

#[test]
fn rct_estimate_matches_closed_form_effect() {
    // The within-trial estimand is the same trial-specific effect; no
    // pooling, so it holds at any zeta.
    let sc = Scenario::new("rct", 0.5, 0.4, 0.6, SizeSpec::Total { n: 60_000 }).unwrap();
    let truth = oracle_values(&sc).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let trial = draw_trial(&sc, &mut rng).unwrap();
    let plan = CrossfitPlan::new(5, 1, 9, quick_forest());
    let fits = rct_only_nuisances(&trial.dataset, &plan).unwrap();
    let (rct, _) = estimate_psi_rct(&trial.dataset, &fits, 0.05).unwrap();
    assert!(
        (rct.estimate - truth.psi_star).abs() <= 3.0 * rct.standard_error,
        "psi_rct {} vs psi_star {} (se {})",
        rct.estimate,
        truth.psi_star,
        rct.standard_error
    );
}

#[test]
fn scale_estimate_matches_enumeration_with_oracle_nuisances() {
    // S-hat on 1e6 draws against the closed-form cell enumeration, using the
    // delta-method standard error of S.
    let sc = Scenario::new("scale", 0.5, 0.3, 0.75, SizeSpec::Total { n: 1_000_000 }).unwrap();
    let truth = oracle_values(&sc).unwrap();
    assert!((truth.s_true - 1.070176453298001).abs() < 1e-12);
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let trial = draw_trial(&sc, &mut rng).unwrap();
    let fits = oracle_nuisance_fits(&trial, &sc);
    let scale = estimate_scale(&trial.dataset, &fits).unwrap();
    let n = trial.dataset.n() as f64;
    let phi_s: Vec<f64> = (0..trial.dataset.n())
        .map(|i| {
            (scale.sigma2_hat * scale.phi_nu2.values[i]
                + scale.nu2_hat * scale.phi_sigma2.values[i])
                / (2.0 * scale.s_hat)
        })
        .collect();
    let se = hct_core::stats::std_dev(&phi_s) / n.sqrt();
    assert!(
        (scale.s_hat - truth.s_true).abs() <= 3.0 * se,
        "S-hat {} vs {} (se {})",
        scale.s_hat,
        truth.s_true,
        se
    );
}

#[test]
fn trial_share_estimate_concentrates() {
    let q = 0.3;
    let n = 2_000usize;
    let sc = Scenario::new("qhat", q, 0.4, 0.6, SizeSpec::Total { n }).unwrap();
    let mut devs = Vec::new();
    for rep in 0..40u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(700 + rep);
        let trial = draw_trial(&sc, &mut rng).unwrap();
        let q_hat = trial.dataset.n1() as f64 / trial.dataset.n() as f64;
        devs.push((q_hat - q).abs());
    }
    let bound = 3.0 * (q * (1.0 - q) / n as f64).sqrt();
    assert!(
        mean(&devs) <= bound,
        "mean |q_hat - q| = {} exceeds {}",
        mean(&devs),
        bound
    );
}

#[test]
fn estimates_are_insensitive_to_fold_count() {
    // The point estimate must agree with the closed-form effect at K = 2,
    // 5, and 10 alike.
    let sc = Scenario::new("folds", 0.5, 0.3, 0.6, SizeSpec::Total { n: 50_000 }).unwrap();
    let truth = oracle_values(&sc).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let trial = draw_trial(&sc, &mut rng).unwrap();
    for folds in [2usize, 5, 10] {
        let plan = CrossfitPlan::new(folds, 1, 21, quick_forest());
        let fits = crossfit_nuisances(&trial.dataset, &plan).unwrap();
        let (report, _) = estimate_psi_hct(&trial.dataset, &fits, 0.05).unwrap();
        assert!(
            (report.estimate - truth.psi_star).abs() <= 3.0 * report.standard_error,
            "K={folds}: psi_hat {} vs psi_star {}",
            report.estimate,
            truth.psi_star
        );
    }
}

#[test]
fn experiment_results_are_deterministic_and_order_free() {
    let cfg = RejectionConfig {
        scenarios: vec![ScenarioSpec {
            name: "det".into(),
            zeta: 0.4,
        }],
        beta: 0.0,
        n1_grid: vec![60],
        n0_grid: vec![120],
        replicates: 24,
        threshold: 0.0,
        settings: ExperimentSettings {
            learner: LearnerSpec {
                trees: 10,
                max_depth: 2,
                ..LearnerSpec::forest()
            },
            seed: 99,
            ..ExperimentSettings::default()
        },
    };
    let a = run_type1_experiment(&cfg).unwrap();
    let b = run_type1_experiment(&cfg).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.reject_rate, y.reject_rate);
        assert_eq!(x.mean_width, y.mean_width);
        assert_eq!(x.failures, y.failures);
    }
}
