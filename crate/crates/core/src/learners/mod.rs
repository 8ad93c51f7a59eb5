//! Supervised learners for the nuisance regressions.
//!
//! Every nuisance (outcome regressions, treatment propensity, selection
//! propensity) is a binary regression fit through the same interface. Two
//! implementations are built in: an L2-penalized logistic regression trained
//! by full-batch gradient descent, and a random forest of Gini classification
//! trees with bootstrap resampling and leaf-fraction outputs.

mod forest;
mod logistic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use forest::Forest;
pub use logistic::LogisticModel;

/// Which learner backs a nuisance fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LearnerKind {
    Logistic,
    Forest,
}

/// Learner configuration. Forest fields are ignored by the logistic learner
/// and vice versa.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearnerSpec {
    pub kind: LearnerKind,
    pub trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub feature_subsample_fraction: f64,
    pub l2_penalty: f64,
    pub max_iterations: usize,
    pub convergence_tolerance: f64,
    pub seed: u64,
}

impl Default for LearnerSpec {
    fn default() -> Self {
        LearnerSpec::forest()
    }
}

impl LearnerSpec {
    pub fn forest() -> Self {
        LearnerSpec {
            kind: LearnerKind::Forest,
            trees: 200,
            max_depth: 8,
            min_leaf: 5,
            feature_subsample_fraction: 1.0,
            l2_penalty: 1e-4,
            max_iterations: 10_000,
            convergence_tolerance: 1e-8,
            seed: 0,
        }
    }

    pub fn logistic() -> Self {
        LearnerSpec {
            kind: LearnerKind::Logistic,
            ..LearnerSpec::forest()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.trees < 1 {
            return Err(Error::Config("learner: trees must be >= 1".into()));
        }
        if self.max_depth < 1 {
            return Err(Error::Config("learner: max_depth must be >= 1".into()));
        }
        if self.min_leaf < 1 {
            return Err(Error::Config("learner: min_leaf must be >= 1".into()));
        }
        if !(self.feature_subsample_fraction > 0.0 && self.feature_subsample_fraction <= 1.0) {
            return Err(Error::Config(
                "learner: feature_subsample_fraction must be in (0, 1]".into(),
            ));
        }
        if self.l2_penalty < 0.0 {
            return Err(Error::Config("learner: l2_penalty must be >= 0".into()));
        }
        Ok(())
    }
}

/// Row-major feature matrix.
#[derive(Debug, Clone)]
pub struct FeatureMatrix {
    data: Vec<f64>,
    n_rows: usize,
    n_cols: usize,
}

impl FeatureMatrix {
    pub fn new(data: Vec<f64>, n_rows: usize, n_cols: usize) -> Self {
        assert_eq!(data.len(), n_rows * n_cols);
        FeatureMatrix { data, n_rows, n_cols }
    }

    pub fn from_rows<S: AsRef<[f64]>>(rows: &[S]) -> Self {
        let n_rows = rows.len();
        let n_cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(n_rows * n_cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), n_cols, "ragged feature rows");
            data.extend_from_slice(r.as_ref());
        }
        FeatureMatrix { data, n_rows, n_cols }
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n_cols..(i + 1) * self.n_cols]
    }
}

/// A trained model. Predictions are probabilities in [0, 1].
#[derive(Debug, Clone)]
pub struct FittedModel {
    repr: ModelRepr,
    n_features: usize,
}

#[derive(Debug, Clone)]
enum ModelRepr {
    /// Degenerate single-class fit: the empirical class rate.
    Constant(f64),
    Logistic(LogisticModel),
    Forest(Forest),
}

impl FittedModel {
    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.n_features {
            return Err(Error::Learner(format!(
                "feature dimension {} does not match training dimension {}",
                x.len(),
                self.n_features
            )));
        }
        Ok(match &self.repr {
            ModelRepr::Constant(rate) => *rate,
            ModelRepr::Logistic(m) => m.predict_one(x),
            ModelRepr::Forest(f) => f.predict_one(x),
        })
    }
}

/// Fit a learner on binary labels. Deterministic given (spec, data, seed);
/// single-class label vectors yield a constant model at the class rate.
pub fn fit(spec: &LearnerSpec, features: &FeatureMatrix, labels: &[f64]) -> Result<FittedModel> {
    spec.validate()?;
    let n = features.n_rows();
    if n != labels.len() {
        return Err(Error::Learner(format!(
            "feature rows {} != label count {}",
            n,
            labels.len()
        )));
    }
    if n < 2 {
        return Err(Error::Learner("need at least 2 training rows".into()));
    }
    if features.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Learner("non-finite feature".into()));
    }
    if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
        return Err(Error::Learner("labels must be 0 or 1".into()));
    }

    let positives = labels.iter().filter(|&&y| y == 1.0).count();
    if positives == 0 || positives == n {
        return Ok(FittedModel {
            repr: ModelRepr::Constant(positives as f64 / n as f64),
            n_features: features.n_cols(),
        });
    }

    let repr = match spec.kind {
        LearnerKind::Logistic => ModelRepr::Logistic(logistic::train(spec, features, labels)),
        LearnerKind::Forest => ModelRepr::Forest(forest::train(spec, features, labels)),
    };
    Ok(FittedModel {
        repr,
        n_features: features.n_cols(),
    })
}

/// Predict probabilities for a feature matrix.
pub fn predict_proba(model: &FittedModel, features: &FeatureMatrix) -> Result<Vec<f64>> {
    if features.n_rows() > 0 && features.n_cols() != model.n_features() {
        return Err(Error::Learner(format!(
            "feature dimension {} does not match training dimension {}",
            features.n_cols(),
            model.n_features()
        )));
    }
    (0..features.n_rows())
        .map(|i| model.predict_one(features.row(i)))
        .collect()
}

/// Clamp a probability to [epsilon, 1 - epsilon] before it enters a ratio.
#[inline]
pub fn clip_probability(p: f64, epsilon: f64) -> f64 {
    debug_assert!(epsilon > 0.0 && epsilon < 0.5);
    p.clamp(epsilon, 1.0 - epsilon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn column(values: &[f64]) -> FeatureMatrix {
        FeatureMatrix::from_rows(&values.iter().map(|&v| [v]).collect::<Vec<_>>())
    }

    #[test]
    fn clip_probability_examples() {
        assert_eq!(clip_probability(0.0, 0.01), 0.01);
        assert_eq!(clip_probability(0.5, 0.01), 0.5);
        assert_eq!(clip_probability(1.0, 0.025), 0.975);
    }

    #[test]
    fn all_one_labels_give_constant_one() {
        let x = column(&[0.0, 1.0, 2.0, 3.0]);
        let m = fit(&LearnerSpec::logistic(), &x, &[1.0; 4]).unwrap();
        let p = predict_proba(&m, &x).unwrap();
        assert!(p.iter().all(|&v| v == 1.0));
        let m = fit(&LearnerSpec::forest(), &x, &[1.0; 4]).unwrap();
        assert!(predict_proba(&m, &x).unwrap().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn empty_prediction_matrix_gives_empty_vector() {
        let x = column(&[0.0, 1.0]);
        let m = fit(&LearnerSpec::logistic(), &x, &[0.0, 1.0]).unwrap();
        let empty = FeatureMatrix::new(Vec::new(), 0, 0);
        assert!(predict_proba(&m, &empty).unwrap().is_empty());
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let x = column(&[0.0, 1.0, 0.0, 1.0]);
        let m = fit(&LearnerSpec::logistic(), &x, &[0.0, 1.0, 0.0, 1.0]).unwrap();
        let wide = FeatureMatrix::from_rows(&[[1.0, 2.0]]);
        assert!(predict_proba(&m, &wide).is_err());
    }

    #[test]
    fn non_finite_feature_rejected() {
        let x = column(&[0.0, f64::INFINITY]);
        assert!(fit(&LearnerSpec::logistic(), &x, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn logistic_monotone_on_separated_data() {
        let x = column(&[-2.0, -1.5, -1.0, -0.5, 0.5, 1.0, 1.5, 2.0]);
        let y = [0.0, 0.0, 0.0, 0.0, 1.0, 1.0, 1.0, 1.0];
        let m = fit(&LearnerSpec::logistic(), &x, &y).unwrap();
        let grid = column(&[-3.0, -1.0, 0.0, 1.0, 3.0]);
        let p = predict_proba(&m, &grid).unwrap();
        for w in p.windows(2) {
            assert!(w[1] > w[0], "predictions not monotone: {p:?}");
        }
        assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn logistic_beats_constant_rate_on_training_log_loss() {
        // Oracle: best intercept-only model predicts the base rate.
        let mut rng = StdRng::seed_from_u64(11);
        let n = 400;
        let mut rows = Vec::with_capacity(n);
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let x: f64 = rng.gen_range(-2.0..2.0);
            let p = 1.0 / (1.0 + (-1.3 * x + 0.4f64).exp());
            rows.push([x]);
            y.push(if rng.gen_bool(p) { 1.0 } else { 0.0 });
        }
        let x = FeatureMatrix::from_rows(&rows);
        let m = fit(&LearnerSpec::logistic(), &x, &y).unwrap();
        let p = predict_proba(&m, &x).unwrap();
        let log_loss = |probs: &[f64]| -> f64 {
            probs
                .iter()
                .zip(&y)
                .map(|(&ph, &yi)| {
                    let ph = ph.clamp(1e-12, 1.0 - 1e-12);
                    -(yi * ph.ln() + (1.0 - yi) * (1.0 - ph).ln())
                })
                .sum::<f64>()
                / probs.len() as f64
        };
        let rate = y.iter().sum::<f64>() / n as f64;
        let constant = vec![rate; n];
        assert!(
            log_loss(&p) <= log_loss(&constant) + 1e-12,
            "fitted log-loss {} exceeds constant-rate log-loss {}",
            log_loss(&p),
            log_loss(&constant)
        );
    }

    #[test]
    fn forest_recovers_balanced_rate_on_random_treatment() {
        // Treatment assigned Bern(0.5) independent of the covariate, so the
        // mean predicted probability must sit near 0.5.
        let mut rng = StdRng::seed_from_u64(4);
        let n = 10_000;
        let rows: Vec<[f64; 1]> = (0..n)
            .map(|_| [if rng.gen_bool(0.6) { 1.0 } else { 0.0 }])
            .collect();
        let y: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.5) { 1.0 } else { 0.0 })
            .collect();
        let x = FeatureMatrix::from_rows(&rows);
        let spec = LearnerSpec {
            trees: 100,
            max_depth: 4,
            ..LearnerSpec::forest()
        };
        let m = fit(&spec, &x, &y).unwrap();
        let p = predict_proba(&m, &x).unwrap();
        let mean = p.iter().sum::<f64>() / n as f64;
        assert!((mean - 0.5).abs() < 0.02, "mean prediction {mean}");
    }

    #[test]
    fn fits_are_deterministic_given_seed() {
        let mut rng = StdRng::seed_from_u64(9);
        let rows: Vec<[f64; 2]> = (0..200)
            .map(|_| [rng.gen_range(0.0..1.0), rng.gen_range(0.0..1.0)])
            .collect();
        let y: Vec<f64> = rows
            .iter()
            .map(|r| if r[0] + r[1] > 1.0 { 1.0 } else { 0.0 })
            .collect();
        let x = FeatureMatrix::from_rows(&rows);
        for spec in [
            LearnerSpec::forest().with_seed(42),
            LearnerSpec::logistic().with_seed(42),
        ] {
            let p1 = predict_proba(&fit(&spec, &x, &y).unwrap(), &x).unwrap();
            let p2 = predict_proba(&fit(&spec, &x, &y).unwrap(), &x).unwrap();
            assert_eq!(p1, p2);
        }
    }
}
