//! Base learners: OLS on the truncated age basis plus covariates, and an
//! honest random forest. Both consume a [`Features`] matrix whose first
//! column is age.

pub mod forest;

use serde::{Deserialize, Serialize};

use crate::basis::SplineSpec;
use crate::error::{ActeError, Result};
use crate::linalg::{lstsq, ColMatrix};

pub use forest::{HonestForest, HonestTree, RfHyperparams, TreeSample};

pub const AGE_COLUMN: &str = "age";

/// Row-major feature matrix; column 0 is age.
#[derive(Debug, Clone, PartialEq)]
pub struct Features {
    names: Vec<String>,
    rows: usize,
    data: Vec<f64>,
}

impl Features {
    pub fn new(names: Vec<String>, data: Vec<f64>) -> Result<Self> {
        if names.first().map(String::as_str) != Some(AGE_COLUMN) {
            return Err(ActeError::Schema("first feature column must be age".into()));
        }
        if data.len() % names.len() != 0 {
            return Err(ActeError::Schema("feature data is not a whole number of rows".into()));
        }
        let rows = data.len() / names.len();
        Ok(Features { names, rows, data })
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.names.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn fingerprint(&self) -> u64 {
        fingerprint(&self.names)
    }
}

/// FNV-1a over the column names.
pub fn fingerprint(names: &[String]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for name in names {
        for b in name.bytes().chain(std::iter::once(0xff)) {
            h ^= u64::from(b);
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    h
}

/// How the OLS learner represents age.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgeTerms {
    /// Intercept plus the three-term truncated basis.
    Spline(SplineSpec),
    /// Intercept plus one indicator per training age after the first.
    Indicators,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegressorSpec {
    OlsSpline { age_terms: AgeTerms },
    HonestRf { rf: RfHyperparams },
}

impl RegressorSpec {
    pub fn ols() -> Self {
        RegressorSpec::OlsSpline {
            age_terms: AgeTerms::Spline(SplineSpec::default()),
        }
    }

    pub fn ols_with_peak(peak_age: f64) -> Result<Self> {
        Ok(RegressorSpec::OlsSpline {
            age_terms: AgeTerms::Spline(SplineSpec::new(peak_age)?),
        })
    }

    pub fn ols_age_indicators() -> Self {
        RegressorSpec::OlsSpline {
            age_terms: AgeTerms::Indicators,
        }
    }

    pub fn rf(rf: RfHyperparams) -> Self {
        RegressorSpec::HonestRf { rf }
    }

    pub fn label(&self) -> &'static str {
        match self {
            RegressorSpec::OlsSpline { .. } => "ols",
            RegressorSpec::HonestRf { .. } => "rf",
        }
    }

    /// Same spec with any forest seed replaced by one derived from `salt`.
    pub fn reseeded(&self, salt: &[u64]) -> Self {
        match self {
            RegressorSpec::HonestRf { rf } => RegressorSpec::HonestRf {
                rf: RfHyperparams {
                    seed: crate::rng::derive_seed(rf.seed, salt),
                    ..rf.clone()
                },
            },
            other => other.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OlsModel {
    age_terms: AgeTerms,
    /// Training ages for the indicator encoding (sorted, first is reference).
    age_levels: Vec<i64>,
    /// Intercept, age terms, then the remaining feature columns.
    coef: Vec<f64>,
    rank: usize,
}

impl OlsModel {
    fn design_width(age_terms: &AgeTerms, age_levels: &[i64], n_features: usize) -> usize {
        let age_width = match age_terms {
            AgeTerms::Spline(_) => crate::basis::N_TERMS,
            AgeTerms::Indicators => age_levels.len().saturating_sub(1),
        };
        1 + age_width + (n_features - 1)
    }

    fn fill_row(age_terms: &AgeTerms, age_levels: &[i64], row: &[f64], out: &mut [f64]) {
        out[0] = 1.0;
        let rest = match age_terms {
            AgeTerms::Spline(spec) => {
                let s = SplineSpec {
                    include_intercept: false,
                    ..*spec
                };
                s.fill(row[0], &mut out[1..]);
                1 + crate::basis::N_TERMS
            }
            AgeTerms::Indicators => {
                let w = age_levels.len().saturating_sub(1);
                out[1..1 + w].iter_mut().for_each(|v| *v = 0.0);
                let age = row[0].round() as i64;
                if let Ok(pos) = age_levels.binary_search(&age) {
                    if pos > 0 && row[0] == age as f64 {
                        out[pos] = 1.0;
                    }
                }
                1 + w
            }
        };
        out[rest..].copy_from_slice(&row[1..]);
    }

    fn fit(age_terms: AgeTerms, x: &Features, y: &[f64]) -> Self {
        let age_levels: Vec<i64> = match age_terms {
            AgeTerms::Spline(_) => Vec::new(),
            AgeTerms::Indicators => {
                let mut v: Vec<i64> = (0..x.rows()).map(|i| x.row(i)[0].round() as i64).collect();
                v.sort_unstable();
                v.dedup();
                v
            }
        };
        let width = Self::design_width(&age_terms, &age_levels, x.cols());
        let mut design = ColMatrix::zeros(x.rows(), width);
        let mut buf = vec![0.0; width];
        for i in 0..x.rows() {
            Self::fill_row(&age_terms, &age_levels, x.row(i), &mut buf);
            for (c, v) in buf.iter().enumerate() {
                design.set(i, c, *v);
            }
        }
        let sol = lstsq(&design, y);
        OlsModel {
            age_terms,
            age_levels,
            coef: sol.coef,
            rank: sol.rank,
        }
    }

    pub fn coefficients(&self) -> &[f64] {
        &self.coef
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    fn predict_row(&self, row: &[f64], buf: &mut [f64]) -> f64 {
        Self::fill_row(&self.age_terms, &self.age_levels, row, buf);
        buf.iter().zip(&self.coef).map(|(a, b)| a * b).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "learner", rename_all = "snake_case")]
pub enum FittedParams {
    Ols(OlsModel),
    Forest(HonestForest),
}

/// A trained base learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedOutcomeModel {
    spec: RegressorSpec,
    feature_names: Vec<String>,
    fingerprint: u64,
    params: FittedParams,
}

pub fn fit(spec: &RegressorSpec, features: &Features, targets: &[f64]) -> Result<FittedOutcomeModel> {
    if features.rows() != targets.len() {
        return Err(ActeError::Schema(format!(
            "{} feature rows but {} targets",
            features.rows(),
            targets.len()
        )));
    }
    if targets.len() < 2 {
        return Err(ActeError::InsufficientData(format!(
            "need at least 2 rows to fit, got {}",
            targets.len()
        )));
    }
    if features.data().iter().chain(targets).any(|v| !v.is_finite()) {
        return Err(ActeError::Domain("non-finite value in training data".into()));
    }
    let params = match spec {
        RegressorSpec::OlsSpline { age_terms } => FittedParams::Ols(OlsModel::fit(*age_terms, features, targets)),
        RegressorSpec::HonestRf { rf } => {
            FittedParams::Forest(HonestForest::fit(rf, features.data(), features.cols(), targets)?)
        }
    };
    Ok(FittedOutcomeModel {
        spec: spec.clone(),
        feature_names: features.names().to_vec(),
        fingerprint: features.fingerprint(),
        params,
    })
}

/// Format tag and version carried by serialized models.
pub const MODEL_FORMAT: &str = "acte-model";
pub const MODEL_VERSION: u32 = 1;

impl FittedOutcomeModel {
    pub fn spec(&self) -> &RegressorSpec {
        &self.spec
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn fingerprint(&self) -> u64 {
        self.fingerprint
    }

    pub fn params(&self) -> &FittedParams {
        &self.params
    }

    pub fn forest(&self) -> Option<&HonestForest> {
        match &self.params {
            FittedParams::Forest(f) => Some(f),
            FittedParams::Ols(_) => None,
        }
    }

    pub fn ols(&self) -> Option<&OlsModel> {
        match &self.params {
            FittedParams::Ols(m) => Some(m),
            FittedParams::Forest(_) => None,
        }
    }

    pub fn predict(&self, features: &Features) -> Result<Vec<f64>> {
        if features.fingerprint() != self.fingerprint {
            return Err(ActeError::Schema(format!(
                "feature columns {:?} differ from training columns {:?}",
                features.names(),
                self.feature_names
            )));
        }
        Ok(self.predict_unchecked(features.data()))
    }

    /// Predicts row-major data already known to match the training columns.
    pub(crate) fn predict_unchecked(&self, data: &[f64]) -> Vec<f64> {
        match &self.params {
            FittedParams::Ols(m) => {
                let p = self.feature_names.len();
                let width = OlsModel::design_width(&m.age_terms, &m.age_levels, p);
                let mut buf = vec![0.0; width];
                data.chunks(p).map(|row| m.predict_row(row, &mut buf)).collect()
            }
            FittedParams::Forest(f) => f.predict(data),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Envelope<'a> {
            format: &'a str,
            version: u32,
            model: &'a FittedOutcomeModel,
        }
        serde_json::to_string(&Envelope {
            format: MODEL_FORMAT,
            version: MODEL_VERSION,
            model: self,
        })
        .map_err(|e| ActeError::Serialization(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Envelope {
            format: String,
            version: u32,
            model: FittedOutcomeModel,
        }
        let env: Envelope = serde_json::from_str(s).map_err(|e| ActeError::Serialization(e.to_string()))?;
        if env.format != MODEL_FORMAT || env.version != MODEL_VERSION {
            return Err(ActeError::Serialization(format!(
                "unsupported model format {} v{}",
                env.format, env.version
            )));
        }
        Ok(env.model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn features_1d(xs: &[f64]) -> Features {
        Features::new(vec!["age".into()], xs.to_vec()).unwrap()
    }

    fn features_2d(rows: &[(f64, f64)], second: &str) -> Features {
        Features::new(
            vec!["age".into(), second.into()],
            rows.iter().flat_map(|&(a, b)| [a, b]).collect(),
        )
        .unwrap()
    }

    #[test]
    fn ols_recovers_line_in_covariate() {
        // y = 3 + 2x with age held at the knot so every age term vanishes.
        let rows: Vec<(f64, f64)> = (0..10).map(|i| (25.0, i as f64)).collect();
        let y: Vec<f64> = rows.iter().map(|r| 3.0 + 2.0 * r.1).collect();
        let m = fit(&RegressorSpec::ols(), &features_2d(&rows, "x"), &y).unwrap();
        let coef = m.ols().unwrap().coefficients();
        assert!((coef[0] - 3.0).abs() < 1e-8, "{coef:?}");
        assert!((coef[4] - 2.0).abs() < 1e-8, "{coef:?}");
        assert!(coef[1..4].iter().all(|c| c.abs() < 1e-8));
        let p = m.predict(&features_2d(&[(25.0, 4.0)], "x")).unwrap();
        assert!((p[0] - 11.0).abs() < 1e-8);
    }

    #[test]
    fn ols_duplicate_column_is_minimum_norm() {
        let rows: Vec<f64> = (0..12).flat_map(|i| [20.0 + i as f64, i as f64, i as f64]).collect();
        let f = Features::new(vec!["age".into(), "x".into(), "x_copy".into()], rows).unwrap();
        let y: Vec<f64> = (0..12).map(|i| 1.0 + 0.5 * i as f64).collect();
        let m = fit(&RegressorSpec::ols(), &f, &y).unwrap();
        let coef = m.ols().unwrap().coefficients();
        assert!((coef[4] - coef[5]).abs() < 1e-8, "{coef:?}");
        for (p, t) in m.predict(&f).unwrap().iter().zip(&y) {
            assert!((p - t).abs() < 1e-8);
        }
    }

    #[test]
    fn constant_targets() {
        let xs: Vec<f64> = (0..30).map(|i| 18.0 + (i % 20) as f64).collect();
        let y = vec![7.25; 30];
        let f = features_1d(&xs);
        let ols = fit(&RegressorSpec::ols(), &f, &y).unwrap();
        let rf = fit(&RegressorSpec::rf(RfHyperparams { n_trees: 10, ..Default::default() }), &f, &y).unwrap();
        let q = features_1d(&[18.0, 25.5, 40.0]);
        for v in ols.predict(&q).unwrap() {
            assert!((v - 7.25).abs() < 1e-9);
        }
        for v in rf.predict(&q).unwrap() {
            assert_eq!(v, 7.25);
        }
    }

    #[test]
    fn fit_errors() {
        let f = features_1d(&[20.0]);
        assert!(matches!(fit(&RegressorSpec::ols(), &f, &[1.0]), Err(ActeError::InsufficientData(_))));
        let f = features_1d(&[20.0, 21.0]);
        assert!(matches!(fit(&RegressorSpec::ols(), &f, &[1.0, f64::NAN]), Err(ActeError::Domain(_))));
        assert!(Features::new(vec!["x".into()], vec![1.0]).is_err());
    }

    #[test]
    fn fingerprint_mismatch_rejected() {
        let f = features_2d(&[(20.0, 1.0), (21.0, 2.0), (22.0, 0.0)], "x");
        let m = fit(&RegressorSpec::ols(), &f, &[1.0, 2.0, 3.0]).unwrap();
        let other = features_2d(&[(20.0, 1.0)], "z");
        assert!(matches!(m.predict(&other), Err(ActeError::Schema(_))));
    }

    #[test]
    fn age_indicators_give_group_means() {
        let xs = [20.0, 20.0, 21.0, 21.0, 21.0, 23.0];
        let y = [1.0, 3.0, 4.0, 5.0, 9.0, -2.0];
        let m = fit(&RegressorSpec::ols_age_indicators(), &features_1d(&xs), &y).unwrap();
        let p = m.predict(&features_1d(&[20.0, 21.0, 23.0])).unwrap();
        assert!((p[0] - 2.0).abs() < 1e-10);
        assert!((p[1] - 6.0).abs() < 1e-10);
        assert!((p[2] + 2.0).abs() < 1e-10);
    }

    #[test]
    fn json_round_trip_preserves_predictions() {
        let xs: Vec<f64> = (0..60).map(|i| 18.0 + (i % 22) as f64).collect();
        let y: Vec<f64> = xs.iter().map(|a| (a / 4.0).cos() + a * 0.01).collect();
        let f = features_1d(&xs);
        for spec in [
            RegressorSpec::ols(),
            RegressorSpec::rf(RfHyperparams {
                n_trees: 15,
                seed: 5,
                ..Default::default()
            }),
        ] {
            let m = fit(&spec, &f, &y).unwrap();
            let back = FittedOutcomeModel::from_json(&m.to_json().unwrap()).unwrap();
            assert_eq!(back.predict(&f).unwrap(), m.predict(&f).unwrap());
        }
        assert!(FittedOutcomeModel::from_json(r#"{"format":"other","version":1,"model":null}"#).is_err());
    }

    #[test]
    fn rf_deterministic_given_seed() {
        let xs: Vec<f64> = (0..200).map(|i| (i * 7 % 23) as f64).collect();
        let y: Vec<f64> = xs.iter().enumerate().map(|(i, a)| a * 0.3 + (i % 7) as f64).collect();
        let spec = RegressorSpec::rf(RfHyperparams {
            n_trees: 30,
            seed: 42,
            ..Default::default()
        });
        let f = features_1d(&xs);
        let a = fit(&spec, &f, &y).unwrap().predict(&f).unwrap();
        let b = fit(&spec, &f, &y).unwrap().predict(&f).unwrap();
        assert_eq!(a, b);
        let lo = y.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        assert!(a.iter().all(|&v| v >= lo && v <= hi));
    }
}
