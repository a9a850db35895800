//! S-, T- and X-learners and the age-conditioned curves built from them.
//!
//! Curves average model predictions over the empirical covariate
//! distribution of a dataset, with age (and, for the S-learner, treatment)
//! overridden at every row.

mod curve;

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, DesignEncoder};
use crate::error::{ActeError, Result};
use crate::learners::{self, Features, FittedOutcomeModel, RegressorSpec, AGE_COLUMN};

pub use curve::{smooth_curve, CurveEstimate, CurveFlag, CurveKind};

pub const TREATMENT_COLUMN: &str = "treatment";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MetaLearner {
    S,
    T,
    X,
}

impl MetaLearner {
    pub fn label(&self) -> &'static str {
        match self {
            MetaLearner::S => "s",
            MetaLearner::T => "t",
            MetaLearner::X => "x",
        }
    }
}

impl std::str::FromStr for MetaLearner {
    type Err = ActeError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "s" => Ok(MetaLearner::S),
            "t" => Ok(MetaLearner::T),
            "x" => Ok(MetaLearner::X),
            other => Err(ActeError::Config(format!("unknown meta-learner {other:?} (expected s, t or x)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PropensityMode {
    EmpiricalByAge,
    Constant(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetaSpec {
    pub learner: MetaLearner,
    pub base_control: RegressorSpec,
    pub base_treated: RegressorSpec,
    pub base_effect: RegressorSpec,
    pub propensity: PropensityMode,
}

impl MetaSpec {
    /// Uses `base` for every stage.
    pub fn new(learner: MetaLearner, base: RegressorSpec) -> Self {
        MetaSpec {
            learner,
            base_control: base.clone(),
            base_treated: base.clone(),
            base_effect: base,
            propensity: PropensityMode::EmpiricalByAge,
        }
    }

    /// Method label such as `t.rf`.
    pub fn label(&self) -> String {
        format!("{}.{}", self.learner.label(), self.base_control.label())
    }

    pub fn reseeded(&self, salt: &[u64]) -> Self {
        MetaSpec {
            learner: self.learner,
            base_control: self.base_control.reseeded(salt),
            base_treated: self.base_treated.reseeded(salt),
            base_effect: self.base_effect.reseeded(salt),
            propensity: self.propensity,
        }
    }
}

/// `e(a) = Pr(W = 1 | A = a)` with an optional global fallback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropensityEstimate {
    #[serde(with = "age_pairs")]
    pub by_age: BTreeMap<i32, f64>,
    pub fallback: Option<f64>,
}

mod age_pairs {
    use std::collections::BTreeMap;

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &BTreeMap<i32, f64>, s: S) -> Result<S::Ok, S::Error> {
        m.iter().collect::<Vec<_>>().serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<BTreeMap<i32, f64>, D::Error> {
        Ok(Vec::<(i32, f64)>::deserialize(d)?.into_iter().collect())
    }
}

impl PropensityEstimate {
    pub fn constant(c: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&c) {
            return Err(ActeError::Domain(format!("propensity {c} outside [0, 1]")));
        }
        Ok(PropensityEstimate {
            by_age: BTreeMap::new(),
            fallback: Some(c),
        })
    }

    pub fn at(&self, age: i32) -> Option<f64> {
        self.by_age.get(&age).copied().or(self.fallback)
    }
}

pub fn estimate_propensity(ds: &Dataset, mode: PropensityMode) -> Result<PropensityEstimate> {
    match mode {
        PropensityMode::Constant(c) => PropensityEstimate::constant(c),
        PropensityMode::EmpiricalByAge => {
            let mut counts: BTreeMap<i32, (usize, usize)> = BTreeMap::new();
            for (&a, &w) in ds.ages().iter().zip(ds.treatment()) {
                let e = counts.entry(a).or_default();
                e.0 += usize::from(w);
                e.1 += 1;
            }
            let treated = ds.treatment().iter().filter(|&&w| w == 1).count();
            Ok(PropensityEstimate {
                by_age: counts.into_iter().map(|(a, (t, n))| (a, t as f64 / n as f64)).collect(),
                fallback: Some(treated as f64 / ds.len() as f64),
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "learner")]
pub enum MetaModels {
    S {
        mu: FittedOutcomeModel,
    },
    T {
        mu0: FittedOutcomeModel,
        mu1: FittedOutcomeModel,
    },
    X {
        mu0: FittedOutcomeModel,
        mu1: FittedOutcomeModel,
        /// Fit on control rows, target `mu1(A, X) - Y`.
        tau0: FittedOutcomeModel,
        /// Fit on treated rows, target `Y - mu0(A, X)`.
        tau1: FittedOutcomeModel,
        propensity: PropensityEstimate,
    },
}

/// A trained meta-learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedMeta {
    spec: MetaSpec,
    encoder: DesignEncoder,
    feature_names: Vec<String>,
    /// Ages observed in the control and treated training rows.
    arm_ages: [BTreeSet<i32>; 2],
    models: MetaModels,
}

/// Distinct encoded covariate rows with multiplicities.
struct Profiles {
    width: usize,
    rows: Vec<f64>,
    counts: Vec<usize>,
    total: usize,
}

impl Profiles {
    fn from_encoded(width: usize, data: &[f64], n: usize) -> Self {
        if width == 0 {
            return Profiles {
                width,
                rows: Vec::new(),
                counts: vec![n],
                total: n,
            };
        }
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut rows = Vec::new();
        let mut counts = Vec::new();
        for row in data.chunks(width) {
            let key: Vec<u64> = row.iter().map(|v| v.to_bits()).collect();
            let at = *index.entry(key).or_insert_with(|| {
                rows.extend_from_slice(row);
                counts.push(0);
                counts.len() - 1
            });
            counts[at] += 1;
        }
        Profiles {
            width,
            rows,
            counts,
            total: n,
        }
    }

    fn len(&self) -> usize {
        self.counts.len()
    }

    /// Row-major features `[age, profile..., (w)]` for every (age, profile).
    fn grid(&self, ages: &[i32], treatment: Option<f64>) -> Vec<f64> {
        let p = 1 + self.width + usize::from(treatment.is_some());
        let mut out = Vec::with_capacity(ages.len() * self.len() * p);
        for &a in ages {
            for j in 0..self.len() {
                out.push(f64::from(a));
                out.extend_from_slice(&self.rows[j * self.width..(j + 1) * self.width]);
                if let Some(w) = treatment {
                    out.push(w);
                }
            }
        }
        out
    }

    /// Count-weighted mean per age of grid predictions.
    fn average(&self, n_ages: usize, preds: &[f64]) -> Vec<f64> {
        (0..n_ages)
            .map(|k| {
                let block = &preds[k * self.len()..(k + 1) * self.len()];
                block.iter().zip(&self.counts).map(|(p, &c)| p * c as f64).sum::<f64>() / self.total as f64
            })
            .collect()
    }
}

fn features_for(encoder: &DesignEncoder, ds: &Dataset, rows: &[usize], with_treatment: bool) -> Result<Features> {
    let enc = encoder.encode(ds)?;
    let width = enc.cols();
    let mut names = vec![AGE_COLUMN.to_string()];
    names.extend(enc.names.iter().cloned());
    if with_treatment {
        names.push(TREATMENT_COLUMN.to_string());
    }
    let p = names.len();
    let mut data = Vec::with_capacity(rows.len() * p);
    for &i in rows {
        data.push(f64::from(ds.ages()[i]));
        data.extend_from_slice(&enc.data[i * width..(i + 1) * width]);
        if with_treatment {
            data.push(f64::from(ds.treatment()[i]));
        }
    }
    Features::new(names, data)
}

fn check_arms(ds: &Dataset) -> Result<(Vec<usize>, Vec<usize>)> {
    let control = ds.arm_indices(0);
    let treated = ds.arm_indices(1);
    if control.is_empty() || treated.is_empty() {
        return Err(ActeError::DegenerateArm(format!(
            "need both arms, found {} control and {} treated rows",
            control.len(),
            treated.len()
        )));
    }
    Ok((control, treated))
}

fn arm_ages(ds: &Dataset, control: &[usize], treated: &[usize]) -> [BTreeSet<i32>; 2] {
    [
        control.iter().map(|&i| ds.ages()[i]).collect(),
        treated.iter().map(|&i| ds.ages()[i]).collect(),
    ]
}

fn gather(values: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| values[i]).collect()
}

pub fn fit_s_learner(ds: &Dataset, spec: &MetaSpec) -> Result<FittedMeta> {
    if spec.learner != MetaLearner::S {
        return Err(ActeError::Config("fit_s_learner needs an S spec".into()));
    }
    let (control, treated) = check_arms(ds)?;
    let encoder = DesignEncoder::from_dataset(ds);
    let all: Vec<usize> = (0..ds.len()).collect();
    let x = features_for(&encoder, ds, &all, true)?;
    let mu = learners::fit(&spec.base_control, &x, ds.outcome())?;
    Ok(FittedMeta {
        spec: spec.clone(),
        feature_names: x.names().to_vec(),
        encoder,
        arm_ages: arm_ages(ds, &control, &treated),
        models: MetaModels::S { mu },
    })
}

struct ArmFits {
    encoder: DesignEncoder,
    control: Vec<usize>,
    treated: Vec<usize>,
    x0: Features,
    x1: Features,
    mu0: FittedOutcomeModel,
    mu1: FittedOutcomeModel,
}

fn fit_arms(ds: &Dataset, spec: &MetaSpec) -> Result<ArmFits> {
    let (control, treated) = check_arms(ds)?;
    let encoder = DesignEncoder::from_dataset(ds);
    let x0 = features_for(&encoder, ds, &control, false)?;
    let x1 = features_for(&encoder, ds, &treated, false)?;
    let y = ds.outcome();
    let (mu0, mu1) = rayon::join(
        || learners::fit(&spec.base_control, &x0, &gather(y, &control)),
        || learners::fit(&spec.base_treated, &x1, &gather(y, &treated)),
    );
    Ok(ArmFits {
        encoder,
        control,
        treated,
        x0,
        x1,
        mu0: mu0?,
        mu1: mu1?,
    })
}

pub fn fit_t_learner(ds: &Dataset, spec: &MetaSpec) -> Result<FittedMeta> {
    if spec.learner != MetaLearner::T {
        return Err(ActeError::Config("fit_t_learner needs a T spec".into()));
    }
    let arms = fit_arms(ds, spec)?;
    Ok(FittedMeta {
        spec: spec.clone(),
        feature_names: arms.x0.names().to_vec(),
        arm_ages: arm_ages(ds, &arms.control, &arms.treated),
        encoder: arms.encoder,
        models: MetaModels::T {
            mu0: arms.mu0,
            mu1: arms.mu1,
        },
    })
}

pub fn fit_x_learner(ds: &Dataset, spec: &MetaSpec, propensity: &PropensityEstimate) -> Result<FittedMeta> {
    if spec.learner != MetaLearner::X {
        return Err(ActeError::Config("fit_x_learner needs an X spec".into()));
    }
    for &a in ds.ages() {
        match propensity.at(a) {
            None => return Err(ActeError::PropensityMissing(a)),
            Some(e) if !(0.0..=1.0).contains(&e) => {
                return Err(ActeError::Domain(format!("propensity {e} at age {a} outside [0, 1]")))
            }
            Some(_) => {}
        }
    }
    let arms = fit_arms(ds, spec)?;
    let y = ds.outcome();
    let mu0_on_treated = arms.mu0.predict(&arms.x1)?;
    let mu1_on_control = arms.mu1.predict(&arms.x0)?;
    let d1: Vec<f64> = arms.treated.iter().zip(&mu0_on_treated).map(|(&i, m)| y[i] - m).collect();
    let d0: Vec<f64> = arms.control.iter().zip(&mu1_on_control).map(|(&i, m)| m - y[i]).collect();
    let (tau0, tau1) = rayon::join(
        || learners::fit(&spec.base_effect, &arms.x0, &d0),
        || learners::fit(&spec.base_effect, &arms.x1, &d1),
    );
    Ok(FittedMeta {
        spec: spec.clone(),
        feature_names: arms.x0.names().to_vec(),
        arm_ages: arm_ages(ds, &arms.control, &arms.treated),
        encoder: arms.encoder,
        models: MetaModels::X {
            mu0: arms.mu0,
            mu1: arms.mu1,
            tau0: tau0?,
            tau1: tau1?,
            propensity: propensity.clone(),
        },
    })
}

/// Fits whichever learner `spec` names; the X-learner's propensity comes
/// from `spec.propensity`.
pub fn fit_meta(ds: &Dataset, spec: &MetaSpec) -> Result<FittedMeta> {
    match spec.learner {
        MetaLearner::S => fit_s_learner(ds, spec),
        MetaLearner::T => fit_t_learner(ds, spec),
        MetaLearner::X => {
            let e = estimate_propensity(ds, spec.propensity)?;
            fit_x_learner(ds, spec, &e)
        }
    }
}

impl FittedMeta {
    pub fn spec(&self) -> &MetaSpec {
        &self.spec
    }

    pub fn models(&self) -> &MetaModels {
        &self.models
    }

    pub fn encoder(&self) -> &DesignEncoder {
        &self.encoder
    }

    fn profiles(&self, ds: &Dataset) -> Result<Profiles> {
        let enc = self.encoder.encode(ds)?;
        Ok(Profiles::from_encoded(enc.cols(), &enc.data, ds.len()))
    }

    fn averaged(&self, model: &FittedOutcomeModel, profiles: &Profiles, ages: &[i32], w: Option<f64>) -> Vec<f64> {
        let grid = profiles.grid(ages, w);
        profiles.average(ages.len(), &model.predict_unchecked(&grid))
    }

    fn annotate(&self, curve: &mut CurveEstimate) {
        let all: BTreeSet<i32> = self.arm_ages[0].union(&self.arm_ages[1]).copied().collect();
        let (lo, hi) = match (all.first(), all.last()) {
            (Some(&lo), Some(&hi)) => (lo, hi),
            _ => return,
        };
        for i in 0..curve.len() {
            let a = curve.ages[i];
            if a < lo || a > hi {
                curve.flag(i, CurveFlag::Extrapolated);
            }
            if !self.arm_ages[0].contains(&a) || !self.arm_ages[1].contains(&a) {
                curve.flag(i, CurveFlag::ArmMissing);
            }
        }
    }

    fn check_ages(ages: &[i32]) -> Result<()> {
        if ages.is_empty() {
            return Err(ActeError::Config("age grid is empty".into()));
        }
        Ok(())
    }

    /// `mu_w(a)`: mean prediction under arm `w` over `ds`'s covariates.
    pub fn acef(&self, ds: &Dataset, w: u8, ages: &[i32]) -> Result<CurveEstimate> {
        Self::check_ages(ages)?;
        if w > 1 {
            return Err(ActeError::Domain("treatment arm must be 0 or 1".into()));
        }
        let profiles = self.profiles(ds)?;
        let values = match &self.models {
            MetaModels::S { mu } => self.averaged(mu, &profiles, ages, Some(f64::from(w))),
            MetaModels::T { mu0, mu1 } => self.averaged(if w == 0 { mu0 } else { mu1 }, &profiles, ages, None),
            MetaModels::X { .. } => {
                return Err(ActeError::Config("the X-learner does not produce arm-specific curves".into()));
            }
        };
        let mut curve = CurveEstimate::new(CurveKind::acef(w), ages.to_vec(), values);
        self.annotate(&mut curve);
        Ok(curve)
    }

    /// `tau(a)` averaged over `ds`'s covariates.
    pub fn acte(&self, ds: &Dataset, ages: &[i32]) -> Result<CurveEstimate> {
        Self::check_ages(ages)?;
        let values = match &self.models {
            MetaModels::S { .. } | MetaModels::T { .. } => {
                let m1 = self.acef(ds, 1, ages)?;
                let m0 = self.acef(ds, 0, ages)?;
                m1.values.iter().zip(&m0.values).map(|(a, b)| a - b).collect()
            }
            MetaModels::X { .. } => {
                let (t0, t1, e) = self.x_parts(ds, ages)?;
                (0..ages.len()).map(|k| e[k] * t0[k] + (1.0 - e[k]) * t1[k]).collect()
            }
        };
        let mut curve = CurveEstimate::new(CurveKind::Acte, ages.to_vec(), values);
        self.annotate(&mut curve);
        Ok(curve)
    }

    fn x_parts(&self, ds: &Dataset, ages: &[i32]) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let MetaModels::X {
            tau0, tau1, propensity, ..
        } = &self.models
        else {
            return Err(ActeError::Config("not an X-learner".into()));
        };
        let e = ages
            .iter()
            .map(|&a| propensity.at(a).ok_or(ActeError::PropensityMissing(a)))
            .collect::<Result<Vec<f64>>>()?;
        let profiles = self.profiles(ds)?;
        Ok((
            self.averaged(tau0, &profiles, ages, None),
            self.averaged(tau1, &profiles, ages, None),
            e,
        ))
    }

    /// The X-learner's two effect curves `(tau0(a), tau1(a))`.
    pub fn x_components(&self, ds: &Dataset, ages: &[i32]) -> Result<(CurveEstimate, CurveEstimate)> {
        Self::check_ages(ages)?;
        let (t0, t1, _) = self.x_parts(ds, ages)?;
        Ok((
            CurveEstimate::new(CurveKind::Acte, ages.to_vec(), t0),
            CurveEstimate::new(CurveKind::Acte, ages.to_vec(), t1),
        ))
    }

    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Envelope<'a> {
            format: &'a str,
            version: u32,
            meta: &'a FittedMeta,
        }
        serde_json::to_string(&Envelope {
            format: META_FORMAT,
            version: learners::MODEL_VERSION,
            meta: self,
        })
        .map_err(|e| ActeError::Serialization(e.to_string()))
    }

    pub fn from_json(s: &str) -> Result<Self> {
        #[derive(Deserialize)]
        struct Envelope {
            format: String,
            version: u32,
            meta: FittedMeta,
        }
        let env: Envelope = serde_json::from_str(s).map_err(|e| ActeError::Serialization(e.to_string()))?;
        if env.format != META_FORMAT || env.version != learners::MODEL_VERSION {
            return Err(ActeError::Serialization(format!(
                "unsupported meta-model format {} v{}",
                env.format, env.version
            )));
        }
        Ok(env.meta)
    }
}

pub const META_FORMAT: &str = "acte-meta-model";

/// Convenience: fit and return the ACTE curve.
pub fn acte(ds: &Dataset, spec: &MetaSpec, ages: &[i32]) -> Result<CurveEstimate> {
    fit_meta(ds, spec)?.acte(ds, ages)
}
