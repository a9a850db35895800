//! Game-level panel data: the record model, validation, and the box-score
//! preprocessing rules (rest-day treatment, minutes filter, age window,
//! per-100-possession normalisation).

mod encode;
mod io;

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{ActeError, Result};

pub use encode::{encode_fixed_effects, DesignEncoder, DesignMatrix};
pub use io::{ingest_csv, read_dataset, write_csv, IngestReport, IngestSpec, DATE_FORMAT};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovariateKind {
    Categorical,
    Numeric,
}

impl std::str::FromStr for CovariateKind {
    type Err = ActeError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "categorical" | "cat" | "c" => Ok(CovariateKind::Categorical),
            "numeric" | "num" | "n" => Ok(CovariateKind::Numeric),
            other => Err(ActeError::Config(format!("unknown covariate kind {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CovariateDef {
    pub name: String,
    pub kind: CovariateKind,
}

impl CovariateDef {
    pub fn categorical(name: impl Into<String>) -> Self {
        CovariateDef {
            name: name.into(),
            kind: CovariateKind::Categorical,
        }
    }

    pub fn numeric(name: impl Into<String>) -> Self {
        CovariateDef {
            name: name.into(),
            kind: CovariateKind::Numeric,
        }
    }
}

/// Ordered covariate declarations.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CovariateSchema(pub Vec<CovariateDef>);

impl CovariateSchema {
    pub fn new(defs: Vec<CovariateDef>) -> Self {
        CovariateSchema(defs)
    }

    /// Parses `name:kind,name:kind` (kind defaults to categorical).
    pub fn parse(spec: &str) -> Result<Self> {
        let mut defs = Vec::new();
        for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, kind) = match part.split_once(':') {
                Some((n, k)) => (n.trim(), k.trim().parse()?),
                None => (part, CovariateKind::Categorical),
            };
            defs.push(CovariateDef {
                name: name.to_string(),
                kind,
            });
        }
        Ok(CovariateSchema(defs))
    }

    pub fn iter(&self) -> impl Iterator<Item = &CovariateDef> {
        self.0.iter()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CovariateValue {
    Level(String),
    Number(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub enum CovariateColumn {
    Categorical(Vec<String>),
    Numeric(Vec<f64>),
}

impl CovariateColumn {
    fn len(&self) -> usize {
        match self {
            CovariateColumn::Categorical(v) => v.len(),
            CovariateColumn::Numeric(v) => v.len(),
        }
    }

    fn select(&self, idx: &[usize]) -> CovariateColumn {
        match self {
            CovariateColumn::Categorical(v) => CovariateColumn::Categorical(idx.iter().map(|&i| v[i].clone()).collect()),
            CovariateColumn::Numeric(v) => CovariateColumn::Numeric(idx.iter().map(|&i| v[i]).collect()),
        }
    }

    fn value(&self, i: usize) -> CovariateValue {
        match self {
            CovariateColumn::Categorical(v) => CovariateValue::Level(v[i].clone()),
            CovariateColumn::Numeric(v) => CovariateValue::Number(v[i]),
        }
    }
}

/// One player-game observation.
#[derive(Debug, Clone, PartialEq)]
pub struct GameRecord {
    pub player_id: String,
    pub game_date: NaiveDate,
    pub prev_game_date: Option<NaiveDate>,
    pub age: i32,
    pub treatment: u8,
    pub covariates: Vec<(String, CovariateValue)>,
    /// Outcome columns, in dataset order.
    pub outcomes: Vec<(String, f64)>,
    pub possessions: Option<f64>,
    pub prev_game_minutes: Option<f64>,
}

/// Validated column-oriented panel.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    player_id: Vec<String>,
    game_date: Vec<NaiveDate>,
    prev_game_date: Vec<Option<NaiveDate>>,
    age: Vec<i32>,
    treatment: Vec<u8>,
    possessions: Vec<Option<f64>>,
    prev_game_minutes: Vec<Option<f64>>,
    schema: CovariateSchema,
    covariates: Vec<CovariateColumn>,
    outcome_names: Vec<String>,
    outcomes: Vec<Vec<f64>>,
    active: usize,
    vocabulary: BTreeMap<String, Vec<String>>,
}

impl Dataset {
    pub fn from_records(schema: CovariateSchema, records: &[GameRecord]) -> Result<Self> {
        let first = records
            .first()
            .ok_or_else(|| ActeError::EmptyInput("dataset needs at least one record".into()))?;
        let outcome_names: Vec<String> = first.outcomes.iter().map(|(n, _)| n.clone()).collect();
        let mut covariates: Vec<CovariateColumn> = schema
            .iter()
            .map(|d| match d.kind {
                CovariateKind::Categorical => CovariateColumn::Categorical(Vec::with_capacity(records.len())),
                CovariateKind::Numeric => CovariateColumn::Numeric(Vec::with_capacity(records.len())),
            })
            .collect();
        let mut outcomes = vec![Vec::with_capacity(records.len()); outcome_names.len()];
        for (row, rec) in records.iter().enumerate() {
            if rec.covariates.len() != schema.len() {
                return Err(ActeError::Schema(format!(
                    "record {row} has {} covariates, schema declares {}",
                    rec.covariates.len(),
                    schema.len()
                )));
            }
            for ((col, def), (name, value)) in covariates.iter_mut().zip(schema.iter()).zip(&rec.covariates) {
                if name != &def.name {
                    return Err(ActeError::Schema(format!("record {row}: expected covariate {:?}, found {name:?}", def.name)));
                }
                match (col, value) {
                    (CovariateColumn::Categorical(v), CovariateValue::Level(l)) => v.push(l.clone()),
                    (CovariateColumn::Numeric(v), CovariateValue::Number(x)) => v.push(*x),
                    _ => {
                        return Err(ActeError::Schema(format!("record {row}: covariate {name:?} has the wrong kind")));
                    }
                }
            }
            if rec.outcomes.len() != outcome_names.len() {
                return Err(ActeError::Schema(format!("record {row}: outcome columns differ from the first record")));
            }
            for ((dst, name), (n, y)) in outcomes.iter_mut().zip(&outcome_names).zip(&rec.outcomes) {
                if n != name {
                    return Err(ActeError::Schema(format!("record {row}: expected outcome {name:?}, found {n:?}")));
                }
                dst.push(*y);
            }
        }
        Dataset::from_columns(Columns {
            player_id: records.iter().map(|r| r.player_id.clone()).collect(),
            game_date: records.iter().map(|r| r.game_date).collect(),
            prev_game_date: records.iter().map(|r| r.prev_game_date).collect(),
            age: records.iter().map(|r| r.age).collect(),
            treatment: records.iter().map(|r| r.treatment).collect(),
            possessions: records.iter().map(|r| r.possessions).collect(),
            prev_game_minutes: records.iter().map(|r| r.prev_game_minutes).collect(),
            schema,
            covariates,
            outcome_names,
            outcomes,
        })
    }

    pub(crate) fn from_columns(c: Columns) -> Result<Self> {
        let n = c.age.len();
        if n == 0 {
            return Err(ActeError::EmptyInput("dataset needs at least one record".into()));
        }
        let lens = [
            c.player_id.len(),
            c.game_date.len(),
            c.prev_game_date.len(),
            c.treatment.len(),
            c.possessions.len(),
            c.prev_game_minutes.len(),
        ];
        if lens.iter().any(|&l| l != n) || c.covariates.iter().any(|col| col.len() != n) || c.outcomes.iter().any(|o| o.len() != n) {
            return Err(ActeError::Schema("column lengths differ".into()));
        }
        if c.covariates.len() != c.schema.len() {
            return Err(ActeError::Schema("covariate columns do not match schema".into()));
        }
        if c.outcomes.is_empty() || c.outcomes.len() != c.outcome_names.len() {
            return Err(ActeError::Schema("dataset needs at least one outcome column".into()));
        }
        if let Some(i) = c.treatment.iter().position(|&w| w > 1) {
            return Err(ActeError::Domain(format!("treatment must be 0 or 1 (record {i})")));
        }
        if let Some(i) = c.age.iter().position(|&a| a < 0) {
            return Err(ActeError::Domain(format!("age must be nonnegative (record {i})")));
        }
        for (name, col) in c.outcome_names.iter().zip(&c.outcomes) {
            if let Some(i) = col.iter().position(|y| !y.is_finite()) {
                return Err(ActeError::Domain(format!("outcome {name:?} is not finite at record {i}")));
            }
        }
        for (def, col) in c.schema.iter().zip(&c.covariates) {
            match (def.kind, col) {
                (CovariateKind::Numeric, CovariateColumn::Numeric(v)) => {
                    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
                        return Err(ActeError::Domain(format!("covariate {:?} is not finite at record {i}", def.name)));
                    }
                }
                (CovariateKind::Categorical, CovariateColumn::Categorical(_)) => {}
                _ => return Err(ActeError::Schema(format!("covariate {:?} has the wrong kind", def.name))),
            }
        }
        let vocabulary = build_vocabulary(&c.schema, &c.covariates);
        Ok(Dataset {
            player_id: c.player_id,
            game_date: c.game_date,
            prev_game_date: c.prev_game_date,
            age: c.age,
            treatment: c.treatment,
            possessions: c.possessions,
            prev_game_minutes: c.prev_game_minutes,
            schema: c.schema,
            covariates: c.covariates,
            outcome_names: c.outcome_names,
            outcomes: c.outcomes,
            active: 0,
            vocabulary,
        })
    }

    pub fn len(&self) -> usize {
        self.age.len()
    }

    pub fn is_empty(&self) -> bool {
        self.age.is_empty()
    }

    pub fn ages(&self) -> &[i32] {
        &self.age
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn player_ids(&self) -> &[String] {
        &self.player_id
    }

    pub fn game_dates(&self) -> &[NaiveDate] {
        &self.game_date
    }

    pub fn prev_game_dates(&self) -> &[Option<NaiveDate>] {
        &self.prev_game_date
    }

    pub fn possessions(&self) -> &[Option<f64>] {
        &self.possessions
    }

    pub fn prev_game_minutes(&self) -> &[Option<f64>] {
        &self.prev_game_minutes
    }

    pub fn schema(&self) -> &CovariateSchema {
        &self.schema
    }

    pub fn covariate_columns(&self) -> &[CovariateColumn] {
        &self.covariates
    }

    /// Sorted observed levels per categorical covariate.
    pub fn vocabulary(&self) -> &BTreeMap<String, Vec<String>> {
        &self.vocabulary
    }

    pub fn outcome_names(&self) -> &[String] {
        &self.outcome_names
    }

    pub fn outcome_name(&self) -> &str {
        &self.outcome_names[self.active]
    }

    /// The outcome column under analysis.
    pub fn outcome(&self) -> &[f64] {
        &self.outcomes[self.active]
    }

    pub fn outcome_column(&self, name: &str) -> Option<&[f64]> {
        self.outcome_names.iter().position(|n| n == name).map(|i| self.outcomes[i].as_slice())
    }

    /// Switches the outcome under analysis.
    pub fn select_outcome(mut self, name: &str) -> Result<Self> {
        self.active = self
            .outcome_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| ActeError::Schema(format!("no outcome column named {name:?}")))?;
        Ok(self)
    }

    pub fn record(&self, i: usize) -> GameRecord {
        GameRecord {
            player_id: self.player_id[i].clone(),
            game_date: self.game_date[i],
            prev_game_date: self.prev_game_date[i],
            age: self.age[i],
            treatment: self.treatment[i],
            covariates: self
                .schema
                .iter()
                .zip(&self.covariates)
                .map(|(d, c)| (d.name.clone(), c.value(i)))
                .collect(),
            outcomes: self
                .outcome_names
                .iter()
                .zip(&self.outcomes)
                .map(|(n, o)| (n.clone(), o[i]))
                .collect(),
            possessions: self.possessions[i],
            prev_game_minutes: self.prev_game_minutes[i],
        }
    }

    pub fn records(&self) -> impl Iterator<Item = GameRecord> + '_ {
        (0..self.len()).map(|i| self.record(i))
    }

    /// Rows at the given indices (repeats allowed), with vocabularies rebuilt.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let mut out = Dataset::from_columns(Columns {
            player_id: idx.iter().map(|&i| self.player_id[i].clone()).collect(),
            game_date: idx.iter().map(|&i| self.game_date[i]).collect(),
            prev_game_date: idx.iter().map(|&i| self.prev_game_date[i]).collect(),
            age: idx.iter().map(|&i| self.age[i]).collect(),
            treatment: idx.iter().map(|&i| self.treatment[i]).collect(),
            possessions: idx.iter().map(|&i| self.possessions[i]).collect(),
            prev_game_minutes: idx.iter().map(|&i| self.prev_game_minutes[i]).collect(),
            schema: self.schema.clone(),
            covariates: self.covariates.iter().map(|c| c.select(idx)).collect(),
            outcome_names: self.outcome_names.clone(),
            outcomes: self.outcomes.iter().map(|o| idx.iter().map(|&i| o[i]).collect()).collect(),
        })?;
        out.active = self.active;
        Ok(out)
    }

    /// Indices of rows in arm `w`.
    pub fn arm_indices(&self, w: u8) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.treatment[i] == w).collect()
    }

    pub fn arm_counts(&self) -> (usize, usize) {
        let treated = self.treatment.iter().filter(|&&w| w == 1).count();
        (self.len() - treated, treated)
    }

    /// Copy with the active outcome replaced.
    pub fn with_outcome_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.len() {
            return Err(ActeError::Schema("outcome length mismatch".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(ActeError::Domain("outcome values must be finite".into()));
        }
        let mut out = self.clone();
        out.outcomes[self.active] = values;
        Ok(out)
    }

    /// Copy with treatment labels replaced.
    pub fn with_treatment(&self, treatment: Vec<u8>) -> Result<Self> {
        if treatment.len() != self.len() {
            return Err(ActeError::Schema("treatment length mismatch".into()));
        }
        if treatment.iter().any(|&w| w > 1) {
            return Err(ActeError::Domain("treatment must be 0 or 1".into()));
        }
        let mut out = self.clone();
        out.treatment = treatment;
        Ok(out)
    }
}

pub(crate) struct Columns {
    pub player_id: Vec<String>,
    pub game_date: Vec<NaiveDate>,
    pub prev_game_date: Vec<Option<NaiveDate>>,
    pub age: Vec<i32>,
    pub treatment: Vec<u8>,
    pub possessions: Vec<Option<f64>>,
    pub prev_game_minutes: Vec<Option<f64>>,
    pub schema: CovariateSchema,
    pub covariates: Vec<CovariateColumn>,
    pub outcome_names: Vec<String>,
    pub outcomes: Vec<Vec<f64>>,
}

fn build_vocabulary(schema: &CovariateSchema, cols: &[CovariateColumn]) -> BTreeMap<String, Vec<String>> {
    schema
        .iter()
        .zip(cols)
        .filter_map(|(d, c)| match c {
            CovariateColumn::Categorical(v) => {
                let levels: BTreeSet<&String> = v.iter().collect();
                Some((d.name.clone(), levels.into_iter().cloned().collect()))
            }
            CovariateColumn::Numeric(_) => None,
        })
        .collect()
}

/// Filters and normalisation applied to box-score data before estimation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub min_prev_minutes: f64,
    pub age_min: i32,
    pub age_max: i32,
    pub rest_threshold_days: i64,
    pub per100_stats: Vec<String>,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            min_prev_minutes: 25.0,
            age_min: 18,
            age_max: 39,
            rest_threshold_days: 1,
            per100_stats: Vec::new(),
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if self.age_min > self.age_max {
            return Err(ActeError::Config(format!("age_min {} exceeds age_max {}", self.age_min, self.age_max)));
        }
        if !(self.min_prev_minutes >= 0.0) {
            return Err(ActeError::Config("min_prev_minutes must be nonnegative".into()));
        }
        if self.rest_threshold_days < 1 {
            return Err(ActeError::Config("rest_threshold_days must be at least 1".into()));
        }
        Ok(())
    }
}

/// 0 for a back-to-back (one-day gap), 1 once the gap reaches
/// `threshold + 1` days.
pub fn derive_treatment(prev_game_date: NaiveDate, game_date: NaiveDate, threshold_days: i64) -> Result<u8> {
    let gap = (game_date - prev_game_date).num_days();
    if gap <= 0 {
        return Err(ActeError::Chronology {
            prev: prev_game_date.format(DATE_FORMAT).to_string(),
            game: game_date.format(DATE_FORMAT).to_string(),
        });
    }
    Ok(u8::from(gap > threshold_days))
}

pub fn per100(stat: f64, possessions: f64) -> Result<f64> {
    if !(possessions > 0.0) || !possessions.is_finite() {
        return Err(ActeError::Domain(format!("possessions must be positive, got {possessions}")));
    }
    Ok(stat / possessions * 100.0)
}

/// Keeps rows whose previous game lasted at least `min_prev_minutes` and
/// whose age is inside `[age_min, age_max]`. Rows with unknown previous
/// minutes only survive when the minimum is zero.
pub fn apply_filters(ds: &Dataset, cfg: &PreprocessConfig) -> Result<Dataset> {
    cfg.validate()?;
    let keep: Vec<usize> = (0..ds.len())
        .filter(|&i| {
            let minutes_ok = match ds.prev_game_minutes[i] {
                Some(m) => m >= cfg.min_prev_minutes,
                None => cfg.min_prev_minutes <= 0.0,
            };
            minutes_ok && (cfg.age_min..=cfg.age_max).contains(&ds.age[i])
        })
        .collect();
    if keep.is_empty() {
        return Err(ActeError::EmptyResult("filters removed every row".into()));
    }
    ds.select(&keep)
}

/// Rescales the named outcome columns to per-100-possession rates.
pub fn normalize_per100(ds: &Dataset, stats: &[String]) -> Result<Dataset> {
    let mut out = ds.clone();
    for stat in stats {
        let col = out
            .outcome_names
            .iter()
            .position(|n| n == stat)
            .ok_or_else(|| ActeError::Schema(format!("per-100 stat {stat:?} is not an outcome column")))?;
        let mut scaled = Vec::with_capacity(ds.len());
        for (i, &y) in out.outcomes[col].iter().enumerate() {
            let poss = ds.possessions[i]
                .ok_or_else(|| ActeError::Domain(format!("record {i}: possessions missing for per-100 stat {stat:?}")))?;
            scaled.push(per100(y, poss).map_err(|e| ActeError::Domain(format!("record {i}: {e}")))?);
        }
        out.outcomes[col] = scaled;
    }
    Ok(out)
}

/// Filters, then per-100 normalisation.
pub fn preprocess(ds: &Dataset, cfg: &PreprocessConfig) -> Result<Dataset> {
    let filtered = apply_filters(ds, cfg)?;
    normalize_per100(&filtered, &cfg.per100_stats)
}
