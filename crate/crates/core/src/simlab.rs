//! Synthetic player panels with known treatment effects, and a Monte Carlo
//! harness comparing meta-learner and base-learner combinations.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{Days, NaiveDate};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Columns, CovariateColumn, CovariateDef, CovariateSchema, Dataset};
use crate::error::{ActeError, Result};
use crate::inference::{mean_curve_mse, MseReport};
use crate::learners::{RegressorSpec, RfHyperparams};
use crate::meta::{fit_meta, CurveEstimate, CurveKind, MetaLearner, MetaSpec};
use crate::plot::{LinePlot, Series};
use crate::rng::derive_seed;

/// The six method labels, in table order.
pub const METHODS: [&str; 6] = ["s.ols", "t.ols", "x.ols", "s.rf", "t.rf", "x.rf"];

pub const COVARIATE: &str = "x";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioSpec {
    pub scenario: u8,
    pub n_players: usize,
    pub age_min: i32,
    pub age_max: i32,
    /// Knot of the mean age curve.
    pub a_peak: f64,
    pub omega: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub sigma_beta: f64,
    pub sigma_eps: f64,
    pub sigma_gamma: f64,
    pub treat_prob: f64,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        ScenarioSpec {
            scenario: 1,
            n_players: 500,
            age_min: 18,
            age_max: 40,
            a_peak: 25.0,
            omega: 0.0,
            beta1: -1.0 / 9.0,
            beta2: -6.0 / 1000.0,
            beta3: 45.0 / 10000.0,
            sigma_beta: 0.02,
            sigma_eps: 1.0,
            sigma_gamma: 0.4,
            treat_prob: 0.151,
            seed: 0,
        }
    }
}

impl ScenarioSpec {
    pub fn new(scenario: u8) -> Result<Self> {
        let spec = ScenarioSpec {
            scenario,
            ..Default::default()
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.scenario) {
            return Err(ActeError::Config(format!("unknown scenario {} (expected 1, 2 or 3)", self.scenario)));
        }
        if self.n_players == 0 {
            return Err(ActeError::Config("n_players must be positive".into()));
        }
        if self.age_min > self.age_max {
            return Err(ActeError::Config(format!("empty age grid {}:{}", self.age_min, self.age_max)));
        }
        if !(0.0..=1.0).contains(&self.treat_prob) {
            return Err(ActeError::Config(format!("treat_prob {} outside [0, 1]", self.treat_prob)));
        }
        let reals = [
            self.a_peak,
            self.omega,
            self.beta1,
            self.beta2,
            self.beta3,
            self.sigma_beta,
            self.sigma_eps,
            self.sigma_gamma,
        ];
        if reals.iter().any(|v| !v.is_finite()) {
            return Err(ActeError::Config("scenario parameters must be finite".into()));
        }
        if self.sigma_beta < 0.0 || self.sigma_eps < 0.0 || self.sigma_gamma < 0.0 {
            return Err(ActeError::Config("standard deviations must be non-negative".into()));
        }
        Ok(())
    }

    pub fn ages(&self) -> Vec<i32> {
        (self.age_min..=self.age_max).collect()
    }
}

fn step(cond: bool) -> f64 {
    if cond {
        1.0
    } else {
        0.0
    }
}

pub fn true_tau(a: f64, spec: &ScenarioSpec) -> Result<f64> {
    let k = spec.a_peak;
    match spec.scenario {
        1 => Ok(2.0),
        2 => Ok(0.1 * (a - f64::from(spec.age_min))),
        3 => Ok(2.0 * (a - 16.0) + 0.0005 * step(a > 20.0) * (a - k).powi(3)
            - 0.0005 * step(a > k) * (a - k).powi(4)),
        s => Err(ActeError::Config(format!("unknown scenario {s} (expected 1, 2 or 3)"))),
    }
}

/// Population mean outcome `g(a, w)`.
pub fn mean_outcome(a: f64, w: u8, spec: &ScenarioSpec) -> Result<f64> {
    let d = a - spec.a_peak;
    let above = step(a > spec.a_peak);
    Ok(spec.omega + spec.beta1 * d * d + spec.beta2 * d * d * above + spec.beta3 * d.powi(3) * above
        + true_tau(a, spec)? * f64::from(w))
}

pub fn truth_curve(spec: &ScenarioSpec) -> Result<CurveEstimate> {
    let ages = spec.ages();
    let values = ages.iter().map(|&a| true_tau(f64::from(a), spec)).collect::<Result<_>>()?;
    Ok(CurveEstimate::new(CurveKind::Acte, ages, values))
}

/// A generated panel with both potential outcomes retained.
#[derive(Debug, Clone, PartialEq)]
pub struct SimDataset {
    pub spec: ScenarioSpec,
    pub data: Dataset,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    pub x: Option<Vec<f64>>,
}

pub fn generate(spec: &ScenarioSpec) -> Result<SimDataset> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let ages = spec.ages();
    let n = spec.n_players * ages.len();
    let g: Vec<[f64; 2]> = ages
        .iter()
        .map(|&a| Ok([mean_outcome(f64::from(a), 0, spec)?, mean_outcome(f64::from(a), 1, spec)?]))
        .collect::<Result<_>>()?;
    let with_x = spec.scenario == 3;
    let width = (spec.n_players.max(1) as f64).log10().floor() as usize + 1;
    let base = NaiveDate::from_ymd_opt(2000, 10, 15).expect("valid date");

    let mut player_id = Vec::with_capacity(n);
    let mut game_date = Vec::with_capacity(n);
    let mut prev_game_date = Vec::with_capacity(n);
    let mut age = Vec::with_capacity(n);
    let mut treatment = Vec::with_capacity(n);
    let mut xs = Vec::with_capacity(if with_x { n } else { 0 });
    let (mut y, mut y0, mut y1) = (Vec::with_capacity(n), Vec::with_capacity(n), Vec::with_capacity(n));

    for p in 0..spec.n_players {
        let gamma = spec.sigma_gamma * rng.sample::<f64, _>(StandardNormal);
        let b = spec.sigma_beta * rng.sample::<f64, _>(StandardNormal);
        let x = if with_x { rng.random_range(-1.0..1.0) } else { 0.0 };
        let id = format!("p{p:0width$}");
        for (k, &a) in ages.iter().enumerate() {
            let w = u8::from(rng.random_bool(spec.treat_prob));
            let eps = spec.sigma_eps * rng.sample::<f64, _>(StandardNormal);
            let d = f64::from(a) - spec.a_peak;
            let f = gamma + b * d * d * step(d > 0.0);
            let (f0, f1) = if with_x { (f + 2.0 * x, f + 5.0 * x) } else { (f, f) };
            let o0 = g[k][0] + f0 + eps;
            let o1 = g[k][1] + f1 + eps;
            let date = base + Days::new(365 * k as u64);
            player_id.push(id.clone());
            game_date.push(date);
            prev_game_date.push(Some(date - Days::new(1 + u64::from(w))));
            age.push(a);
            treatment.push(w);
            if with_x {
                xs.push(x);
            }
            y.push(if w == 1 { o1 } else { o0 });
            y0.push(o0);
            y1.push(o1);
        }
    }

    let (schema, covariates) = if with_x {
        (
            CovariateSchema::new(vec![CovariateDef::numeric(COVARIATE)]),
            vec![CovariateColumn::Numeric(xs.clone())],
        )
    } else {
        (CovariateSchema::default(), Vec::new())
    };
    let data = Dataset::from_columns(Columns {
        player_id,
        game_date,
        prev_game_date,
        age,
        treatment,
        possessions: vec![None; n],
        prev_game_minutes: vec![None; n],
        schema,
        covariates,
        outcome_names: vec!["y".into()],
        outcomes: vec![y],
    })?;
    Ok(SimDataset {
        spec: spec.clone(),
        data,
        y0,
        y1,
        x: with_x.then_some(xs),
    })
}

/// Builds the meta-learner named by a label such as `x.rf`.
pub fn method_spec(label: &str, spec: &ScenarioSpec, rf: &RfHyperparams) -> Result<MetaSpec> {
    let (learner, base) = label
        .split_once('.')
        .ok_or_else(|| ActeError::Config(format!("method {label:?} is not of the form learner.base")))?;
    let learner: MetaLearner = learner.parse()?;
    let base = match base {
        "ols" => RegressorSpec::ols_with_peak(spec.a_peak)?,
        "rf" => RegressorSpec::rf(rf.clone()),
        other => return Err(ActeError::Config(format!("unknown base learner {other:?} (expected ols or rf)"))),
    };
    Ok(MetaSpec::new(learner, base))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StudyConfig {
    pub methods: Vec<String>,
    pub replications: usize,
    pub seed: u64,
    pub rf: RfHyperparams,
}

impl Default for StudyConfig {
    fn default() -> Self {
        StudyConfig {
            methods: METHODS.iter().map(|m| m.to_string()).collect(),
            replications: 20,
            seed: 0,
            rf: RfHyperparams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub scenarios: Vec<ScenarioSpec>,
    pub methods: Vec<String>,
    pub replications: usize,
    pub seed: u64,
    /// `data_seeds[s][r]` generated replication `r` of scenario `s`.
    pub data_seeds: Vec<Vec<u64>>,
    /// `mse[m][s]`.
    pub mse: Vec<Vec<f64>>,
    /// `per_age[s][m]`.
    pub per_age: Vec<Vec<MseReport>>,
    /// `mean_tau[s][m]`: estimated curve averaged over replications.
    pub mean_tau: Vec<Vec<CurveEstimate>>,
    pub truth: Vec<CurveEstimate>,
}

impl SimResult {
    fn method_index(&self, method: &str) -> Option<usize> {
        self.methods.iter().position(|m| m == method)
    }

    fn scenario_index(&self, scenario: u8) -> Option<usize> {
        self.scenarios.iter().position(|s| s.scenario == scenario)
    }

    pub fn mse_of(&self, method: &str, scenario: u8) -> Option<f64> {
        Some(self.mse[self.method_index(method)?][self.scenario_index(scenario)?])
    }

    pub fn mean_tau_of(&self, method: &str, scenario: u8) -> Option<&CurveEstimate> {
        Some(&self.mean_tau[self.scenario_index(scenario)?][self.method_index(method)?])
    }

    pub fn per_age_of(&self, method: &str, scenario: u8) -> Option<&MseReport> {
        Some(&self.per_age[self.scenario_index(scenario)?][self.method_index(method)?])
    }

    /// Method with the smallest mean MSE in `scenario`.
    pub fn best(&self, scenario: u8) -> Option<&str> {
        let s = self.scenario_index(scenario)?;
        (0..self.methods.len())
            .min_by(|&a, &b| self.mse[a][s].total_cmp(&self.mse[b][s]))
            .map(|m| self.methods[m].as_str())
    }

    pub fn worst(&self, scenario: u8) -> Option<&str> {
        let s = self.scenario_index(scenario)?;
        (0..self.methods.len())
            .max_by(|&a, &b| self.mse[a][s].total_cmp(&self.mse[b][s]))
            .map(|m| self.methods[m].as_str())
    }

    pub fn write_table_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let mut header = String::from("method");
        for s in &self.scenarios {
            header.push_str(&format!(",scenario{}", s.scenario));
        }
        writeln!(w, "{header}").map_err(io_err)?;
        for (m, name) in self.methods.iter().enumerate() {
            let cells: Vec<String> = self.mse[m].iter().map(|v| v.to_string()).collect();
            writeln!(w, "{name},{}", cells.join(",")).map_err(io_err)?;
        }
        Ok(())
    }

    /// Columns `age,true_tau`, then one MSE column and one mean-estimate
    /// column per method.
    pub fn write_per_age_csv<W: Write>(&self, scenario: u8, mut w: W) -> Result<()> {
        let s = self
            .scenario_index(scenario)
            .ok_or_else(|| ActeError::Config(format!("scenario {scenario} not in this study")))?;
        let mut header = String::from("age,true_tau");
        for m in &self.methods {
            header.push_str(&format!(",{m}_mse"));
        }
        for m in &self.methods {
            header.push_str(&format!(",{m}_mean_tau"));
        }
        writeln!(w, "{header}").map_err(io_err)?;
        let truth = &self.truth[s];
        for (i, a) in truth.ages.iter().enumerate() {
            let mut row = format!("{a},{}", truth.values[i]);
            for r in &self.per_age[s] {
                row.push_str(&format!(",{}", r.per_age[i]));
            }
            for c in &self.mean_tau[s] {
                row.push_str(&format!(",{}", c.values[i]));
            }
            writeln!(w, "{row}").map_err(io_err)?;
        }
        Ok(())
    }

    pub fn mse_plot(&self, scenario: u8) -> Option<LinePlot> {
        let s = self.scenario_index(scenario)?;
        let mut plot = LinePlot::new(format!("Scenario {scenario}: MSE by age"), "age", "MSE");
        for (m, r) in self.methods.iter().zip(&self.per_age[s]) {
            plot.push(Series::new(m.clone(), to_f64(&r.ages), r.per_age.clone()));
        }
        Some(plot)
    }

    /// Mean potential-outcome curves `g(a, 0)` and `g(a, 1)`.
    pub fn outcome_plot(&self, scenario: u8) -> Option<LinePlot> {
        let spec = &self.scenarios[self.scenario_index(scenario)?];
        let ages = spec.ages();
        let mut plot = LinePlot::new(format!("Scenario {scenario}: potential outcomes"), "age", "outcome");
        for w in [0u8, 1] {
            let ys = ages.iter().map(|&a| mean_outcome(f64::from(a), w, spec)).collect::<Result<Vec<_>>>().ok()?;
            plot.push(Series::new(if w == 0 { "control" } else { "treated" }, to_f64(&ages), ys));
        }
        Some(plot)
    }

    /// Writes the table, per-age CSVs and SVG plots into `dir`; returns the
    /// paths written.
    pub fn write_artifacts(&self, dir: &Path) -> Result<Vec<PathBuf>> {
        fs::create_dir_all(dir).map_err(|e| ActeError::io(dir, e))?;
        let mut written = Vec::new();
        let mut put = |name: String, bytes: Vec<u8>| -> Result<()> {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(|e| ActeError::io(&path, e))?;
            written.push(path);
            Ok(())
        };
        let mut table = Vec::new();
        self.write_table_csv(&mut table)?;
        put("mse_table.csv".into(), table)?;
        for spec in &self.scenarios {
            let k = spec.scenario;
            let mut buf = Vec::new();
            self.write_per_age_csv(k, &mut buf)?;
            put(format!("mse_by_age_scenario{k}.csv"), buf)?;
            if let Some(p) = self.mse_plot(k) {
                put(format!("mse_by_age_scenario{k}.svg"), p.to_svg().into_bytes())?;
            }
            if let Some(p) = self.outcome_plot(k) {
                put(format!("outcomes_scenario{k}.svg"), p.to_svg().into_bytes())?;
            }
        }
        Ok(written)
    }
}

fn io_err(e: std::io::Error) -> ActeError {
    ActeError::Serialization(e.to_string())
}

fn to_f64(ages: &[i32]) -> Vec<f64> {
    ages.iter().map(|&a| f64::from(a)).collect()
}

/// Seed of replication `rep`'s panel for `scenario` under study seed `root`.
pub fn scenario_seed(root: u64, scenario: u8, rep: usize) -> u64 {
    derive_seed(root, &[u64::from(scenario), rep as u64])
}

/// Generates `cfg.replications` panels per scenario and scores every method
/// against the true effect curve on the scenario's age grid. All methods see
/// the same panels within a replication.
pub fn run_study(specs: &[ScenarioSpec], cfg: &StudyConfig) -> Result<SimResult> {
    if cfg.replications == 0 {
        return Err(ActeError::Config("replications must be at least 1".into()));
    }
    if specs.is_empty() || cfg.methods.is_empty() {
        return Err(ActeError::Config("study needs at least one scenario and one method".into()));
    }
    cfg.rf.validate()?;
    for s in specs {
        s.validate()?;
        for m in &cfg.methods {
            method_spec(m, s, &cfg.rf)?;
        }
    }
    let jobs: Vec<(usize, usize)> = (0..specs.len())
        .flat_map(|s| (0..cfg.replications).map(move |r| (s, r)))
        .collect();
    // curves[job][method]
    let curves: Vec<Vec<CurveEstimate>> = jobs
        .par_iter()
        .map(|&(s, r)| {
            let spec = ScenarioSpec {
                seed: scenario_seed(cfg.seed, specs[s].scenario, r),
                ..specs[s].clone()
            };
            let sim = generate(&spec)?;
            let ages = spec.ages();
            cfg.methods
                .iter()
                .enumerate()
                .map(|(m, label)| {
                    let rf = RfHyperparams {
                        seed: derive_seed(cfg.seed, &[u64::from(spec.scenario), m as u64, r as u64]),
                        ..cfg.rf.clone()
                    };
                    let meta = method_spec(label, &spec, &rf)?;
                    fit_meta(&sim.data, &meta)?.acte(&sim.data, &ages)
                })
                .collect()
        })
        .collect::<Result<_>>()?;

    let truth: Vec<CurveEstimate> = specs.iter().map(truth_curve).collect::<Result<_>>()?;
    let mut per_age = Vec::with_capacity(specs.len());
    let mut mean_tau = Vec::with_capacity(specs.len());
    for (s, t) in truth.iter().enumerate() {
        let rows: Vec<&Vec<CurveEstimate>> = jobs
            .iter()
            .zip(&curves)
            .filter(|((js, _), _)| *js == s)
            .map(|(_, c)| c)
            .collect();
        let mut reports = Vec::with_capacity(cfg.methods.len());
        let mut means = Vec::with_capacity(cfg.methods.len());
        for m in 0..cfg.methods.len() {
            let ests: Vec<CurveEstimate> = rows.iter().map(|c| c[m].clone()).collect();
            reports.push(mean_curve_mse(&ests, t)?);
            let mean: Vec<f64> = (0..t.len())
                .map(|i| ests.iter().map(|e| e.values[i]).sum::<f64>() / ests.len() as f64)
                .collect();
            means.push(CurveEstimate::new(CurveKind::Acte, t.ages.clone(), mean));
        }
        per_age.push(reports);
        mean_tau.push(means);
    }
    let mse = (0..cfg.methods.len())
        .map(|m| per_age.iter().map(|r| r[m].mean).collect())
        .collect();
    Ok(SimResult {
        data_seeds: specs
            .iter()
            .map(|s| (0..cfg.replications).map(|r| scenario_seed(cfg.seed, s.scenario, r)).collect())
            .collect(),
        scenarios: specs.to_vec(),
        methods: cfg.methods.clone(),
        replications: cfg.replications,
        seed: cfg.seed,
        mse,
        per_age,
        mean_tau,
        truth,
    })
}
