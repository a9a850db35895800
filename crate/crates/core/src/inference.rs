//! Percentile bootstrap bands and curve error metrics.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{ActeError, Result};
use crate::meta::{fit_meta, CurveEstimate, CurveKind, FittedMeta, MetaSpec};
use crate::rng::derive_seed;

/// Redraws allowed per replicate when a resample lacks an arm.
pub const MAX_RESAMPLE_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResampleUnit {
    Row,
    Player,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub alpha: f64,
    pub resample_unit: ResampleUnit,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 200,
            alpha: 0.10,
            resample_unit: ResampleUnit::Row,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates == 0 {
            return Err(ActeError::Config("bootstrap needs at least one replicate".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(ActeError::Config(format!("alpha {} outside (0, 1)", self.alpha)));
        }
        Ok(())
    }
}

/// Quantile of sorted data by linear interpolation between order statistics.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Replicate estimates: `values[k][b][i]` for curve kind `k`, replicate `b`,
/// age `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapDraws {
    pub kinds: Vec<CurveKind>,
    pub ages: Vec<i32>,
    pub values: Vec<Vec<Vec<f64>>>,
}

impl BootstrapDraws {
    /// `(lower, upper)` percentile bands at level `1 - alpha` for kind index `k`.
    pub fn bands(&self, k: usize, alpha: f64) -> (Vec<f64>, Vec<f64>) {
        let reps = &self.values[k];
        let mut lower = Vec::with_capacity(self.ages.len());
        let mut upper = Vec::with_capacity(self.ages.len());
        for i in 0..self.ages.len() {
            let mut col: Vec<f64> = reps.iter().map(|r| r[i]).collect();
            col.sort_by(f64::total_cmp);
            lower.push(quantile_sorted(&col, alpha / 2.0));
            upper.push(quantile_sorted(&col, 1.0 - alpha / 2.0));
        }
        (lower, upper)
    }

    pub fn median(&self, k: usize) -> Vec<f64> {
        (0..self.ages.len())
            .map(|i| {
                let mut col: Vec<f64> = self.values[k].iter().map(|r| r[i]).collect();
                col.sort_by(f64::total_cmp);
                quantile_sorted(&col, 0.5)
            })
            .collect()
    }
}

fn curves_for(model: &FittedMeta, ds: &Dataset, ages: &[i32], kinds: &[CurveKind]) -> Result<Vec<CurveEstimate>> {
    kinds
        .iter()
        .map(|k| match k {
            CurveKind::Acte => model.acte(ds, ages),
            CurveKind::AcefControl => model.acef(ds, 0, ages),
            CurveKind::AcefTreated => model.acef(ds, 1, ages),
        })
        .collect()
}

struct Resampler {
    unit: ResampleUnit,
    n: usize,
    players: Vec<Vec<usize>>,
}

impl Resampler {
    fn new(ds: &Dataset, unit: ResampleUnit) -> Self {
        let mut players: Vec<Vec<usize>> = Vec::new();
        if unit == ResampleUnit::Player {
            let mut index: HashMap<&str, usize> = HashMap::new();
            for (i, p) in ds.player_ids().iter().enumerate() {
                let at = *index.entry(p.as_str()).or_insert_with(|| {
                    players.push(Vec::new());
                    players.len() - 1
                });
                players[at].push(i);
            }
        }
        Resampler {
            unit,
            n: ds.len(),
            players,
        }
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        match self.unit {
            ResampleUnit::Row => (0..self.n).map(|_| rng.random_range(0..self.n)).collect(),
            ResampleUnit::Player => {
                let mut idx = Vec::with_capacity(self.n);
                for _ in 0..self.players.len() {
                    idx.extend_from_slice(&self.players[rng.random_range(0..self.players.len())]);
                }
                idx
            }
        }
    }
}

/// Refits `spec` on `cfg.replicates` resamples and records the requested
/// curves of each refit.
pub fn bootstrap_draws(
    ds: &Dataset,
    spec: &MetaSpec,
    ages: &[i32],
    cfg: &BootstrapConfig,
    kinds: &[CurveKind],
) -> Result<BootstrapDraws> {
    cfg.validate()?;
    let resampler = Resampler::new(ds, cfg.resample_unit);
    let per_rep: Vec<Vec<Vec<f64>>> = (0..cfg.replicates)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[b as u64]));
            let mut sample = None;
            for _ in 0..MAX_RESAMPLE_ATTEMPTS {
                let idx = resampler.draw(&mut rng);
                let treated = idx.iter().filter(|&&i| ds.treatment()[i] == 1).count();
                if treated > 0 && treated < idx.len() {
                    sample = Some(idx);
                    break;
                }
            }
            let idx = sample.ok_or(ActeError::ReplicateFailure {
                replicate: b,
                attempts: MAX_RESAMPLE_ATTEMPTS,
            })?;
            let sub = ds.select(&idx)?;
            let model = fit_meta(&sub, &spec.reseeded(&[b as u64 + 1]))?;
            Ok(curves_for(&model, &sub, ages, kinds)?.into_iter().map(|c| c.values).collect())
        })
        .collect::<Result<_>>()?;
    let values = (0..kinds.len())
        .map(|k| per_rep.iter().map(|r| r[k].clone()).collect())
        .collect();
    Ok(BootstrapDraws {
        kinds: kinds.to_vec(),
        ages: ages.to_vec(),
        values,
    })
}

/// Full-sample point estimates for `kinds`, each with percentile bands.
pub fn bootstrap_curves(
    ds: &Dataset,
    spec: &MetaSpec,
    ages: &[i32],
    cfg: &BootstrapConfig,
    kinds: &[CurveKind],
) -> Result<Vec<CurveEstimate>> {
    let model = fit_meta(ds, spec)?;
    bootstrap_model_curves(&model, ds, ages, cfg, kinds)
}

/// As [`bootstrap_curves`], reusing an already fitted point model.
pub fn bootstrap_model_curves(
    model: &FittedMeta,
    ds: &Dataset,
    ages: &[i32],
    cfg: &BootstrapConfig,
    kinds: &[CurveKind],
) -> Result<Vec<CurveEstimate>> {
    let points = curves_for(model, ds, ages, kinds)?;
    let draws = bootstrap_draws(ds, model.spec(), ages, cfg, kinds)?;
    points
        .into_iter()
        .enumerate()
        .map(|(k, c)| {
            let (lo, hi) = draws.bands(k, cfg.alpha);
            c.with_bands(lo, hi)
        })
        .collect()
}

/// ACTE curve with percentile bands.
pub fn bootstrap_curve(ds: &Dataset, spec: &MetaSpec, ages: &[i32], cfg: &BootstrapConfig) -> Result<CurveEstimate> {
    Ok(bootstrap_curves(ds, spec, ages, cfg, &[CurveKind::Acte])?.remove(0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseReport {
    pub ages: Vec<i32>,
    pub per_age: Vec<f64>,
    pub mean: f64,
}

fn check_grid(a: &CurveEstimate, b: &CurveEstimate) -> Result<()> {
    if a.ages != b.ages {
        return Err(ActeError::Alignment(format!("age grids differ: {:?} vs {:?}", a.ages, b.ages)));
    }
    if a.ages.is_empty() {
        return Err(ActeError::Alignment("empty age grid".into()));
    }
    Ok(())
}

pub fn curve_mse(estimated: &CurveEstimate, truth: &CurveEstimate) -> Result<MseReport> {
    mean_curve_mse(std::slice::from_ref(estimated), truth)
}

/// Per-age squared error averaged over replications, then over ages.
pub fn mean_curve_mse(estimates: &[CurveEstimate], truth: &CurveEstimate) -> Result<MseReport> {
    if estimates.is_empty() {
        return Err(ActeError::InsufficientData("no estimates to score".into()));
    }
    let mut per_age = vec![0.0; truth.len()];
    for est in estimates {
        check_grid(est, truth)?;
        for (acc, (e, t)) in per_age.iter_mut().zip(est.values.iter().zip(&truth.values)) {
            *acc += (e - t).powi(2);
        }
    }
    let reps = estimates.len() as f64;
    per_age.iter_mut().for_each(|v| *v /= reps);
    let mean = per_age.iter().sum::<f64>() / per_age.len() as f64;
    Ok(MseReport {
        ages: truth.ages.clone(),
        per_age,
        mean,
    })
}
