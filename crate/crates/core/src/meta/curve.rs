use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{ActeError, Result};
use crate::linalg::{lstsq, ColMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveKind {
    AcefControl,
    AcefTreated,
    Acte,
}

impl CurveKind {
    pub fn acef(w: u8) -> Self {
        if w == 0 {
            CurveKind::AcefControl
        } else {
            CurveKind::AcefTreated
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            CurveKind::AcefControl => "acef_control",
            CurveKind::AcefTreated => "acef_treated",
            CurveKind::Acte => "acte",
        }
    }
}

/// Per-age annotations on a curve point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CurveFlag {
    /// Age outside the training age range.
    Extrapolated,
    /// No training rows at this age in at least one arm.
    ArmMissing,
    /// Point estimate falls outside its percentile band.
    OutsideBand,
}

impl CurveFlag {
    pub fn as_str(&self) -> &'static str {
        match self {
            CurveFlag::Extrapolated => "extrapolated",
            CurveFlag::ArmMissing => "arm_missing",
            CurveFlag::OutsideBand => "outside_band",
        }
    }
}

/// Age-indexed point estimates with optional bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveEstimate {
    pub ages: Vec<i32>,
    pub values: Vec<f64>,
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    pub kind: CurveKind,
    pub flags: Vec<Vec<CurveFlag>>,
}

impl CurveEstimate {
    pub fn new(kind: CurveKind, ages: Vec<i32>, values: Vec<f64>) -> Self {
        let flags = vec![Vec::new(); ages.len()];
        CurveEstimate {
            ages,
            values,
            lower: None,
            upper: None,
            kind,
            flags,
        }
    }

    pub fn len(&self) -> usize {
        self.ages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ages.is_empty()
    }

    pub fn value_at(&self, age: i32) -> Option<f64> {
        self.ages.iter().position(|&a| a == age).map(|i| self.values[i])
    }

    pub(crate) fn flag(&mut self, i: usize, flag: CurveFlag) {
        if !self.flags[i].contains(&flag) {
            self.flags[i].push(flag);
            self.flags[i].sort();
        }
    }

    /// Attaches bands, flagging points whose estimate lies outside them.
    pub fn with_bands(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.len() != self.len() || upper.len() != self.len() {
            return Err(ActeError::Alignment("band length differs from the age grid".into()));
        }
        for i in 0..self.len() {
            if lower[i] > upper[i] {
                return Err(ActeError::Domain(format!("lower band exceeds upper band at age {}", self.ages[i])));
            }
            if self.values[i] < lower[i] || self.values[i] > upper[i] {
                self.flag(i, CurveFlag::OutsideBand);
            }
        }
        self.lower = Some(lower);
        self.upper = Some(upper);
        Ok(self)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let ser = |e: csv::Error| ActeError::Serialization(e.to_string());
        w.write_record(["age", "value", "lower", "upper", "kind", "flags"]).map_err(ser)?;
        for i in 0..self.len() {
            let band = |b: &Option<Vec<f64>>| b.as_ref().map(|v| v[i].to_string()).unwrap_or_default();
            let flags: Vec<&str> = self.flags[i].iter().map(CurveFlag::as_str).collect();
            w.write_record([
                self.ages[i].to_string(),
                self.values[i].to_string(),
                band(&self.lower),
                band(&self.upper),
                self.kind.as_str().to_string(),
                flags.join("|"),
            ])
            .map_err(ser)?;
        }
        w.flush().map_err(|e| ActeError::Serialization(e.to_string()))
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| ActeError::Serialization(e.to_string()))
    }
}

/// Least-squares polynomial of degree `df` in age, evaluated back on the
/// curve's own grid. Bands are smoothed the same way.
pub fn smooth_curve(curve: &CurveEstimate, df: usize) -> Result<CurveEstimate> {
    if df == 0 {
        return Err(ActeError::Config("smoothing degree must be positive".into()));
    }
    let mut distinct = curve.ages.clone();
    distinct.sort_unstable();
    distinct.dedup();
    if distinct.len() < df + 1 {
        return Err(ActeError::InsufficientData(format!(
            "degree-{df} smoothing needs {} distinct ages, curve has {}",
            df + 1,
            distinct.len()
        )));
    }
    let lo = f64::from(distinct[0]);
    let hi = f64::from(*distinct.last().unwrap());
    let center = 0.5 * (lo + hi);
    let scale = 0.5 * (hi - lo);
    let mut vander = ColMatrix::zeros(curve.len(), df + 1);
    for (r, &a) in curve.ages.iter().enumerate() {
        let t = (f64::from(a) - center) / scale;
        let mut p = 1.0;
        for c in 0..=df {
            vander.set(r, c, p);
            p *= t;
        }
    }
    let fit = |y: &[f64]| -> Vec<f64> {
        let coef = lstsq(&vander, y).coef;
        (0..curve.len())
            .map(|r| (0..=df).map(|c| vander.get(r, c) * coef[c]).sum())
            .collect()
    };
    let mut out = CurveEstimate {
        ages: curve.ages.clone(),
        values: fit(&curve.values),
        lower: curve.lower.as_deref().map(fit),
        upper: curve.upper.as_deref().map(fit),
        kind: curve.kind,
        flags: curve
            .flags
            .iter()
            .map(|f| f.iter().copied().filter(|&x| x != CurveFlag::OutsideBand).collect())
            .collect(),
    };
    if let (Some(l), Some(u)) = (out.lower.clone(), out.upper.clone()) {
        for i in 0..out.len() {
            if out.values[i] < l[i] || out.values[i] > u[i] {
                out.flag(i, CurveFlag::OutsideBand);
            }
        }
    }
    Ok(out)
}
