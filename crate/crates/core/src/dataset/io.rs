use std::collections::HashMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{derive_treatment, Columns, CovariateColumn, CovariateKind, CovariateSchema, Dataset};
use crate::error::{ActeError, Result};

pub const DATE_FORMAT: &str = "%Y-%m-%d";

const REQUIRED: [&str; 3] = ["player_id", "game_date", "age"];

/// What to load from a box-score CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSpec {
    pub covariates: CovariateSchema,
    /// Outcome columns; the first one is the outcome under analysis.
    /// Empty means a single column called `outcome`.
    pub outcomes: Vec<String>,
    pub rest_threshold_days: i64,
}

impl Default for IngestSpec {
    fn default() -> Self {
        IngestSpec {
            covariates: CovariateSchema::default(),
            outcomes: Vec::new(),
            rest_threshold_days: 1,
        }
    }
}

impl IngestSpec {
    pub fn new(covariates: CovariateSchema, outcomes: Vec<String>) -> Self {
        IngestSpec {
            covariates,
            outcomes,
            ..Default::default()
        }
    }

    fn outcome_names(&self) -> Vec<String> {
        if self.outcomes.is_empty() {
            vec!["outcome".to_string()]
        } else {
            self.outcomes.clone()
        }
    }
}

/// Rows dropped during ingestion.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IngestReport {
    pub rows_read: usize,
    /// Rows with no previous game, so no treatment could be defined.
    pub dropped_first_games: usize,
}

pub fn ingest_csv(path: impl AsRef<Path>, spec: &IngestSpec) -> Result<Dataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| ActeError::io(path, e))?;
    read_dataset(file, spec).map(|(ds, _)| ds)
}

struct RawRow {
    line: u64,
    cells: Vec<String>,
}

fn parse_f64(cell: &str, line: u64, column: &str) -> Result<f64> {
    let v: f64 = cell.trim().parse().map_err(|_| ActeError::Parse {
        line,
        message: format!("column {column:?}: {cell:?} is not a number"),
    })?;
    if !v.is_finite() {
        return Err(ActeError::Parse {
            line,
            message: format!("column {column:?}: {cell:?} is not finite"),
        });
    }
    Ok(v)
}

fn parse_opt_f64(cell: &str, line: u64, column: &str) -> Result<Option<f64>> {
    if cell.trim().is_empty() {
        Ok(None)
    } else {
        parse_f64(cell, line, column).map(Some)
    }
}

fn parse_date(cell: &str, line: u64, column: &str) -> Result<NaiveDate> {
    NaiveDate::parse_from_str(cell.trim(), DATE_FORMAT).map_err(|_| ActeError::Parse {
        line,
        message: format!("column {column:?}: {cell:?} is not a YYYY-MM-DD date"),
    })
}

pub fn read_dataset<R: Read>(reader: R, spec: &IngestSpec) -> Result<(Dataset, IngestReport)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).flexible(false).from_reader(reader);
    let headers = rdr.headers().map_err(|e| csv_error(e, 1))?.clone();
    if headers.is_empty() || headers.iter().all(|h| h.trim().is_empty()) {
        return Err(ActeError::EmptyInput("CSV file is empty".into()));
    }
    let index: HashMap<&str, usize> = headers.iter().enumerate().map(|(i, h)| (h.trim(), i)).collect();
    let outcome_names = spec.outcome_names();
    let require = |name: &str| -> Result<usize> {
        index
            .get(name)
            .copied()
            .ok_or_else(|| ActeError::Schema(format!("missing required column {name:?}")))
    };
    let [pid_col, date_col, age_col] = REQUIRED.map(|n| require(n));
    let (pid_col, date_col, age_col) = (pid_col?, date_col?, age_col?);
    let cov_cols: Vec<usize> = spec.covariates.iter().map(|d| require(&d.name)).collect::<Result<_>>()?;
    let out_cols: Vec<usize> = outcome_names.iter().map(|n| require(n)).collect::<Result<_>>()?;
    let treat_col = index.get("treatment").copied();
    let prev_date_col = index.get("prev_game_date").copied();
    let prev_min_col = index.get("prev_game_minutes").copied();
    let poss_col = index.get("possessions").copied();
    let minutes_col = index.get("minutes").copied();

    let mut raw = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line()).unwrap_or(0);
            csv_error(e, line)
        })?;
        let line = rec.position().map(|p| p.line()).unwrap_or(0);
        raw.push(RawRow {
            line,
            cells: rec.iter().map(str::to_string).collect(),
        });
    }
    if raw.is_empty() {
        return Err(ActeError::EmptyInput("CSV file has no data rows".into()));
    }

    let n = raw.len();
    let mut player_id = Vec::with_capacity(n);
    let mut game_date = Vec::with_capacity(n);
    let mut age = Vec::with_capacity(n);
    let mut prev_date: Vec<Option<NaiveDate>> = Vec::with_capacity(n);
    let mut prev_minutes: Vec<Option<f64>> = Vec::with_capacity(n);
    let mut possessions = Vec::with_capacity(n);
    let mut minutes: Vec<Option<f64>> = Vec::with_capacity(n);
    let mut explicit_treatment: Vec<Option<u8>> = Vec::with_capacity(n);
    for row in &raw {
        let c = &row.cells;
        let line = row.line;
        player_id.push(c[pid_col].trim().to_string());
        game_date.push(parse_date(&c[date_col], line, "game_date")?);
        let a: i32 = c[age_col].trim().parse().map_err(|_| ActeError::Parse {
            line,
            message: format!("column \"age\": {:?} is not an integer", c[age_col]),
        })?;
        if a < 0 {
            return Err(ActeError::Parse {
                line,
                message: format!("column \"age\": {a} is negative"),
            });
        }
        age.push(a);
        prev_date.push(match prev_date_col {
            Some(col) if !c[col].trim().is_empty() => Some(parse_date(&c[col], line, "prev_game_date")?),
            _ => None,
        });
        prev_minutes.push(match prev_min_col {
            Some(col) => parse_opt_f64(&c[col], line, "prev_game_minutes")?,
            None => None,
        });
        let poss = match poss_col {
            Some(col) => parse_opt_f64(&c[col], line, "possessions")?,
            None => None,
        };
        if let Some(p) = poss {
            if p <= 0.0 {
                return Err(ActeError::Parse {
                    line,
                    message: format!("column \"possessions\": {p} is not positive"),
                });
            }
        }
        possessions.push(poss);
        minutes.push(match minutes_col {
            Some(col) => parse_opt_f64(&c[col], line, "minutes")?,
            None => None,
        });
        explicit_treatment.push(match treat_col {
            Some(col) if !c[col].trim().is_empty() => match c[col].trim() {
                "0" => Some(0),
                "1" => Some(1),
                other => {
                    return Err(ActeError::Parse {
                        line,
                        message: format!("column \"treatment\": {other:?} is not 0 or 1"),
                    })
                }
            },
            _ => None,
        });
    }

    // Without explicit previous-game columns, the previous game is the prior
    // row of the same player in date order.
    if treat_col.is_none() && prev_date_col.is_none() {
        let mut by_player: HashMap<&str, Vec<usize>> = HashMap::new();
        for (i, p) in player_id.iter().enumerate() {
            by_player.entry(p.as_str()).or_default().push(i);
        }
        for rows in by_player.values_mut() {
            rows.sort_by_key(|&i| (game_date[i], i));
            for w in rows.windows(2) {
                let (prev, cur) = (w[0], w[1]);
                prev_date[cur] = Some(game_date[prev]);
                if prev_min_col.is_none() {
                    prev_minutes[cur] = minutes[prev];
                }
            }
        }
    }

    let mut keep = Vec::with_capacity(n);
    let mut treatment = Vec::with_capacity(n);
    for i in 0..n {
        let w = match (explicit_treatment[i], prev_date[i]) {
            (Some(w), _) => Some(w),
            (None, Some(prev)) => Some(derive_treatment(prev, game_date[i], spec.rest_threshold_days).map_err(|e| {
                ActeError::Parse {
                    line: raw[i].line,
                    message: e.to_string(),
                }
            })?),
            (None, None) => None,
        };
        if let Some(w) = w {
            keep.push(i);
            treatment.push(w);
        }
    }
    let report = IngestReport {
        rows_read: n,
        dropped_first_games: n - keep.len(),
    };
    if keep.is_empty() {
        return Err(ActeError::EmptyResult("no row has a previous game to define treatment".into()));
    }

    let mut covariates = Vec::with_capacity(cov_cols.len());
    for (def, &col) in spec.covariates.iter().zip(&cov_cols) {
        covariates.push(match def.kind {
            CovariateKind::Categorical => {
                CovariateColumn::Categorical(keep.iter().map(|&i| raw[i].cells[col].trim().to_string()).collect())
            }
            CovariateKind::Numeric => CovariateColumn::Numeric(
                keep.iter()
                    .map(|&i| parse_f64(&raw[i].cells[col], raw[i].line, &def.name))
                    .collect::<Result<_>>()?,
            ),
        });
    }
    let mut outcomes = Vec::with_capacity(out_cols.len());
    for (name, &col) in outcome_names.iter().zip(&out_cols) {
        outcomes.push(
            keep.iter()
                .map(|&i| parse_f64(&raw[i].cells[col], raw[i].line, name))
                .collect::<Result<Vec<f64>>>()?,
        );
    }
    let ds = Dataset::from_columns(Columns {
        player_id: keep.iter().map(|&i| player_id[i].clone()).collect(),
        game_date: keep.iter().map(|&i| game_date[i]).collect(),
        prev_game_date: keep.iter().map(|&i| prev_date[i]).collect(),
        age: keep.iter().map(|&i| age[i]).collect(),
        treatment,
        possessions: keep.iter().map(|&i| possessions[i]).collect(),
        prev_game_minutes: keep.iter().map(|&i| prev_minutes[i]).collect(),
        schema: spec.covariates.clone(),
        covariates,
        outcome_names,
        outcomes,
    })?;
    Ok((ds, report))
}

fn csv_error(e: csv::Error, line: u64) -> ActeError {
    ActeError::Parse {
        line,
        message: e.to_string(),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Writes `ds` in the ingestion schema with a trailing `treatment` column.
pub fn write_csv<W: Write>(ds: &Dataset, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header: Vec<String> = ["player_id", "game_date", "age", "prev_game_date", "prev_game_minutes", "possessions"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(ds.schema().iter().map(|d| d.name.clone()));
    header.extend(ds.outcome_names().iter().cloned());
    header.push("treatment".into());
    let ser = |e: csv::Error| ActeError::Serialization(e.to_string());
    w.write_record(&header).map_err(ser)?;
    for i in 0..ds.len() {
        let mut row = vec![
            ds.player_id[i].clone(),
            ds.game_date[i].format(DATE_FORMAT).to_string(),
            ds.age[i].to_string(),
            ds.prev_game_date[i].map(|d| d.format(DATE_FORMAT).to_string()).unwrap_or_default(),
            fmt_opt(ds.prev_game_minutes[i]),
            fmt_opt(ds.possessions[i]),
        ];
        for col in &ds.covariates {
            row.push(match col {
                CovariateColumn::Categorical(v) => v[i].clone(),
                CovariateColumn::Numeric(v) => v[i].to_string(),
            });
        }
        for o in &ds.outcomes {
            row.push(o[i].to_string());
        }
        row.push(ds.treatment[i].to_string());
        w.write_record(&row).map_err(ser)?;
    }
    w.flush().map_err(|e| ActeError::Serialization(e.to_string()))?;
    Ok(())
}
