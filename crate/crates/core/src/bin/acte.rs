use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use acte::dataset::{ingest_csv, preprocess, write_csv, IngestSpec};
use acte::inference::bootstrap_model_curves;
use acte::meta::smooth_curve;
use acte::plot::{LinePlot, Series};
use acte::simlab::{self, METHODS};
use acte::{
    fit_meta, ActeError, BootstrapConfig, CovariateSchema, CurveEstimate, CurveKind, Dataset, FittedMeta, MetaLearner,
    MetaSpec, PreprocessConfig, RegressorSpec, ResampleUnit, RfHyperparams, ScenarioSpec, StudyConfig,
};
use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

const RUN_FILE: &str = "run.json";

#[derive(Parser, Debug)]
#[command(name = "acte", version, about = "Age-conditioned treatment effect curves")]
struct Cli {
    /// TOML file with default settings; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run the simulation study and write the MSE table, per-age CSVs and plots.
    Simulate(SimulateArgs),
    /// Fit a meta-learner on a box-score CSV and save it as JSON.
    Fit(FitArgs),
    /// Estimate effect curves with bootstrap bands.
    Curve(CurveArgs),
    /// Render a Markdown report from a previous run's output directory.
    Report(ReportArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, value_delimiter = ',')]
    scenarios: Option<Vec<u8>>,
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    players: Option<usize>,
    /// Simulation age grid as A:B.
    #[arg(long)]
    ages: Option<String>,
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
    /// Also write each scenario's first simulated panel as CSV.
    #[arg(long)]
    write_data: bool,
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    #[arg(long)]
    input: Option<PathBuf>,
    /// Covariates as name:kind pairs, e.g. `team:categorical,home:categorical`.
    #[arg(long)]
    covariates: Option<String>,
    /// Outcome column to analyse.
    #[arg(long)]
    outcome: Option<String>,
    /// Further outcome columns to read (all are per-100 candidates).
    #[arg(long, value_delimiter = ',')]
    extra_outcomes: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    per100: Option<Vec<String>>,
    #[arg(long)]
    min_minutes: Option<f64>,
    /// Age window kept after filtering, as A:B.
    #[arg(long)]
    age_window: Option<String>,
    #[arg(long)]
    rest_days: Option<i64>,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    #[arg(long)]
    learner: Option<String>,
    #[arg(long)]
    base: Option<String>,
    #[arg(long)]
    trees: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct CurveArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    /// Previously fitted model; when absent the model is fitted here.
    #[arg(long)]
    model_file: Option<PathBuf>,
    /// Age grid as A:B.
    #[arg(long)]
    ages: Option<String>,
    #[arg(long = "boot-B")]
    boot_b: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    resample: Option<String>,
    /// Polynomial degree of the smoothed curve; 0 disables smoothing.
    #[arg(long)]
    smooth_degree: Option<usize>,
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Directory written by `simulate` or `curve`.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Settings accepted from `--config`.
#[derive(Debug, Default, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct FileConfig {
    seed: Option<u64>,
    output_dir: Option<PathBuf>,
    input: Option<PathBuf>,
    learner: Option<String>,
    base: Option<String>,
    trees: Option<usize>,
    ages: Option<String>,
    boot_b: Option<usize>,
    alpha: Option<f64>,
    resample: Option<String>,
    smooth_degree: Option<usize>,
    scenarios: Option<Vec<u8>>,
    reps: Option<usize>,
    players: Option<usize>,
    methods: Option<Vec<String>>,
    covariates: Option<String>,
    outcome: Option<String>,
    extra_outcomes: Option<Vec<String>>,
    per100: Option<Vec<String>>,
    min_minutes: Option<f64>,
    age_window: Option<String>,
    rest_days: Option<i64>,
}

fn load_config(path: Option<&Path>) -> Result<FileConfig> {
    let Some(path) = path else {
        return Ok(FileConfig::default());
    };
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).map_err(|e| anyhow!("config {}: {}", path.display(), e.message()))
}

fn parse_range(s: &str) -> Result<(i32, i32)> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| ActeError::Config(format!("age range {s:?} is not of the form A:B")))?;
    let a: i32 = a.trim().parse().map_err(|_| ActeError::Config(format!("bad age {a:?}")))?;
    let b: i32 = b.trim().parse().map_err(|_| ActeError::Config(format!("bad age {b:?}")))?;
    if a > b {
        return Err(ActeError::Config(format!("age range {s:?} is empty")).into());
    }
    Ok((a, b))
}

/// Files written by the current command, removed again if it fails.
#[derive(Default)]
struct Outputs {
    files: Vec<PathBuf>,
    created_dir: Option<PathBuf>,
}

impl Outputs {
    fn prepare(&mut self, dir: &Path) -> Result<()> {
        if !dir.exists() {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            self.created_dir = Some(dir.to_path_buf());
        }
        Ok(())
    }

    fn write(&mut self, path: PathBuf, bytes: impl AsRef<[u8]>) -> Result<()> {
        fs::write(&path, bytes).with_context(|| format!("writing {}", path.display()))?;
        self.files.push(path);
        Ok(())
    }

    fn adopt(&mut self, paths: Vec<PathBuf>) {
        self.files.extend(paths);
    }

    fn rollback(&self) {
        for f in &self.files {
            let _ = fs::remove_file(f);
        }
        if let Some(d) = &self.created_dir {
            let _ = fs::remove_dir(d);
        }
    }
}

#[derive(Serialize)]
struct RunRecord<'a, T: Serialize> {
    command: &'a str,
    version: &'a str,
    settings: T,
}

fn run_json<T: Serialize>(command: &str, settings: T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(&RunRecord {
        command,
        version: env!("CARGO_PKG_VERSION"),
        settings,
    })?;
    s.push('\n');
    Ok(s)
}

fn log(verbose: u8, msg: impl AsRef<str>) {
    if verbose > 0 {
        eprintln!("acte: {}", msg.as_ref());
    }
}

fn simulate(args: SimulateArgs, file: &FileConfig, verbose: u8, out: &mut Outputs) -> Result<()> {
    let scenarios = args.scenarios.or(file.scenarios.clone()).unwrap_or_else(|| vec![1, 2, 3]);
    let seed = args.seed.or(file.seed).unwrap_or(0);
    let mut rf = RfHyperparams::default();
    if let Some(t) = args.trees.or(file.trees) {
        rf.n_trees = t;
    }
    let cfg = StudyConfig {
        methods: args
            .methods
            .or(file.methods.clone())
            .unwrap_or_else(|| METHODS.iter().map(|m| m.to_string()).collect()),
        replications: args.reps.or(file.reps).unwrap_or(20),
        seed,
        rf,
    };
    let mut specs = Vec::new();
    for k in scenarios {
        let mut spec = ScenarioSpec::new(k)?;
        if let Some(n) = args.players.or(file.players) {
            spec.n_players = n;
        }
        if let Some(r) = args.ages.as_ref().or(file.ages.as_ref()) {
            (spec.age_min, spec.age_max) = parse_range(r)?;
        }
        spec.validate()?;
        specs.push(spec);
    }
    let dir = args.output_dir.or(file.output_dir.clone()).unwrap_or_else(|| PathBuf::from("acte-out"));
    out.prepare(&dir)?;
    log(verbose, format!("simulating {} scenario(s), {} replications", specs.len(), cfg.replications));
    let result = simlab::run_study(&specs, &cfg)?;
    let written = result.write_artifacts(&dir);
    match written {
        Ok(paths) => out.adopt(paths),
        Err(e) => return Err(e.into()),
    }
    #[derive(Serialize)]
    struct Settings<'a> {
        study: &'a StudyConfig,
        scenarios: &'a [ScenarioSpec],
        data_seeds: &'a [Vec<u64>],
    }
    if args.write_data {
        for spec in &specs {
            let panel = ScenarioSpec {
                seed: simlab::scenario_seed(seed, spec.scenario, 0),
                ..spec.clone()
            };
            let sim = simlab::generate(&panel)?;
            let mut buf = Vec::new();
            write_csv(&sim.data, &mut buf)?;
            out.write(dir.join(format!("data_scenario{}.csv", spec.scenario)), buf)?;
        }
    }
    let record = run_json(
        "simulate",
        Settings {
            study: &cfg,
            scenarios: &specs,
            data_seeds: &result.data_seeds,
        },
    )?;
    out.write(dir.join(RUN_FILE), record)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct DataSettings {
    input: PathBuf,
    covariates: String,
    outcome: String,
    extra_outcomes: Vec<String>,
    preprocess: PreprocessConfig,
}

fn data_settings(args: &DataArgs, file: &FileConfig) -> Result<DataSettings> {
    let input = args
        .input
        .clone()
        .or(file.input.clone())
        .ok_or_else(|| ActeError::Config("--input is required".into()))?;
    let mut pre = PreprocessConfig::default();
    if let Some(m) = args.min_minutes.or(file.min_minutes) {
        pre.min_prev_minutes = m;
    }
    if let Some(r) = args.age_window.as_ref().or(file.age_window.as_ref()) {
        (pre.age_min, pre.age_max) = parse_range(r)?;
    }
    if let Some(d) = args.rest_days.or(file.rest_days) {
        pre.rest_threshold_days = d;
    }
    if let Some(p) = args.per100.clone().or(file.per100.clone()) {
        pre.per100_stats = p;
    }
    pre.validate()?;
    Ok(DataSettings {
        input,
        covariates: args.covariates.clone().or(file.covariates.clone()).unwrap_or_default(),
        outcome: args.outcome.clone().or(file.outcome.clone()).unwrap_or_else(|| "outcome".into()),
        extra_outcomes: args.extra_outcomes.clone().or(file.extra_outcomes.clone()).unwrap_or_default(),
        preprocess: pre,
    })
}

fn load_data(s: &DataSettings) -> Result<Dataset> {
    let mut outcomes = vec![s.outcome.clone()];
    for o in s.extra_outcomes.iter().chain(&s.preprocess.per100_stats) {
        if !outcomes.contains(o) {
            outcomes.push(o.clone());
        }
    }
    let spec = IngestSpec {
        covariates: CovariateSchema::parse(&s.covariates)?,
        outcomes,
        rest_threshold_days: s.preprocess.rest_threshold_days,
    };
    let raw = ingest_csv(&s.input, &spec).with_context(|| s.input.display().to_string())?;
    Ok(preprocess(&raw, &s.preprocess)?.select_outcome(&s.outcome)?)
}

fn meta_spec(args: &ModelArgs, file: &FileConfig) -> Result<MetaSpec> {
    let learner: MetaLearner = args.learner.as_ref().or(file.learner.as_ref()).map_or("t", |s| s.as_str()).parse()?;
    let base = match args.base.as_ref().or(file.base.as_ref()).map_or("ols", |s| s.as_str()) {
        "ols" => RegressorSpec::ols(),
        "rf" => {
            let mut rf = RfHyperparams {
                seed: args.seed.or(file.seed).unwrap_or(0),
                ..Default::default()
            };
            if let Some(t) = args.trees.or(file.trees) {
                rf.n_trees = t;
            }
            rf.validate()?;
            RegressorSpec::rf(rf)
        }
        other => bail!(ActeError::Config(format!("unknown base learner {other:?} (expected ols or rf)"))),
    };
    Ok(MetaSpec::new(learner, base))
}

fn fit(args: FitArgs, file: &FileConfig, verbose: u8, out: &mut Outputs) -> Result<()> {
    let data = data_settings(&args.data, file)?;
    let spec = meta_spec(&args.model, file)?;
    let ds = load_data(&data)?;
    log(verbose, format!("fitting {} on {} rows", spec.label(), ds.len()));
    let model = fit_meta(&ds, &spec)?;
    let dir = args.output_dir.or(file.output_dir.clone()).unwrap_or_else(|| PathBuf::from("acte-out"));
    out.prepare(&dir)?;
    out.write(dir.join("model.json"), model.to_json()?)?;
    #[derive(Serialize)]
    struct Settings<'a> {
        data: &'a DataSettings,
        model: &'a MetaSpec,
        rows: usize,
    }
    let record = run_json(
        "fit",
        Settings {
            data: &data,
            model: &spec,
            rows: ds.len(),
        },
    )?;
    out.write(dir.join(RUN_FILE), record)?;
    Ok(())
}

fn curve_plot(title: &str, curves: &[(&str, &CurveEstimate, bool)]) -> LinePlot {
    let mut plot = LinePlot::new(title, "age", "estimate");
    for (name, c, thin) in curves {
        let xs: Vec<f64> = c.ages.iter().map(|&a| f64::from(a)).collect();
        let mut s = Series::new(*name, xs, c.values.clone());
        if let (Some(lo), Some(hi)) = (&c.lower, &c.upper) {
            s = s.with_band(lo.clone(), hi.clone());
        }
        if *thin {
            s = s.thin();
        }
        plot.push(s);
    }
    plot
}

fn csv_bytes(c: &CurveEstimate) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    c.write_csv(&mut buf)?;
    Ok(buf)
}

fn curve(args: CurveArgs, file: &FileConfig, verbose: u8, out: &mut Outputs) -> Result<()> {
    let data = data_settings(&args.data, file)?;
    let ds = load_data(&data)?;
    let model = match &args.model_file {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            FittedMeta::from_json(&text).with_context(|| p.display().to_string())?
        }
        None => {
            let spec = meta_spec(&args.model, file)?;
            log(verbose, format!("fitting {} on {} rows", spec.label(), ds.len()));
            fit_meta(&ds, &spec)?
        }
    };
    let (lo, hi) = match args.ages.as_ref().or(file.ages.as_ref()) {
        Some(r) => parse_range(r)?,
        None => (data.preprocess.age_min, data.preprocess.age_max),
    };
    let ages: Vec<i32> = (lo..=hi).collect();
    let boot = BootstrapConfig {
        replicates: args.boot_b.or(file.boot_b).unwrap_or(200),
        alpha: args.alpha.or(file.alpha).unwrap_or(0.10),
        resample_unit: match args.resample.as_ref().or(file.resample.as_ref()).map_or("row", |s| s.as_str()) {
            "row" => ResampleUnit::Row,
            "player" => ResampleUnit::Player,
            other => bail!(ActeError::Config(format!("unknown resample unit {other:?} (expected row or player)"))),
        },
        seed: args.model.seed.or(file.seed).unwrap_or(0),
    };
    let degree = args.smooth_degree.or(file.smooth_degree).unwrap_or(6);
    let kinds: Vec<CurveKind> = match model.spec().learner {
        MetaLearner::X => vec![CurveKind::Acte],
        _ => vec![CurveKind::Acte, CurveKind::AcefControl, CurveKind::AcefTreated],
    };
    let curves = if boot.replicates == 0 {
        kinds
            .iter()
            .map(|k| match k {
                CurveKind::Acte => model.acte(&ds, &ages),
                CurveKind::AcefControl => model.acef(&ds, 0, &ages),
                CurveKind::AcefTreated => model.acef(&ds, 1, &ages),
            })
            .collect::<acte::Result<Vec<_>>>()?
    } else {
        log(verbose, format!("bootstrapping {} replicates", boot.replicates));
        bootstrap_model_curves(&model, &ds, &ages, &boot, &kinds)?
    };
    let smoothed = if degree > 0 { Some(smooth_curve(&curves[0], degree)?) } else { None };

    let dir = args.output_dir.or(file.output_dir.clone()).unwrap_or_else(|| PathBuf::from("acte-out"));
    out.prepare(&dir)?;
    for c in &curves {
        let stem = c.kind.as_str();
        out.write(dir.join(format!("{stem}.csv")), csv_bytes(c)?)?;
        out.write(dir.join(format!("{stem}.json")), c.to_json()? + "\n")?;
    }
    let acte_curve = &curves[0];
    let mut plot_set = vec![("acte", acte_curve, false)];
    if let Some(s) = &smoothed {
        out.write(dir.join(format!("{}_smoothed.csv", acte_curve.kind.as_str())), csv_bytes(s)?)?;
        plot_set.push(("smoothed", s, true));
    }
    out.write(dir.join("acte.svg"), curve_plot("Age-conditioned treatment effect", &plot_set).to_svg())?;
    if curves.len() == 3 {
        let plot = curve_plot(
            "Age-conditioned expectation functions",
            &[("control", &curves[1], true), ("treated", &curves[2], true)],
        );
        out.write(dir.join("acef.svg"), plot.to_svg())?;
    }
    #[derive(Serialize)]
    struct Settings<'a> {
        data: &'a DataSettings,
        model: &'a MetaSpec,
        ages: (i32, i32),
        bootstrap: &'a BootstrapConfig,
        smooth_degree: usize,
        rows: usize,
    }
    let record = run_json(
        "curve",
        Settings {
            data: &data,
            model: model.spec(),
            ages: (lo, hi),
            bootstrap: &boot,
            smooth_degree: degree,
            rows: ds.len(),
        },
    )?;
    out.write(dir.join(RUN_FILE), record)?;
    Ok(())
}

fn timestamp() -> String {
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs() as i64).unwrap_or(0);
    chrono::DateTime::from_timestamp(secs, 0)
        .map(|t| t.format("%Y-%m-%dT%H:%M:%SZ").to_string())
        .unwrap_or_default()
}

fn csv_to_markdown(text: &str) -> String {
    let mut md = String::new();
    for (i, line) in text.lines().enumerate() {
        md.push_str(&format!("| {} |\n", line.split(',').collect::<Vec<_>>().join(" | ")));
        if i == 0 {
            let n = line.split(',').count();
            md.push_str(&format!("|{}\n", "---|".repeat(n)));
        }
    }
    md
}

fn report(args: ReportArgs, file: &FileConfig, out: &mut Outputs) -> Result<()> {
    let dir = args
        .input
        .or(file.output_dir.clone())
        .ok_or_else(|| ActeError::Config("--input is required".into()))?;
    let run_path = dir.join(RUN_FILE);
    if !run_path.exists() {
        return Err(ActeError::Dependency(vec![run_path]).into());
    }
    let run_text = fs::read_to_string(&run_path).with_context(|| run_path.display().to_string())?;
    let run: serde_json::Value = serde_json::from_str(&run_text).context("parsing run.json")?;
    let command = run["command"].as_str().unwrap_or_default().to_string();
    let (tables, plots): (Vec<String>, Vec<String>) = match command.as_str() {
        "simulate" => {
            let ks: Vec<u64> = run["settings"]["scenarios"]
                .as_array()
                .map(|a| a.iter().filter_map(|s| s["scenario"].as_u64()).collect())
                .unwrap_or_default();
            let mut t = vec!["mse_table.csv".to_string()];
            t.extend(ks.iter().map(|k| format!("mse_by_age_scenario{k}.csv")));
            let mut p: Vec<String> = ks.iter().map(|k| format!("outcomes_scenario{k}.svg")).collect();
            p.extend(ks.iter().map(|k| format!("mse_by_age_scenario{k}.svg")));
            (t, p)
        }
        "curve" => {
            let mut t = vec!["acte.csv".to_string()];
            for extra in ["acef_control.csv", "acef_treated.csv", "acte_smoothed.csv"] {
                if dir.join(extra).exists() {
                    t.push(extra.into());
                }
            }
            let mut p = vec!["acte.svg".to_string()];
            if dir.join("acef.svg").exists() {
                p.push("acef.svg".into());
            }
            (t, p)
        }
        "fit" => (Vec::new(), Vec::new()),
        other => bail!(ActeError::Config(format!("run.json names unknown command {other:?}"))),
    };
    let needed: Vec<String> = if command == "fit" { vec!["model.json".into()] } else { tables.clone() };
    let missing: Vec<PathBuf> = needed
        .iter()
        .chain(&plots)
        .map(|f| dir.join(f))
        .filter(|p| !p.exists())
        .collect();
    if !missing.is_empty() {
        return Err(ActeError::Dependency(missing).into());
    }

    let mut md = String::new();
    md.push_str(&format!("# acte {command} report\n\n"));
    md.push_str(&format!("generated: {}\n\n", timestamp()));
    md.push_str("## Run metadata\n\n```json\n");
    md.push_str(run_text.trim_end());
    md.push_str("\n```\n\n");
    for t in &tables {
        let text = fs::read_to_string(dir.join(t)).with_context(|| t.clone())?;
        md.push_str(&format!("## {t}\n\n{}\n", csv_to_markdown(&text)));
    }
    for p in &plots {
        let svg = fs::read_to_string(dir.join(p)).with_context(|| p.clone())?;
        md.push_str(&format!("## {p}\n\n{}\n", svg.trim_end()));
    }
    let target = args.output.unwrap_or_else(|| dir.join("report.md"));
    if let Some(parent) = target.parent().filter(|p| !p.as_os_str().is_empty()) {
        out.prepare(parent)?;
    }
    out.write(target, md)?;
    Ok(())
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("ACTE_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| ActeError::Config(format!("ACTE_THREADS={v:?} is not a positive integer")))?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn run(cli: Cli, out: &mut Outputs) -> Result<()> {
    configure_threads()?;
    let file = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate(a) => simulate(a, &file, cli.verbose, out),
        Command::Fit(a) => fit(a, &file, cli.verbose, out),
        Command::Curve(a) => curve(a, &file, cli.verbose, out),
        Command::Report(a) => report(a, &file, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut out = Outputs::default();
    match run(cli, &mut out) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            out.rollback();
            let msg = format!("{e:#}").replace('\n', " ");
            eprintln!("acte: error: {msg}");
            ExitCode::FAILURE
        }
    }
}
