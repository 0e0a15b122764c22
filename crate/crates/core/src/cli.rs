//! Command line front end. Configuration comes from one JSON file
//! (`--config`) with flag overrides; flags win. Failures print one line
//! `E_CODE: message` to stderr and exit 2 (arguments), 3 (input data) or 4
//! (numeric failure).

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::detectors::{knn_classify, median_gamma, train_ocsvm, KnnModel, OcsvmModel};
use crate::error::{Error, Result};
use crate::model_space::{pca_project, write_projection_csv, ModelSpace, ModelVector};
use crate::pipeline::{
    diagnose, fit_windows, window_truth, DiagnosisReport, PipelineConfig, WindowTruth,
};
use crate::preprocess::{load_image, save_image};
use crate::reservoir::{init_reservoir, ReservoirWeights};
use crate::synthgpr::{
    generate_bscan, read_ground_truth_csv, write_ground_truth_csv, AnomalyKind, SceneSpec,
};

#[derive(Debug, Parser)]
#[command(
    name = "esn2d",
    version,
    about = "2D-ESN model-space anomaly diagnosis of GPR B-scans"
)]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// Pipeline configuration JSON; flags override its fields.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Reservoir seed (scene seed for `generate`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for window fitting.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a B-scan with ground truth.
    Generate(GenerateArgs),
    /// Apply the configured preprocessing chain to an image.
    Preprocess(ImageArgs),
    /// Fit every window and write the model space CSV.
    Fit(FitArgs),
    /// Train a one-class SVM on a model space CSV.
    TrainOcsvm(TrainOcsvmArgs),
    /// Build a KNN classifier from a labeled model space CSV.
    TrainKnn(TrainKnnArgs),
    /// Full pipeline: preprocess, fit, incremental one-class diagnosis, merge.
    Diagnose(DiagnoseArgs),
    /// Label a model space CSV with a KNN model.
    Classify(ClassifyArgs),
    /// PCA projection of a model space CSV.
    Project(ProjectArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Full SceneSpec JSON; otherwise a synthetic road is built from the flags.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long, default_value_t = 6000)]
    pub cols: usize,
    /// Injected anomaly as `kind:start:end`, repeatable.
    #[arg(long = "anomaly", value_parser = parse_anomaly)]
    pub anomalies: Vec<(AnomalyKind, usize, usize)>,
    /// Ground truth CSV path; defaults to `<out stem>.truth.csv`.
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ImageArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Saved reservoir weights; otherwise generated from the config.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Label every point with this string.
    #[arg(long, conflicts_with = "truth")]
    pub label: Option<String>,
    /// Label points from a ground truth CSV (transition windows are dropped).
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Skip preprocessing (input is already preprocessed).
    #[arg(long)]
    pub raw: bool,
}

#[derive(Debug, Args)]
pub struct TrainOcsvmArgs {
    #[arg(long)]
    pub space: PathBuf,
    /// Train only on points with this label.
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainKnnArgs {
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Trained normal OCSVM JSON; otherwise trained on `--normal-span`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Known-normal column span `start:end` (half-open).
    #[arg(long, value_parser = parse_span)]
    pub normal_span: Option<(usize, usize)>,
    #[arg(long)]
    pub nu: Option<f64>,
    #[arg(long)]
    pub gamma_scale: Option<f64>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub min_pool: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ClassifyArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub space: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub space: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub dims: usize,
}

fn parse_span(s: &str) -> std::result::Result<(usize, usize), String> {
    let (a, b) = s
        .split_once(':')
        .ok_or_else(|| format!("expected start:end, got {s:?}"))?;
    let a = a.parse().map_err(|_| format!("bad column {a:?}"))?;
    let b = b.parse().map_err(|_| format!("bad column {b:?}"))?;
    Ok((a, b))
}

fn parse_anomaly(s: &str) -> std::result::Result<(AnomalyKind, usize, usize), String> {
    let (kind, span) = s
        .split_once(':')
        .ok_or_else(|| format!("expected kind:start:end, got {s:?}"))?;
    let kind: AnomalyKind = kind.parse().map_err(|e: Error| e.to_string())?;
    let (a, b) = parse_span(span)?;
    Ok((kind, a, b))
}

/// Parses `args` (including the program name), runs the command and returns
/// the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return 0;
        }
        Err(e) => {
            let msg = e.to_string();
            let line = msg.lines().next().unwrap_or("bad arguments");
            eprintln!("E_ARGS: {}", line.trim_start_matches("error: "));
            return 2;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("{}: {}", e.code(), e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let config = load_config(&cli.common)?;
    let c = &cli.common;
    match &cli.command {
        Command::Generate(a) => cmd_generate(a, c),
        Command::Preprocess(a) => cmd_preprocess(a, c, &config),
        Command::Fit(a) => cmd_fit(a, c, &config),
        Command::TrainOcsvm(a) => cmd_train_ocsvm(a, c, &config),
        Command::TrainKnn(a) => cmd_train_knn(a, c, &config),
        Command::Diagnose(a) => {
            let report = cmd_diagnose(a, c, config)?;
            println!("mean per-window latency: {:.4} s", report.mean_latency());
            Ok(())
        }
        Command::Classify(a) => cmd_classify(a, c),
        Command::Project(a) => cmd_project(a, c),
    }
}

fn load_config(c: &Common) -> Result<PipelineConfig> {
    let mut config = match &c.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = c.seed {
        config.reservoir.seed = s;
    }
    if c.threads.is_some() {
        config.threads = c.threads;
    }
    Ok(config)
}

fn required<'a>(
    flag: Option<&'a PathBuf>,
    fallback: Option<&'a PathBuf>,
    name: &str,
) -> Result<&'a Path> {
    flag.or(fallback)
        .map(PathBuf::as_path)
        .ok_or_else(|| Error::param(format!("missing {name}")))
}

fn weights(path: Option<&PathBuf>, config: &PipelineConfig) -> Result<ReservoirWeights> {
    match path {
        Some(p) => ReservoirWeights::load(p),
        None => init_reservoir(&config.reservoir),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn cmd_generate(a: &GenerateArgs, c: &Common) -> Result<()> {
    let out = required(c.out.as_ref(), None, "--out image path")?;
    let mut spec = match &a.scene {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            serde_json::from_str::<SceneSpec>(&text)
                .map_err(|e| Error::param(format!("{}: {e}", p.display())))?
        }
        None => SceneSpec::road(a.cols, c.seed.unwrap_or(0)),
    };
    if a.scene.is_some() {
        if let Some(s) = c.seed {
            spec.seed = s;
        }
    }
    for &(kind, s, e) in &a.anomalies {
        spec = spec.with_anomaly(kind, (s, e));
    }
    let (img, truth) = generate_bscan(&spec)?;
    save_image(out, &img)?;
    let truth_path = a
        .truth
        .clone()
        .unwrap_or_else(|| out.with_extension("truth.csv"));
    write_ground_truth_csv(&truth_path, &truth)
}

pub fn cmd_preprocess(a: &ImageArgs, c: &Common, config: &PipelineConfig) -> Result<()> {
    let input = required(a.input.as_ref(), config.input.as_ref(), "--input")?;
    let out = required(c.out.as_ref(), None, "--out image path")?;
    let img = config.preprocess.apply(&load_image(input)?)?;
    save_image(out, &img)
}

/// Fits every window of the (preprocessed) input and returns the model space.
pub fn fit_space(
    input: &Path,
    weights: &ReservoirWeights,
    config: &PipelineConfig,
    preprocess: bool,
) -> Result<ModelSpace> {
    config.validate()?;
    let mut img = load_image(input)?;
    if preprocess {
        img = config.preprocess.apply(&img)?;
    }
    let fitted = crate::pipeline::with_threads(config.threads, || {
        fit_windows(weights, &img, &config.window)
    })??;
    ModelSpace::new(fitted.into_iter().map(|f| f.point).collect())
}

pub fn cmd_fit(a: &FitArgs, c: &Common, config: &PipelineConfig) -> Result<()> {
    let input = required(a.input.as_ref(), config.input.as_ref(), "--input")?;
    let out = required(c.out.as_ref(), None, "--out model space CSV")?;
    let w = weights(a.weights.as_ref(), config)?;
    let space = fit_space(input, &w, config, !a.raw)?;
    let mut points = space.into_points();
    if let Some(l) = &a.label {
        points = points
            .into_iter()
            .map(|p| p.with_label(l.clone()))
            .collect();
    }
    if let Some(t) = &a.truth {
        let truth = read_ground_truth_csv(t)?;
        points = points
            .into_iter()
            .filter_map(|p| {
                let (s, e) = p.window_span;
                match window_truth(s, e - s, &truth) {
                    WindowTruth::Normal => Some(p.with_label("normal")),
                    WindowTruth::Anomaly(i) => Some(p.with_label(truth[i].kind.as_str())),
                    WindowTruth::Transition => None,
                }
            })
            .collect();
    }
    if let Some(dir) = &config.model_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        w.save(&dir.join("reservoir.json"), false)?;
    }
    ModelSpace::new(points)?.write_csv(out)
}

fn select(space: ModelSpace, label: Option<&String>) -> Result<Vec<ModelVector>> {
    let points: Vec<ModelVector> = space
        .into_points()
        .into_iter()
        .filter(|p| label.is_none() || p.label.as_ref() == label)
        .collect();
    if points.is_empty() {
        return Err(Error::data("no model vectors selected for training"));
    }
    Ok(points)
}

pub fn cmd_train_ocsvm(a: &TrainOcsvmArgs, c: &Common, config: &PipelineConfig) -> Result<()> {
    let out = required(c.out.as_ref(), None, "--out model JSON")?;
    let points = select(ModelSpace::read_csv(&a.space)?, a.label.as_ref())?;
    let d = &config.detector;
    let nu = a.nu.unwrap_or(d.nu);
    let gamma = a
        .gamma
        .or(d.gamma)
        .unwrap_or_else(|| d.gamma_scale * median_gamma(&points));
    let model: OcsvmModel = train_ocsvm(&points, nu, gamma)?;
    model.save(out)
}

pub fn cmd_train_knn(a: &TrainKnnArgs, c: &Common, config: &PipelineConfig) -> Result<()> {
    let out = required(c.out.as_ref(), None, "--out model JSON")?;
    let points = ModelSpace::read_csv(&a.space)?.into_points();
    KnnModel::new(points, a.k.unwrap_or(config.detector.k))?.save(out)
}

/// Runs the full pipeline and writes the report to `--out` (or the
/// configured report directory). Weights and the base classifier go to the
/// configured model directory when one is set.
pub fn cmd_diagnose(
    a: &DiagnoseArgs,
    c: &Common,
    mut config: PipelineConfig,
) -> Result<DiagnosisReport> {
    if a.normal_span.is_some() {
        config.normal_span = a.normal_span;
    }
    if let Some(v) = a.nu {
        config.detector.nu = v;
    }
    if let Some(v) = a.gamma_scale {
        config.detector.gamma_scale = v;
    }
    if let Some(v) = a.lambda {
        config.reservoir.ridge_lambda = v;
    }
    if let Some(v) = a.min_pool {
        config.detector.min_pool = v;
    }
    let input = required(a.input.as_ref(), config.input.as_ref(), "--input")?.to_path_buf();
    let report_dir = required(
        c.out.as_ref(),
        config.report_dir.as_ref(),
        "--out report directory",
    )?
    .to_path_buf();
    let w = weights(a.weights.as_ref(), &config)?;
    let base = a.model.as_deref().map(OcsvmModel::load).transpose()?;
    let raw = load_image(&input)?;
    let (report, base) = diagnose(&raw, &w, base.as_ref(), &config)?;
    report.write(&report_dir)?;
    if let Some(dir) = &config.model_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        w.save(&dir.join("reservoir.json"), false)?;
        base.save(&dir.join("base_ocsvm.json"))?;
        write_json(&dir.join("config.json"), &config)?;
    }
    Ok(report)
}

pub fn cmd_classify(a: &ClassifyArgs, c: &Common) -> Result<()> {
    let out = required(c.out.as_ref(), None, "--out CSV")?;
    let model = KnnModel::load(&a.model)?;
    let space = ModelSpace::read_csv(&a.space)?;
    let mut w = csv::Writer::from_path(out)?;
    w.write_record(["start_col", "end_col", "label"])?;
    for p in space.points() {
        let label = knn_classify(&model, p)?;
        w.write_record([
            p.window_span.0.to_string(),
            p.window_span.1.to_string(),
            label,
        ])?;
    }
    w.flush().map_err(|e| Error::io(out, e))
}

pub fn cmd_project(a: &ProjectArgs, c: &Common) -> Result<()> {
    let out = required(c.out.as_ref(), None, "--out CSV")?;
    let space = ModelSpace::read_csv(&a.space)?;
    let proj = pca_project(&space, a.dims)?;
    write_projection_csv(out, &space, &proj)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spans_and_anomalies_parse() {
        assert_eq!(parse_span("10:20"), Ok((10, 20)));
        assert!(parse_span("10").is_err());
        assert_eq!(parse_anomaly("cavity:5:9"), Ok((AnomalyKind::Cavity, 5, 9)));
        assert!(parse_anomaly("puddle:5:9").is_err());
    }

    #[test]
    fn bad_arguments_exit_two() {
        assert_eq!(run(["esn2d", "frobnicate"]), 2);
        assert_eq!(run(["esn2d", "diagnose", "--normal-span", "x"]), 2);
    }

    #[test]
    fn missing_input_is_a_parameter_error() {
        assert_eq!(run(["esn2d", "diagnose"]), 2);
    }

    #[test]
    fn unreadable_input_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("none.csv");
        let out = dir.path().join("o.csv");
        let code = run([
            "esn2d".into(),
            "preprocess".into(),
            "--input".into(),
            missing.into_os_string(),
            "--out".into(),
            out.into_os_string(),
        ]);
        assert_eq!(code, 3);
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"reservoir": {"seed": 5}, "threads": 3}"#).unwrap();
        let common = Common {
            config: Some(path),
            seed: Some(9),
            threads: None,
            out: None,
        };
        let config = load_config(&common).unwrap();
        assert_eq!(config.reservoir.seed, 9);
        assert_eq!(config.threads, Some(3));
    }
}
