//! End-to-end diagnosis: preprocess, slide windows, fit a readout per window,
//! embed, classify incrementally, merge regions.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::detectors::{
    incremental_diagnose, median_gamma, ocsvm_classify, train_ocsvm, IncrementalState, OcsvmModel,
    PENDING_LABEL,
};
use crate::error::{Error, Result};
use crate::model_space::{embed, ModelVector};
use crate::preprocess::{BScanImage, PreprocessConfig};
use crate::reservoir::{fit_window, ReservoirConfig, ReservoirWeights};
use crate::segmentation::{
    merge_regions, slide_windows, write_regions_csv, AnomalyRegion, LabeledWindow, WindowSpec,
    NORMAL_LABEL,
};
use crate::synthgpr::GroundTruth;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorConfig {
    pub nu: f64,
    /// `None` selects the median heuristic per trained classifier.
    pub gamma: Option<f64>,
    /// Factor applied to the median-heuristic gamma; below 1 widens the kernel.
    pub gamma_scale: f64,
    pub min_pool: usize,
    pub k: usize,
    pub gap_tolerance: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            nu: 0.05,
            gamma: None,
            gamma_scale: 1.0,
            min_pool: 15,
            k: 5,
            gap_tolerance: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub window: WindowSpec,
    pub reservoir: ReservoirConfig,
    pub preprocess: PreprocessConfig,
    pub detector: DetectorConfig,
    pub input: Option<PathBuf>,
    pub model_dir: Option<PathBuf>,
    pub report_dir: Option<PathBuf>,
    /// Half-open column span of known-normal road used to train the base
    /// classifier when no trained one is supplied.
    pub normal_span: Option<(usize, usize)>,
    /// Worker threads for window fitting; `None` uses every core.
    pub threads: Option<usize>,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::param(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.window.validate()?;
        self.reservoir.validate()?;
        if let Some(g) = &self.preprocess.gain {
            g.validate()?;
        }
        let d = &self.detector;
        if !(d.nu > 0.0 && d.nu <= 1.0) {
            return Err(Error::param(format!("nu must lie in (0, 1], got {}", d.nu)));
        }
        if let Some(g) = d.gamma {
            if !(g > 0.0 && g.is_finite()) {
                return Err(Error::param(format!("gamma must be > 0, got {g}")));
            }
        }
        if !(d.gamma_scale > 0.0 && d.gamma_scale.is_finite()) {
            return Err(Error::param(format!(
                "gamma_scale must be > 0, got {}",
                d.gamma_scale
            )));
        }
        if d.k == 0 {
            return Err(Error::param("k must be >= 1"));
        }
        if self.threads == Some(0) {
            return Err(Error::param("threads must be >= 1"));
        }
        if let Some((s, e)) = self.normal_span {
            if s >= e {
                return Err(Error::param(format!("empty normal span {s}..{e}")));
            }
        }
        Ok(())
    }
}

/// Runs `f` on a pool of `threads` workers, or on the global pool.
pub fn with_threads<T: Send>(threads: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match threads {
        None => Ok(f()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map(|pool| pool.install(f))
            .map_err(|e| Error::param(format!("cannot start {n} worker threads: {e}"))),
    }
}

/// One embedded window and the seconds spent fitting it.
#[derive(Debug, Clone)]
pub struct FittedWindow {
    pub point: ModelVector,
    pub train_nrmse: f64,
    pub fit_seconds: f64,
}

/// Fits every window of an already preprocessed image, in parallel.
pub fn fit_windows(
    w: &ReservoirWeights,
    img: &BScanImage,
    spec: &WindowSpec,
) -> Result<Vec<FittedWindow>> {
    let windows = slide_windows(img, spec)?;
    windows
        .into_par_iter()
        .map(|(start, win)| {
            let t0 = Instant::now();
            let mut m = fit_window(w, &win)?;
            m.window_id = format!("{start}");
            let point = embed(&m).with_span(start, start + win.cols());
            Ok(FittedWindow {
                point,
                train_nrmse: m.train_nrmse,
                fit_seconds: t0.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

/// Trains the normal classifier on the windows lying inside `span`.
pub fn train_base(
    points: &[ModelVector],
    span: (usize, usize),
    detector: &DetectorConfig,
) -> Result<OcsvmModel> {
    let inside: Vec<ModelVector> = points
        .iter()
        .filter(|p| p.window_span.0 >= span.0 && p.window_span.1 <= span.1)
        .cloned()
        .collect();
    if inside.len() < 2 {
        return Err(Error::param(format!(
            "normal span {}..{} holds {} whole windows; at least 2 are needed",
            span.0,
            span.1,
            inside.len()
        )));
    }
    let gamma = detector
        .gamma
        .unwrap_or_else(|| detector.gamma_scale * median_gamma(&inside));
    train_ocsvm(&inside, detector.nu, gamma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagnosisReport {
    pub windows: Vec<LabeledWindow>,
    pub regions: Vec<AnomalyRegion>,
    /// Fit plus classification seconds per window, in window order.
    pub latencies: Vec<f64>,
    pub classes: Vec<String>,
    pub col_spacing_cm: f64,
    pub fingerprint: String,
}

impl DiagnosisReport {
    pub fn label_counts(&self) -> BTreeMap<String, usize> {
        let mut counts = BTreeMap::new();
        for w in &self.windows {
            *counts.entry(w.label.clone()).or_insert(0) += 1;
        }
        counts
    }

    pub fn mean_latency(&self) -> f64 {
        self.latencies.iter().sum::<f64>() / self.latencies.len().max(1) as f64
    }

    /// Nearest-rank percentile of the window latencies.
    pub fn latency_percentile(&self, q: f64) -> f64 {
        if self.latencies.is_empty() {
            return 0.0;
        }
        let mut v = self.latencies.clone();
        v.sort_by(f64::total_cmp);
        let rank = ((q / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
        v[rank.min(v.len()) - 1]
    }

    /// Seed-determined summary. Timings live in [`Self::timing_json`] so that
    /// reruns produce identical summaries.
    pub fn summary_json(&self) -> serde_json::Value {
        json!({
            "windows": self.windows.len(),
            "regions": self.regions.len(),
            "label_counts": self.label_counts(),
            "classes": self.classes,
            "fingerprint": self.fingerprint,
        })
    }

    pub fn timing_json(&self) -> serde_json::Value {
        json!({
            "windows": self.latencies.len(),
            "mean_s": self.mean_latency(),
            "p50_s": self.latency_percentile(50.0),
            "p90_s": self.latency_percentile(90.0),
            "p99_s": self.latency_percentile(99.0),
            "max_s": self.latency_percentile(100.0),
        })
    }

    /// Writes `windows.csv`, `regions.csv`, `summary.json` and `timing.json`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("windows.csv");
        let mut w = csv::Writer::from_path(&path)?;
        w.write_record(["start_col", "label", "score"])?;
        for lw in &self.windows {
            w.write_record([
                lw.start_col.to_string(),
                lw.label.clone(),
                format!("{:.9}", lw.score),
            ])?;
        }
        w.flush().map_err(|e| Error::io(&path, e))?;
        write_regions_csv(&dir.join("regions.csv"), &self.regions, self.col_spacing_cm)?;
        for (name, value) in [
            ("summary.json", self.summary_json()),
            ("timing.json", self.timing_json()),
        ] {
            let path = dir.join(name);
            let text = serde_json::to_string_pretty(&value)?;
            std::fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Diagnoses a raw image. Without `base`, the normal classifier is trained
/// on the windows inside `config.normal_span`. Returns the report and the
/// base classifier used.
pub fn diagnose(
    raw: &BScanImage,
    weights: &ReservoirWeights,
    base: Option<&OcsvmModel>,
    config: &PipelineConfig,
) -> Result<(DiagnosisReport, OcsvmModel)> {
    config.validate()?;
    let img = config.preprocess.apply(raw)?;
    let fitted = with_threads(config.threads, || {
        fit_windows(weights, &img, &config.window)
    })??;
    let points: Vec<ModelVector> = fitted.iter().map(|f| f.point.clone()).collect();
    let base = match (base, config.normal_span) {
        (Some(b), _) => b.clone(),
        (None, Some(span)) => train_base(&points, span, &config.detector)?,
        (None, None) => {
            return Err(Error::param(
                "no trained normal classifier given and no normal span to train one",
            ))
        }
    };

    let mut state = IncrementalState::new(config.detector.min_pool);
    state.gamma_scale = config.detector.gamma_scale;
    let t0 = Instant::now();
    let assignments = incremental_diagnose(
        &points,
        &base,
        &mut state,
        config.detector.nu,
        config.detector.gamma,
    )?;
    let classify_share = t0.elapsed().as_secs_f64() / points.len().max(1) as f64;

    let windows: Vec<LabeledWindow> = points
        .iter()
        .zip(&assignments)
        .map(|(p, a)| LabeledWindow {
            start_col: p.window_span.0,
            width: p.window_span.1 - p.window_span.0,
            label: a.label.clone(),
            score: a.score,
        })
        .collect();
    // pending windows are unresolved rejections, not a kind; they stay in the
    // window report but form no region
    let classified: Vec<LabeledWindow> = windows
        .iter()
        .filter(|w| w.label != PENDING_LABEL)
        .cloned()
        .collect();
    let regions = merge_regions(&classified, config.detector.gap_tolerance);
    let report = DiagnosisReport {
        windows,
        regions,
        latencies: fitted
            .iter()
            .map(|f| f.fit_seconds + classify_share)
            .collect(),
        classes: state.classifiers.iter().map(|(l, _)| l.clone()).collect(),
        col_spacing_cm: raw.col_spacing_cm(),
        fingerprint: weights.fingerprint().to_string(),
    };
    Ok((report, base))
}

/// Base classifier verdicts only: `normal` or `anomaly` per window.
pub fn binary_labels(points: &[ModelVector], base: &OcsvmModel) -> Result<Vec<bool>> {
    points
        .iter()
        .map(|p| ocsvm_classify(base, p).map(|(inlier, _)| !inlier))
        .collect()
}

/// Ground-truth status of a window under the transition rule.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WindowTruth {
    Normal,
    /// Index into the ground-truth list of the anomaly covering at least
    /// half the window.
    Anomaly(usize),
    /// Partially overlaps an anomaly by less than half its width.
    Transition,
}

pub fn window_truth(start: usize, width: usize, truth: &[GroundTruth]) -> WindowTruth {
    let end = start + width;
    let mut best: Option<(usize, usize)> = None;
    for (i, g) in truth.iter().enumerate() {
        let overlap = end.min(g.end_col).saturating_sub(start.max(g.start_col));
        if overlap > 0 && best.is_none_or(|(_, o)| overlap > o) {
            best = Some((i, overlap));
        }
    }
    match best {
        None => WindowTruth::Normal,
        Some((i, o)) if 2 * o >= width => WindowTruth::Anomaly(i),
        Some(_) => WindowTruth::Transition,
    }
}

/// Window-level detection quality against ground truth.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    /// F1 of anomaly detection with transition windows excluded.
    pub f1: f64,
    /// F1 counting transition windows as anomalies.
    pub f1_with_transitions: f64,
    pub transition_windows: usize,
    /// Per ground-truth anomaly: number of merged regions with IoU ≥ 0.5,
    /// and the best IoU.
    pub region_matches: Vec<(usize, f64)>,
}

fn f1(tp: usize, fp: usize, fneg: usize) -> f64 {
    if tp == 0 {
        return if fp == 0 && fneg == 0 { 1.0 } else { 0.0 };
    }
    2.0 * tp as f64 / (2 * tp + fp + fneg) as f64
}

pub fn iou(a: (usize, usize), b: (usize, usize)) -> f64 {
    let inter = a.1.min(b.1).saturating_sub(a.0.max(b.0));
    let union = (a.1 - a.0) + (b.1 - b.0) - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

pub fn evaluate(report: &DiagnosisReport, truth: &[GroundTruth]) -> Evaluation {
    let (mut tp, mut fp, mut fneg) = (0, 0, 0);
    let (mut tp_all, mut fp_all, mut fn_all) = (0, 0, 0);
    let mut transitions = 0;
    for w in &report.windows {
        let flagged = w.label != NORMAL_LABEL;
        let t = window_truth(w.start_col, w.width, truth);
        let actual = t != WindowTruth::Normal;
        match (flagged, actual) {
            (true, true) => tp_all += 1,
            (true, false) => fp_all += 1,
            (false, true) => fn_all += 1,
            _ => {}
        }
        if t == WindowTruth::Transition {
            transitions += 1;
            continue;
        }
        match (flagged, actual) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fneg += 1,
            _ => {}
        }
    }
    let region_matches = truth
        .iter()
        .map(|g| {
            let ious: Vec<f64> = report
                .regions
                .iter()
                .map(|r| iou((g.start_col, g.end_col), (r.start_col, r.end_col)))
                .collect();
            (
                ious.iter().filter(|&&v| v >= 0.5).count(),
                ious.iter().copied().fold(0.0, f64::max),
            )
        })
        .collect();
    Evaluation {
        f1: f1(tp, fp, fneg),
        f1_with_transitions: f1(tp_all, fp_all, fn_all),
        transition_windows: transitions,
        region_matches,
    }
}
