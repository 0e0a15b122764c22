//! Sliding windows over the trace axis and merging of labeled windows into
//! anomaly regions.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::preprocess::BScanImage;

/// Label carried by windows accepted by the normal-road classifier.
pub const NORMAL_LABEL: &str = "normal";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowSpec {
    pub width_cols: usize,
    pub stride_cols: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self {
            width_cols: 300,
            stride_cols: 20,
        }
    }
}

impl WindowSpec {
    pub fn validate(&self) -> Result<()> {
        if self.width_cols < 2 {
            return Err(Error::param("window width must be at least 2 columns"));
        }
        if self.stride_cols == 0 || self.stride_cols > self.width_cols {
            return Err(Error::param(format!(
                "stride must lie in 1..={}, got {}",
                self.width_cols, self.stride_cols
            )));
        }
        Ok(())
    }

    /// Window start columns for an image `cols` wide: every stride, plus a
    /// final window pinned to the right edge when the strides fall short.
    pub fn starts(&self, cols: usize) -> Result<Vec<usize>> {
        self.validate()?;
        if cols < self.width_cols {
            return Err(Error::param(format!(
                "image has {cols} columns, narrower than the {}-column window",
                self.width_cols
            )));
        }
        let last = cols - self.width_cols;
        let mut starts: Vec<usize> = (0..=last).step_by(self.stride_cols).collect();
        if starts.last() != Some(&last) {
            starts.push(last);
        }
        Ok(starts)
    }
}

/// Full-depth windows in left-to-right order.
pub fn slide_windows(img: &BScanImage, spec: &WindowSpec) -> Result<Vec<(usize, BScanImage)>> {
    spec.starts(img.cols())?
        .into_iter()
        .map(|s| Ok((s, img.window(s, spec.width_cols)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledWindow {
    pub start_col: usize,
    pub width: usize,
    pub label: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyRegion {
    /// Half-open `[start_col, end_col)`.
    pub start_col: usize,
    pub end_col: usize,
    pub label: String,
    pub support: usize,
    pub mean_score: f64,
}

impl AnomalyRegion {
    pub fn len(&self) -> usize {
        self.end_col - self.start_col
    }

    pub fn is_empty(&self) -> bool {
        self.end_col == self.start_col
    }
}

/// Merges same-label non-normal windows whose spans overlap or are at most
/// `gap_tolerance` columns apart. Windows must be sorted by start column.
/// Regions are returned ordered by start column.
pub fn merge_regions(labeled: &[LabeledWindow], gap_tolerance: usize) -> Vec<AnomalyRegion> {
    debug_assert!(labeled.windows(2).all(|w| w[0].start_col <= w[1].start_col));
    let mut open: BTreeMap<&str, (AnomalyRegion, f64)> = BTreeMap::new();
    let mut done = Vec::new();
    for w in labeled.iter().filter(|w| w.label != NORMAL_LABEL) {
        let end = w.start_col + w.width;
        match open.get_mut(w.label.as_str()) {
            Some((region, score_sum)) if w.start_col <= region.end_col + gap_tolerance => {
                region.end_col = region.end_col.max(end);
                region.support += 1;
                *score_sum += w.score;
            }
            _ => {
                let fresh = AnomalyRegion {
                    start_col: w.start_col,
                    end_col: end,
                    label: w.label.clone(),
                    support: 1,
                    mean_score: 0.0,
                };
                if let Some(prev) = open.insert(&w.label, (fresh, w.score)) {
                    done.push(prev);
                }
            }
        }
    }
    done.extend(open.into_values());
    let mut regions: Vec<AnomalyRegion> = done
        .into_iter()
        .map(|(mut r, sum)| {
            r.mean_score = sum / r.support as f64;
            r
        })
        .collect();
    regions.sort_by(|a, b| (a.start_col, &a.label).cmp(&(b.start_col, &b.label)));
    regions
}

/// Region CSV: start_col, end_col, start_cm, end_cm, label, support, mean_score.
pub fn write_regions_csv(
    path: &Path,
    regions: &[AnomalyRegion],
    col_spacing_cm: f64,
) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "start_col",
        "end_col",
        "start_cm",
        "end_cm",
        "label",
        "support",
        "mean_score",
    ])?;
    for r in regions {
        w.write_record([
            r.start_col.to_string(),
            r.end_col.to_string(),
            format!("{:.3}", r.start_col as f64 * col_spacing_cm),
            format!("{:.3}", r.end_col as f64 * col_spacing_cm),
            r.label.clone(),
            r.support.to_string(),
            format!("{:.6}", r.mean_score),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lw(start: usize, width: usize, label: &str, score: f64) -> LabeledWindow {
        LabeledWindow {
            start_col: start,
            width,
            label: label.into(),
            score,
        }
    }

    fn spec(width: usize, stride: usize) -> WindowSpec {
        WindowSpec {
            width_cols: width,
            stride_cols: stride,
        }
    }

    #[test]
    fn start_columns() {
        assert_eq!(spec(300, 20).starts(340).unwrap(), vec![0, 20, 40]);
        assert_eq!(spec(300, 20).starts(300).unwrap(), vec![0]);
        assert_eq!(spec(300, 20).starts(310).unwrap(), vec![0, 10]);
        assert!(spec(300, 20).starts(299).is_err());
        assert!(spec(300, 0).starts(400).is_err());
        assert!(spec(300, 301).starts(400).is_err());
    }

    #[test]
    fn slides_full_depth_windows() {
        let img = BScanImage::new(3, 10, (0..30).map(f64::from).collect()).unwrap();
        let wins = slide_windows(&img, &spec(4, 3)).unwrap();
        let starts: Vec<usize> = wins.iter().map(|w| w.0).collect();
        assert_eq!(starts, vec![0, 3, 6]);
        assert_eq!(wins[1].1.rows(), 3);
        assert_eq!(wins[1].1.get(2, 0), 23.0);
    }

    #[test]
    fn overlapping_same_label_merge() {
        let r = merge_regions(&[lw(0, 300, "A", 1.0), lw(20, 300, "A", 3.0)], 0);
        assert_eq!(r.len(), 1);
        assert_eq!((r[0].start_col, r[0].end_col, r[0].support), (0, 320, 2));
        assert_eq!(r[0].mean_score, 2.0);
    }

    #[test]
    fn disjoint_same_label_split() {
        let r = merge_regions(
            &[
                lw(0, 10, "A", 0.0),
                lw(20, 10, NORMAL_LABEL, 0.0),
                lw(40, 10, "A", 0.0),
            ],
            0,
        );
        assert_eq!(r.len(), 2);
        // a gap tolerance bridges the hole
        assert_eq!(
            merge_regions(&[lw(0, 10, "A", 0.0), lw(40, 10, "A", 0.0)], 30).len(),
            1
        );
    }

    #[test]
    fn abutting_windows_merge() {
        let r = merge_regions(&[lw(0, 10, "A", 0.0), lw(10, 10, "A", 0.0)], 0);
        assert_eq!(r.len(), 1);
        assert_eq!(r[0].end_col, 20);
    }

    #[test]
    fn different_labels_never_merge() {
        let r = merge_regions(&[lw(0, 300, "A", 0.0), lw(20, 300, "B", 0.0)], 0);
        assert_eq!(r.len(), 2);
        assert_eq!(r[0].label, "A");
        assert_eq!(r[1].label, "B");
    }

    #[test]
    fn normal_only_gives_nothing() {
        assert!(merge_regions(&[lw(0, 5, NORMAL_LABEL, 1.0)], 0).is_empty());
    }

    fn arb_labeled() -> impl Strategy<Value = Vec<LabeledWindow>> {
        prop::collection::vec((0usize..40, 1usize..30, 0usize..3), 0..30).prop_map(|mut v| {
            v.sort_by_key(|t| t.0);
            v.into_iter()
                .map(|(s, w, l)| lw(s, w, ["normal", "A", "B"][l], s as f64))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn regions_cover_exactly_their_windows(wins in arb_labeled()) {
            let regions = merge_regions(&wins, 0);
            let anomalous: Vec<_> = wins.iter().filter(|w| w.label != NORMAL_LABEL).collect();
            prop_assert!(regions.len() <= anomalous.len());
            for w in &anomalous {
                for c in w.start_col..w.start_col + w.width {
                    prop_assert!(regions.iter().any(|r| r.label == w.label && r.start_col <= c && c < r.end_col));
                }
            }
            for r in &regions {
                prop_assert!(r.start_col < r.end_col && r.support >= 1);
                for c in r.start_col..r.end_col {
                    prop_assert!(anomalous.iter().any(|w| w.label == r.label && w.start_col <= c && c < w.start_col + w.width));
                }
            }
            let total: usize = regions.iter().map(|r| r.support).sum();
            prop_assert_eq!(total, anomalous.len());
        }

        #[test]
        fn windows_cover_every_column(cols in 10usize..200, width in 2usize..10, stride in 1usize..10) {
            prop_assume!(stride <= width);
            let starts = spec(width, stride).starts(cols).unwrap();
            for c in 0..cols {
                prop_assert!(starts.iter().any(|&s| s <= c && c < s + width));
            }
            prop_assert!(starts.windows(2).all(|p| p[0] < p[1]));
        }
    }
}
