use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model_space::{model_distance, ModelVector};

/// Nearest-neighbor classifier under the model-space distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnnModel {
    pub train_points: Vec<ModelVector>,
    pub k: usize,
}

impl KnnModel {
    /// Every training point must carry a label; `1 ≤ k ≤ train size`.
    pub fn new(train_points: Vec<ModelVector>, k: usize) -> Result<Self> {
        if k == 0 || k > train_points.len() {
            return Err(Error::param(format!(
                "k must lie in 1..={}, got {k}",
                train_points.len()
            )));
        }
        if train_points.iter().any(|p| p.label.is_none()) {
            return Err(Error::data("every KNN training point needs a label"));
        }
        Ok(Self { train_points, k })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: Self = serde_json::from_str(&text)?;
        Self::new(m.train_points, m.k)
    }
}

/// Majority label among the `k` nearest training points. Ties go to the
/// label with the smaller mean distance, then to the label that sorts first.
pub fn knn_classify(m: &KnnModel, p: &ModelVector) -> Result<String> {
    classify_excluding(m, p, None)
}

fn classify_excluding(m: &KnnModel, p: &ModelVector, skip: Option<usize>) -> Result<String> {
    let mut dists = Vec::with_capacity(m.train_points.len());
    for (i, q) in m.train_points.iter().enumerate() {
        if Some(i) != skip {
            dists.push((model_distance(p, q)?, i));
        }
    }
    let k = m.k.min(dists.len());
    if k == 0 {
        return Err(Error::data("no training points to vote"));
    }
    dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    // label -> (votes, distance sum)
    let mut votes: BTreeMap<&str, (usize, f64)> = BTreeMap::new();
    for &(d, i) in &dists[..k] {
        let label = m.train_points[i].label.as_deref().unwrap_or_default();
        let e = votes.entry(label).or_default();
        e.0 += 1;
        e.1 += d;
    }
    let best = votes
        .iter()
        .min_by(|(la, (va, sa)), (lb, (vb, sb))| {
            vb.cmp(va)
                .then((sa / *va as f64).total_cmp(&(sb / *vb as f64)))
                .then(la.cmp(lb))
        })
        .map(|(l, _)| l.to_string())
        .expect("at least one vote");
    Ok(best)
}

/// Leave-one-out accuracy of `k`-NN on labeled points.
pub fn leave_one_out_accuracy(points: &[ModelVector], k: usize) -> Result<f64> {
    let m = KnnModel::new(points.to_vec(), k)?;
    if points.len() < 2 {
        return Err(Error::data("leave-one-out needs at least two points"));
    }
    let mut hits = 0;
    for (i, p) in points.iter().enumerate() {
        if classify_excluding(&m, p, Some(i))? == *p.label.as_ref().unwrap() {
            hits += 1;
        }
    }
    Ok(hits as f64 / points.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pt(phi: Vec<f64>, label: &str) -> ModelVector {
        ModelVector {
            phi,
            label: Some(label.into()),
            window_span: (0, 0),
            fingerprint: "fp".into(),
        }
    }

    fn training() -> Vec<ModelVector> {
        vec![
            pt(vec![0.0, 0.0, 0.0], "a"),
            pt(vec![0.1, 0.0, 0.0], "a"),
            pt(vec![0.0, 0.2, 0.0], "a"),
            pt(vec![5.0, 5.0, 0.0], "b"),
            pt(vec![5.1, 5.0, 0.0], "b"),
            pt(vec![-4.0, 0.0, 1.0], "c"),
        ]
    }

    #[test]
    fn exact_match_with_k1() {
        let m = KnnModel::new(training(), 1).unwrap();
        for p in training() {
            assert_eq!(knn_classify(&m, &p).unwrap(), p.label.clone().unwrap());
        }
    }

    #[test]
    fn single_label_training() {
        let pts: Vec<_> = training()
            .into_iter()
            .map(|mut p| {
                p.label = Some("only".into());
                p
            })
            .collect();
        let m = KnnModel::new(pts, 3).unwrap();
        assert_eq!(
            knn_classify(&m, &pt(vec![100.0, -3.0, 2.0], "?")).unwrap(),
            "only"
        );
    }

    #[test]
    fn tie_broken_by_mean_distance_then_label() {
        let m = KnnModel::new(
            vec![pt(vec![1.0, 0.0, 0.0], "b"), pt(vec![-2.0, 0.0, 0.0], "a")],
            2,
        )
        .unwrap();
        // one vote each; "b" is closer
        assert_eq!(
            knn_classify(&m, &pt(vec![0.0, 0.0, 0.0], "?")).unwrap(),
            "b"
        );
        let sym = KnnModel::new(
            vec![pt(vec![1.0, 0.0, 0.0], "b"), pt(vec![-1.0, 0.0, 0.0], "a")],
            2,
        )
        .unwrap();
        assert_eq!(
            knn_classify(&sym, &pt(vec![0.0, 0.0, 0.0], "?")).unwrap(),
            "a"
        );
    }

    #[test]
    fn invalid_models() {
        assert!(KnnModel::new(training(), 0).is_err());
        assert!(KnnModel::new(training(), 7).is_err());
        let mut pts = training();
        pts[0].label = None;
        assert!(KnnModel::new(pts, 1).is_err());
    }

    #[test]
    fn leave_one_out_on_clusters() {
        let acc = leave_one_out_accuracy(&training()[..5], 1).unwrap();
        assert_eq!(acc, 1.0);
    }

    proptest! {
        #[test]
        fn invariant_under_uniform_rescaling(scale in 0.01f64..100.0, q in prop::collection::vec(-6.0f64..6.0, 3), k in 1usize..6) {
            let base = KnnModel::new(training(), k).unwrap();
            let scaled_pts: Vec<_> = training().into_iter().map(|mut p| {
                p.phi.iter_mut().for_each(|v| *v *= scale);
                p
            }).collect();
            let scaled = KnnModel::new(scaled_pts, k).unwrap();
            let query = pt(q.clone(), "?");
            let scaled_query = pt(q.iter().map(|v| v * scale).collect(), "?");
            prop_assert_eq!(knn_classify(&base, &query).unwrap(), knn_classify(&scaled, &scaled_query).unwrap());
        }
    }
}
