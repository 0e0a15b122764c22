//! Incremental one-class learning: windows rejected by every known class
//! accumulate in a pool, and coherent groups of a full pool become new
//! classes.

use serde::{Deserialize, Serialize};

use super::ocsvm::{fit_ocsvm, median_gamma, ocsvm_classify, OcsvmModel};
use crate::error::Result;
use crate::model_space::{squared_euclidean, ModelVector};
use crate::segmentation::NORMAL_LABEL;

/// Label of a rejected point that no anomaly class has claimed yet.
pub const PENDING_LABEL: &str = "pending";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementalState {
    pub classifiers: Vec<(String, OcsvmModel)>,
    pub pending_pool: Vec<ModelVector>,
    pub min_pool: usize,
    pub next_label: usize,
    /// Multiplies the median-heuristic gamma of spawned classes.
    #[serde(default = "unit")]
    pub gamma_scale: f64,
}

fn unit() -> f64 {
    1.0
}

impl Default for IncrementalState {
    fn default() -> Self {
        Self::new(15)
    }
}

impl IncrementalState {
    pub fn new(min_pool: usize) -> Self {
        Self {
            classifiers: Vec::new(),
            pending_pool: Vec::new(),
            min_pool: min_pool.max(2),
            next_label: 1,
            gamma_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub label: String,
    /// Decision value of the normal classifier (negative for anomalies).
    pub score: f64,
}

/// A pooled point is deep when its squared distance to the nearest normal
/// support vector is at least this many times the normal spread.
pub const DEPTH_RATIO: f64 = 10.0;

/// Two deep points link when their squared distance is at most this fraction
/// of the smaller of their depths.
pub const LINK_RATIO: f64 = 0.1;

/// Labels `stream` in order. Each point is tried against the normal
/// classifier, then against the anomaly classes in creation order; the first
/// acceptance wins. Points rejected everywhere wait in the pool.
///
/// Deep pooled points (see [`DEPTH_RATIO`]) are linked by [`LINK_RATIO`];
/// connected groups are candidate classes. A group of at least `min_pool`
/// points becomes a class once it has not grown for `min_pool` stream steps,
/// or when the stream ends, so each class trains on a whole anomaly rather
/// than on its leading edge. Shallow pooled points never seed a class.
///
/// Pooled points the new class claims (including earlier points of this
/// stream) take its label: its own training points are claimed unless they
/// are bound support vectors, since margin vectors sit at score 0 only up to
/// solver tolerance; other pooled points need a score ≥ 0.
///
/// `gamma = None` picks the kernel width of each new class by the median
/// heuristic on its training group, times `state.gamma_scale`.
pub fn incremental_diagnose(
    stream: &[ModelVector],
    base: &OcsvmModel,
    state: &mut IncrementalState,
    nu: f64,
    gamma: Option<f64>,
) -> Result<Vec<Assignment>> {
    let mut out = Vec::with_capacity(stream.len());
    let spread = normal_spread(base);
    let patience = state.min_pool;
    let mut pool = Pool::default();
    let deep = |p: &ModelVector| Some(depth(base, &p.phi)).filter(|d| *d >= DEPTH_RATIO * spread);
    for q in &state.pending_pool {
        pool.push(deep(q), &state.pending_pool, None);
    }

    for (t, p) in stream.iter().enumerate() {
        let (normal, score) = ocsvm_classify(base, p)?;
        let mut label = None;
        if normal {
            label = Some(NORMAL_LABEL.to_string());
        } else {
            for (name, clf) in &state.classifiers {
                if ocsvm_classify(clf, p)?.0 {
                    label = Some(name.clone());
                    break;
                }
            }
        }
        out.push(Assignment {
            label: label.clone().unwrap_or_else(|| PENDING_LABEL.to_string()),
            score,
        });
        if label.is_none() {
            state.pending_pool.push(p.clone());
            pool.push(deep(p), &state.pending_pool, Some(t));
        }
        let last = t + 1 == stream.len();
        spawn_ready(state, &mut pool, &mut out, nu, gamma, |newest| {
            last || newest.is_none_or(|n| t - n >= patience)
        })?;
    }
    Ok(out)
}

/// Median pairwise squared distance among the normal support vectors, or the
/// kernel width when there are fewer than two.
fn normal_spread(base: &OcsvmModel) -> f64 {
    let sv = &base.support_vectors;
    let mut d = Vec::new();
    for i in 0..sv.len() {
        for j in i + 1..sv.len() {
            d.push(squared_euclidean(&sv[i], &sv[j]));
        }
    }
    if d.is_empty() {
        return 1.0 / base.gamma;
    }
    d.sort_by(f64::total_cmp);
    d[d.len() / 2]
}

fn depth(base: &OcsvmModel, phi: &[f64]) -> f64 {
    base.support_vectors
        .iter()
        .map(|s| squared_euclidean(s, phi))
        .fold(f64::INFINITY, f64::min)
}

/// Link structure over `state.pending_pool`, kept index-aligned with it.
#[derive(Default)]
struct Pool {
    /// Depth of deep points, None for shallow ones.
    depth: Vec<Option<f64>>,
    links: Vec<Vec<usize>>,
    /// Stream index, None for points carried over from earlier calls.
    index: Vec<Option<usize>>,
}

impl Pool {
    /// Registers the last point of `points`.
    fn push(&mut self, depth: Option<f64>, points: &[ModelVector], index: Option<usize>) {
        let new = self.depth.len();
        let mut mine = Vec::new();
        if let Some(dn) = depth {
            for (j, dj) in self.depth.iter().enumerate() {
                let Some(dj) = *dj else { continue };
                if squared_euclidean(&points[new].phi, &points[j].phi) <= LINK_RATIO * dn.min(dj) {
                    mine.push(j);
                    self.links[j].push(new);
                }
            }
        }
        self.depth.push(depth);
        self.links.push(mine);
        self.index.push(index);
    }

    /// Connected groups of deep points, ordered by smallest member.
    fn groups(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.depth.len()];
        let mut groups = Vec::new();
        for s in 0..self.depth.len() {
            if seen[s] || self.depth[s].is_none() {
                continue;
            }
            seen[s] = true;
            let mut group = vec![s];
            let mut k = 0;
            while k < group.len() {
                for &j in &self.links[group[k]] {
                    if !seen[j] {
                        seen[j] = true;
                        group.push(j);
                    }
                }
                k += 1;
            }
            group.sort_unstable();
            groups.push(group);
        }
        groups
    }

    /// Keeps the entries where `keep` is true, renumbering links.
    fn retain(&mut self, keep: &[bool]) {
        let mut map = vec![None; keep.len()];
        let mut n = 0;
        for (i, &k) in keep.iter().enumerate() {
            if k {
                map[i] = Some(n);
                n += 1;
            }
        }
        let mut links = Vec::with_capacity(n);
        let mut depth = Vec::with_capacity(n);
        let mut index = Vec::with_capacity(n);
        for (i, _) in keep.iter().enumerate().filter(|(_, k)| **k) {
            links.push(self.links[i].iter().filter_map(|&j| map[j]).collect());
            depth.push(self.depth[i]);
            index.push(self.index[i]);
        }
        self.links = links;
        self.depth = depth;
        self.index = index;
    }
}

/// Turns every complete group of at least `min_pool` points into a class.
/// `complete` receives the stream index of the group's newest member.
fn spawn_ready(
    state: &mut IncrementalState,
    pool: &mut Pool,
    out: &mut [Assignment],
    nu: f64,
    gamma: Option<f64>,
    complete: impl Fn(Option<usize>) -> bool,
) -> Result<()> {
    if pool.depth.iter().flatten().count() < state.min_pool {
        return Ok(());
    }
    let ready: Vec<Vec<usize>> = pool
        .groups()
        .into_iter()
        .filter(|g| g.len() >= state.min_pool)
        .filter(|g| complete(g.iter().filter_map(|&i| pool.index[i]).max()))
        .collect();
    if ready.is_empty() {
        return Ok(());
    }
    let points = &state.pending_pool;
    let mut claimed_by: Vec<Option<usize>> = vec![None; points.len()];
    for group in ready {
        let members: Vec<ModelVector> = group.iter().map(|&i| points[i].clone()).collect();
        let g = gamma.unwrap_or_else(|| state.gamma_scale * median_gamma(&members));
        let (clf, sol) = fit_ocsvm(&members, nu, g)?;
        let bound = 1.0 / (nu * members.len() as f64);
        let class = state.classifiers.len();
        for (&i, a) in group.iter().zip(&sol.alphas) {
            if claimed_by[i].is_none() && *a < bound * (1.0 - 1e-9) {
                claimed_by[i] = Some(class);
            }
        }
        for (i, q) in points.iter().enumerate() {
            if claimed_by[i].is_none() && !group.contains(&i) && ocsvm_classify(&clf, q)?.0 {
                claimed_by[i] = Some(class);
            }
        }
        let label = format!("anomaly_{}", state.next_label);
        state.next_label += 1;
        state.classifiers.push((label, clf));
    }
    for (i, c) in claimed_by.iter().enumerate() {
        if let (Some(c), Some(t)) = (c, pool.index[i]) {
            out[t].label = state.classifiers[*c].0.clone();
        }
    }
    let keep: Vec<bool> = claimed_by.iter().map(Option::is_none).collect();
    let mut k = keep.iter();
    state.pending_pool.retain(|_| *k.next().unwrap());
    pool.retain(&keep);
    log::info!(
        "{} anomaly classes; {} points remain pending",
        state.classifiers.len(),
        state.pending_pool.len()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detectors::train_ocsvm;
    use rand::Rng;
    use rand_distr::Distribution;

    fn pt(phi: Vec<f64>) -> ModelVector {
        ModelVector {
            phi,
            label: None,
            window_span: (0, 0),
            fingerprint: "fp".into(),
        }
    }

    fn cluster(center: &[f64], n: usize, spread: f64, seed: u64) -> Vec<ModelVector> {
        let mut rng = crate::rng::seeded(seed);
        (0..n)
            .map(|_| {
                pt(center
                    .iter()
                    .map(|c| c + spread * (rng.random::<f64>() - 0.5))
                    .collect())
            })
            .collect()
    }

    fn base() -> OcsvmModel {
        let normal = cluster(&[0.0, 0.0, 0.0], 30, 0.2, 1);
        train_ocsvm(&normal, 0.05, median_gamma(&normal)).unwrap()
    }

    #[test]
    fn all_normal_stream_leaves_state_alone() {
        let b = base();
        let stream: Vec<ModelVector> = cluster(&[0.0, 0.0, 0.0], 10, 0.02, 9);
        let mut state = IncrementalState::new(15);
        let before = state.clone();
        let out = incremental_diagnose(&stream, &b, &mut state, 0.05, None).unwrap();
        assert!(out.iter().all(|a| a.label == NORMAL_LABEL));
        assert_eq!(state, before);
    }

    #[test]
    fn full_pool_spawns_one_class() {
        let b = base();
        let stream = cluster(&[5.0, 5.0, 5.0], 15, 1e-3, 2);
        let mut state = IncrementalState::new(15);
        let out = incremental_diagnose(&stream, &b, &mut state, 0.05, None).unwrap();
        assert_eq!(state.classifiers.len(), 1);
        assert!(out.iter().all(|a| a.label == "anomaly_1"));
        assert!(state.pending_pool.is_empty());
    }

    #[test]
    fn short_pool_stays_pending() {
        let b = base();
        let stream = cluster(&[5.0, 5.0, 5.0], 14, 1e-3, 2);
        let mut state = IncrementalState::new(15);
        let out = incremental_diagnose(&stream, &b, &mut state, 0.05, None).unwrap();
        assert!(state.classifiers.is_empty());
        assert_eq!(state.pending_pool.len(), 14);
        assert!(out
            .iter()
            .all(|a| a.label == PENDING_LABEL && a.score < 0.0));
    }

    #[test]
    fn two_clusters_two_classes() {
        let gauss = |shift: f64, n: usize, seed: u64| -> Vec<ModelVector> {
            let mut rng = crate::rng::seeded(seed);
            let normal = rand_distr::Normal::new(0.0, 0.3).unwrap();
            (0..n)
                .map(|_| {
                    pt((0..3)
                        .map(|k| normal.sample(&mut rng) + if k == 0 { shift } else { 0.0 })
                        .collect())
                })
                .collect()
        };
        let normal = gauss(0.0, 30, 1);
        let b = train_ocsvm(&normal, 0.05, median_gamma(&normal)).unwrap();
        let a = gauss(8.0, 20, 3);
        let c = gauss(-8.0, 20, 4);
        let mut stream = Vec::new();
        for (x, y) in a.iter().zip(&c) {
            stream.push(x.clone());
            stream.push(y.clone());
        }
        let mut state = IncrementalState::new(15);
        let out = incremental_diagnose(&stream, &b, &mut state, 0.05, None).unwrap();
        assert_eq!(state.classifiers.len(), 2);
        let own = |parity: usize, label: &str| {
            out.iter()
                .enumerate()
                .filter(|(i, a)| i % 2 == parity && a.label == label)
                .count()
        };
        let (a_label, c_label) = (&out[0].label, &out[1].label);
        assert_ne!(a_label, c_label);
        // the first 15 of each cluster train its class; i.i.d. stragglers
        // outside that small support may stay pending, never cross over
        assert!(own(0, a_label) >= 15 && own(0, c_label) == 0);
        assert!(own(1, c_label) >= 15 && own(1, a_label) == 0);
    }

    #[test]
    fn shallow_rejections_never_spawn() {
        let b = base();
        // just outside the normal support, far below the depth threshold
        let stream = cluster(&[0.2, 0.0, 0.0], 40, 0.02, 6);
        let mut state = IncrementalState::new(15);
        let out = incremental_diagnose(&stream, &b, &mut state, 0.05, None).unwrap();
        assert!(state.classifiers.is_empty());
        assert!(out.iter().all(|a| a.label != "anomaly_1"));
    }

    #[test]
    fn class_waits_for_group_to_stop_growing() {
        let b = base();
        let mut stream = cluster(&[5.0, 5.0, 5.0], 20, 1e-3, 2);
        stream.extend(cluster(&[0.0, 0.0, 0.0], 14, 0.02, 9));
        stream.extend(cluster(&[5.0, 5.0, 5.0], 5, 1e-3, 3));
        let mut state = IncrementalState::new(15);
        let out = incremental_diagnose(&stream, &b, &mut state, 0.05, None).unwrap();
        // 14 quiet steps are too few, so all 25 points train one class
        assert_eq!(state.classifiers.len(), 1);
        assert_eq!(state.classifiers[0].1.n_train, 25);
        assert_eq!(out.iter().filter(|a| a.label == "anomaly_1").count(), 25);
    }

    #[test]
    fn linked_groups_follow_depth_scaled_distances() {
        let b = base();
        let mut pts = cluster(&[5.0, 0.0, 0.0], 15, 0.1, 7);
        pts.extend(cluster(&[0.0, 5.0, 0.0], 15, 0.1, 8));
        let mut pool = Pool::default();
        for i in 0..pts.len() {
            pool.push(Some(depth(&b, &pts[i].phi)), &pts[..=i], Some(i));
        }
        assert_eq!(
            pool.groups(),
            vec![(0..15).collect::<Vec<_>>(), (15..30).collect()]
        );
        let mut keep = vec![true; 30];
        keep[0] = false;
        pool.retain(&keep);
        assert_eq!(
            pool.groups(),
            vec![(0..14).collect::<Vec<_>>(), (14..29).collect()]
        );
    }

    #[test]
    fn deterministic() {
        let b = base();
        let stream = cluster(&[4.0, 4.0, 0.0], 30, 0.8, 5);
        let run = || {
            let mut s = IncrementalState::new(15);
            let out = incremental_diagnose(&stream, &b, &mut s, 0.05, None).unwrap();
            (out, s)
        };
        assert_eq!(run(), run());
    }
}
