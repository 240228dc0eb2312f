//! Ward agglomerative clustering of face tracks.
//!
//! Each track is represented by the mean of its per-frame face embeddings.
//! Merge heights are the increase in total within-cluster sum of squares,
//! maintained with the Lance–Williams recurrence. Leaves are numbered
//! `0..n` and the cluster created by merge `i` is node `n + i`.

use serde::{Deserialize, Serialize};

use crate::dataset::{AnnotationStore, FeatureBank};
use crate::error::{Error, Result};

/// Tracks whose mean face side is below this are not clustered.
pub const MIN_CLUSTER_FACE_SIDE: f64 = 28.0;

pub fn mean_track_embedding(frames: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidArgument("cannot average an empty list of embeddings".into()))?;
    let dim = first.len();
    let mut acc = vec![0.0; dim];
    for f in frames {
        if f.len() != dim {
            return Err(Error::Dimension {
                expected: dim,
                actual: f.len(),
            });
        }
        for (a, v) in acc.iter_mut().zip(f) {
            *a += v;
        }
    }
    let n = frames.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Merge {
    pub left: usize,
    pub right: usize,
    pub height: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dendrogram {
    pub leaves: Vec<String>,
    pub merges: Vec<Merge>,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Ward merge sequence over `points`. Among pairs at the minimal height
/// (within rounding) the smallest `(left, right)` node pair is merged.
pub fn ward_cluster(points: &[Vec<f64>]) -> Result<Vec<Merge>> {
    let n = points.len();
    if let Some(p) = points.iter().find(|p| p.len() != points[0].len()) {
        return Err(Error::Dimension {
            expected: points[0].len(),
            actual: p.len(),
        });
    }
    if n < 2 {
        return Ok(Vec::new());
    }
    // Slot `s` holds node `node[s]`; distances between active slots.
    let mut node: Vec<usize> = (0..n).collect();
    let mut size = vec![1usize; n];
    let mut active = vec![true; n];
    let mut d = vec![0.0f64; n * n];
    let mut scale = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * sq_dist(&points[i], &points[j]);
            d[i * n + j] = v;
            d[j * n + i] = v;
            scale = scale.max(v);
        }
    }
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);

    let mut merges = Vec::with_capacity(n - 1);
    for step in 0..n - 1 {
        let mut best: Option<(f64, (usize, usize), usize, usize)> = None;
        for i in 0..n {
            if !active[i] {
                continue;
            }
            for j in i + 1..n {
                if !active[j] {
                    continue;
                }
                let h = d[i * n + j];
                let ids = (node[i].min(node[j]), node[i].max(node[j]));
                let better = match best {
                    None => true,
                    Some((bh, bids, _, _)) => h < bh - tol || (h <= bh + tol && ids < bids),
                };
                if better {
                    best = Some((h, ids, i, j));
                }
            }
        }
        let (h, (left, right), i, j) = best.expect("two active clusters remain");
        let (ni, nj) = (size[i] as f64, size[j] as f64);
        for k in 0..n {
            if !active[k] || k == i || k == j {
                continue;
            }
            let nk = size[k] as f64;
            let v = ((nk + ni) * d[k * n + i] + (nk + nj) * d[k * n + j] - nk * h) / (nk + ni + nj);
            d[k * n + i] = v;
            d[i * n + k] = v;
        }
        active[j] = false;
        size[i] += size[j];
        node[i] = n + step;
        merges.push(Merge {
            left,
            right,
            height: h.max(0.0),
            size: size[i],
        });
    }
    Ok(merges)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CutCriterion {
    /// Apply every merge whose height is at most this value.
    Height(f64),
    /// Stop when exactly this many clusters remain.
    K(usize),
}

/// Default number of clusters for a movie with `characters` characters.
pub fn default_cluster_count(characters: usize) -> usize {
    (characters * 3).div_ceil(2).max(1)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterStatus {
    Proposed,
    Verified,
    RejectedWrong,
    RejectedUnknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub cluster_id: String,
    pub track_ids: Vec<String>,
    pub status: ClusterStatus,
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ClusterSet {
    pub clusters: Vec<Cluster>,
}

impl ClusterSet {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(Error::from_json)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("cluster set serializes");
        s.push('\n');
        s
    }

    pub fn get(&self, cluster_id: &str) -> Option<&Cluster> {
        self.clusters.iter().find(|c| c.cluster_id == cluster_id)
    }
}

/// Flat partition of the leaves, as index lists ordered by their smallest
/// leaf.
pub fn cut_partition(leaves: usize, merges: &[Merge], criterion: CutCriterion) -> Result<Vec<Vec<usize>>> {
    let applied = match criterion {
        CutCriterion::K(k) => {
            if k < 1 || k > leaves {
                return Err(Error::InvalidArgument(format!(
                    "cannot cut {leaves} leaves into {k} clusters"
                )));
            }
            leaves - k
        }
        CutCriterion::Height(h) => merges.iter().take_while(|m| m.height <= h).count(),
    };
    let mut members: Vec<Vec<usize>> = (0..leaves).map(|i| vec![i]).collect();
    let mut alive = vec![true; leaves + merges.len()];
    for m in &merges[..applied] {
        let mut joined = std::mem::take(&mut members[m.left]);
        joined.append(&mut std::mem::take(&mut members[m.right]));
        alive[m.left] = false;
        alive[m.right] = false;
        members.push(joined);
    }
    members.truncate(leaves + applied);
    let mut out: Vec<Vec<usize>> = members
        .into_iter()
        .zip(alive)
        .filter_map(|(m, a)| a.then_some(m))
        .map(|mut m| {
            m.sort_unstable();
            m
        })
        .collect();
    out.sort_by_key(|m| m[0]);
    Ok(out)
}

/// Flat clusters of a dendrogram, all `proposed`, with ids `{prefix}-{k}`.
pub fn cut(d: &Dendrogram, criterion: CutCriterion, prefix: &str) -> Result<ClusterSet> {
    let parts = cut_partition(d.leaves.len(), &d.merges, criterion)?;
    Ok(ClusterSet {
        clusters: parts
            .into_iter()
            .enumerate()
            .map(|(k, idx)| Cluster {
                cluster_id: format!("{prefix}-{k}"),
                track_ids: idx.into_iter().map(|i| d.leaves[i].clone()).collect(),
                status: ClusterStatus::Proposed,
                label: None,
            })
            .collect(),
    })
}

/// Clusters the tracks of one movie by mean face embedding. Tracks with a
/// face side below [`MIN_CLUSTER_FACE_SIDE`] are left out. Without a
/// criterion the movie is cut into [`default_cluster_count`] clusters (capped
/// at the number of tracks).
pub fn cluster_movie(
    store: &AnnotationStore,
    features: &FeatureBank,
    movie_id: &str,
    criterion: Option<CutCriterion>,
) -> Result<(Dendrogram, ClusterSet)> {
    let movie = store.movie(movie_id).ok_or_else(|| Error::NotFound {
        kind: "movie",
        id: movie_id.to_owned(),
    })?;
    let mut leaves = Vec::new();
    let mut points = Vec::new();
    for clip in movie.clips.values() {
        for track in &clip.tracks {
            if track.face_side() < MIN_CLUSTER_FACE_SIDE {
                continue;
            }
            points.push(features.track_face(&track.track_id, track.len())?);
            leaves.push(track.track_id.clone());
        }
    }
    let merges = ward_cluster(&points)?;
    let dendrogram = Dendrogram { leaves, merges };
    if dendrogram.leaves.is_empty() {
        return Ok((dendrogram, ClusterSet::default()));
    }
    let criterion = criterion
        .unwrap_or_else(|| CutCriterion::K(default_cluster_count(movie.characters.len()).min(dendrogram.leaves.len())));
    let set = cut(&dendrogram, criterion, movie_id)?;
    Ok((dendrogram, set))
}
