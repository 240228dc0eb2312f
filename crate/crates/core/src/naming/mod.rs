//! Naming the `someone` slots of a caption.
//!
//! Slot verbs are matched to the clip's tracks with Kuhn–Munkres on the
//! embedding cost matrix, and every matched track is identified by a K-NN
//! vote over labeled face embeddings of the same movie.

mod kdtree;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use kdtree::{sq_euclidean, KdTree};

use crate::assignment::{solve_assignment, Assignment, CostMatrix};
use crate::dataset::{AnnotationStore, DatasetSplit, FeatureBank};
use crate::embedding::EmbeddingModel;
use crate::error::{Error, Result};

pub const DEFAULT_K: usize = 5;

/// K-NN face classifier over track-level embeddings of one movie.
///
/// Points are kept sorted by `(label, embedding)`, which makes results
/// independent of insertion order: among equidistant neighbours the
/// lexicographically smaller label comes first.
#[derive(Debug, Clone)]
pub struct FaceIndex {
    k: usize,
    labels: Vec<String>,
    points: Vec<Vec<f64>>,
    tree: KdTree,
}

impl FaceIndex {
    pub fn new(mut points: Vec<(Vec<f64>, String)>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("k must be at least 1".into()));
        }
        if points.is_empty() {
            return Err(Error::InvalidArgument(
                "a face index needs at least one labeled track".into(),
            ));
        }
        let dim = points[0].0.len();
        if let Some((p, _)) = points.iter().find(|(p, _)| p.len() != dim) {
            return Err(Error::Dimension {
                expected: dim,
                actual: p.len(),
            });
        }
        points.sort_by(|(pa, la), (pb, lb)| {
            la.cmp(lb).then_with(|| {
                pa.iter()
                    .zip(pb)
                    .map(|(x, y)| x.total_cmp(y))
                    .find(|o| o.is_ne())
                    .unwrap_or(std::cmp::Ordering::Equal)
            })
        });
        let (points, labels): (Vec<Vec<f64>>, Vec<String>) = points.into_iter().unzip();
        let tree = KdTree::new(&points);
        Ok(Self {
            k,
            labels,
            points,
            tree,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.points[0].len()
    }

    /// Nearest `min(k, len)` labels with squared distances, nearest first.
    pub fn neighbors(&self, q: &[f64]) -> Result<Vec<(&str, f64)>> {
        if q.len() != self.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                actual: q.len(),
            });
        }
        Ok(self
            .tree
            .knn(q, self.k.min(self.len()))
            .into_iter()
            .map(|(i, d)| (self.labels[i].as_str(), d))
            .collect())
    }

    /// Majority label among the nearest neighbours. Among labels with equal
    /// votes the one owning the nearest neighbour wins.
    pub fn classify(&self, q: &[f64]) -> Result<&str> {
        let neighbors = self.neighbors(q)?;
        let mut votes: Vec<(&str, usize, usize)> = Vec::new();
        for (rank, (label, _)) in neighbors.iter().enumerate() {
            match votes.iter_mut().find(|(l, _, _)| l == label) {
                Some(v) => v.1 += 1,
                None => votes.push((label, 1, rank)),
            }
        }
        let best = votes
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.2.cmp(&a.2)))
            .expect("index is non-empty");
        Ok(best.0)
    }
}

/// One [`FaceIndex`] per movie.
#[derive(Debug, Clone, Default)]
pub struct FaceIndexSet {
    pub movies: BTreeMap<String, FaceIndex>,
}

impl FaceIndexSet {
    pub fn classify(&self, movie_id: &str, q: &[f64]) -> Result<Option<&str>> {
        match self.movies.get(movie_id) {
            Some(index) => index.classify(q).map(Some),
            None => Ok(None),
        }
    }

    pub fn len(&self) -> usize {
        self.movies.values().map(FaceIndex::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.movies.is_empty()
    }
}

fn index_from_tracks<'a>(
    store: &AnnotationStore,
    features: &FeatureBank,
    track_ids: impl IntoIterator<Item = &'a str>,
    k: usize,
) -> Result<FaceIndexSet> {
    let mut per_movie: BTreeMap<String, Vec<(Vec<f64>, String)>> = BTreeMap::new();
    for id in track_ids {
        let track = store.track(id).ok_or_else(|| Error::NotFound {
            kind: "track",
            id: id.to_owned(),
        })?;
        let Some(name) = track.label.character() else { continue };
        let loc = store.track_location(id).expect("indexed track");
        let emb = features.track_face(id, track.len())?;
        per_movie
            .entry(loc.movie_id.clone())
            .or_default()
            .push((emb, name.to_owned()));
    }
    if per_movie.is_empty() {
        return Err(Error::InvalidArgument(
            "no labeled tracks to build a face index from".into(),
        ));
    }
    let movies = per_movie
        .into_iter()
        .map(|(m, pts)| Ok((m, FaceIndex::new(pts, k)?)))
        .collect::<Result<_>>()?;
    Ok(FaceIndexSet { movies })
}

/// Face index over the character-labeled tracks of the training split.
pub fn build_face_index(
    store: &AnnotationStore,
    split: &DatasetSplit,
    features: &FeatureBank,
    k: usize,
) -> Result<FaceIndexSet> {
    let ids: Vec<&str> = store
        .clips()
        .filter(|(_, c, _)| split.train.contains(*c))
        .flat_map(|(_, _, clip)| clip.tracks.iter().map(|t| t.track_id.as_str()))
        .collect();
    index_from_tracks(store, features, ids, k)
}

#[derive(Debug, Clone)]
pub struct BootstrapIndex {
    pub index: FaceIndexSet,
    /// Tracks used to build the index.
    pub sampled: BTreeSet<String>,
    /// Character-labeled tracks left for evaluation.
    pub held_out: Vec<String>,
}

/// Face index from a seeded uniform sample of `round(fraction * n)` of the
/// `n` character-labeled tracks; the rest are held out.
pub fn bootstrap_face_index(
    store: &AnnotationStore,
    features: &FeatureBank,
    fraction: f64,
    seed: u64,
    k: usize,
) -> Result<BootstrapIndex> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "bootstrap fraction must lie in (0, 1), got {fraction}"
        )));
    }
    let mut labeled: Vec<&str> = store
        .tracks()
        .filter(|t| t.label.character().is_some())
        .map(|t| t.track_id.as_str())
        .collect();
    labeled.sort_unstable();
    let n = (fraction * labeled.len() as f64).round() as usize;
    if n == 0 {
        return Err(Error::InvalidArgument("bootstrap sample is empty".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    labeled.shuffle(&mut rng);
    let sampled: BTreeSet<String> = labeled[..n].iter().map(|s| s.to_string()).collect();
    let mut held_out: Vec<String> = labeled[n..].iter().map(|s| s.to_string()).collect();
    held_out.sort_unstable();
    let index = index_from_tracks(store, features, sampled.iter().map(String::as_str), k)?;
    Ok(BootstrapIndex {
        index,
        sampled,
        held_out,
    })
}

/// Minimum-cost matching of verbs (rows) to tracks (columns). Pairs whose
/// cost exceeds `max_cost` are dropped.
pub fn match_verbs_tracks(
    model: &EmbeddingModel,
    verbs: &[Vec<f64>],
    tracks: &[Vec<f64>],
    max_cost: Option<f64>,
) -> Result<Assignment> {
    let tv: Vec<Vec<f64>> = verbs.iter().map(|v| model.project_textual(v)).collect::<Result<_>>()?;
    let av: Vec<Vec<f64>> = tracks.iter().map(|a| model.project_visual(a)).collect::<Result<_>>()?;
    let cost = CostMatrix::from_fn(tv.len(), av.len(), |i, j| model.pair_cost(&av[j], &tv[i]))?;
    let mut assignment = solve_assignment(&cost);
    if let Some(limit) = max_cost {
        assignment.pairs.retain(|&(i, j)| cost.get(i, j) <= limit);
        assignment.total_cost = assignment.pairs.iter().map(|&(i, j)| cost.get(i, j)).sum();
    }
    Ok(assignment)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotPrediction {
    pub token_index: usize,
    pub verb: String,
    pub track_id: Option<String>,
    pub predicted: Option<String>,
    pub truth: Option<String>,
}

impl SlotPrediction {
    pub fn is_correct(&self) -> bool {
        self.truth.is_some() && self.predicted == self.truth
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipPrediction {
    pub clip_id: String,
    pub movie_id: String,
    pub slots: Vec<SlotPrediction>,
    pub caption_rendered: String,
}

impl ClipPrediction {
    /// Slot index to matched track.
    pub fn verb_to_track(&self) -> BTreeMap<usize, &str> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.track_id.as_deref().map(|t| (i, t)))
            .collect()
    }

    pub fn unmatched_slots(&self) -> Vec<usize> {
        self.slots
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.track_id.is_none().then_some(i))
            .collect()
    }

    /// `{"clip_id", "slots": [{"token_index", "predicted", "truth"}], "caption_rendered"}`.
    pub fn to_json_line(&self) -> String {
        let slots: Vec<serde_json::Value> = self
            .slots
            .iter()
            .map(|s| serde_json::json!({"token_index": s.token_index, "predicted": s.predicted, "truth": s.truth}))
            .collect();
        serde_json::json!({"clip_id": self.clip_id, "slots": slots, "caption_rendered": self.caption_rendered})
            .to_string()
    }
}

pub fn write_predictions(mut w: impl Write, predictions: &[ClipPrediction]) -> Result<()> {
    for p in predictions {
        writeln!(w, "{}", p.to_json_line()).map_err(|e| Error::io("<predictions>", e))?;
    }
    Ok(())
}

/// Inference over a store with a trained model and a face index.
pub struct Namer<'a> {
    pub store: &'a AnnotationStore,
    pub features: &'a FeatureBank,
    pub model: &'a EmbeddingModel,
    pub faces: &'a FaceIndexSet,
    pub max_cost: Option<f64>,
}

impl Namer<'_> {
    /// Names the slots of one clip. Unmatched slots, and matched tracks of a
    /// movie without a face index, keep `someone`.
    pub fn replace_someones(&self, clip_id: &str) -> Result<ClipPrediction> {
        let clip = self.store.clip(clip_id).ok_or_else(|| Error::NotFound {
            kind: "clip",
            id: clip_id.to_owned(),
        })?;
        let movie_id = self.store.movie_of_clip(clip_id).expect("indexed clip");
        let slots = &clip.caption.slots;
        let verbs: Vec<Vec<f64>> = slots
            .iter()
            .map(|s| Ok(self.features.verb(&s.verb)?.iter().map(|&v| v as f64).collect()))
            .collect::<Result<_>>()?;
        let tracks: Vec<Vec<f64>> = clip
            .tracks
            .iter()
            .map(|t| self.features.track_visual_mean(&t.track_id))
            .collect::<Result<_>>()?;
        let assignment = match_verbs_tracks(self.model, &verbs, &tracks, self.max_cost)?;

        let mut out = Vec::with_capacity(slots.len());
        let mut names = HashMap::new();
        for (i, slot) in slots.iter().enumerate() {
            let track = assignment.col_for(i).map(|j| &clip.tracks[j]);
            let predicted = match track {
                Some(t) => {
                    let face = self.features.track_face(&t.track_id, t.len())?;
                    self.faces.classify(movie_id, &face)?.map(str::to_owned)
                }
                None => None,
            };
            if let Some(name) = &predicted {
                names.insert(i, name.clone());
            }
            out.push(SlotPrediction {
                token_index: slot.token_index,
                verb: slot.verb.clone(),
                track_id: track.map(|t| t.track_id.clone()),
                predicted,
                truth: slot.truth.clone(),
            });
        }
        Ok(ClipPrediction {
            clip_id: clip_id.to_owned(),
            movie_id: movie_id.to_owned(),
            slots: out,
            caption_rendered: clip.caption.render(&names),
        })
    }

    /// Predictions for every clip of `clip_ids` that has at least one slot.
    pub fn predict<'c>(&self, clip_ids: impl IntoIterator<Item = &'c str>) -> Result<Vec<ClipPrediction>> {
        let mut out = Vec::new();
        for id in clip_ids {
            let clip = self.store.clip(id).ok_or_else(|| Error::NotFound {
                kind: "clip",
                id: id.to_owned(),
            })?;
            if !clip.caption.slots.is_empty() {
                out.push(self.replace_someones(id)?);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{Affine, Metric};

    fn idx(points: &[(&[f64], &str)], k: usize) -> FaceIndex {
        FaceIndex::new(points.iter().map(|(p, l)| (p.to_vec(), l.to_string())).collect(), k).unwrap()
    }

    #[test]
    fn majority_vote() {
        let index = idx(
            &[
                (&[0.0], "A"),
                (&[0.1], "A"),
                (&[0.2], "A"),
                (&[0.05], "B"),
                (&[0.15], "B"),
                (&[9.0], "C"),
            ],
            5,
        );
        assert_eq!(index.classify(&[0.0]).unwrap(), "A");
    }

    #[test]
    fn tie_goes_to_nearest() {
        let index = idx(
            &[
                (&[1.0], "A"),
                (&[1.1], "A"),
                (&[0.1], "B"),
                (&[1.2], "B"),
                (&[0.5], "C"),
            ],
            5,
        );
        assert_eq!(index.neighbors(&[0.0]).unwrap()[0].0, "B");
        assert_eq!(index.classify(&[0.0]).unwrap(), "B");
    }

    #[test]
    fn single_point_index() {
        let index = idx(&[(&[3.0, 4.0], "X")], 5);
        assert_eq!(index.classify(&[-100.0, 7.0]).unwrap(), "X");
        assert!(index.classify(&[1.0]).is_err());
        assert!(FaceIndex::new(vec![], 5).is_err());
    }

    #[test]
    fn duplicate_embeddings_both_returned() {
        let index = idx(&[(&[1.0, 1.0], "B"), (&[1.0, 1.0], "A"), (&[5.0, 5.0], "C")], 2);
        let labels: Vec<&str> = index
            .neighbors(&[0.0, 0.0])
            .unwrap()
            .into_iter()
            .map(|(l, _)| l)
            .collect();
        assert_eq!(labels, vec!["A", "B"]);
        assert_eq!(index.classify(&[0.0, 0.0]).unwrap(), "A");
    }

    #[test]
    fn insertion_order_does_not_matter() {
        let pts: Vec<(&[f64], &str)> = vec![(&[0.0], "A"), (&[2.0], "B"), (&[1.0], "C"), (&[3.0], "A")];
        let mut rev = pts.clone();
        rev.reverse();
        for q in [0.5, 1.0, 1.5, 2.5] {
            assert_eq!(
                idx(&pts, 2).classify(&[q]).unwrap(),
                idx(&rev, 2).classify(&[q]).unwrap()
            );
        }
    }

    fn copy_model(e: usize) -> EmbeddingModel {
        let mut m = EmbeddingModel::new(e, e, e, Metric::EuclideanSq, false, 0);
        for a in [&mut m.visual, &mut m.textual] {
            *a = Affine::zeros(e, e);
            for i in 0..e {
                a.weight[[i, i]] = 1.0;
            }
        }
        m
    }

    #[test]
    fn verb_track_matching() {
        let m = copy_model(2);
        let one = match_verbs_tracks(&m, &[vec![0.0, 0.0]], &[vec![50.0, 50.0]], None).unwrap();
        assert_eq!(one.pairs, vec![(0, 0)]);
        let none = match_verbs_tracks(&m, &[vec![0.0, 0.0]], &[], None).unwrap();
        assert!(none.pairs.is_empty());
        let verbs = vec![vec![0.0, 0.0], vec![1.0, 0.0]];
        let tracks = vec![vec![1.0, 0.1], vec![0.0, 0.1], vec![5.0, 5.0]];
        let a = match_verbs_tracks(&m, &verbs, &tracks, None).unwrap();
        assert_eq!(a.pairs, vec![(0, 1), (1, 0)]);
        let capped = match_verbs_tracks(&m, &[vec![0.0, 0.0]], &[vec![50.0, 50.0]], Some(1.0)).unwrap();
        assert!(capped.pairs.is_empty());
    }
}
