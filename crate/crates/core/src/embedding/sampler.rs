//! Training pairs and the quadruples built around them.
//!
//! A training pair is a caption slot's verb together with a track of the same
//! clip labeled with the slot's character. For each pair the sampler picks a
//! different verb `b⁻`, another track of the same verb `a⁺`, a track of a
//! different verb `a⁻` and a `wrong` track `a^w`. Within-clip sampling looks
//! in the pair's clip first, then in its movie, then in the whole training
//! split; dataset-wide sampling draws from the whole training split directly.

use std::collections::{BTreeMap, HashMap};

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{AnnotationStore, DatasetSplit, FeatureBank, TrackLabel};
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingStrategy {
    #[default]
    WithinClip,
    DatasetWide,
}

impl std::str::FromStr for SamplingStrategy {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "within_clip" | "clip" => Ok(SamplingStrategy::WithinClip),
            "dataset_wide" | "dataset" => Ok(SamplingStrategy::DatasetWide),
            other => Err(crate::Error::InvalidArgument(format!(
                "unknown sampling strategy {other:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrainingPair {
    pub movie_id: String,
    pub clip_id: String,
    pub track_id: String,
    pub verb: String,
}

/// Feature vectors for one training item. Optional members are absent when no
/// candidate exists anywhere in the training split.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingQuadruple {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub b_neg: Option<Vec<f64>>,
    pub a_pos: Option<Vec<f64>>,
    pub a_neg: Option<Vec<f64>>,
    pub a_wrong: Option<Vec<f64>>,
}

/// Identities chosen for one training item.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuadrupleIds {
    pub pair: usize,
    pub b_neg: Option<String>,
    pub a_pos: Option<String>,
    pub a_neg: Option<String>,
    pub a_wrong: Option<String>,
}

/// Verb–track pairs of the training split, skipping tracks whose face side is
/// below `min_face_side`.
pub fn training_pairs(store: &AnnotationStore, split: &DatasetSplit, min_face_side: f64) -> Vec<TrainingPair> {
    let mut out = Vec::new();
    for (movie_id, clip_id, clip) in store.clips() {
        if !split.train.contains(clip_id) {
            continue;
        }
        for slot in &clip.caption.slots {
            let Some(truth) = slot.truth.as_deref() else { continue };
            for track in &clip.tracks {
                if track.label.character() == Some(truth) && track.face_side() >= min_face_side {
                    out.push(TrainingPair {
                        movie_id: movie_id.to_owned(),
                        clip_id: clip_id.to_owned(),
                        track_id: track.track_id.clone(),
                        verb: slot.verb.clone(),
                    });
                }
            }
        }
    }
    out
}

/// Candidate lists at clip, movie and dataset level.
#[derive(Default)]
struct Pools {
    clip: HashMap<usize, Vec<usize>>,
    movie: HashMap<usize, Vec<usize>>,
    all: Vec<usize>,
}

impl Pools {
    fn add(&mut self, clip: usize, movie: usize, item: usize) {
        self.clip.entry(clip).or_default().push(item);
        self.movie.entry(movie).or_default().push(item);
        self.all.push(item);
    }

    fn levels(&self, clip: usize, movie: usize, strategy: SamplingStrategy) -> Vec<&[usize]> {
        match strategy {
            SamplingStrategy::WithinClip => vec![
                self.clip.get(&clip).map_or(&[][..], Vec::as_slice),
                self.movie.get(&movie).map_or(&[][..], Vec::as_slice),
                &self.all,
            ],
            SamplingStrategy::DatasetWide => vec![&self.all],
        }
    }
}

/// Uniform choice among the members of the first level that has any member
/// satisfying `ok`.
fn pick(rng: &mut impl Rng, levels: &[&[usize]], ok: impl Fn(usize) -> bool) -> Option<usize> {
    for list in levels {
        if list.is_empty() {
            continue;
        }
        for _ in 0..8 {
            let c = list[rng.random_range(0..list.len())];
            if ok(c) {
                return Some(c);
            }
        }
        let matching: Vec<usize> = list.iter().copied().filter(|&c| ok(c)).collect();
        if let Some(&c) = matching.choose(rng) {
            return Some(c);
        }
    }
    None
}

pub struct QuadrupleSampler {
    pairs: Vec<TrainingPair>,
    pair_clip: Vec<usize>,
    pair_movie: Vec<usize>,
    pair_verb: Vec<usize>,
    verbs: Vec<String>,
    /// Slot verb occurrences.
    verb_pool: Pools,
    pair_pool: Pools,
    wrong_tracks: Vec<String>,
    wrong_pool: Pools,
    strategy: SamplingStrategy,
}

impl QuadrupleSampler {
    pub fn new(store: &AnnotationStore, split: &DatasetSplit, min_face_side: f64, strategy: SamplingStrategy) -> Self {
        let pairs = training_pairs(store, split, min_face_side);
        let mut clip_ids: BTreeMap<&str, usize> = BTreeMap::new();
        let mut movie_ids: BTreeMap<&str, usize> = BTreeMap::new();
        let mut verb_ids: BTreeMap<String, usize> = BTreeMap::new();
        let mut verbs = Vec::new();
        let mut verb_id = |v: &str, verbs: &mut Vec<String>| -> usize {
            *verb_ids.entry(v.to_owned()).or_insert_with(|| {
                verbs.push(v.to_owned());
                verbs.len() - 1
            })
        };
        let mut verb_pool = Pools::default();
        let mut wrong_pool = Pools::default();
        let mut wrong_tracks = Vec::new();
        for (movie_id, clip_id, clip) in store.clips() {
            if !split.train.contains(clip_id) {
                continue;
            }
            let n = clip_ids.len();
            let c = *clip_ids.entry(clip_id).or_insert(n);
            let n = movie_ids.len();
            let m = *movie_ids.entry(movie_id).or_insert(n);
            for slot in &clip.caption.slots {
                let v = verb_id(&slot.verb, &mut verbs);
                verb_pool.add(c, m, v);
            }
            for track in &clip.tracks {
                if track.label == TrackLabel::Wrong && track.face_side() >= min_face_side {
                    wrong_tracks.push(track.track_id.clone());
                    wrong_pool.add(c, m, wrong_tracks.len() - 1);
                }
            }
        }
        let mut pair_pool = Pools::default();
        let mut pair_clip = Vec::with_capacity(pairs.len());
        let mut pair_movie = Vec::with_capacity(pairs.len());
        let mut pair_verb = Vec::with_capacity(pairs.len());
        for (i, p) in pairs.iter().enumerate() {
            let (c, m) = (clip_ids[p.clip_id.as_str()], movie_ids[p.movie_id.as_str()]);
            pair_clip.push(c);
            pair_movie.push(m);
            pair_verb.push(verb_id(&p.verb, &mut verbs));
            pair_pool.add(c, m, i);
        }
        Self {
            pairs,
            pair_clip,
            pair_movie,
            pair_verb,
            verbs,
            verb_pool,
            pair_pool,
            wrong_tracks,
            wrong_pool,
            strategy,
        }
    }

    pub fn pairs(&self) -> &[TrainingPair] {
        &self.pairs
    }

    pub fn strategy(&self) -> SamplingStrategy {
        self.strategy
    }

    /// Draws the companions of pair `i`.
    pub fn sample_ids(&self, i: usize, rng: &mut impl Rng) -> QuadrupleIds {
        let (clip, movie, verb) = (self.pair_clip[i], self.pair_movie[i], self.pair_verb[i]);
        let track = &self.pairs[i].track_id;
        let b_neg = pick(rng, &self.verb_pool.levels(clip, movie, self.strategy), |v| v != verb);
        let pair_levels = self.pair_pool.levels(clip, movie, self.strategy);
        let a_pos = pick(rng, &pair_levels, |j| {
            self.pair_verb[j] == verb && self.pairs[j].track_id != *track
        });
        let a_neg = pick(rng, &pair_levels, |j| {
            self.pair_verb[j] != verb && self.pairs[j].track_id != *track
        });
        let a_wrong = pick(rng, &self.wrong_pool.levels(clip, movie, self.strategy), |_| true);
        QuadrupleIds {
            pair: i,
            b_neg: b_neg.map(|v| self.verbs[v].clone()),
            a_pos: a_pos.map(|j| self.pairs[j].track_id.clone()),
            a_neg: a_neg.map(|j| self.pairs[j].track_id.clone()),
            a_wrong: a_wrong.map(|w| self.wrong_tracks[w].clone()),
        }
    }

    /// Draws pair `i`'s quadruple with a random sub-window feature per track.
    pub fn sample(&self, i: usize, features: &FeatureBank, rng: &mut impl Rng) -> Result<TrainingQuadruple> {
        let ids = self.sample_ids(i, rng);
        let pair = &self.pairs[i];
        let mut window = |track: &str| -> Result<Vec<f64>> {
            let windows = features.track_windows(track)?;
            let w = windows[rng.random_range(0..windows.len())];
            Ok(w.iter().map(|&v| v as f64).collect())
        };
        let verb = |v: &str| -> Result<Vec<f64>> { Ok(features.verb(v)?.iter().map(|&x| x as f64).collect()) };
        Ok(TrainingQuadruple {
            a: window(&pair.track_id)?,
            b: verb(&pair.verb)?,
            b_neg: ids.b_neg.as_deref().map(verb).transpose()?,
            a_pos: ids.a_pos.as_deref().map(&mut window).transpose()?,
            a_neg: ids.a_neg.as_deref().map(&mut window).transpose()?,
            a_wrong: ids.a_wrong.as_deref().map(&mut window).transpose()?,
        })
    }
}
