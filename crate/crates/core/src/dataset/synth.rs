//! Synthetic datasets with Gaussian feature clusters.
//!
//! Verbs own a textual center and a visual action center; characters own a
//! face center. Every feature vector is its center plus isotropic noise, so the
//! ratio `sigma_between / sigma_within` controls how separable the classes are.
//! Verb centers are drawn from `world_seed` alone: two datasets generated with
//! the same world seed but different seeds share the verb vocabulary and its
//! features while having disjoint movies and characters.

use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::features::{face_frame_id, visual_window_id, FeatureBank, FeatureTable};
use super::{AnnotationStore, BoundingBox, Caption, Character, Clip, FaceTrack, Movie, Provenance, Slot, TrackLabel};
use crate::embedding::subwindow_count;
use crate::error::{Error, Result};

const NAMES: [&str; 26] = [
    "Ava", "Ben", "Cora", "Dev", "Eli", "Faye", "Gus", "Hana", "Ivo", "Jade", "Kai", "Lena", "Milo", "Nora", "Otto",
    "Pia", "Quin", "Rosa", "Sam", "Tess", "Uma", "Vik", "Wren", "Xan", "Yara", "Zeke",
];

const VERBS: [&str; 30] = [
    "look", "walk", "run", "turn", "smile", "sit", "stand", "open", "grab", "nod", "stare", "kiss", "hold", "push",
    "enter", "leave", "climb", "drive", "shake", "watch", "glance", "step", "pull", "reach", "wave", "jump", "eat",
    "drink", "read", "write",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub movies: usize,
    pub characters_per_movie: usize,
    pub clips_per_movie: usize,
    pub verbs: usize,
    /// Per-coordinate standard deviation of class centers. Training with the
    /// default optimizer settings is stable when feature norms stay
    /// in the tens; much larger values make the first updates overshoot and
    /// much smaller ones starve the binary head.
    pub sigma_between: f64,
    /// Per-coordinate standard deviation of samples around their center.
    pub sigma_within: f64,
    pub visual_dim: usize,
    pub face_dim: usize,
    pub verb_dim: usize,
    /// Fraction of clips mentioning two or more characters.
    pub multi_mention_fraction: f64,
    pub max_mentions: usize,
    /// Probability that a mentioned character has a second track for its verb.
    pub second_track_prob: f64,
    pub wrong_track_prob: f64,
    pub unknown_track_prob: f64,
    /// Probability of an unmentioned movie character appearing in a clip.
    pub bystander_prob: f64,
    /// Per-coordinate standard deviation of an offset shared by all visual
    /// features of a clip.
    pub clip_offset: f64,
    /// Number of verb families; 0 disables them. Verbs of one family share a
    /// textual and a visual center, and every caption draws its verbs from a
    /// single family, so the verbs of a clip are near each other.
    pub verb_families: usize,
    /// Spread of verb centers around their family center, relative to
    /// `sigma_between`.
    pub family_spread: f64,
    pub min_track_len: usize,
    pub max_track_len: usize,
    pub min_face_side: f64,
    pub max_face_side: f64,
    /// Prefix of generated movie ids.
    pub movie_prefix: String,
    /// Seed of the verb vocabulary features.
    pub world_seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            movies: 2,
            characters_per_movie: 4,
            clips_per_movie: 250,
            verbs: 20,
            sigma_between: 0.5,
            sigma_within: 0.05,
            visual_dim: 4096,
            face_dim: 128,
            verb_dim: 300,
            multi_mention_fraction: 0.4,
            max_mentions: 3,
            second_track_prob: 0.15,
            wrong_track_prob: 0.3,
            unknown_track_prob: 0.15,
            bystander_prob: 0.1,
            clip_offset: 0.0,
            verb_families: 0,
            family_spread: 0.3,
            min_track_len: 8,
            max_track_len: 40,
            min_face_side: 32.0,
            max_face_side: 120.0,
            movie_prefix: "m".into(),
            world_seed: 0,
        }
    }
}

impl SynthSpec {
    /// Small feature dimensions for fast tests.
    pub fn tiny() -> Self {
        Self {
            movies: 1,
            characters_per_movie: 3,
            clips_per_movie: 12,
            verbs: 6,
            visual_dim: 16,
            face_dim: 8,
            verb_dim: 8,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let counts = [
            ("movies", self.movies),
            ("characters_per_movie", self.characters_per_movie),
            ("clips_per_movie", self.clips_per_movie),
            ("verbs", self.verbs),
            ("visual_dim", self.visual_dim),
            ("face_dim", self.face_dim),
            ("verb_dim", self.verb_dim),
            ("max_mentions", self.max_mentions),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be positive")));
        }
        if !(self.sigma_between > 0.0 && self.sigma_within >= 0.0 && self.clip_offset >= 0.0) {
            return Err(Error::InvalidArgument(
                "sigma_between must be positive, sigma_within and clip_offset non-negative".into(),
            ));
        }
        if self.verb_families > self.verbs || self.family_spread.is_nan() || self.family_spread < 0.0 {
            return Err(Error::InvalidArgument(
                "verb_families must not exceed verbs and family_spread must be non-negative".into(),
            ));
        }
        if self.min_track_len < super::MIN_TRACK_LEN || self.max_track_len < self.min_track_len {
            return Err(Error::InvalidArgument(format!(
                "track lengths must satisfy {} <= min <= max",
                super::MIN_TRACK_LEN
            )));
        }
        if !(self.min_face_side > 0.0 && self.max_face_side >= self.min_face_side) {
            return Err(Error::InvalidArgument("face sides must satisfy 0 < min <= max".into()));
        }
        let probs = [
            self.multi_mention_fraction,
            self.second_track_prob,
            self.wrong_track_prob,
            self.unknown_track_prob,
            self.bystander_prob,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::InvalidArgument("probabilities must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub store: AnnotationStore,
    pub features: FeatureBank,
}

fn gaussian(rng: &mut ChaCha8Rng, dim: usize, sigma: f64) -> Vec<f64> {
    (0..dim).map(|_| sigma * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn noisy(rng: &mut ChaCha8Rng, center: &[f64], offset: Option<&[f64]>, sigma: f64) -> Vec<f32> {
    center
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let o = offset.map_or(0.0, |o| o[i]);
            (c + o + sigma * rng.sample::<f64, _>(StandardNormal)) as f32
        })
        .collect()
}

pub fn verb_name(i: usize) -> String {
    match VERBS.get(i) {
        Some(v) => (*v).to_owned(),
        None => format!("verb{i}"),
    }
}

fn character_name(i: usize) -> String {
    let base = NAMES[i % NAMES.len()];
    match i / NAMES.len() {
        0 => base.to_owned(),
        k => format!("{base} {k}"),
    }
}

struct TrackPlan {
    label: TrackLabel,
    /// Visual action center index (`None` for false-positive tracks).
    verb: Option<usize>,
    face: FaceSource,
}

enum FaceSource {
    Character(usize),
    Random,
}

/// Generates a store and its features; identical inputs give identical output.
pub fn generate_synthetic(spec: &SynthSpec, seed: u64) -> Result<SynthOutput> {
    spec.validate()?;
    let mut world = ChaCha8Rng::seed_from_u64(spec.world_seed ^ 0x5e_ed0f_f00d);
    let mut verb_text: Vec<Vec<f64>> = (0..spec.verbs)
        .map(|_| gaussian(&mut world, spec.verb_dim, spec.sigma_between))
        .collect();
    let mut verb_visual: Vec<Vec<f64>> = (0..spec.verbs)
        .map(|_| gaussian(&mut world, spec.visual_dim, spec.sigma_between))
        .collect();
    let wrong_visual = gaussian(&mut world, spec.visual_dim, spec.sigma_between);
    let family_of = |v: usize| v % spec.verb_families.max(1);
    if spec.verb_families > 0 {
        let text: Vec<Vec<f64>> = (0..spec.verb_families)
            .map(|_| gaussian(&mut world, spec.verb_dim, spec.sigma_between))
            .collect();
        let visual: Vec<Vec<f64>> = (0..spec.verb_families)
            .map(|_| gaussian(&mut world, spec.visual_dim, spec.sigma_between))
            .collect();
        for v in 0..spec.verbs {
            for (x, c) in verb_text[v].iter_mut().zip(&text[family_of(v)]) {
                *x = c + spec.family_spread * *x;
            }
            for (x, c) in verb_visual[v].iter_mut().zip(&visual[family_of(v)]) {
                *x = c + spec.family_spread * *x;
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut features = FeatureBank {
        visual: FeatureTable::new(spec.visual_dim),
        face: FeatureTable::new(spec.face_dim),
        verbs: FeatureTable::new(spec.verb_dim),
    };
    for (i, t) in verb_text.iter().enumerate() {
        features
            .verbs
            .insert(verb_name(i), t.iter().map(|&v| v as f32).collect())?;
    }

    let mut movies = BTreeMap::new();
    for m in 0..spec.movies {
        let movie_id = format!("{}{m:03}", spec.movie_prefix);
        let characters: Vec<Character> = (0..spec.characters_per_movie)
            .map(|c| {
                let name = character_name(c);
                let nick = format!("Little {name}");
                Character::new(name, [nick])
            })
            .collect();
        let faces: Vec<Vec<f64>> = (0..spec.characters_per_movie)
            .map(|_| gaussian(&mut rng, spec.face_dim, spec.sigma_between))
            .collect();

        let mut clips = BTreeMap::new();
        for k in 0..spec.clips_per_movie {
            let clip_id = format!("{movie_id}-{k:04}");
            let max_k = spec.max_mentions.min(spec.characters_per_movie).min(spec.verbs);
            let mut mentions = if max_k >= 2 && rng.random_bool(spec.multi_mention_fraction) {
                rng.random_range(2..=max_k)
            } else {
                1
            };
            let mut cast: Vec<usize> = (0..spec.characters_per_movie).collect();
            cast.shuffle(&mut rng);
            let mut verbs: Vec<usize> = (0..spec.verbs).collect();
            verbs.shuffle(&mut rng);
            if spec.verb_families > 0 {
                let f = rng.random_range(0..spec.verb_families);
                verbs.sort_by_key(|&v| family_of(v) != f);
                mentions = mentions.min(verbs.iter().filter(|&&v| family_of(v) == f).count());
            }

            let mut tokens: Vec<String> = Vec::new();
            let mut slots = Vec::new();
            let mut plans = Vec::new();
            for i in 0..mentions {
                if i > 0 {
                    tokens.push(if i + 1 == mentions { "and".into() } else { ",".into() });
                }
                let (ch, verb) = (cast[i], verbs[i]);
                slots.push(Slot {
                    token_index: tokens.len(),
                    verb: verb_name(verb),
                    truth: Some(characters[ch].canonical_name.clone()),
                });
                tokens.push("someone".into());
                tokens.push(verb_name(verb));
                let plan = || TrackPlan {
                    label: TrackLabel::Character(characters[ch].canonical_name.clone()),
                    verb: Some(verb),
                    face: FaceSource::Character(ch),
                };
                plans.push(plan());
                if rng.random_bool(spec.second_track_prob) {
                    plans.push(plan());
                }
            }
            tokens.push(".".into());
            // Background tracks perform verbs absent from the caption.
            let spare_verb = |rng: &mut ChaCha8Rng| verbs.get(mentions..).and_then(|rest| rest.choose(rng).copied());
            if mentions < spec.characters_per_movie && rng.random_bool(spec.bystander_prob) {
                let ch = cast[rng.random_range(mentions..spec.characters_per_movie)];
                plans.push(TrackPlan {
                    label: TrackLabel::Character(characters[ch].canonical_name.clone()),
                    verb: spare_verb(&mut rng),
                    face: FaceSource::Character(ch),
                });
            }
            if rng.random_bool(spec.unknown_track_prob) {
                plans.push(TrackPlan {
                    label: TrackLabel::Unknown,
                    verb: spare_verb(&mut rng),
                    face: FaceSource::Random,
                });
            }
            if rng.random_bool(spec.wrong_track_prob) {
                plans.push(TrackPlan {
                    label: TrackLabel::Wrong,
                    verb: None,
                    face: FaceSource::Random,
                });
            }
            plans.shuffle(&mut rng);

            let offset = (spec.clip_offset > 0.0).then(|| gaussian(&mut rng, spec.visual_dim, spec.clip_offset));
            let mut tracks = Vec::with_capacity(plans.len());
            for (t, plan) in plans.into_iter().enumerate() {
                let track_id = format!("{clip_id}-t{t}");
                let len = rng.random_range(spec.min_track_len..=spec.max_track_len);
                let first_frame = rng.random_range(0..48usize);
                let side = rng.random_range(spec.min_face_side..=spec.max_face_side);
                let (mut x, mut y) = (rng.random_range(0.0..1280.0), rng.random_range(0.0..540.0));
                let (vx, vy) = (rng.random_range(-2.0..2.0), rng.random_range(-1.0..1.0));
                let mut boxes = Vec::with_capacity(len);
                for _ in 0..len {
                    boxes.push(BoundingBox::new(x, y, side, side * 1.2)?);
                    x += vx;
                    y += vy;
                }
                let mut provenance = vec![Provenance::Detected; len];
                if len > 4 && rng.random_bool(0.3) {
                    let start = rng.random_range(1..len - 3);
                    let gap = rng.random_range(1..=3).min(len - 1 - start);
                    provenance[start..start + gap].fill(Provenance::Predicted);
                }

                let face_center = match plan.face {
                    FaceSource::Character(ch) => faces[ch].clone(),
                    FaceSource::Random => gaussian(&mut rng, spec.face_dim, spec.sigma_between),
                };
                for f in 0..len {
                    features.face.insert(
                        face_frame_id(&track_id, f),
                        noisy(&mut rng, &face_center, None, spec.sigma_within),
                    )?;
                }
                let center = plan.verb.map_or(&wrong_visual, |v| &verb_visual[v]);
                for w in 0..subwindow_count(len) {
                    features.visual.insert(
                        visual_window_id(&track_id, w),
                        noisy(&mut rng, center, offset.as_deref(), spec.sigma_within),
                    )?;
                }
                tracks.push(FaceTrack {
                    track_id,
                    clip_id: clip_id.clone(),
                    first_frame,
                    boxes,
                    provenance,
                    label: plan.label,
                });
            }
            let caption = Caption {
                clip_id: clip_id.clone(),
                text: tokens.join(" "),
                slots,
            };
            clips.insert(clip_id, Clip { caption, tracks });
        }
        movies.insert(movie_id, Movie::new(characters, clips));
    }
    Ok(SynthOutput {
        store: AnnotationStore::from_movies(movies)?,
        features,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn deterministic_per_seed() {
        let spec = SynthSpec::tiny();
        let a = generate_synthetic(&spec, 7).unwrap();
        let b = generate_synthetic(&spec, 7).unwrap();
        assert_eq!(a.store.to_json(), b.store.to_json());
        assert_eq!(a.features, b.features);
        let c = generate_synthetic(&spec, 8).unwrap();
        assert_ne!(a.store.to_json(), c.store.to_json());
    }

    #[test]
    fn minimal_spec_is_valid() {
        let spec = SynthSpec {
            movies: 1,
            characters_per_movie: 1,
            clips_per_movie: 1,
            verbs: 1,
            ..SynthSpec::tiny()
        };
        let out = generate_synthetic(&spec, 0).unwrap();
        // Round-trips through the validating loader.
        let reloaded = AnnotationStore::from_json(&out.store.to_json()).unwrap();
        assert_eq!(reloaded, out.store);
        assert_eq!(reloaded.clip_count(), 1);
    }

    #[test]
    fn rejects_non_positive_counts() {
        for spec in [
            SynthSpec {
                movies: 0,
                ..SynthSpec::tiny()
            },
            SynthSpec {
                verbs: 0,
                ..SynthSpec::tiny()
            },
            SynthSpec {
                sigma_between: 0.0,
                ..SynthSpec::tiny()
            },
            SynthSpec {
                verb_families: 7,
                ..SynthSpec::tiny()
            },
        ] {
            assert!(generate_synthetic(&spec, 0).is_err());
        }
    }

    #[test]
    fn slots_reference_ground_truth_tracks() {
        let out = generate_synthetic(&SynthSpec::tiny(), 2).unwrap();
        for (_, _, clip) in out.store.clips() {
            for slot in &clip.caption.slots {
                let truth = slot.truth.as_deref().unwrap();
                assert!(clip.tracks.iter().any(|t| t.label.character() == Some(truth)));
                assert!(out.features.verbs.get(&slot.verb).is_some());
            }
            for t in &clip.tracks {
                assert!(out.features.visual.window_count(&t.track_id) >= 1);
                assert!(out.features.track_face(&t.track_id, t.len()).is_ok());
            }
        }
    }

    #[test]
    fn captions_stay_within_one_family() {
        let spec = SynthSpec {
            verb_families: 3,
            multi_mention_fraction: 0.8,
            clips_per_movie: 40,
            ..SynthSpec::tiny()
        };
        let out = generate_synthetic(&spec, 5).unwrap();
        let index = |verb: &str| (0..spec.verbs).find(|&i| verb_name(i) == verb).unwrap();
        let mut multi = 0;
        for (_, _, clip) in out.store.clips() {
            let families: BTreeSet<usize> = clip.caption.slots.iter().map(|s| index(&s.verb) % 3).collect();
            assert_eq!(families.len(), 1);
            multi += usize::from(clip.caption.slots.len() > 1);
        }
        assert!(multi > 0);
        // Family members sit closer to each other than to other verbs.
        let d = |a: usize, b: usize| {
            let (x, y) = (
                out.features.verbs.get(&verb_name(a)).unwrap(),
                out.features.verbs.get(&verb_name(b)).unwrap(),
            );
            x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f32>()
        };
        assert!(d(0, 3) < d(0, 1) && d(1, 4) < d(1, 2));
    }

    #[test]
    fn world_seed_shares_verbs() {
        let a = generate_synthetic(&SynthSpec::tiny(), 1).unwrap();
        let b = generate_synthetic(
            &SynthSpec {
                movie_prefix: "x".into(),
                ..SynthSpec::tiny()
            },
            2,
        )
        .unwrap();
        assert_eq!(a.features.verbs, b.features.verbs);
        assert!(b.store.movies().keys().all(|k| k.starts_with('x')));
    }
}
