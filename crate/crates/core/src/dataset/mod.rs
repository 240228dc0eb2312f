//! Annotation store: movies, characters with aliases, clips, captions with
//! `someone` slots and face tracks.
//!
//! The on-disk representation is a single UTF-8 JSON document (see
//! [`AnnotationStore::load`]). Loading validates every invariant and resolves
//! aliases, so a loaded store always refers to characters by canonical name.

mod features;
mod split;
mod stats;
mod synth;

pub use features::{
    face_frame_id, read_feature_file, visual_window_id, write_feature_file, FeatureBank, FeatureFile, FeatureKind,
    FeatureRecord, FeatureTable,
};
pub use split::{generate_splits, DatasetSplit, SplitName};
pub use stats::{dataset_stats, CharacterAverages, MovieAverages, StatsReport};
pub use synth::{generate_synthetic, SynthOutput, SynthSpec};

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Minimum number of boxes a persisted track holds.
pub const MIN_TRACK_LEN: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(into = "[f64; 4]", try_from = "[f64; 4]")]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    fn validate(&self) -> Result<()> {
        if ![self.x, self.y, self.w, self.h].iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidArgument(format!("non-finite box {self:?}")));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(Error::InvalidArgument(format!("box with non-positive side {self:?}")));
        }
        Ok(())
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn translated(&self, dx: f64, dy: f64) -> Self {
        Self {
            x: self.x + dx,
            y: self.y + dy,
            ..*self
        }
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        [b.x, b.y, b.w, b.h]
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from([x, y, w, h]: [f64; 4]) -> Result<Self> {
        BoundingBox::new(x, y, w, h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Provenance {
    Detected,
    Predicted,
}

impl Provenance {
    fn to_char(self) -> char {
        match self {
            Provenance::Detected => 'D',
            Provenance::Predicted => 'P',
        }
    }

    fn from_char(c: char) -> Option<Self> {
        match c {
            'D' => Some(Provenance::Detected),
            'P' => Some(Provenance::Predicted),
            _ => None,
        }
    }
}

/// Encodes a provenance list as a `D`/`P` string.
pub fn provenance_string(p: &[Provenance]) -> String {
    p.iter().map(|p| p.to_char()).collect()
}

pub fn parse_provenance(s: &str) -> Option<Vec<Provenance>> {
    s.chars().map(Provenance::from_char).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TrackLabel {
    Character(String),
    Unknown,
    Wrong,
    Unlabeled,
}

impl TrackLabel {
    pub fn character(&self) -> Option<&str> {
        match self {
            TrackLabel::Character(name) => Some(name),
            _ => None,
        }
    }

    pub fn as_str(&self) -> &str {
        match self {
            TrackLabel::Character(name) => name,
            TrackLabel::Unknown => "unknown",
            TrackLabel::Wrong => "wrong",
            TrackLabel::Unlabeled => "unlabeled",
        }
    }

    fn reserved(s: &str) -> Option<Self> {
        match s.to_lowercase().as_str() {
            "unknown" => Some(TrackLabel::Unknown),
            "wrong" => Some(TrackLabel::Wrong),
            "unlabeled" => Some(TrackLabel::Unlabeled),
            _ => None,
        }
    }
}

impl fmt::Display for TrackLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Character {
    pub canonical_name: String,
    /// All names the character goes by, canonical name first.
    pub aliases: Vec<String>,
}

impl Character {
    pub fn new(canonical_name: impl Into<String>, aliases: impl IntoIterator<Item = impl Into<String>>) -> Self {
        let canonical_name = canonical_name.into();
        let mut seen = HashSet::from([canonical_name.to_lowercase()]);
        let mut all = vec![canonical_name.clone()];
        for a in aliases {
            let a: String = a.into();
            if seen.insert(a.to_lowercase()) {
                all.push(a);
            }
        }
        Self {
            canonical_name,
            aliases: all,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Slot {
    /// Whitespace-token index of the `someone` token in the caption text.
    pub token_index: usize,
    /// Lowercase verb lemma attached to the slot.
    pub verb: String,
    /// Canonical name of the mentioned character, when annotated.
    pub truth: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Caption {
    pub clip_id: String,
    pub text: String,
    pub slots: Vec<Slot>,
}

/// Whether a whitespace token is a `someone` tag (optionally possessive or
/// followed by punctuation). Returns the byte length of the tag prefix.
pub(crate) fn someone_prefix(token: &str) -> Option<usize> {
    const TAG: &str = "someone";
    let head = token.get(..TAG.len())?;
    if !head.eq_ignore_ascii_case(TAG) {
        return None;
    }
    let rest = &token[TAG.len()..];
    let rest = rest
        .strip_prefix("'s")
        .or_else(|| rest.strip_prefix("\u{2019}s"))
        .unwrap_or(rest);
    rest.chars().all(|c| c.is_ascii_punctuation()).then_some(TAG.len())
}

impl Caption {
    /// Renders the caption with the given replacements (slot index → name);
    /// slots without a replacement keep their `someone` token.
    pub fn render(&self, names: &HashMap<usize, String>) -> String {
        let mut tokens: Vec<String> = self.text.split_whitespace().map(str::to_owned).collect();
        for (slot_idx, slot) in self.slots.iter().enumerate() {
            let Some(name) = names.get(&slot_idx) else { continue };
            if let Some(token) = tokens.get_mut(slot.token_index) {
                if let Some(len) = someone_prefix(token) {
                    *token = format!("{name}{}", &token[len..]);
                }
            }
        }
        tokens.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FaceTrack {
    pub track_id: String,
    pub clip_id: String,
    pub first_frame: usize,
    pub boxes: Vec<BoundingBox>,
    pub provenance: Vec<Provenance>,
    pub label: TrackLabel,
}

impl FaceTrack {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    pub fn last_frame(&self) -> usize {
        self.first_frame + self.boxes.len().saturating_sub(1)
    }

    pub fn box_at(&self, frame: usize) -> Option<&BoundingBox> {
        frame.checked_sub(self.first_frame).and_then(|i| self.boxes.get(i))
    }

    /// Mean of `min(w, h)` over the boxes; used for the small-face filter.
    pub fn face_side(&self) -> f64 {
        if self.boxes.is_empty() {
            return 0.0;
        }
        self.boxes.iter().map(|b| b.w.min(b.h)).sum::<f64>() / self.boxes.len() as f64
    }

    pub fn validate(&self) -> Result<()> {
        let id = &self.track_id;
        if self.boxes.len() < MIN_TRACK_LEN {
            return Err(Error::invariant(
                id,
                "boxes",
                format!("{} boxes, need at least {MIN_TRACK_LEN}", self.boxes.len()),
            ));
        }
        if self.provenance.len() != self.boxes.len() {
            return Err(Error::invariant(id, "provenance", "length differs from boxes"));
        }
        if self.provenance.first() != Some(&Provenance::Detected)
            || self.provenance.last() != Some(&Provenance::Detected)
        {
            return Err(Error::invariant(
                id,
                "provenance",
                "must start and end with a detection",
            ));
        }
        for b in &self.boxes {
            b.validate().map_err(|e| Error::invariant(id, "boxes", e.to_string()))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub caption: Caption,
    pub tracks: Vec<FaceTrack>,
}

impl Clip {
    /// Number of slots that carry a ground-truth character.
    pub fn mention_count(&self) -> usize {
        self.caption.slots.iter().filter(|s| s.truth.is_some()).count()
    }

    /// Characters mentioned in the caption or labeled on a track.
    pub fn characters(&self) -> Vec<&str> {
        let mut names: Vec<&str> = self
            .caption
            .slots
            .iter()
            .filter_map(|s| s.truth.as_deref())
            .chain(self.tracks.iter().filter_map(|t| t.label.character()))
            .collect();
        names.sort_unstable();
        names.dedup();
        names
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Movie {
    pub characters: Vec<Character>,
    pub clips: BTreeMap<String, Clip>,
    alias_index: HashMap<String, usize>,
}

impl Movie {
    pub fn new(characters: Vec<Character>, clips: BTreeMap<String, Clip>) -> Self {
        Self {
            characters,
            clips,
            alias_index: HashMap::new(),
        }
    }

    /// Case-insensitive alias lookup.
    pub fn resolve_alias(&self, name: &str) -> Option<&str> {
        self.alias_index
            .get(&name.to_lowercase())
            .map(|&i| self.characters[i].canonical_name.as_str())
    }

    pub fn character_names(&self) -> impl Iterator<Item = &str> {
        self.characters.iter().map(|c| c.canonical_name.as_str())
    }

    fn build_alias_index(&mut self, movie_id: &str) -> Result<()> {
        self.alias_index.clear();
        for (i, ch) in self.characters.iter().enumerate() {
            if ch.canonical_name.trim().is_empty() {
                return Err(Error::invariant(movie_id, "characters", "empty canonical name"));
            }
            for alias in &ch.aliases {
                let key = alias.to_lowercase();
                if TrackLabel::reserved(&key).is_some() {
                    return Err(Error::invariant(
                        &ch.canonical_name,
                        "aliases",
                        format!("{alias:?} is a reserved label"),
                    ));
                }
                if let Some(&other) = self.alias_index.get(&key) {
                    if other != i {
                        return Err(Error::invariant(
                            movie_id,
                            "aliases",
                            format!(
                                "{alias:?} names both {:?} and {:?}",
                                self.characters[other].canonical_name, ch.canonical_name
                            ),
                        ));
                    }
                }
                self.alias_index.insert(key, i);
            }
        }
        Ok(())
    }
}

/// Where a track lives inside the store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TrackLocation {
    pub movie_id: String,
    pub clip_id: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct AnnotationStore {
    movies: BTreeMap<String, Movie>,
    clip_movie: HashMap<String, String>,
    track_index: HashMap<String, TrackLocation>,
}

impl AnnotationStore {
    /// Validates `movies` and builds the lookup indices. Track labels and slot
    /// truths may use any alias; they are rewritten to canonical names.
    pub fn from_movies(mut movies: BTreeMap<String, Movie>) -> Result<Self> {
        let mut clip_movie = HashMap::new();
        let mut track_index = HashMap::new();
        for (movie_id, movie) in movies.iter_mut() {
            movie.build_alias_index(movie_id)?;
            let resolve = |name: &str, movie: &Movie| -> Result<String> {
                movie
                    .resolve_alias(name)
                    .map(str::to_owned)
                    .ok_or_else(|| Error::UnknownCharacter {
                        movie_id: movie_id.clone(),
                        name: name.to_owned(),
                    })
            };
            let mut clips = std::mem::take(&mut movie.clips);
            for (clip_id, clip) in clips.iter_mut() {
                if clip_movie.insert(clip_id.clone(), movie_id.clone()).is_some() {
                    return Err(Error::invariant(clip_id, "clip_id", "duplicate clip id"));
                }
                clip.caption.clip_id = clip_id.clone();
                let tokens: Vec<&str> = clip.caption.text.split_whitespace().collect();
                for slot in clip.caption.slots.iter_mut() {
                    match tokens.get(slot.token_index) {
                        Some(tok) if someone_prefix(tok).is_some() => {}
                        _ => {
                            return Err(Error::invariant(
                                clip_id,
                                "slots",
                                format!("token {} is not a someone tag", slot.token_index),
                            ))
                        }
                    }
                    if slot.verb.trim().is_empty() {
                        return Err(Error::invariant(clip_id, "slots", "empty verb"));
                    }
                    slot.verb = slot.verb.to_lowercase();
                    if let Some(truth) = &slot.truth {
                        slot.truth = Some(resolve(truth, movie)?);
                    }
                }
                for (index, track) in clip.tracks.iter_mut().enumerate() {
                    track.clip_id = clip_id.clone();
                    track.validate()?;
                    if let TrackLabel::Character(name) = &track.label {
                        track.label = TrackLabel::Character(resolve(name, movie)?);
                    }
                    let loc = TrackLocation {
                        movie_id: movie_id.clone(),
                        clip_id: clip_id.clone(),
                        index,
                    };
                    if track_index.insert(track.track_id.clone(), loc).is_some() {
                        return Err(Error::invariant(&track.track_id, "track_id", "duplicate track id"));
                    }
                }
            }
            movie.clips = clips;
        }
        Ok(Self {
            movies,
            clip_movie,
            track_index,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: RawStore = serde_json::from_str(text).map_err(Error::from_json)?;
        raw.into_store()
    }

    /// Canonical serialization: sorted map keys, two-space indentation and a
    /// trailing newline.
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&RawStore::from(self)).expect("store serializes");
        s.push('\n');
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn movies(&self) -> &BTreeMap<String, Movie> {
        &self.movies
    }

    pub fn movie(&self, movie_id: &str) -> Option<&Movie> {
        self.movies.get(movie_id)
    }

    /// Canonical character name for `name` in `movie_id`, matched
    /// case-insensitively against every alias.
    pub fn resolve_alias(&self, movie_id: &str, name: &str) -> Option<&str> {
        self.movies.get(movie_id)?.resolve_alias(name)
    }

    pub fn clip(&self, clip_id: &str) -> Option<&Clip> {
        let movie = self.clip_movie.get(clip_id)?;
        self.movies[movie].clips.get(clip_id)
    }

    pub fn movie_of_clip(&self, clip_id: &str) -> Option<&str> {
        self.clip_movie.get(clip_id).map(String::as_str)
    }

    /// All clips in `(movie_id, clip_id)` order.
    pub fn clips(&self) -> impl Iterator<Item = (&str, &str, &Clip)> {
        self.movies
            .iter()
            .flat_map(|(m, movie)| movie.clips.iter().map(move |(c, clip)| (m.as_str(), c.as_str(), clip)))
    }

    pub fn clip_count(&self) -> usize {
        self.clip_movie.len()
    }

    pub fn track(&self, track_id: &str) -> Option<&FaceTrack> {
        let loc = self.track_index.get(track_id)?;
        Some(&self.movies[&loc.movie_id].clips[&loc.clip_id].tracks[loc.index])
    }

    pub fn track_location(&self, track_id: &str) -> Option<&TrackLocation> {
        self.track_index.get(track_id)
    }

    pub fn tracks(&self) -> impl Iterator<Item = &FaceTrack> {
        self.clips().flat_map(|(_, _, clip)| clip.tracks.iter())
    }

    /// Sets the label of every listed track. Character names are resolved
    /// through the alias dictionary of the track's movie.
    pub fn relabel_tracks(&mut self, track_ids: &[String], label: &TrackLabel) -> Result<()> {
        let mut updates = Vec::with_capacity(track_ids.len());
        for id in track_ids {
            let loc = self
                .track_index
                .get(id)
                .ok_or_else(|| Error::NotFound {
                    kind: "track",
                    id: id.clone(),
                })?
                .clone();
            let resolved = match label {
                TrackLabel::Character(name) => TrackLabel::Character(
                    self.resolve_alias(&loc.movie_id, name)
                        .ok_or_else(|| Error::UnknownCharacter {
                            movie_id: loc.movie_id.clone(),
                            name: name.clone(),
                        })?
                        .to_owned(),
                ),
                other => other.clone(),
            };
            updates.push((loc, resolved));
        }
        for (loc, label) in updates {
            let track = &mut self
                .movies
                .get_mut(&loc.movie_id)
                .expect("indexed movie")
                .clips
                .get_mut(&loc.clip_id)
                .expect("indexed clip")
                .tracks[loc.index];
            track.label = label;
        }
        Ok(())
    }

    /// Sub-store restricted to the given movies.
    pub fn select_movies<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let movies = ids
            .into_iter()
            .filter_map(|id| self.movies.get(id).map(|m| (id.to_owned(), m.clone())))
            .collect();
        Self::from_movies(movies)
    }
}

// ---------------------------------------------------------------------------
// JSON schema

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawStore {
    movies: BTreeMap<String, RawMovie>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMovie {
    characters: Vec<RawCharacter>,
    #[serde(default)]
    clips: BTreeMap<String, RawClip>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCharacter {
    name: String,
    #[serde(default)]
    aliases: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawClip {
    caption: String,
    #[serde(default)]
    slots: Vec<RawSlot>,
    #[serde(default)]
    tracks: Vec<RawTrack>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSlot {
    token_index: usize,
    verb: String,
    truth: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrack {
    track_id: String,
    first_frame: usize,
    boxes: Vec<BoundingBox>,
    provenance: String,
    label: String,
}

impl RawStore {
    fn into_store(self) -> Result<AnnotationStore> {
        let mut movies = BTreeMap::new();
        for (movie_id, raw) in self.movies {
            let characters = raw
                .characters
                .into_iter()
                .map(|c| Character::new(c.name, c.aliases))
                .collect();
            let mut clips = BTreeMap::new();
            for (clip_id, rc) in raw.clips {
                let slots = rc
                    .slots
                    .into_iter()
                    .map(|s| Slot {
                        token_index: s.token_index,
                        verb: s.verb,
                        truth: s.truth,
                    })
                    .collect();
                let mut tracks = Vec::with_capacity(rc.tracks.len());
                for t in rc.tracks {
                    let provenance = parse_provenance(&t.provenance).ok_or_else(|| {
                        Error::invariant(&t.track_id, "provenance", "expected a string of D/P characters")
                    })?;
                    let label = TrackLabel::reserved(&t.label).unwrap_or(TrackLabel::Character(t.label));
                    tracks.push(FaceTrack {
                        track_id: t.track_id,
                        clip_id: clip_id.clone(),
                        first_frame: t.first_frame,
                        boxes: t.boxes,
                        provenance,
                        label,
                    });
                }
                let caption = Caption {
                    clip_id: clip_id.clone(),
                    text: rc.caption,
                    slots,
                };
                clips.insert(clip_id, Clip { caption, tracks });
            }
            movies.insert(movie_id, Movie::new(characters, clips));
        }
        AnnotationStore::from_movies(movies)
    }
}

impl From<&AnnotationStore> for RawStore {
    fn from(store: &AnnotationStore) -> Self {
        let movies = store
            .movies
            .iter()
            .map(|(id, m)| {
                let characters = m
                    .characters
                    .iter()
                    .map(|c| RawCharacter {
                        name: c.canonical_name.clone(),
                        aliases: c.aliases.clone(),
                    })
                    .collect();
                let clips = m
                    .clips
                    .iter()
                    .map(|(cid, clip)| {
                        let raw = RawClip {
                            caption: clip.caption.text.clone(),
                            slots: clip
                                .caption
                                .slots
                                .iter()
                                .map(|s| RawSlot {
                                    token_index: s.token_index,
                                    verb: s.verb.clone(),
                                    truth: s.truth.clone(),
                                })
                                .collect(),
                            tracks: clip
                                .tracks
                                .iter()
                                .map(|t| RawTrack {
                                    track_id: t.track_id.clone(),
                                    first_frame: t.first_frame,
                                    boxes: t.boxes.clone(),
                                    provenance: provenance_string(&t.provenance),
                                    label: t.label.to_string(),
                                })
                                .collect(),
                        };
                        (cid.clone(), raw)
                    })
                    .collect();
                (id.clone(), RawMovie { characters, clips })
            })
            .collect();
        RawStore { movies }
    }
}

/// Serializes tracks in the store's track schema (used by the tracker output).
pub fn tracks_to_json(tracks: &[FaceTrack]) -> serde_json::Value {
    serde_json::Value::Array(
        tracks
            .iter()
            .map(|t| {
                serde_json::json!({
                    "track_id": t.track_id,
                    "first_frame": t.first_frame,
                    "boxes": t.boxes,
                    "provenance": provenance_string(&t.provenance),
                    "label": t.label.to_string(),
                })
            })
            .collect(),
    )
}

#[cfg(test)]
pub(crate) mod fixtures {
    /// Two movies with the alias examples used throughout the tests.
    pub const ALIAS_STORE: &str = r#"{
  "movies": {
    "RobinHood": {
      "characters": [
        {"name": "Friar Tuck", "aliases": ["Tuck", "Friar"]},
        {"name": "Robin", "aliases": []}
      ],
      "clips": {
        "rh-001": {
          "caption": "someone looks up at the sky",
          "slots": [{"token_index": 0, "verb": "look", "truth": "Tuck"}],
          "tracks": [
            {"track_id": "rh-001-t0", "first_frame": 3,
             "boxes": [[0,0,40,40],[1,0,40,40],[2,0,40,40],[3,0,40,40],[4,0,40,40],[5,0,40,40],[6,0,40,40],[7,0,40,40]],
             "provenance": "DDDPPDDD", "label": "Tuck"}
          ]
        }
      }
    },
    "SnowFlower": {
      "characters": [
        {"name": "Nina", "aliases": ["Lily", "Flower", "Sophia"]},
        {"name": "Snow", "aliases": []}
      ],
      "clips": {}
    }
  }
}"#;
}
