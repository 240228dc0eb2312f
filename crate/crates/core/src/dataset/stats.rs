use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{AnnotationStore, DatasetSplit, SplitName};

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MovieAverages {
    pub train_clips: f64,
    pub val_clips: f64,
    pub test_clips: f64,
    pub mentioned_characters: f64,
    pub annotated_characters: f64,
    pub mentions: f64,
    pub tracks: f64,
    pub bounding_boxes: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CharacterAverages {
    /// Mentions per mentioned character.
    pub mentions: f64,
    /// Tracks per annotated character.
    pub tracks: f64,
    /// Boxes per annotated character.
    pub bounding_boxes: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct StatsReport {
    pub movies: usize,
    pub clips: usize,
    pub train_clips: usize,
    pub val_clips: usize,
    pub test_clips: usize,
    pub mentioned_characters: usize,
    pub annotated_characters: usize,
    pub mentions: usize,
    pub tracks: usize,
    /// Tracks labeled with a character.
    pub labeled_tracks: usize,
    pub bounding_boxes: usize,
    /// Stored boxes per track, including predicted boxes.
    pub mean_track_length: f64,
    pub per_movie: MovieAverages,
    pub per_character: CharacterAverages,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Overall counts and per-movie/per-character averages. Without a split every
/// clip counts as training.
pub fn dataset_stats(store: &AnnotationStore, split: Option<&DatasetSplit>) -> StatsReport {
    let mut r = StatsReport {
        movies: store.movies().len(),
        ..Default::default()
    };
    for (movie_id, movie) in store.movies() {
        let mut mentioned = BTreeSet::new();
        let mut annotated = BTreeSet::new();
        for (clip_id, clip) in &movie.clips {
            r.clips += 1;
            match split.map_or(Some(SplitName::Train), |s| s.split_of(clip_id)) {
                Some(SplitName::Train) => r.train_clips += 1,
                Some(SplitName::Val) => r.val_clips += 1,
                Some(SplitName::Test) => r.test_clips += 1,
                None => {}
            }
            for slot in &clip.caption.slots {
                if let Some(t) = &slot.truth {
                    r.mentions += 1;
                    mentioned.insert((movie_id, t.as_str()));
                }
            }
            for track in &clip.tracks {
                r.tracks += 1;
                r.bounding_boxes += track.len();
                if let Some(name) = track.label.character() {
                    r.labeled_tracks += 1;
                    annotated.insert((movie_id, name));
                }
            }
        }
        r.mentioned_characters += mentioned.len();
        r.annotated_characters += annotated.len();
    }
    r.mean_track_length = ratio(r.bounding_boxes, r.tracks);
    r.per_movie = MovieAverages {
        train_clips: ratio(r.train_clips, r.movies),
        val_clips: ratio(r.val_clips, r.movies),
        test_clips: ratio(r.test_clips, r.movies),
        mentioned_characters: ratio(r.mentioned_characters, r.movies),
        annotated_characters: ratio(r.annotated_characters, r.movies),
        mentions: ratio(r.mentions, r.movies),
        tracks: ratio(r.tracks, r.movies),
        bounding_boxes: ratio(r.bounding_boxes, r.movies),
    };
    r.per_character = CharacterAverages {
        mentions: ratio(r.mentions, r.mentioned_characters),
        tracks: ratio(r.labeled_tracks, r.annotated_characters),
        bounding_boxes: ratio(r.bounding_boxes, r.annotated_characters),
    };
    r
}
