//! Accuracy metrics, the random baseline and the two experiment protocols.
//!
//! Replacement accuracy is counted over caption slots with a known character:
//! a slot is correct when its predicted name equals the truth, so slots left
//! unmatched count as errors. They are also reported as `unmatched_rate`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{AnnotationStore, DatasetSplit, FeatureBank};
use crate::embedding::{EmbeddingModel, LossKind, Metric, TrainConfig, Trainer};
use crate::error::{Error, Result};
use crate::naming::{bootstrap_face_index, build_face_index, ClipPrediction, FaceIndexSet, Namer, DEFAULT_K};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SlotCounts {
    pub slots: usize,
    pub correct: usize,
    pub unmatched: usize,
}

impl SlotCounts {
    pub fn from_predictions<'a>(predictions: impl IntoIterator<Item = &'a ClipPrediction>) -> Self {
        let mut c = Self::default();
        for p in predictions {
            for s in p.slots.iter().filter(|s| s.truth.is_some()) {
                c.slots += 1;
                c.correct += usize::from(s.is_correct());
                c.unmatched += usize::from(s.track_id.is_none());
            }
        }
        c
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.correct, self.slots)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

/// Correct names over slots with a known character.
pub fn replacement_accuracy(predictions: &[ClipPrediction]) -> Result<f64> {
    let c = SlotCounts::from_predictions(predictions);
    if c.slots == 0 {
        return Err(Error::InvalidArgument("no ground-truth slots to score".into()));
    }
    Ok(c.accuracy())
}

/// Fraction of the character-labeled tracks among `track_ids` classified as
/// their own character, with the count of scored tracks.
pub fn face_accuracy<'a>(
    faces: &FaceIndexSet,
    store: &AnnotationStore,
    features: &FeatureBank,
    track_ids: impl IntoIterator<Item = &'a str>,
) -> Result<(f64, usize)> {
    let (mut n, mut correct) = (0, 0);
    for id in track_ids {
        let track = store.track(id).ok_or_else(|| Error::NotFound {
            kind: "track",
            id: id.to_owned(),
        })?;
        let Some(truth) = track.label.character() else { continue };
        let movie = &store.track_location(id).expect("indexed track").movie_id;
        let emb = features.track_face(id, track.len())?;
        n += 1;
        correct += usize::from(faces.classify(movie, &emb)? == Some(truth));
    }
    if n == 0 {
        return Err(Error::InvalidArgument("no labeled tracks to score".into()));
    }
    Ok((ratio(correct, n), n))
}

fn truth_slots<'a>(
    store: &'a AnnotationStore,
    clip_ids: &'a [String],
) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
    clip_ids.iter().flat_map(move |id| {
        let movie = store.movie_of_clip(id).unwrap_or_default();
        let clip = store.clip(id);
        clip.into_iter()
            .flat_map(|c| c.caption.slots.iter())
            .filter_map(move |s| s.truth.as_deref().map(|t| (movie, t)))
    })
}

/// Mean accuracy over `trials` of naming every slot with a uniformly drawn
/// character of its movie.
pub fn random_baseline(store: &AnnotationStore, clip_ids: &[String], seed: u64, trials: usize) -> Result<f64> {
    let slots: Vec<(&str, &str)> = truth_slots(store, clip_ids).collect();
    if slots.is_empty() || trials == 0 {
        return Err(Error::InvalidArgument(
            "random baseline needs slots and at least one trial".into(),
        ));
    }
    let mut names: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for (m, _) in &slots {
        names.entry(m).or_insert_with(|| {
            store
                .movie(m)
                .map(|mv| mv.character_names().collect())
                .unwrap_or_default()
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut total = 0.0;
    for _ in 0..trials {
        let correct = slots
            .iter()
            .filter(|(m, truth)| names[m].choose(&mut rng) == Some(truth))
            .count();
        total += correct as f64 / slots.len() as f64;
    }
    Ok(total / trials as f64)
}

/// Expected random-baseline accuracy: the mean of `1 / C` over slots, `C`
/// being the number of characters of the slot's movie.
pub fn random_baseline_expectation(store: &AnnotationStore, clip_ids: &[String]) -> Result<f64> {
    let slots: Vec<(&str, &str)> = truth_slots(store, clip_ids).collect();
    if slots.is_empty() {
        return Err(Error::InvalidArgument("no ground-truth slots".into()));
    }
    let sum: f64 = slots
        .iter()
        .map(|(m, _)| 1.0 / store.movie(m).map_or(1, |mv| mv.characters.len().max(1)) as f64)
        .sum();
    Ok(sum / slots.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MovieAccuracy {
    pub slots: usize,
    pub correct: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitMetrics {
    pub clips: usize,
    pub slots: usize,
    pub correct: usize,
    pub replacement_accuracy: f64,
    pub unmatched_rate: f64,
    pub face_tracks: usize,
    pub face_accuracy: f64,
    pub random_baseline: f64,
    pub random_baseline_expected: f64,
    pub per_movie: BTreeMap<String, MovieAccuracy>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Protocol {
    /// Train on the training split, select the epoch on validation, report
    /// validation and test.
    Standard,
    /// Reuse the trained embedding on an unseen target set whose face index is
    /// built from a sample of its own tracks.
    Bootstrap { fraction: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub loss: LossKind,
    pub metric: Metric,
    pub train: TrainConfig,
    pub protocol: Protocol,
    pub k: usize,
    pub baseline_trials: usize,
    pub max_cost: Option<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            loss: LossKind::Proposed,
            metric: Metric::EuclideanSq,
            train: TrainConfig::default(),
            protocol: Protocol::Standard,
            k: DEFAULT_K,
            baseline_trials: 100,
            max_cost: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ExperimentConfig,
    /// Epoch whose model was kept (0 = initialization).
    pub selected_epoch: usize,
    pub epoch_losses: Vec<f64>,
    /// Validation accuracy after each epoch.
    pub epoch_val_accuracy: Vec<f64>,
    pub val: Option<SplitMetrics>,
    pub test: SplitMetrics,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(Error::from_json)
    }
}

/// A store with its features and split.
#[derive(Clone, Copy)]
pub struct Data<'a> {
    pub store: &'a AnnotationStore,
    pub features: &'a FeatureBank,
    pub split: &'a DatasetSplit,
}

/// Predictions and metrics for `clip_ids`. Face accuracy is computed over
/// `face_tracks` (character-labeled tracks only).
pub fn evaluate_clips(
    namer: &Namer<'_>,
    clip_ids: &[String],
    face_tracks: &[String],
    seed: u64,
    trials: usize,
) -> Result<(Vec<ClipPrediction>, SplitMetrics)> {
    let predictions = namer.predict(clip_ids.iter().map(String::as_str))?;
    let counts = SlotCounts::from_predictions(&predictions);
    let mut per_movie: BTreeMap<String, SlotCounts> = BTreeMap::new();
    for p in &predictions {
        let c = SlotCounts::from_predictions([p]);
        let e = per_movie.entry(p.movie_id.clone()).or_default();
        e.slots += c.slots;
        e.correct += c.correct;
        e.unmatched += c.unmatched;
    }
    let (face, face_n) = if face_tracks.is_empty() {
        (0.0, 0)
    } else {
        match face_accuracy(
            namer.faces,
            namer.store,
            namer.features,
            face_tracks.iter().map(String::as_str),
        ) {
            Ok(v) => v,
            Err(Error::InvalidArgument(_)) => (0.0, 0),
            Err(e) => return Err(e),
        }
    };
    let (baseline, expected) = if counts.slots > 0 {
        (
            random_baseline(namer.store, clip_ids, seed, trials.max(1))?,
            random_baseline_expectation(namer.store, clip_ids)?,
        )
    } else {
        (0.0, 0.0)
    };
    let metrics = SplitMetrics {
        clips: clip_ids.len(),
        slots: counts.slots,
        correct: counts.correct,
        replacement_accuracy: counts.accuracy(),
        unmatched_rate: ratio(counts.unmatched, counts.slots),
        face_tracks: face_n,
        face_accuracy: face,
        random_baseline: baseline,
        random_baseline_expected: expected,
        per_movie: per_movie
            .into_iter()
            .map(|(m, c)| {
                (
                    m,
                    MovieAccuracy {
                        slots: c.slots,
                        correct: c.correct,
                        accuracy: c.accuracy(),
                    },
                )
            })
            .collect(),
    };
    Ok((predictions, metrics))
}

fn split_clips(split: &DatasetSplit, which: crate::dataset::SplitName) -> Vec<String> {
    split.get(which).iter().cloned().collect()
}

fn labeled_tracks_of(store: &AnnotationStore, clip_ids: &[String]) -> Vec<String> {
    clip_ids
        .iter()
        .filter_map(|id| store.clip(id))
        .flat_map(|c| c.tracks.iter())
        .filter(|t| t.label.character().is_some())
        .map(|t| t.track_id.clone())
        .collect()
}

/// Trains with validation-based epoch selection on `source` and returns the
/// selected model with its validation accuracy per epoch.
pub fn train_with_selection(
    source: Data<'_>,
    config: &ExperimentConfig,
) -> Result<(EmbeddingModel, usize, Vec<f64>, Vec<f64>)> {
    use crate::dataset::SplitName;
    let faces = build_face_index(source.store, source.split, source.features, config.k)?;
    let val = split_clips(source.split, SplitName::Val);
    let mut trainer = Trainer::new(
        source.store,
        source.features,
        source.split,
        config.loss,
        config.metric,
        &config.train,
    )?;
    let mut best = (trainer.model().clone(), 0usize, f64::NEG_INFINITY);
    let mut val_acc = Vec::new();
    for _ in 0..config.train.epochs {
        trainer.run_epoch()?;
        let namer = Namer {
            store: source.store,
            features: source.features,
            model: trainer.model(),
            faces: &faces,
            max_cost: config.max_cost,
        };
        let predictions = namer.predict(val.iter().map(String::as_str))?;
        let counts = SlotCounts::from_predictions(&predictions);
        // Without validation slots the last epoch is kept.
        let acc = if counts.slots == 0 { 0.0 } else { counts.accuracy() };
        val_acc.push(acc);
        if acc > best.2 || counts.slots == 0 {
            best = (trainer.model().clone(), trainer.epoch(), acc);
        }
    }
    let losses = trainer.losses().to_vec();
    Ok((best.0, best.1, losses, val_acc))
}

/// Runs one experiment. `target` is required by the bootstrap protocol and
/// ignored by the standard one.
pub fn run_experiment(
    source: Data<'_>,
    target: Option<Data<'_>>,
    config: &ExperimentConfig,
) -> Result<(EmbeddingModel, EvalReport)> {
    use crate::dataset::SplitName;
    if config.k == 0 {
        return Err(Error::InvalidArgument("k must be at least 1".into()));
    }
    let (model, selected_epoch, epoch_losses, epoch_val_accuracy) = train_with_selection(source, config)?;
    let seed = config.train.seed;
    let (val, test) = match config.protocol {
        Protocol::Standard => {
            let faces = build_face_index(source.store, source.split, source.features, config.k)?;
            let namer = Namer {
                store: source.store,
                features: source.features,
                model: &model,
                faces: &faces,
                max_cost: config.max_cost,
            };
            let eval = |which| -> Result<SplitMetrics> {
                let clips = split_clips(source.split, which);
                let tracks = labeled_tracks_of(source.store, &clips);
                Ok(evaluate_clips(&namer, &clips, &tracks, seed, config.baseline_trials)?.1)
            };
            (Some(eval(SplitName::Val)?), eval(SplitName::Test)?)
        }
        Protocol::Bootstrap { fraction } => {
            let target = target
                .ok_or_else(|| Error::InvalidArgument("the bootstrap protocol needs a target data set".into()))?;
            (None, evaluate_bootstrap(&model, target, fraction, seed, config)?.1)
        }
    };
    let report = EvalReport {
        config: config.clone(),
        selected_epoch,
        epoch_losses,
        epoch_val_accuracy,
        val,
        test,
    };
    Ok((model, report))
}

/// Bootstrap evaluation of a trained model on `target`: the face index is
/// built from a `fraction` sample of the labeled tracks, face accuracy is
/// measured on the remaining tracks and replacement accuracy on the clips
/// that contain no sampled track.
pub fn evaluate_bootstrap(
    model: &EmbeddingModel,
    target: Data<'_>,
    fraction: f64,
    seed: u64,
    config: &ExperimentConfig,
) -> Result<(Vec<ClipPrediction>, SplitMetrics, BTreeSet<String>)> {
    let boot = bootstrap_face_index(target.store, target.features, fraction, seed, config.k)?;
    let clips: Vec<String> = target
        .store
        .clips()
        .filter(|(_, _, c)| c.tracks.iter().all(|t| !boot.sampled.contains(&t.track_id)))
        .map(|(_, id, _)| id.to_owned())
        .collect();
    let namer = Namer {
        store: target.store,
        features: target.features,
        model,
        faces: &boot.index,
        max_cost: config.max_cost,
    };
    let (predictions, metrics) = evaluate_clips(&namer, &clips, &boot.held_out, seed, config.baseline_trials)?;
    Ok((predictions, metrics, boot.sampled))
}

/// CSV of the 10 best and 10 worst movies by replacement accuracy:
/// `group,movie_id,slots,correct,accuracy`.
pub fn write_per_movie_csv(w: impl Write, metrics: &SplitMetrics) -> Result<()> {
    let mut rows: Vec<(&String, &MovieAccuracy)> = metrics.per_movie.iter().filter(|(_, m)| m.slots > 0).collect();
    rows.sort_by(|a, b| b.1.accuracy.total_cmp(&a.1.accuracy).then(a.0.cmp(b.0)));
    let mut out = csv::Writer::from_writer(w);
    let csv_err = |e: csv::Error| Error::Format(e.to_string());
    out.write_record(["group", "movie_id", "slots", "correct", "accuracy"])
        .map_err(csv_err)?;
    let best = rows.iter().take(10);
    let worst = rows.iter().rev().take(10);
    for (group, it) in [("best", best.collect::<Vec<_>>()), ("worst", worst.collect())] {
        for (movie, m) in it {
            out.write_record([
                group.to_string(),
                movie.to_string(),
                m.slots.to_string(),
                m.correct.to_string(),
                format!("{:.6}", m.accuracy),
            ])
            .map_err(csv_err)?;
        }
    }
    out.flush().map_err(|e| Error::io("<csv>", e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_splits, generate_synthetic, SynthSpec};
    use crate::naming::SlotPrediction;

    fn pred(movie: &str, slots: &[(Option<&str>, Option<&str>, bool)]) -> ClipPrediction {
        ClipPrediction {
            clip_id: "c".into(),
            movie_id: movie.into(),
            slots: slots
                .iter()
                .enumerate()
                .map(|(i, (p, t, matched))| SlotPrediction {
                    token_index: i,
                    verb: "v".into(),
                    track_id: matched.then(|| format!("t{i}")),
                    predicted: p.map(str::to_owned),
                    truth: t.map(str::to_owned),
                })
                .collect(),
            caption_rendered: String::new(),
        }
    }

    #[test]
    fn accuracy_examples() {
        let half = pred(
            "m",
            &[
                (Some("A"), Some("A"), true),
                (Some("B"), Some("A"), true),
                (None, Some("B"), false),
                (Some("C"), Some("C"), true),
            ],
        );
        assert_eq!(replacement_accuracy(std::slice::from_ref(&half)).unwrap(), 0.5);
        assert_eq!(SlotCounts::from_predictions([&half]).unmatched, 1);
        let all = pred("m", &[(Some("A"), Some("A"), true)]);
        assert_eq!(replacement_accuracy(&[all]).unwrap(), 1.0);
        let untruthed = pred("m", &[(Some("A"), None, true)]);
        assert!(replacement_accuracy(&[untruthed]).is_err());
        assert!(replacement_accuracy(&[]).is_err());
    }

    #[test]
    fn baseline_matches_expectation() {
        let out = generate_synthetic(
            &SynthSpec {
                movies: 2,
                clips_per_movie: 60,
                ..SynthSpec::tiny()
            },
            1,
        )
        .unwrap();
        let clips: Vec<String> = out.store.clips().map(|(_, c, _)| c.to_owned()).collect();
        let expected = random_baseline_expectation(&out.store, &clips).unwrap();
        assert!((expected - 1.0 / 3.0).abs() < 1e-12);
        let got = random_baseline(&out.store, &clips, 3, 2000).unwrap();
        assert!((got - expected).abs() < 0.01, "{got} vs {expected}");
        assert_eq!(
            random_baseline(&out.store, &clips, 5, 1).unwrap(),
            random_baseline(&out.store, &clips, 5, 1).unwrap()
        );
    }

    #[test]
    fn per_movie_csv_layout() {
        let mut per_movie = BTreeMap::new();
        for (i, acc) in [0.5, 1.0, 0.25].iter().enumerate() {
            per_movie.insert(
                format!("m{i}"),
                MovieAccuracy {
                    slots: 4,
                    correct: (acc * 4.0) as usize,
                    accuracy: *acc,
                },
            );
        }
        let metrics = SplitMetrics {
            clips: 3,
            slots: 12,
            correct: 7,
            replacement_accuracy: 7.0 / 12.0,
            unmatched_rate: 0.0,
            face_tracks: 0,
            face_accuracy: 0.0,
            random_baseline: 0.0,
            random_baseline_expected: 0.0,
            per_movie,
        };
        let mut buf = Vec::new();
        write_per_movie_csv(&mut buf, &metrics).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "group,movie_id,slots,correct,accuracy");
        assert_eq!(lines[1], "best,m1,4,4,1.000000");
        assert_eq!(lines[4], "worst,m2,4,1,0.250000");
        assert_eq!(lines.len(), 7);
    }

    #[test]
    fn micro_average_is_slot_weighted_mean() {
        let out = generate_synthetic(
            &SynthSpec {
                movies: 3,
                clips_per_movie: 40,
                ..SynthSpec::tiny()
            },
            2,
        )
        .unwrap();
        let split = generate_splits(&out.store, 2);
        let config = ExperimentConfig {
            train: TrainConfig {
                epochs: 2,
                embed_dim: 8,
                batch: 16,
                ..Default::default()
            },
            baseline_trials: 5,
            ..Default::default()
        };
        let data = Data {
            store: &out.store,
            features: &out.features,
            split: &split,
        };
        let (_, report) = run_experiment(data, None, &config).unwrap();
        let test = &report.test;
        let weighted: f64 = test
            .per_movie
            .values()
            .map(|m| m.accuracy * m.slots as f64)
            .sum::<f64>()
            / test.slots as f64;
        assert!((weighted - test.replacement_accuracy).abs() < 1e-12);
        assert_eq!(report.config, config);
        assert_eq!(EvalReport::from_json(&report.to_json()).unwrap(), report);
        assert!(report.selected_epoch >= 1 && report.selected_epoch <= 2);
    }
}
