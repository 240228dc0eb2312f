use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{self, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use castid::clustering::{cluster_movie, ClusterSet, CutCriterion};
use castid::dataset::{generate_splits, generate_synthetic, tracks_to_json, DatasetSplit, SynthSpec};
use castid::evaluation::{run_experiment, train_with_selection, write_per_movie_csv, Data, ExperimentConfig, Protocol};
use castid::naming::{build_face_index, write_predictions, Namer};
use castid::tracking::{extract_tracks, read_detections, TrackingConfig};
use castid::{AnnotationStore, EmbeddingModel, FeatureBank, TrainConfig};

use crate::args::*;

pub const ANNOTATIONS: &str = "annotations.json";

/// A command that ran but missed a requested threshold.
#[derive(Debug)]
pub struct ThresholdMissed(pub String);

impl std::fmt::Display for ThresholdMissed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ThresholdMissed {}

pub fn load_store(dir: &Path) -> Result<AnnotationStore> {
    let path = dir.join(ANNOTATIONS);
    AnnotationStore::load(&path).with_context(|| format!("loading {}", path.display()))
}

fn load_features(dir: &Path) -> Result<FeatureBank> {
    FeatureBank::load_dir(dir).with_context(|| format!("loading features from {}", dir.display()))
}

fn load_split(args: &DataArgs, store: &AnnotationStore, seed: u64) -> Result<DatasetSplit> {
    match &args.split {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            Ok(DatasetSplit::from_json(&text).with_context(|| format!("parsing {}", path.display()))?)
        }
        None => Ok(generate_splits(store, seed)),
    }
}

/// Writes to `path`, or to standard output when absent.
fn emit(path: Option<&PathBuf>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = io::stdout().lock();
            out.write_all(text.as_bytes())?;
            if !text.ends_with('\n') {
                out.write_all(b"\n")?;
            }
            Ok(())
        }
    }
}

fn train_config(opts: &TrainOpts, seed: u64) -> TrainConfig {
    let d = TrainConfig::default();
    TrainConfig {
        lr: opts.lr.unwrap_or(d.lr),
        batch: opts.batch.unwrap_or(d.batch),
        margin: opts.margin.unwrap_or(d.margin),
        epochs: opts.epochs.unwrap_or(d.epochs),
        embed_dim: opts.embed_dim.unwrap_or(d.embed_dim),
        sampling: opts.sampling.unwrap_or(d.sampling),
        seed,
        ..d
    }
}

fn experiment_config(opts: &TrainOpts, seed: u64) -> ExperimentConfig {
    ExperimentConfig {
        loss: opts.loss,
        metric: opts.metric,
        train: train_config(opts, seed),
        ..ExperimentConfig::default()
    }
}

pub fn tracks(args: &TracksArgs) -> Result<()> {
    let file = File::open(&args.detections).with_context(|| format!("opening {}", args.detections.display()))?;
    let detections =
        read_detections(BufReader::new(file)).with_context(|| format!("parsing {}", args.detections.display()))?;
    let d = TrackingConfig::default();
    let config = TrackingConfig {
        t_iou: args.t_iou.unwrap_or(d.t_iou),
        t_visual: args.t_visual.unwrap_or(d.t_visual),
        t_counter: args.t_counter.unwrap_or(d.t_counter),
        min_track_len: args.min_len.unwrap_or(d.min_track_len),
    };
    let clip_id = match &args.clip_id {
        Some(id) => id.clone(),
        None => args
            .detections
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "clip".into()),
    };
    let frames = args
        .frames
        .unwrap_or_else(|| detections.iter().map(|d| d.frame + 1).max().unwrap_or(0));
    let tracks = extract_tracks(&clip_id, &detections, frames, &config)?;
    eprintln!(
        "{} detections, {} frames -> {} tracks",
        detections.len(),
        frames,
        tracks.len()
    );
    emit(
        args.out.as_ref(),
        &serde_json::to_string_pretty(&tracks_to_json(&tracks))?,
    )
}

pub fn cluster(args: &ClusterArgs) -> Result<()> {
    let store = load_store(&args.data)?;
    let features = load_features(&args.data)?;
    let movies: Vec<String> = if args.movies.is_empty() {
        store.movies().keys().cloned().collect()
    } else {
        args.movies.clone()
    };
    let criterion = match (args.k, args.height) {
        (Some(k), _) => Some(CutCriterion::K(k)),
        (None, Some(h)) => Some(CutCriterion::Height(h)),
        (None, None) => None,
    };
    let mut all = ClusterSet::default();
    for movie in &movies {
        let (_, set) = cluster_movie(&store, &features, movie, criterion)?;
        eprintln!("{movie}: {} clusters", set.clusters.len());
        all.clusters.extend(set.clusters);
    }
    emit(args.out.as_ref(), &all.to_json())
}

pub fn split(args: &SplitArgs, seed: u64) -> Result<()> {
    let store = load_store(&args.data)?;
    let split = generate_splits(&store, seed);
    eprintln!(
        "train {} / val {} / test {} clips",
        split.train.len(),
        split.val.len(),
        split.test.len()
    );
    emit(args.out.as_ref(), &split.to_json())
}

pub fn train(args: &TrainArgs, seed: u64) -> Result<()> {
    let store = load_store(&args.data.data)?;
    let features = load_features(&args.data.data)?;
    let split = load_split(&args.data, &store, seed)?;
    let config = experiment_config(&args.train, seed);
    let source = Data {
        store: &store,
        features: &features,
        split: &split,
    };
    let (model, selected, losses, val) = train_with_selection(source, &config)?;
    for (i, loss) in losses.iter().enumerate() {
        match val.get(i) {
            Some(acc) => eprintln!("epoch {:>3}  loss {loss:.5}  val {acc:.4}", i + 1),
            None => eprintln!("epoch {:>3}  loss {loss:.5}", i + 1),
        }
    }
    eprintln!("kept epoch {selected}");
    model.save(&args.out)?;
    Ok(())
}

pub fn evaluate(args: &EvaluateArgs, seed: u64) -> Result<()> {
    let store = load_store(&args.data.data)?;
    let features = load_features(&args.data.data)?;
    let split = load_split(&args.data, &store, seed)?;
    let mut config = experiment_config(&args.train, seed);
    if let Some(k) = args.k {
        config.k = k;
    }
    if let Some(t) = args.trials {
        config.baseline_trials = t;
    }
    let target = match (&args.target, args.bootstrap) {
        (Some(dir), Some(fraction)) => {
            config.protocol = Protocol::Bootstrap { fraction };
            Some((load_store(dir)?, load_features(dir)?, DatasetSplit::default()))
        }
        _ => None,
    };
    let source = Data {
        store: &store,
        features: &features,
        split: &split,
    };
    let target_data = target.as_ref().map(|(s, f, sp)| Data {
        store: s,
        features: f,
        split: sp,
    });
    let (model, report) = run_experiment(source, target_data, &config)?;
    fs::write(&args.report, report.to_json()).with_context(|| format!("writing {}", args.report.display()))?;
    if let Some(path) = &args.csv {
        let file = File::create(path).with_context(|| format!("writing {}", path.display()))?;
        write_per_movie_csv(BufWriter::new(file), &report.test)?;
    }
    if let Some(path) = &args.model_out {
        model.save(path)?;
    }
    if let Some(val) = &report.val {
        println!(
            "val  replacement {:.4}  face {:.4}  random {:.4}",
            val.replacement_accuracy, val.face_accuracy, val.random_baseline
        );
    }
    let test = &report.test;
    println!(
        "test replacement {:.4}  face {:.4}  random {:.4}  unmatched {:.4}",
        test.replacement_accuracy, test.face_accuracy, test.random_baseline, test.unmatched_rate
    );
    let mut missed = Vec::new();
    if let Some(min) = args.min_accuracy.filter(|&m| test.replacement_accuracy < m) {
        missed.push(format!("replacement accuracy {:.4} < {min}", test.replacement_accuracy));
    }
    if let Some(min) = args.min_face_accuracy.filter(|&m| test.face_accuracy < m) {
        missed.push(format!("face accuracy {:.4} < {min}", test.face_accuracy));
    }
    if !missed.is_empty() {
        return Err(ThresholdMissed(missed.join("; ")).into());
    }
    Ok(())
}

pub fn replace(args: &ReplaceArgs, seed: u64) -> Result<()> {
    let store = load_store(&args.data.data)?;
    let features = load_features(&args.data.data)?;
    let split = load_split(&args.data, &store, seed)?;
    let model = EmbeddingModel::load(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    let k = args.k.unwrap_or(ExperimentConfig::default().k);
    let faces = build_face_index(&store, &split, &features, k)?;
    let namer = Namer {
        store: &store,
        features: &features,
        model: &model,
        faces: &faces,
        max_cost: None,
    };
    let clips: Vec<&str> = store
        .clips()
        .map(|(_, id, _)| id)
        .filter(|id| split.get(args.clips).contains(*id))
        .collect();
    let predictions = namer.predict(clips.iter().copied())?;
    let mut buf = Vec::new();
    write_predictions(&mut buf, &predictions)?;
    eprintln!("{} clips named", predictions.len());
    match &args.out {
        Some(p) => fs::write(p, buf).with_context(|| format!("writing {}", p.display())),
        None => Ok(io::stdout().lock().write_all(&buf)?),
    }
}

pub fn stats(args: &StatsArgs, seed: u64) -> Result<()> {
    let store = load_store(&args.data.data)?;
    let split = load_split(&args.data, &store, seed)?;
    let report = castid::dataset::dataset_stats(&store, Some(&split));
    emit(args.out.as_ref(), &serde_json::to_string_pretty(&report)?)
}

pub fn synth(args: &SynthArgs, seed: u64) -> Result<()> {
    let mut spec = match &args.spec {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str::<SynthSpec>(&text).with_context(|| format!("parsing {}", path.display()))?
        }
        None => SynthSpec::default(),
    };
    let set = |field: &mut usize, v: Option<usize>| {
        if let Some(v) = v {
            *field = v;
        }
    };
    set(&mut spec.movies, args.movies);
    set(&mut spec.characters_per_movie, args.characters);
    set(&mut spec.clips_per_movie, args.clips);
    set(&mut spec.verbs, args.verbs);
    set(&mut spec.visual_dim, args.visual_dim);
    set(&mut spec.face_dim, args.face_dim);
    set(&mut spec.verb_dim, args.verb_dim);
    if let Some(p) = &args.movie_prefix {
        spec.movie_prefix = p.clone();
    }
    if let Some(w) = args.world_seed {
        spec.world_seed = w;
    }
    let out = generate_synthetic(&spec, seed)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    out.store.save(args.out.join(ANNOTATIONS))?;
    out.features.save_dir(&args.out)?;
    fs::write(args.out.join("synth_spec.json"), serde_json::to_string_pretty(&spec)?)?;
    eprintln!(
        "{} movies, {} clips, {} tracks -> {}",
        out.store.movies().len(),
        out.store.clip_count(),
        out.store.tracks().count(),
        args.out.display()
    );
    Ok(())
}

/// Groups a combined cluster export by the movie of each cluster's tracks.
pub fn clusters_by_movie(store: &AnnotationStore, set: ClusterSet) -> Result<BTreeMap<String, ClusterSet>> {
    let mut out: BTreeMap<String, ClusterSet> = store
        .movies()
        .keys()
        .map(|m| (m.clone(), ClusterSet::default()))
        .collect();
    for c in set.clusters {
        let Some(first) = c.track_ids.first() else {
            bail!("cluster {} has no tracks", c.cluster_id)
        };
        let Some(loc) = store.track_location(first) else {
            bail!("cluster {} names unknown track {first:?}", c.cluster_id)
        };
        out.get_mut(&loc.movie_id)
            .expect("movie of a stored track")
            .clusters
            .push(c);
    }
    Ok(out)
}
