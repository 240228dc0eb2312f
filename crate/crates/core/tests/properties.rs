use std::collections::{BTreeMap, BTreeSet};

use castid::annotation::{RejectReason, ServiceState};
use castid::assignment::{solve_assignment, CostMatrix};
use castid::clustering::{cut_partition, ward_cluster, Cluster, ClusterSet, ClusterStatus, CutCriterion};
use castid::dataset::{dataset_stats, generate_splits, generate_synthetic, BoundingBox, Provenance, SynthSpec};
use castid::embedding::{
    loss_proposed, loss_siamese, loss_triplet2, loss_triplet4, train, Gradients, LossKind, Metric, Sgd, TrainConfig,
    TrainingQuadruple,
};
use castid::evaluation::{
    evaluate_clips, random_baseline, replacement_accuracy, run_experiment, Data, EvalReport, ExperimentConfig,
};
use castid::naming::{build_face_index, match_verbs_tracks, FaceIndex, Namer};
use castid::tracking::{extract_tracks, iou, Detection, Patch, TrackingConfig};
use castid::{AnnotationStore, EmbeddingModel};
use proptest::prelude::*;
use proptest::sample::subsequence;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        ..ProptestConfig::default()
    }
}

fn small_spec(movies: usize, clips: usize) -> SynthSpec {
    SynthSpec {
        movies,
        clips_per_movie: clips,
        visual_dim: 16,
        face_dim: 8,
        verb_dim: 12,
        ..SynthSpec::default()
    }
}

fn matrix(max: usize) -> impl Strategy<Value = CostMatrix> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| {
        prop::collection::vec(0.0..10.0f64, r * c).prop_map(move |v| CostMatrix::new(r, c, v).unwrap())
    })
}

fn brute_force(m: &CostMatrix) -> f64 {
    fn go(m: &CostMatrix, row: usize, used: &mut Vec<bool>, transposed: bool) -> f64 {
        let (rows, cols) = if transposed {
            (m.cols(), m.rows())
        } else {
            (m.rows(), m.cols())
        };
        if row == rows {
            return 0.0;
        }
        let mut best = f64::INFINITY;
        for c in 0..cols {
            if !used[c] {
                used[c] = true;
                let v = if transposed { m.get(c, row) } else { m.get(row, c) };
                best = best.min(v + go(m, row + 1, used, transposed));
                used[c] = false;
            }
        }
        best
    }
    let transposed = m.rows() > m.cols();
    let cols = if transposed { m.rows() } else { m.cols() };
    go(m, 0, &mut vec![false; cols], transposed)
}

proptest! {
    #![proptest_config(config(300))]

    #[test]
    fn assignment_is_optimal_and_well_formed(m in matrix(6)) {
        let a = solve_assignment(&m);
        prop_assert_eq!(a.pairs.len(), m.rows().min(m.cols()));
        let rows: BTreeSet<_> = a.pairs.iter().map(|p| p.0).collect();
        let cols: BTreeSet<_> = a.pairs.iter().map(|p| p.1).collect();
        prop_assert_eq!(rows.len(), a.pairs.len());
        prop_assert_eq!(cols.len(), a.pairs.len());
        let sum: f64 = a.pairs.iter().map(|&(i, j)| m.get(i, j)).sum();
        prop_assert!((sum - a.total_cost).abs() < 1e-9);
        prop_assert!((a.total_cost - brute_force(&m)).abs() < 1e-9);
    }

    #[test]
    fn assignment_row_shift(m in matrix(6), row in 0usize..6, shift in -5.0..5.0f64) {
        prop_assume!(m.rows() <= m.cols());
        let row = row % m.rows();
        let shifted = CostMatrix::from_fn(m.rows(), m.cols(), |i, j| m.get(i, j) + if i == row { shift } else { 0.0 }).unwrap();
        let (a, b) = (solve_assignment(&m), solve_assignment(&shifted));
        prop_assert_eq!(&a.pairs, &b.pairs);
        prop_assert!((b.total_cost - a.total_cost - shift).abs() < 1e-9);
    }

    #[test]
    fn assignment_transposes(m in matrix(6)) {
        let a = solve_assignment(&m);
        let t = solve_assignment(&m.transpose());
        let mut flipped: Vec<_> = t.pairs.iter().map(|&(i, j)| (j, i)).collect();
        flipped.sort();
        prop_assert_eq!(a.pairs, flipped);
        prop_assert!((a.total_cost - t.total_cost).abs() < 1e-9);
    }
}

/// Faces in separate horizontal lanes moving along x, each seen in a subset
/// of frames.
#[derive(Debug, Clone)]
struct Scene {
    frames: usize,
    objects: Vec<(f64, f64, u8, Vec<bool>)>,
}

fn scene() -> impl Strategy<Value = Scene> {
    (10usize..30, 1usize..4).prop_flat_map(|(frames, n)| {
        let object = (
            0.0..200.0f64,
            -3.0..3.0f64,
            any::<u8>(),
            prop::collection::vec(prop::bool::weighted(0.8), frames),
        );
        prop::collection::vec(object, n).prop_map(move |objects| Scene { frames, objects })
    })
}

impl Scene {
    fn detections(&self, skip: Option<usize>) -> Vec<Detection> {
        let mut out = Vec::new();
        for (k, (x0, vx, shade, seen)) in self.objects.iter().enumerate() {
            if Some(k) == skip {
                continue;
            }
            for (f, &s) in seen.iter().enumerate() {
                if s {
                    out.push(Detection {
                        frame: f,
                        bbox: BoundingBox::new(x0 + vx * f as f64, 200.0 * k as f64, 40.0, 40.0).unwrap(),
                        patch: Patch::filled(*shade),
                    });
                }
            }
        }
        out
    }
}

type TrackShape = (usize, Vec<(u64, u64)>, String);

fn shapes(tracks: &[castid::dataset::FaceTrack]) -> Vec<TrackShape> {
    let mut s: Vec<TrackShape> = tracks
        .iter()
        .map(|t| {
            (
                t.first_frame,
                t.boxes.iter().map(|b| (b.x.to_bits(), b.y.to_bits())).collect(),
                castid::dataset::provenance_string(&t.provenance),
            )
        })
        .collect();
    s.sort();
    s
}

proptest! {
    #![proptest_config(config(200))]

    #[test]
    fn tracks_are_well_formed(scene in scene(), t_counter in 1usize..6, min_len in 2usize..9) {
        let cfg = TrackingConfig { t_counter, min_track_len: min_len, ..TrackingConfig::default() };
        let dets = scene.detections(None);
        let tracks = extract_tracks("c", &dets, scene.frames, &cfg).unwrap();
        let mut claimed = BTreeSet::new();
        for t in &tracks {
            prop_assert_eq!(t.boxes.len(), t.provenance.len());
            prop_assert!(t.boxes.len() >= min_len);
            prop_assert_eq!(t.provenance.first(), Some(&Provenance::Detected));
            prop_assert_eq!(t.provenance.last(), Some(&Provenance::Detected));
            let mut run = 0;
            for (i, p) in t.provenance.iter().enumerate() {
                if *p == Provenance::Predicted {
                    run += 1;
                    prop_assert!(run <= t_counter);
                } else {
                    run = 0;
                    let b = t.boxes[i];
                    let key = (t.first_frame + i, b.x.to_bits(), b.y.to_bits());
                    prop_assert!(dets.iter().any(|d| d.frame == key.0 && d.bbox == b), "detected box is not an input");
                    prop_assert!(claimed.insert(key), "detection used twice");
                }
            }
        }
        let again = extract_tracks("c", &dets, scene.frames, &cfg).unwrap();
        prop_assert_eq!(tracks, again);
    }

    #[test]
    fn removing_a_separate_object_keeps_other_tracks(scene in scene(), drop in 0usize..4) {
        prop_assume!(scene.objects.len() > 1);
        let drop = drop % scene.objects.len();
        let cfg = TrackingConfig::default();
        let full = extract_tracks("c", &scene.detections(None), scene.frames, &cfg).unwrap();
        let lane = (200.0 * drop as f64).to_bits();
        let kept: Vec<_> = full.iter().filter(|t| t.boxes[0].y.to_bits() != lane).cloned().collect();
        let reduced = extract_tracks("c", &scene.detections(Some(drop)), scene.frames, &cfg).unwrap();
        prop_assert_eq!(shapes(&kept), shapes(&reduced));
    }

    #[test]
    fn iou_is_bounded_and_symmetric(
        a in (-50.0..50.0f64, -50.0..50.0f64, 1.0..60.0f64, 1.0..60.0f64),
        b in (-50.0..50.0f64, -50.0..50.0f64, 1.0..60.0f64, 1.0..60.0f64),
    ) {
        let a = BoundingBox::new(a.0, a.1, a.2, a.3).unwrap();
        let b = BoundingBox::new(b.0, b.1, b.2, b.3).unwrap();
        let v = iou(&a, &b);
        prop_assert!((0.0..=1.0).contains(&v));
        prop_assert_eq!(v, iou(&b, &a));
        prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-12);
    }
}

fn points(max: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2..=max, 1usize..4).prop_flat_map(|(n, d)| prop::collection::vec(prop::collection::vec(-10.0..10.0f64, d), n))
}

fn sse(points: &[Vec<f64>], members: &[usize]) -> f64 {
    let d = points[0].len();
    let mean: Vec<f64> = (0..d)
        .map(|k| members.iter().map(|&i| points[i][k]).sum::<f64>() / members.len() as f64)
        .collect();
    members
        .iter()
        .map(|&i| points[i].iter().zip(&mean).map(|(x, m)| (x - m) * (x - m)).sum::<f64>())
        .sum()
}

fn partition(p: Vec<Vec<usize>>) -> BTreeSet<BTreeSet<usize>> {
    p.into_iter().map(|c| c.into_iter().collect()).collect()
}

proptest! {
    #![proptest_config(config(200))]

    #[test]
    fn ward_merges_raise_sse_monotonically(pts in points(10)) {
        let n = pts.len();
        let merges = ward_cluster(&pts).unwrap();
        prop_assert_eq!(merges.len(), n - 1);
        let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
        let mut last = f64::NEG_INFINITY;
        for m in &merges {
            let (l, r) = (members[m.left].clone(), members[m.right].clone());
            let joined: Vec<usize> = l.iter().chain(&r).copied().collect();
            let rise = sse(&pts, &joined) - sse(&pts, &l) - sse(&pts, &r);
            prop_assert!((m.height - rise).abs() <= 1e-9 * (1.0 + rise.abs()), "height {} vs {}", m.height, rise);
            prop_assert!(m.height >= last - 1e-9);
            prop_assert_eq!(m.size, joined.len());
            last = m.height;
            members.push(joined);
        }
    }

    #[test]
    fn ward_partition_ignores_input_order(pts in points(12), k in 1usize..12, perm in any::<prop::sample::Index>()) {
        let n = pts.len();
        let k = 1 + k % n;
        let mut order: Vec<usize> = (0..n).collect();
        let r = perm.index(n);
        order.rotate_left(r);
        order.reverse();
        let shuffled: Vec<Vec<f64>> = order.iter().map(|&i| pts[i].clone()).collect();
        let a = cut_partition(n, &ward_cluster(&pts).unwrap(), CutCriterion::K(k)).unwrap();
        let b = cut_partition(n, &ward_cluster(&shuffled).unwrap(), CutCriterion::K(k)).unwrap();
        prop_assert_eq!(a.len(), k);
        prop_assert!(a.iter().all(|c| !c.is_empty()));
        let b: Vec<Vec<usize>> = b.into_iter().map(|c| c.into_iter().map(|i| order[i]).collect()).collect();
        prop_assert_eq!(partition(a), partition(b));
    }
}

proptest! {
    #![proptest_config(config(40))]

    #[test]
    fn store_round_trips_and_splits_partition(movies in 1usize..4, clips in 1usize..30, seed in 0u64..1000) {
        let data = generate_synthetic(&small_spec(movies, clips), seed).unwrap();
        let text = data.store.to_json();
        let again = AnnotationStore::from_json(&text).unwrap();
        prop_assert_eq!(again.to_json(), text);

        let split = generate_splits(&data.store, seed);
        let all: BTreeSet<&str> = data.store.clips().map(|(_, c, _)| c).collect();
        let union: BTreeSet<&str> = split.train.iter().chain(&split.val).chain(&split.test).map(String::as_str).collect();
        prop_assert_eq!(split.train.len() + split.val.len() + split.test.len(), all.len());
        prop_assert_eq!(union, all);
        for (movie_id, movie) in data.store.movies() {
            let n = movie.clips.len();
            if n >= 10 {
                let train = movie.clips.keys().filter(|c| split.train.contains(*c)).count();
                prop_assert!((train as f64 - 0.8 * n as f64).abs() <= 1.0 + 1e-9, "{movie_id}: {train} of {n}");
            }
        }
    }

    #[test]
    fn stats_are_additive_over_movies(movies in 1usize..4, clips in 1usize..20, seed in 0u64..1000) {
        let data = generate_synthetic(&small_spec(movies, clips), seed).unwrap();
        let split = generate_splits(&data.store, seed);
        let whole = dataset_stats(&data.store, Some(&split));
        let parts: Vec<_> = data
            .store
            .movies()
            .keys()
            .map(|m| dataset_stats(&data.store.select_movies([m.as_str()]).unwrap(), Some(&split)))
            .collect();
        let sum = |f: fn(&castid::dataset::StatsReport) -> usize| parts.iter().map(f).sum::<usize>();
        prop_assert_eq!(whole.movies, sum(|s| s.movies));
        prop_assert_eq!(whole.clips, sum(|s| s.clips));
        prop_assert_eq!(whole.train_clips, sum(|s| s.train_clips));
        prop_assert_eq!(whole.val_clips, sum(|s| s.val_clips));
        prop_assert_eq!(whole.test_clips, sum(|s| s.test_clips));
        prop_assert_eq!(whole.mentions, sum(|s| s.mentions));
        prop_assert_eq!(whole.tracks, sum(|s| s.tracks));
        prop_assert_eq!(whole.labeled_tracks, sum(|s| s.labeled_tracks));
        prop_assert_eq!(whole.bounding_boxes, sum(|s| s.bounding_boxes));
        prop_assert_eq!(whole.annotated_characters, sum(|s| s.annotated_characters));
    }
}

fn vector(d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0..2.0f64, d)
}

fn quadruples(v: usize, t: usize) -> impl Strategy<Value = Vec<TrainingQuadruple>> {
    let q = (
        vector(v),
        vector(t),
        vector(t),
        vector(v),
        vector(v),
        prop::option::of(vector(v)),
    )
        .prop_map(|(a, b, bn, ap, an, aw)| TrainingQuadruple {
            a,
            b,
            b_neg: Some(bn),
            a_pos: Some(ap),
            a_neg: Some(an),
            a_wrong: aw,
        });
    prop::collection::vec(q, 1..6)
}

fn metric() -> impl Strategy<Value = Metric> {
    prop_oneof![Just(Metric::EuclideanSq), Just(Metric::CosineDist)]
}

proptest! {
    #![proptest_config(config(100))]

    #[test]
    fn hinge_losses_are_nonnegative(items in quadruples(5, 4), metric in metric(), seed in 0u64..100, alpha in 0.01..1.0f64) {
        let model = EmbeddingModel::new(5, 4, 3, metric, false, seed);
        for loss in [loss_siamese, loss_triplet2, loss_triplet4, loss_proposed] {
            let v = loss(&model, &items, alpha).unwrap();
            prop_assert!(v >= 0.0 && v.is_finite());
        }
    }

    #[test]
    fn cosine_distance_is_scale_invariant(u in vector(6), v in vector(6), c in 0.01..100.0f64) {
        prop_assume!(u.iter().any(|x| x.abs() > 1e-3) && v.iter().any(|x| x.abs() > 1e-3));
        let model = EmbeddingModel::new(6, 6, 6, Metric::CosineDist, false, 0);
        let scaled: Vec<f64> = u.iter().map(|x| c * x).collect();
        prop_assert!((model.dist(&scaled, &v) - model.dist(&u, &v)).abs() < 1e-9);
    }

    #[test]
    fn weight_decay_shrinks_weights(seed in 0u64..1000, steps in 1usize..10) {
        let mut model = EmbeddingModel::new(6, 5, 4, Metric::EuclideanSq, true, seed);
        let zero = Gradients { blocks: model.affines().iter().map(|a| castid::embedding::Affine::zeros(a.outputs(), a.inputs())).collect() };
        let mut sgd = Sgd::new(0.002, 0.9, 0.0005);
        let norm = |m: &EmbeddingModel| m.affines().iter().map(|a| a.sq_norm()).sum::<f64>();
        let mut last = norm(&model);
        for _ in 0..steps {
            sgd.step(&mut model, &zero);
            let now = norm(&model);
            prop_assert!(now < last);
            last = now;
        }
    }

    #[test]
    fn verb_track_matching_is_injective(
        verbs in prop::collection::vec(vector(4), 0..5),
        tracks in prop::collection::vec(vector(5), 0..5),
        seed in 0u64..100,
    ) {
        let model = EmbeddingModel::new(5, 4, 3, Metric::EuclideanSq, false, seed);
        let a = match_verbs_tracks(&model, &verbs, &tracks, None).unwrap();
        prop_assert_eq!(a.pairs.len(), verbs.len().min(tracks.len()));
        let cols: BTreeSet<_> = a.pairs.iter().map(|p| p.1).collect();
        prop_assert_eq!(cols.len(), a.pairs.len());
    }

    #[test]
    fn face_classification_ignores_insertion_order(
        labeled in prop::collection::vec((vector(3), 0usize..3), 1..15),
        keep in any::<prop::sample::Index>(),
        q in vector(3),
        k in 1usize..6,
    ) {
        let names = ["Ava", "Ben", "Cy"];
        let pts: Vec<(Vec<f64>, String)> = labeled.iter().map(|(p, l)| (p.clone(), names[*l].to_owned())).collect();
        let mut rotated = pts.clone();
        rotated.rotate_left(keep.index(pts.len()));
        rotated.reverse();
        let a = FaceIndex::new(pts, k).unwrap();
        let b = FaceIndex::new(rotated, k).unwrap();
        prop_assert_eq!(a.classify(&q).unwrap(), b.classify(&q).unwrap());
    }
}

#[test]
fn training_is_deterministic() {
    let data = generate_synthetic(&small_spec(2, 20), 5).unwrap();
    let split = generate_splits(&data.store, 5);
    let cfg = TrainConfig {
        epochs: 2,
        seed: 5,
        ..TrainConfig::default()
    };
    let run = || {
        let m = train(
            &data.store,
            &data.features,
            &split,
            LossKind::Proposed,
            Metric::EuclideanSq,
            &cfg,
        )
        .unwrap();
        let mut buf = Vec::new();
        m.write_checkpoint(&mut buf).unwrap();
        buf
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(config(20))]

    #[test]
    fn accuracies_are_micro_averages(seed in 0u64..1000, movies in 1usize..4) {
        let data = generate_synthetic(&small_spec(movies, 15), seed).unwrap();
        let split = generate_splits(&data.store, seed);
        let model = EmbeddingModel::new(16, 12, 8, Metric::EuclideanSq, false, seed);
        let faces = build_face_index(&data.store, &split, &data.features, 3).unwrap();
        let namer = Namer { store: &data.store, features: &data.features, model: &model, faces: &faces, max_cost: None };
        let clips: Vec<String> = data.store.clips().map(|(_, c, _)| c.to_owned()).collect();
        let (preds, metrics) = evaluate_clips(&namer, &clips, &[], seed, 1).unwrap();

        let slots: usize = preds.iter().flat_map(|p| &p.slots).filter(|s| s.truth.is_some()).count();
        let correct: usize = preds.iter().flat_map(|p| &p.slots).filter(|s| s.truth.is_some() && s.predicted == s.truth).count();
        prop_assert_eq!(metrics.slots, slots);
        prop_assert_eq!(metrics.correct, correct);
        prop_assert!((0.0..=1.0).contains(&metrics.replacement_accuracy));
        if slots > 0 {
            prop_assert_eq!(metrics.replacement_accuracy, correct as f64 / slots as f64);
            prop_assert_eq!(replacement_accuracy(&preds).unwrap(), metrics.replacement_accuracy);
            let weighted: f64 = metrics.per_movie.values().map(|m| m.accuracy * m.slots as f64).sum::<f64>() / slots as f64;
            prop_assert!((weighted - metrics.replacement_accuracy).abs() < 1e-12);
        }
        prop_assert_eq!(metrics.per_movie.values().map(|m| m.slots).sum::<usize>(), slots);

        let a = random_baseline(&data.store, &clips, seed, 1).unwrap();
        prop_assert_eq!(a.to_bits(), random_baseline(&data.store, &clips, seed, 1).unwrap().to_bits());
        prop_assert!((0.0..=1.0).contains(&a));
    }
}

#[test]
fn report_round_trips() {
    let data = generate_synthetic(&small_spec(2, 30), 8).unwrap();
    let split = generate_splits(&data.store, 8);
    let cfg = ExperimentConfig {
        train: TrainConfig {
            epochs: 2,
            seed: 8,
            ..TrainConfig::default()
        },
        baseline_trials: 3,
        ..ExperimentConfig::default()
    };
    let source = Data {
        store: &data.store,
        features: &data.features,
        split: &split,
    };
    let (_, report) = run_experiment(source, None, &cfg).unwrap();
    let text = report.to_json();
    assert_eq!(EvalReport::from_json(&text).unwrap(), report);
}

#[derive(Debug, Clone)]
enum Op {
    Label(usize, usize),
    Reject(usize, bool),
    Split(usize, Vec<usize>),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0usize..8, 0usize..6).prop_map(|(c, n)| Op::Label(c, n)),
        (0usize..8, any::<bool>()).prop_map(|(c, w)| Op::Reject(c, w)),
        (0usize..8, subsequence((0..6).collect::<Vec<usize>>(), 1..4)).prop_map(|(c, t)| Op::Split(c, t)),
    ]
}

fn initial_clusters(store: &AnnotationStore) -> BTreeMap<String, ClusterSet> {
    store
        .movies()
        .iter()
        .map(|(id, m)| {
            let tracks: Vec<String> = m
                .clips
                .values()
                .flat_map(|c| c.tracks.iter().map(|t| t.track_id.clone()))
                .collect();
            let clusters = tracks
                .chunks(6)
                .enumerate()
                .map(|(k, chunk)| Cluster {
                    cluster_id: format!("{id}-{k}"),
                    track_ids: chunk.to_vec(),
                    status: ClusterStatus::Proposed,
                    label: None,
                })
                .collect();
            (id.clone(), ClusterSet { clusters })
        })
        .collect()
}

proptest! {
    #![proptest_config(config(60))]

    #[test]
    fn audit_replay_reproduces_state(seed in 0u64..1000, ops in prop::collection::vec(op(), 0..25)) {
        let data = generate_synthetic(&small_spec(1, 6), seed).unwrap();
        let clusters = initial_clusters(&data.store);
        let mut state = ServiceState::new(data.store.clone(), clusters.clone()).unwrap();
        let mut names: Vec<String> = data.store.movies().values().next().unwrap().characters.iter().flat_map(|c| c.aliases.clone()).collect();
        names.push("Nobody".into());
        for (i, op) in ops.iter().enumerate() {
            let ids: Vec<String> = state.cluster_sets.values().flat_map(|s| s.clusters.iter().map(|c| c.cluster_id.clone())).collect();
            let time = format!("2026-01-01T00:00:{:02}Z", i % 60);
            let before = state.clone();
            let result = match op {
                Op::Label(c, n) => state.label(&ids[c % ids.len()], &names[n % names.len()], "p", &time),
                Op::Reject(c, wrong) => {
                    let reason = if *wrong { RejectReason::Wrong } else { RejectReason::Unknown };
                    state.reject(&ids[c % ids.len()], reason, "p", &time)
                }
                Op::Split(c, picks) => {
                    let id = &ids[c % ids.len()];
                    let tracks = state.cluster(id).unwrap().track_ids.clone();
                    let chosen: Vec<String> = picks.iter().filter(|&&p| p < tracks.len()).map(|&p| tracks[p].clone()).collect();
                    state.split(id, &chosen, "p", &time)
                }
            };
            if result.is_err() {
                prop_assert_eq!(&state, &before, "a failed event changed the state");
            }
        }
        let replayed = ServiceState::replay(data.store.clone(), clusters, &state.audit).unwrap();
        prop_assert_eq!(&replayed, &state);

        let exported = AnnotationStore::from_json(&state.store.to_json()).unwrap();
        prop_assert_eq!(exported.to_json(), state.store.to_json());
        for set in state.cluster_sets.values() {
            for c in &set.clusters {
                prop_assert_eq!(c.status == ClusterStatus::Verified, c.label.is_some());
                for t in &c.track_ids {
                    let label = state.store.track(t).unwrap().label.character().map(str::to_owned);
                    if c.status == ClusterStatus::Verified {
                        prop_assert_eq!(&label, &c.label);
                    }
                }
            }
        }
        let mut seen = BTreeSet::new();
        for set in state.cluster_sets.values() {
            for t in set.clusters.iter().flat_map(|c| &c.track_ids) {
                prop_assert!(seen.insert(t.clone()), "track {t} in two clusters");
            }
        }
    }
}
