use castid::dataset::{generate_splits, generate_synthetic, SplitName, SynthSpec};
use castid::embedding::{train, LossKind, Metric, TrainConfig};
use castid::naming::{build_face_index, Namer};

#[test]
fn every_named_slot_is_rendered() {
    let spec = SynthSpec {
        movies: 2,
        clips_per_movie: 40,
        ..SynthSpec::default()
    };
    let data = generate_synthetic(&spec, 3).unwrap();
    let split = generate_splits(&data.store, 3);
    let config = TrainConfig {
        epochs: 3,
        seed: 3,
        ..TrainConfig::default()
    };
    let model = train(
        &data.store,
        &data.features,
        &split,
        LossKind::Proposed,
        Metric::EuclideanSq,
        &config,
    )
    .unwrap();
    let faces = build_face_index(&data.store, &split, &data.features, 3).unwrap();
    let namer = Namer {
        store: &data.store,
        features: &data.features,
        model: &model,
        faces: &faces,
        max_cost: None,
    };

    let clips: Vec<&str> = split.get(SplitName::Train).iter().map(String::as_str).collect();
    let predictions = namer.predict(clips.iter().copied()).unwrap();
    let mut multi = 0;
    for p in &predictions {
        let tokens: Vec<&str> = p.caption_rendered.split_whitespace().collect();
        let named = p.slots.iter().filter(|s| s.predicted.is_some()).count();
        if named > 1 {
            multi += 1;
        }
        for s in &p.slots {
            let token = tokens[s.token_index];
            match &s.predicted {
                Some(name) => assert!(
                    token.starts_with(name.as_str()),
                    "{}: slot {} renders {token:?}",
                    p.clip_id,
                    s.token_index
                ),
                None => assert!(
                    token.to_ascii_lowercase().starts_with("someone"),
                    "{}: {token:?}",
                    p.clip_id
                ),
            }
        }
    }
    assert!(multi > 0, "no clip named more than one slot");
}
