//! Face track extraction from per-frame detections.
//!
//! Each frame, every live tracker predicts the next box, predictions and
//! detections are associated with Kuhn–Munkres on `1 - IoU`, and a detection
//! extends a track only when its overlap exceeds `t_iou` and its patch differs
//! from the track's last detection by less than `t_visual`. A tracker that
//! misses keeps extending its track with predicted boxes for up to `t_counter`
//! frames; after that, or at the end of the clip, the unconfirmed predictions
//! are removed. Short tracks and tracks contained in another are dropped.
//!
//! The box predictor is a constant-velocity extrapolation from the two most
//! recent boxes of the track (of either provenance), keeping the last size.

use std::io::BufRead;

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::assignment::{solve_assignment, CostMatrix};
use crate::dataset::{BoundingBox, FaceTrack, Provenance, TrackLabel};
use crate::error::{Error, Result};

pub const PATCH_SIDE: usize = 32;

/// Grayscale appearance patch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Patch {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

impl Patch {
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != width * height {
            return Err(Error::Dimension {
                expected: width * height,
                actual: data.len(),
            });
        }
        Ok(Self { width, height, data })
    }

    /// A 32×32 patch from 1024 row-major intensities.
    pub fn standard(data: Vec<u8>) -> Result<Self> {
        Self::new(PATCH_SIDE, PATCH_SIDE, data)
    }

    pub fn filled(value: u8) -> Self {
        Self {
            width: PATCH_SIDE,
            height: PATCH_SIDE,
            data: vec![value; PATCH_SIDE * PATCH_SIDE],
        }
    }

    /// Nearest-neighbour resampling of an arbitrary crop to 32×32.
    pub fn resample_nearest(width: usize, height: usize, data: &[u8]) -> Result<Self> {
        if width == 0 || height == 0 || data.len() != width * height {
            return Err(Error::Dimension {
                expected: width * height,
                actual: data.len(),
            });
        }
        let mut out = Vec::with_capacity(PATCH_SIDE * PATCH_SIDE);
        for r in 0..PATCH_SIDE {
            let sr = r * height / PATCH_SIDE;
            for c in 0..PATCH_SIDE {
                let sc = c * width / PATCH_SIDE;
                out.push(data[sr * width + sc]);
            }
        }
        Self::standard(out)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Detection {
    pub frame: usize,
    pub bbox: BoundingBox,
    pub patch: Patch,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackingConfig {
    pub t_iou: f64,
    pub t_visual: f64,
    pub t_counter: usize,
    pub min_track_len: usize,
}

impl Default for TrackingConfig {
    fn default() -> Self {
        Self {
            t_iou: 0.5,
            t_visual: 10.0,
            t_counter: 8,
            min_track_len: 8,
        }
    }
}

impl TrackingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.t_iou > 0.0 && self.t_iou <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "t_iou must lie in (0, 1], got {}",
                self.t_iou
            )));
        }
        if self.t_visual.is_nan() || self.t_visual <= 0.0 || self.t_counter == 0 || self.min_track_len == 0 {
            return Err(Error::InvalidArgument("tracking thresholds must be positive".into()));
        }
        Ok(())
    }
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let ix = (a.x + a.w).min(b.x + b.w) - a.x.max(b.x);
    let iy = (a.y + a.h).min(b.y + b.h) - a.y.max(b.y);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    inter / (a.area() + b.area() - inter)
}

/// Mean absolute per-pixel intensity difference.
pub fn appearance_diff(a: &Patch, b: &Patch) -> Result<f64> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::Dimension {
            expected: a.data.len(),
            actual: b.data.len(),
        });
    }
    let total: u64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| u64::from(x.abs_diff(y)))
        .sum();
    Ok(total as f64 / a.data.len().max(1) as f64)
}

/// Live tracker attached to a track under construction.
#[derive(Debug, Clone)]
pub struct TrackerState {
    pub track_ref: usize,
    pub last_box: BoundingBox,
    pub velocity: (f64, f64),
    pub miss_counter: usize,
    /// Predicted boxes appended since the last confirmed detection.
    pub pending: Vec<BoundingBox>,
    last_patch: Patch,
}

impl TrackerState {
    fn new(track_ref: usize, det: &Detection) -> Self {
        Self {
            track_ref,
            last_box: det.bbox,
            velocity: (0.0, 0.0),
            miss_counter: 0,
            pending: Vec::new(),
            last_patch: det.patch.clone(),
        }
    }

    fn prediction(&self) -> BoundingBox {
        self.last_box.translated(self.velocity.0, self.velocity.1)
    }

    fn push(&mut self, b: BoundingBox) {
        self.velocity = (b.x - self.last_box.x, b.y - self.last_box.y);
        self.last_box = b;
    }
}

struct Building {
    first_frame: usize,
    boxes: Vec<BoundingBox>,
    provenance: Vec<Provenance>,
}

impl Building {
    fn truncate_trailing(&mut self, n: usize) {
        let keep = self.boxes.len() - n;
        self.boxes.truncate(keep);
        self.provenance.truncate(keep);
    }
}

/// Links detections into tracks for one clip. `detections` may be in any
/// order; frames at or beyond `n_frames` are ignored. Tracks are numbered
/// `"{clip_id}-t{k}"` in creation order.
pub fn extract_tracks(
    clip_id: &str,
    detections: &[Detection],
    n_frames: usize,
    config: &TrackingConfig,
) -> Result<Vec<FaceTrack>> {
    config.validate()?;
    let mut by_frame: Vec<Vec<&Detection>> = vec![Vec::new(); n_frames];
    for d in detections {
        if d.frame < n_frames {
            by_frame[d.frame].push(d);
        }
    }

    let mut tracks: Vec<Building> = Vec::new();
    let mut trackers: Vec<TrackerState> = Vec::new();

    for (frame, dets) in by_frame.iter().enumerate() {
        let predictions: Vec<BoundingBox> = trackers.iter().map(TrackerState::prediction).collect();

        // accepted[d] = tracker index that receives detection d.
        let mut accepted: Vec<Option<usize>> = vec![None; dets.len()];
        if !trackers.is_empty() && !dets.is_empty() {
            let overlaps: Vec<Vec<f64>> = predictions
                .iter()
                .map(|p| dets.iter().map(|d| iou(p, &d.bbox)).collect())
                .collect();
            let mut feasible = vec![vec![false; dets.len()]; trackers.len()];
            for (t, tracker) in trackers.iter().enumerate() {
                for (d, det) in dets.iter().enumerate() {
                    let overlap = overlaps[t][d];
                    feasible[t][d] = overlap > 0.0
                        && overlap > config.t_iou
                        && appearance_diff(&det.patch, &tracker.last_patch)? < config.t_visual;
                }
            }
            // Pairs failing a gate cost more than any set of feasible pairs,
            // so the solver maximizes the number of accepted matches first.
            let blocked = 2.0 * (trackers.len().max(dets.len()) as f64 + 1.0);
            let cost = CostMatrix::from_fn(trackers.len(), dets.len(), |t, d| {
                if feasible[t][d] {
                    1.0 - overlaps[t][d]
                } else {
                    blocked
                }
            })?;
            for (t, d) in solve_assignment(&cost).pairs {
                if feasible[t][d] {
                    accepted[d] = Some(t);
                }
            }
        }
        let mut receives: Vec<Option<usize>> = vec![None; trackers.len()];
        for (d, t) in accepted.iter().enumerate() {
            if let Some(t) = t {
                receives[*t] = Some(d);
            }
        }

        let mut survivors = Vec::with_capacity(trackers.len());
        for (t, mut tracker) in trackers.drain(..).enumerate() {
            let track = &mut tracks[tracker.track_ref];
            if let Some(d) = receives[t] {
                let det = dets[d];
                track.boxes.push(det.bbox);
                track.provenance.push(Provenance::Detected);
                tracker.push(det.bbox);
                tracker.last_patch = det.patch.clone();
                tracker.miss_counter = 0;
                tracker.pending.clear();
                survivors.push(tracker);
            } else if tracker.miss_counter < config.t_counter {
                let predicted = predictions[t];
                track.boxes.push(predicted);
                track.provenance.push(Provenance::Predicted);
                tracker.push(predicted);
                tracker.miss_counter += 1;
                tracker.pending.push(predicted);
                survivors.push(tracker);
            } else {
                track.truncate_trailing(tracker.miss_counter);
            }
        }
        trackers = survivors;

        for (d, det) in dets.iter().enumerate() {
            if accepted[d].is_none() {
                tracks.push(Building {
                    first_frame: frame,
                    boxes: vec![det.bbox],
                    provenance: vec![Provenance::Detected],
                });
                trackers.push(TrackerState::new(tracks.len() - 1, det));
            }
        }
    }
    for tracker in &trackers {
        tracks[tracker.track_ref].truncate_trailing(tracker.miss_counter);
    }

    let kept: Vec<FaceTrack> = tracks
        .into_iter()
        .enumerate()
        .filter(|(_, t)| t.boxes.len() >= config.min_track_len)
        .map(|(k, t)| FaceTrack {
            track_id: format!("{clip_id}-t{k}"),
            clip_id: clip_id.to_owned(),
            first_frame: t.first_frame,
            boxes: t.boxes,
            provenance: t.provenance,
            label: TrackLabel::Unlabeled,
        })
        .collect();
    Ok(prune_contained(kept))
}

/// Whether `inner` spans a sub-range of `outer`'s frames and overlaps it with
/// IoU ≥ 0.5 on every common frame.
fn contained_in(inner: &FaceTrack, outer: &FaceTrack) -> bool {
    if inner.first_frame < outer.first_frame || inner.last_frame() > outer.last_frame() {
        return false;
    }
    (inner.first_frame..=inner.last_frame()).all(|f| match (inner.box_at(f), outer.box_at(f)) {
        (Some(a), Some(b)) => iou(a, b) >= 0.5,
        _ => false,
    })
}

/// Removes tracks fully contained in another track of the same clip. Of two
/// mutually contained tracks the earlier one is kept.
pub fn prune_contained(tracks: Vec<FaceTrack>) -> Vec<FaceTrack> {
    let n = tracks.len();
    let mut removed = vec![false; n];
    for i in 0..n {
        for j in 0..n {
            if i == j || removed[j] {
                continue;
            }
            if contained_in(&tracks[i], &tracks[j]) && (!contained_in(&tracks[j], &tracks[i]) || j < i) {
                removed[i] = true;
                break;
            }
        }
    }
    tracks
        .into_iter()
        .zip(removed)
        .filter_map(|(t, r)| (!r).then_some(t))
        .collect()
}

#[derive(Deserialize, Serialize)]
struct RawDetection {
    frame: usize,
    #[serde(rename = "box")]
    bbox: BoundingBox,
    patch: String,
}

/// Parses JSON-lines detections: `{"frame", "box": [x,y,w,h], "patch": base64}`
/// with a 1024-byte 32×32 grayscale patch. Blank lines are skipped.
pub fn read_detections(reader: impl BufRead) -> Result<Vec<Detection>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<detections>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawDetection = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            column: e.column(),
            message: e.to_string(),
        })?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(raw.patch.as_bytes())
            .map_err(|e| Error::Parse {
                line: i + 1,
                column: 0,
                message: format!("patch is not base64: {e}"),
            })?;
        out.push(Detection {
            frame: raw.frame,
            bbox: raw.bbox,
            patch: Patch::standard(bytes).map_err(|e| Error::Parse {
                line: i + 1,
                column: 0,
                message: e.to_string(),
            })?,
        });
    }
    Ok(out)
}

pub fn detection_to_json_line(d: &Detection) -> String {
    serde_json::to_string(&RawDetection {
        frame: d.frame,
        bbox: d.bbox,
        patch: base64::engine::general_purpose::STANDARD.encode(d.patch.data()),
    })
    .expect("detection serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bx(x: f64, y: f64, w: f64, h: f64) -> BoundingBox {
        BoundingBox::new(x, y, w, h).unwrap()
    }

    fn det(frame: usize, x: f64, y: f64) -> Detection {
        Detection {
            frame,
            bbox: bx(x, y, 40.0, 40.0),
            patch: Patch::filled(100),
        }
    }

    fn track(id: &str, first: usize, boxes: Vec<BoundingBox>) -> FaceTrack {
        let n = boxes.len();
        FaceTrack {
            track_id: id.into(),
            clip_id: "c".into(),
            first_frame: first,
            boxes,
            provenance: vec![Provenance::Detected; n],
            label: TrackLabel::Unlabeled,
        }
    }

    #[test]
    fn iou_examples() {
        let a = bx(0.0, 0.0, 10.0, 10.0);
        assert_eq!(iou(&a, &a), 1.0);
        assert_eq!(iou(&a, &bx(20.0, 20.0, 5.0, 5.0)), 0.0);
        assert_eq!(iou(&a, &bx(10.0, 0.0, 10.0, 10.0)), 0.0);
        assert!((iou(&a, &bx(5.0, 0.0, 10.0, 10.0)) - 50.0 / 150.0).abs() < 1e-15);
    }

    #[test]
    fn appearance_examples() {
        let z = Patch::filled(0);
        assert_eq!(appearance_diff(&z, &z).unwrap(), 0.0);
        assert_eq!(appearance_diff(&z, &Patch::filled(10)).unwrap(), 10.0);
        assert_eq!(appearance_diff(&z, &Patch::filled(255)).unwrap(), 255.0);
        let odd = Patch::new(2, 2, vec![0; 4]).unwrap();
        assert!(appearance_diff(&z, &odd).is_err());
    }

    #[test]
    fn resample_nearest_picks_source_pixels() {
        let data: Vec<u8> = (0..4).collect();
        let p = Patch::resample_nearest(2, 2, &data).unwrap();
        assert_eq!(p.data()[0], 0);
        assert_eq!(p.data()[31], 1);
        assert_eq!(p.data()[32 * 31], 2);
        assert_eq!(p.data()[1023], 3);
    }

    #[test]
    fn empty_input() {
        assert!(extract_tracks("c", &[], 10, &TrackingConfig::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn appearance_change_starts_new_track() {
        let mut dets: Vec<Detection> = (0..20).map(|f| det(f, 2.0 * f as f64, 0.0)).collect();
        for d in dets.iter_mut().skip(10) {
            d.patch = Patch::filled(200);
        }
        let tracks = extract_tracks("c", &dets, 20, &TrackingConfig::default()).unwrap();
        // The first tracker coasts on predictions that are trimmed at clip end.
        assert_eq!(tracks.len(), 2);
        assert_eq!(tracks[0].len(), 10);
        assert_eq!(tracks[1].first_frame, 10);
        assert_eq!(tracks[1].len(), 10);
    }

    #[test]
    fn two_objects_stay_separate() {
        let mut dets = Vec::new();
        for f in 0..12 {
            dets.push(det(f, 2.0 * f as f64, 0.0));
            dets.push(Detection {
                patch: Patch::filled(30),
                ..det(f, 300.0 - 2.0 * f as f64, 100.0)
            });
        }
        let tracks = extract_tracks("c", &dets, 12, &TrackingConfig::default()).unwrap();
        assert_eq!(tracks.len(), 2);
        assert!(tracks.iter().all(|t| t.len() == 12));
        assert_eq!(tracks[0].boxes[11].x, 22.0);
        assert_eq!(tracks[1].boxes[11].x, 278.0);
    }

    #[test]
    fn prune_examples() {
        let boxes: Vec<BoundingBox> = (0..12).map(|i| bx(i as f64, 0.0, 40.0, 40.0)).collect();
        let single = vec![track("a", 0, boxes.clone())];
        assert_eq!(prune_contained(single.clone()), single);

        let copy = track("b", 2, boxes[2..10].to_vec());
        let pruned = prune_contained(vec![track("a", 0, boxes.clone()), copy]);
        assert_eq!(pruned.len(), 1);
        assert_eq!(pruned[0].track_id, "a");

        let far: Vec<BoundingBox> = (2..10).map(|i| bx(500.0 + i as f64, 0.0, 40.0, 40.0)).collect();
        let kept = prune_contained(vec![track("a", 0, boxes.clone()), track("b", 2, far)]);
        assert_eq!(kept.len(), 2);

        let twins = prune_contained(vec![track("a", 0, boxes.clone()), track("b", 0, boxes)]);
        assert_eq!(twins.len(), 1);
        assert_eq!(twins[0].track_id, "a");
    }

    #[test]
    fn detections_json_lines() {
        let d = det(3, 1.5, 2.0);
        let line = detection_to_json_line(&d);
        let parsed = read_detections(format!("{line}\n\n{line}\n").as_bytes()).unwrap();
        assert_eq!(parsed, vec![d.clone(), d]);
        let bad = r#"{"frame": 0, "box": [0,0,1,1], "patch": "AAAA"}"#;
        assert!(matches!(
            read_detections(bad.as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
