//! Cluster review state behind the annotation service.
//!
//! Every mutation is recorded as an [`AuditEvent`]; replaying the log over the
//! initial store and cluster sets reproduces the current state.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::clustering::{Cluster, ClusterSet, ClusterStatus};
use crate::dataset::{AnnotationStore, BoundingBox, TrackLabel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Action {
    Label,
    Reject,
    Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    Wrong,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEvent {
    /// RFC 3339 timestamp.
    pub time: String,
    pub cluster_id: String,
    pub action: Action,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    #[serde(default)]
    pub annotator: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<RejectReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub track_ids: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub new_cluster_id: Option<String>,
}

impl AuditEvent {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }
}

pub fn read_audit_log(r: impl BufRead) -> Result<Vec<AuditEvent>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<audit log>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let ev = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            column: e.column(),
            message: e.to_string(),
        })?;
        out.push(ev);
    }
    Ok(out)
}

pub fn write_audit_event(mut w: impl Write, ev: &AuditEvent) -> Result<()> {
    writeln!(w, "{}", ev.to_json_line())
        .and_then(|_| w.flush())
        .map_err(|e| Error::io("<audit log>", e))
}

/// A box to show for a cluster: the middle box of its longest track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Representative {
    pub track_id: String,
    pub clip_id: String,
    pub frame: usize,
    pub bbox: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster_id: String,
    pub status: ClusterStatus,
    pub label: Option<String>,
    pub track_count: usize,
    pub representative: Option<Representative>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackSummary {
    pub track_id: String,
    pub clip_id: String,
    pub first_frame: usize,
    pub label: String,
    pub boxes: Vec<[f64; 4]>,
}

fn bbox_array(b: &BoundingBox) -> [f64; 4] {
    [b.x, b.y, b.w, b.h]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServiceState {
    pub store: AnnotationStore,
    pub cluster_sets: BTreeMap<String, ClusterSet>,
    pub audit: Vec<AuditEvent>,
}

impl ServiceState {
    pub fn new(store: AnnotationStore, cluster_sets: BTreeMap<String, ClusterSet>) -> Result<Self> {
        for (movie, set) in &cluster_sets {
            if store.movie(movie).is_none() {
                return Err(Error::NotFound {
                    kind: "movie",
                    id: movie.clone(),
                });
            }
            for c in &set.clusters {
                for t in &c.track_ids {
                    match store.track_location(t) {
                        Some(loc) if &loc.movie_id == movie => {}
                        _ => {
                            return Err(Error::invariant(
                                &c.cluster_id,
                                "track_ids",
                                format!("{t:?} is not a track of {movie}"),
                            ))
                        }
                    }
                }
            }
        }
        Ok(Self {
            store,
            cluster_sets,
            audit: Vec::new(),
        })
    }

    /// Rebuilds a state by applying `events` to the initial data.
    pub fn replay(
        store: AnnotationStore,
        cluster_sets: BTreeMap<String, ClusterSet>,
        events: &[AuditEvent],
    ) -> Result<Self> {
        let mut s = Self::new(store, cluster_sets)?;
        for ev in events {
            s.apply(ev.clone())?;
        }
        Ok(s)
    }

    fn locate(&self, cluster_id: &str) -> Result<(&str, usize)> {
        self.cluster_sets
            .iter()
            .find_map(|(m, set)| {
                set.clusters
                    .iter()
                    .position(|c| c.cluster_id == cluster_id)
                    .map(|i| (m.as_str(), i))
            })
            .ok_or_else(|| Error::NotFound {
                kind: "cluster",
                id: cluster_id.to_owned(),
            })
    }

    pub fn cluster(&self, cluster_id: &str) -> Result<&Cluster> {
        let (m, i) = self.locate(cluster_id)?;
        Ok(&self.cluster_sets[m].clusters[i])
    }

    pub fn movie_of_cluster(&self, cluster_id: &str) -> Result<&str> {
        self.locate(cluster_id).map(|(m, _)| m)
    }

    pub fn cluster_summaries(&self, movie_id: &str) -> Result<Vec<ClusterSummary>> {
        if self.store.movie(movie_id).is_none() {
            return Err(Error::NotFound {
                kind: "movie",
                id: movie_id.to_owned(),
            });
        }
        let Some(set) = self.cluster_sets.get(movie_id) else {
            return Ok(Vec::new());
        };
        Ok(set
            .clusters
            .iter()
            .map(|c| {
                let longest = c
                    .track_ids
                    .iter()
                    .filter_map(|id| self.store.track(id))
                    .max_by(|a, b| a.len().cmp(&b.len()).then(b.track_id.cmp(&a.track_id)));
                ClusterSummary {
                    cluster_id: c.cluster_id.clone(),
                    status: c.status,
                    label: c.label.clone(),
                    track_count: c.track_ids.len(),
                    representative: longest.filter(|t| !t.is_empty()).map(|t| {
                        let mid = t.len() / 2;
                        Representative {
                            track_id: t.track_id.clone(),
                            clip_id: t.clip_id.clone(),
                            frame: t.first_frame + mid,
                            bbox: bbox_array(&t.boxes[mid]),
                        }
                    }),
                }
            })
            .collect())
    }

    pub fn cluster_tracks(&self, cluster_id: &str) -> Result<Vec<TrackSummary>> {
        let c = self.cluster(cluster_id)?;
        c.track_ids
            .iter()
            .map(|id| {
                let t = self.store.track(id).ok_or_else(|| Error::NotFound {
                    kind: "track",
                    id: id.clone(),
                })?;
                Ok(TrackSummary {
                    track_id: t.track_id.clone(),
                    clip_id: t.clip_id.clone(),
                    first_frame: t.first_frame,
                    label: t.label.as_str().to_owned(),
                    boxes: t.boxes.iter().map(bbox_array).collect(),
                })
            })
            .collect()
    }

    /// Names a cluster. Aliases resolve to the canonical name; rejected
    /// clusters cannot be labeled.
    pub fn label(&mut self, cluster_id: &str, name: &str, annotator: &str, time: &str) -> Result<AuditEvent> {
        self.apply(AuditEvent {
            time: time.to_owned(),
            cluster_id: cluster_id.to_owned(),
            action: Action::Label,
            label: Some(name.to_owned()),
            annotator: annotator.to_owned(),
            reason: None,
            track_ids: None,
            new_cluster_id: None,
        })
    }

    pub fn reject(
        &mut self,
        cluster_id: &str,
        reason: RejectReason,
        annotator: &str,
        time: &str,
    ) -> Result<AuditEvent> {
        self.apply(AuditEvent {
            time: time.to_owned(),
            cluster_id: cluster_id.to_owned(),
            action: Action::Reject,
            label: None,
            annotator: annotator.to_owned(),
            reason: Some(reason),
            track_ids: None,
            new_cluster_id: None,
        })
    }

    /// Moves `track_ids` out of a cluster into a new proposed one.
    pub fn split(&mut self, cluster_id: &str, track_ids: &[String], annotator: &str, time: &str) -> Result<AuditEvent> {
        self.apply(AuditEvent {
            time: time.to_owned(),
            cluster_id: cluster_id.to_owned(),
            action: Action::Split,
            label: None,
            annotator: annotator.to_owned(),
            reason: None,
            track_ids: Some(track_ids.to_vec()),
            new_cluster_id: None,
        })
    }

    fn fresh_cluster_id(&self, movie: &str) -> String {
        let set = &self.cluster_sets[movie];
        (set.clusters.len()..)
            .map(|k| format!("{movie}-{k}"))
            .find(|id| self.locate(id).is_err())
            .expect("unbounded search")
    }

    /// Validates and applies one event, appending the normalized event to the
    /// log. Nothing changes when an error is returned.
    pub fn apply(&mut self, mut ev: AuditEvent) -> Result<AuditEvent> {
        let (movie, idx) = self.locate(&ev.cluster_id)?;
        let movie = movie.to_owned();
        let cluster = self.cluster_sets[&movie].clusters[idx].clone();
        match ev.action {
            Action::Label => {
                let name = ev
                    .label
                    .as_deref()
                    .ok_or_else(|| Error::InvalidArgument("label event without a label".into()))?;
                if matches!(
                    cluster.status,
                    ClusterStatus::RejectedWrong | ClusterStatus::RejectedUnknown
                ) {
                    return Err(Error::Conflict(format!("cluster {} is rejected", cluster.cluster_id)));
                }
                let canonical = self
                    .store
                    .resolve_alias(&movie, name)
                    .ok_or_else(|| Error::UnknownCharacter {
                        movie_id: movie.clone(),
                        name: name.to_owned(),
                    })?
                    .to_owned();
                self.store
                    .relabel_tracks(&cluster.track_ids, &TrackLabel::Character(canonical.clone()))?;
                let c = &mut self.cluster_sets.get_mut(&movie).expect("located").clusters[idx];
                c.status = ClusterStatus::Verified;
                c.label = Some(canonical.clone());
                ev.label = Some(canonical);
            }
            Action::Reject => {
                let reason = ev
                    .reason
                    .ok_or_else(|| Error::InvalidArgument("reject event without a reason".into()))?;
                let (status, label) = match reason {
                    RejectReason::Wrong => (ClusterStatus::RejectedWrong, TrackLabel::Wrong),
                    RejectReason::Unknown => (ClusterStatus::RejectedUnknown, TrackLabel::Unknown),
                };
                self.store.relabel_tracks(&cluster.track_ids, &label)?;
                let c = &mut self.cluster_sets.get_mut(&movie).expect("located").clusters[idx];
                c.status = status;
                c.label = None;
            }
            Action::Split => {
                let moved = ev.track_ids.clone().unwrap_or_default();
                let mut uniq = moved.clone();
                uniq.sort();
                uniq.dedup();
                if moved.is_empty() || uniq.len() != moved.len() {
                    return Err(Error::InvalidArgument(
                        "split needs a non-empty list of distinct tracks".into(),
                    ));
                }
                if let Some(t) = moved.iter().find(|t| !cluster.track_ids.contains(t)) {
                    return Err(Error::InvalidArgument(format!(
                        "track {t:?} is not in cluster {}",
                        cluster.cluster_id
                    )));
                }
                if moved.len() == cluster.track_ids.len() {
                    return Err(Error::InvalidArgument(
                        "split must leave at least one track behind".into(),
                    ));
                }
                let new_id = match &ev.new_cluster_id {
                    Some(id) if self.locate(id).is_ok() => {
                        return Err(Error::Conflict(format!("cluster {id} already exists")));
                    }
                    Some(id) => id.clone(),
                    None => self.fresh_cluster_id(&movie),
                };
                self.store.relabel_tracks(&moved, &TrackLabel::Unlabeled)?;
                let set = self.cluster_sets.get_mut(&movie).expect("located");
                set.clusters[idx].track_ids.retain(|t| !moved.contains(t));
                // Tracks keep their order from the source cluster.
                let ordered = cluster
                    .track_ids
                    .iter()
                    .filter(|t| moved.contains(t))
                    .cloned()
                    .collect();
                set.clusters.push(Cluster {
                    cluster_id: new_id.clone(),
                    track_ids: ordered,
                    status: ClusterStatus::Proposed,
                    label: None,
                });
                ev.new_cluster_id = Some(new_id);
            }
        }
        self.audit.push(ev.clone());
        Ok(ev)
    }
}
