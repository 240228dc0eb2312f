//! Character naming for movie descriptions.
//!
//! The crate covers two pipelines that share their numerical building blocks:
//!
//! - **Annotation**: face detections are linked into tracks ([`tracking`]),
//!   tracks of a movie are grouped with Ward clustering ([`clustering`]) and a
//!   human verifies and names each cluster ([`annotation`]).
//! - **Naming**: verbs attached to `someone` slots in a caption are matched to
//!   visual tracks through a learned joint embedding ([`embedding`]) and the
//!   matched tracks are identified by a K-NN face classifier ([`naming`]).
//!
//! Both pipelines use the exact bipartite solver in [`assignment`]. Data files,
//! splits and the synthetic generator live in [`dataset`]; metrics and the
//! experiment protocols are in [`evaluation`].

pub mod annotation;
pub mod assignment;
pub mod clustering;
pub mod dataset;
pub mod embedding;
pub mod error;
pub mod evaluation;
pub mod naming;
pub mod tracking;

pub use assignment::{solve_assignment, Assignment, CostMatrix};
pub use dataset::{
    AnnotationStore, BoundingBox, Caption, Character, Clip, DatasetSplit, FaceTrack, FeatureBank, Movie, Provenance,
    Slot, SplitName, TrackLabel,
};
pub use embedding::{EmbeddingModel, LossKind, Metric, TrainConfig};
pub use error::{Error, Result};
