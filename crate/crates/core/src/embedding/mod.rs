//! Joint textual–visual embedding.
//!
//! [`EmbeddingModel`] projects track features and verb features into a
//! shared space through one affine + ReLU layer per modality. The losses in
//! [`loss`] come with analytic gradients; [`train`] runs SGD with Nesterov
//! momentum over quadruples drawn by [`sampler`].

mod loss;
mod model;
mod sampler;
mod train;

use serde::{Deserialize, Serialize};

pub use loss::{
    loss_binary, loss_pair_terms, loss_proposed, loss_siamese, loss_triplet2, loss_triplet4, Batch, Gradients, Term,
    BCE_EPSILON,
};
pub use model::{Affine, BinaryHead, EmbeddingModel};
pub use sampler::{training_pairs, QuadrupleSampler, SamplingStrategy, TrainingPair, TrainingQuadruple};
pub use train::{train, Sgd, TrainConfig, Trainer};

use crate::error::{Error, Result};

/// Frames per visual sub-window and the stride between windows.
pub const WINDOW_LEN: usize = 16;
pub const WINDOW_STRIDE: usize = 8;

/// Number of 16-frame windows with stride 8 in a track of `len` frames.
/// Tracks shorter than one window get a single window.
pub fn subwindow_count(len: usize) -> usize {
    if len < WINDOW_LEN {
        1
    } else {
        (len - WINDOW_LEN) / WINDOW_STRIDE + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    EuclideanSq,
    CosineDist,
}

impl Metric {
    pub const ALL: [Metric; 2] = [Metric::EuclideanSq, Metric::CosineDist];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::EuclideanSq => "euclidean",
            Metric::CosineDist => "cosine",
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Metric::EuclideanSq => 0,
            Metric::CosineDist => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(Metric::EuclideanSq),
            1 => Ok(Metric::CosineDist),
            t => Err(Error::Format(format!("unknown metric tag {t}"))),
        }
    }

    pub fn dist(self, u: &[f64], v: &[f64]) -> f64 {
        match self {
            Metric::EuclideanSq => u.iter().zip(v).map(|(a, b)| (a - b) * (a - b)).sum(),
            Metric::CosineDist => {
                let (dot, nu, nv) = dot_norms(u, v);
                if nu == 0.0 || nv == 0.0 {
                    1.0
                } else {
                    1.0 - dot / (nu * nv)
                }
            }
        }
    }

    /// Distance with its gradients with respect to `u` and `v`. A zero vector
    /// under the cosine metric gets a zero gradient.
    pub fn dist_grad(self, u: &[f64], v: &[f64]) -> (f64, Vec<f64>, Vec<f64>) {
        match self {
            Metric::EuclideanSq => {
                let gu: Vec<f64> = u.iter().zip(v).map(|(a, b)| 2.0 * (a - b)).collect();
                let gv = gu.iter().map(|g| -g).collect();
                (self.dist(u, v), gu, gv)
            }
            Metric::CosineDist => {
                let (dot, nu, nv) = dot_norms(u, v);
                if nu == 0.0 || nv == 0.0 {
                    return (1.0, vec![0.0; u.len()], vec![0.0; v.len()]);
                }
                let inv = 1.0 / (nu * nv);
                let cos = dot * inv;
                let gu = u.iter().zip(v).map(|(a, b)| -(b * inv - cos * a / (nu * nu))).collect();
                let gv = u.iter().zip(v).map(|(a, b)| -(a * inv - cos * b / (nv * nv))).collect();
                (1.0 - cos, gu, gv)
            }
        }
    }
}

fn dot_norms(u: &[f64], v: &[f64]) -> (f64, f64, f64) {
    let (mut dot, mut uu, mut vv) = (0.0, 0.0, 0.0);
    for (a, b) in u.iter().zip(v) {
        dot += a * b;
        uu += a * a;
        vv += b * b;
    }
    (dot, uu.sqrt(), vv.sqrt())
}

impl std::str::FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" | "euclidean_sq" => Ok(Metric::EuclideanSq),
            "cosine" | "cosine_dist" => Ok(Metric::CosineDist),
            other => Err(Error::InvalidArgument(format!("unknown metric {other:?}"))),
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Cross-entropy on `(a, b, 1)` and `(a, b⁻, 0)`.
    Binary2,
    /// `Binary2` plus `(a⁺, b, 1)` and `(a^w, b, 0)`.
    Binary4,
    Siamese,
    Triplet2,
    Triplet4,
    Proposed,
}

impl LossKind {
    pub const ALL: [LossKind; 6] = [
        LossKind::Binary2,
        LossKind::Binary4,
        LossKind::Siamese,
        LossKind::Triplet2,
        LossKind::Triplet4,
        LossKind::Proposed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Binary2 => "binary2",
            LossKind::Binary4 => "binary4",
            LossKind::Siamese => "siamese",
            LossKind::Triplet2 => "triplet2",
            LossKind::Triplet4 => "triplet4",
            LossKind::Proposed => "proposed",
        }
    }

    /// Binary losses train a classifier head and ignore the metric.
    pub fn is_binary(self) -> bool {
        matches!(self, LossKind::Binary2 | LossKind::Binary4)
    }
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "binary2" => Ok(LossKind::Binary2),
            "binary" | "binary4" => Ok(LossKind::Binary4),
            "siamese" => Ok(LossKind::Siamese),
            "triplet2" => Ok(LossKind::Triplet2),
            "triplet4" => Ok(LossKind::Triplet4),
            "proposed" => Ok(LossKind::Proposed),
            other => Err(Error::InvalidArgument(format!("unknown loss {other:?}"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_counts() {
        assert_eq!(subwindow_count(8), 1);
        assert_eq!(subwindow_count(15), 1);
        assert_eq!(subwindow_count(16), 1);
        assert_eq!(subwindow_count(23), 1);
        assert_eq!(subwindow_count(24), 2);
        assert_eq!(subwindow_count(42), 4);
    }

    #[test]
    fn distance_examples() {
        let mut u = vec![0.0; 128];
        let mut v = vec![0.0; 128];
        u[0] = 1.0;
        v[1] = 1.0;
        assert_eq!(Metric::EuclideanSq.dist(&u, &v), 2.0);
        assert_eq!(Metric::CosineDist.dist(&u, &v), 1.0);
        for m in Metric::ALL {
            assert!(m.dist(&u, &u).abs() < 1e-15);
        }
        let mut w = vec![0.0; 128];
        w[0] = 3.0;
        w[1] = 4.0;
        assert_eq!(Metric::EuclideanSq.dist(&w, &vec![0.0; 128]), 25.0);
        assert_eq!(Metric::CosineDist.dist(&w, &vec![0.0; 128]), 1.0);
    }

    #[test]
    fn cosine_is_scale_invariant() {
        let u = [0.3, -1.2, 2.0];
        let v = [1.0, 0.5, -0.25];
        let scaled: Vec<f64> = u.iter().map(|x| 7.5 * x).collect();
        assert!((Metric::CosineDist.dist(&u, &v) - Metric::CosineDist.dist(&scaled, &v)).abs() < 1e-12);
    }

    #[test]
    fn names_parse() {
        for k in LossKind::ALL {
            assert_eq!(k.as_str().parse::<LossKind>().unwrap(), k);
        }
        for m in Metric::ALL {
            assert_eq!(m.as_str().parse::<Metric>().unwrap(), m);
        }
        assert!("hinge".parse::<LossKind>().is_err());
    }
}
