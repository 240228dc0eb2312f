use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::Metric;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"MVNM";
const VERSION: u32 = 1;

/// `y = W x + b`, with `W` stored as `outputs × inputs`.
#[derive(Debug, Clone, PartialEq)]
pub struct Affine {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Affine {
    pub fn zeros(outputs: usize, inputs: usize) -> Self {
        Self {
            weight: Array2::zeros((outputs, inputs)),
            bias: Array1::zeros(outputs),
        }
    }

    /// Uniform in `[-1/sqrt(inputs), 1/sqrt(inputs)]`.
    pub fn uniform(outputs: usize, inputs: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (inputs.max(1) as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((outputs, inputs), || rng.random_range(-bound..=bound));
        let bias = Array1::from_shape_simple_fn(outputs, || rng.random_range(-bound..=bound));
        Self { weight, bias }
    }

    pub fn inputs(&self) -> usize {
        self.weight.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.weight.nrows()
    }

    /// Row-wise affine map of a batch of inputs.
    pub fn forward(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weight.t());
        z += &self.bias;
        z
    }

    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.inputs() {
            return Err(Error::Dimension {
                expected: self.inputs(),
                actual: x.len(),
            });
        }
        Ok(self
            .weight
            .outer_iter()
            .zip(self.bias.iter())
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect())
    }

    pub fn is_finite(&self) -> bool {
        self.weight.iter().chain(self.bias.iter()).all(|v| v.is_finite())
    }

    pub fn sq_norm(&self) -> f64 {
        self.weight.iter().chain(self.bias.iter()).map(|v| v * v).sum()
    }

    /// Gradient accumulation for a batch: `dW += gᵀ x`, `db += Σ g`.
    pub(crate) fn accumulate(&mut self, g: ArrayView2<f64>, x: ArrayView2<f64>) {
        self.weight += &g.t().dot(&x);
        self.bias += &g.sum_axis(Axis(0));
    }
}

pub(crate) fn relu_in_place(z: &mut Array2<f64>) {
    z.mapv_inplace(|v| v.max(0.0));
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Correspondence classifier on the concatenated projections.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryHead {
    pub hidden: Affine,
    pub out: Affine,
}

impl BinaryHead {
    /// Probability that the visual and textual projections correspond.
    pub fn probability(&self, visual: &[f64], textual: &[f64]) -> f64 {
        let x: Vec<f64> = visual.iter().chain(textual).copied().collect();
        let h: Vec<f64> = self
            .hidden
            .forward_one(&x)
            .expect("head input has twice the embedding size")
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        sigmoid(self.out.forward_one(&h).expect("head hidden size")[0])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingModel {
    pub visual: Affine,
    pub textual: Affine,
    pub metric: Metric,
    pub head: Option<BinaryHead>,
}

impl EmbeddingModel {
    /// Seeded fan-in uniform initialization; `binary` adds the classifier head.
    pub fn new(visual_dim: usize, text_dim: usize, embed_dim: usize, metric: Metric, binary: bool, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let visual = Affine::uniform(embed_dim, visual_dim, &mut rng);
        let textual = Affine::uniform(embed_dim, text_dim, &mut rng);
        let head = binary.then(|| BinaryHead {
            hidden: Affine::uniform(embed_dim, 2 * embed_dim, &mut rng),
            out: Affine::uniform(1, embed_dim, &mut rng),
        });
        Self {
            visual,
            textual,
            metric,
            head,
        }
    }

    pub fn embed_dim(&self) -> usize {
        self.visual.outputs()
    }

    pub fn visual_dim(&self) -> usize {
        self.visual.inputs()
    }

    pub fn text_dim(&self) -> usize {
        self.textual.inputs()
    }

    pub fn project_visual(&self, a: &[f64]) -> Result<Vec<f64>> {
        Ok(self.visual.forward_one(a)?.into_iter().map(|v| v.max(0.0)).collect())
    }

    pub fn project_textual(&self, b: &[f64]) -> Result<Vec<f64>> {
        Ok(self.textual.forward_one(b)?.into_iter().map(|v| v.max(0.0)).collect())
    }

    pub fn dist(&self, u: &[f64], v: &[f64]) -> f64 {
        self.metric.dist(u, v)
    }

    /// Verb–track matching cost between projections: the metric distance,
    /// or `1 - p` for a model with a classifier head.
    pub fn pair_cost(&self, visual: &[f64], textual: &[f64]) -> f64 {
        match &self.head {
            Some(head) => 1.0 - head.probability(visual, textual),
            None => self.dist(visual, textual),
        }
    }

    /// Parameter blocks in a fixed order: visual, textual, then the head.
    pub fn affines(&self) -> Vec<&Affine> {
        let mut v = vec![&self.visual, &self.textual];
        if let Some(h) = &self.head {
            v.push(&h.hidden);
            v.push(&h.out);
        }
        v
    }

    pub fn affines_mut(&mut self) -> Vec<&mut Affine> {
        let mut v = vec![&mut self.visual, &mut self.textual];
        if let Some(h) = &mut self.head {
            v.push(&mut h.hidden);
            v.push(&mut h.out);
        }
        v
    }

    pub fn is_finite(&self) -> bool {
        self.affines().iter().all(|a| a.is_finite())
    }

    /// Checkpoint bytes: magic, version, metric tag, then each affine map as
    /// rows, cols, f32 weights and f32 bias (all little-endian).
    pub fn write_checkpoint(&self, mut w: impl Write) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.push(self.metric.tag());
        for a in self.affines() {
            buf.extend_from_slice(&(a.outputs() as u32).to_le_bytes());
            buf.extend_from_slice(&(a.inputs() as u32).to_le_bytes());
            for v in a.weight.iter().chain(a.bias.iter()) {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        }
        w.write_all(&buf).map_err(|e| Error::io("<checkpoint>", e))
    }

    pub fn read_checkpoint(mut r: impl Read) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::io("<checkpoint>", e))?;
        if bytes.len() < 9 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a model checkpoint".into()));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let metric = Metric::from_tag(bytes[8])?;
        let mut pos = 9;
        let mut maps = Vec::new();
        while pos < bytes.len() {
            let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
                let s = bytes
                    .get(*pos..*pos + n)
                    .ok_or_else(|| Error::Format("truncated checkpoint".into()))?;
                *pos += n;
                Ok(s)
            };
            let rows = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let cols = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
            let raw = take(&mut pos, 4 * (rows * cols + rows))?;
            let vals: Vec<f64> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
                .collect();
            let weight = Array2::from_shape_vec((rows, cols), vals[..rows * cols].to_vec()).expect("shape checked");
            let bias = Array1::from(vals[rows * cols..].to_vec());
            maps.push(Affine { weight, bias });
        }
        let mut maps = maps.into_iter();
        let (Some(visual), Some(textual)) = (maps.next(), maps.next()) else {
            return Err(Error::Format("checkpoint needs two projection maps".into()));
        };
        let head = match (maps.next(), maps.next(), maps.next()) {
            (None, None, None) => None,
            (Some(hidden), Some(out), None) => Some(BinaryHead { hidden, out }),
            _ => return Err(Error::Format("checkpoint must hold two or four affine maps".into())),
        };
        let model = Self {
            visual,
            textual,
            metric,
            head,
        };
        model.check_shapes()?;
        Ok(model)
    }

    fn check_shapes(&self) -> Result<()> {
        let e = self.embed_dim();
        let mut ok = self.textual.outputs() == e;
        if let Some(h) = &self.head {
            ok &= h.hidden.inputs() == 2 * e && h.out.inputs() == h.hidden.outputs() && h.out.outputs() == 1;
        }
        if !ok {
            return Err(Error::Format("inconsistent layer shapes in checkpoint".into()));
        }
        if !self.is_finite() {
            return Err(Error::Format("checkpoint has non-finite weights".into()));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_checkpoint(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_checkpoint(std::io::BufReader::new(f))
    }

    /// The same model with every weight rounded to `f32`, i.e. what a
    /// checkpoint round trip yields.
    pub fn rounded_f32(&self) -> Self {
        let mut m = self.clone();
        for a in m.affines_mut() {
            a.weight.mapv_inplace(|v| v as f32 as f64);
            a.bias.mapv_inplace(|v| v as f32 as f64);
        }
        m
    }
}
