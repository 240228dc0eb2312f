use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{Batch, Gradients};
use super::model::{Affine, EmbeddingModel};
use super::sampler::{QuadrupleSampler, SamplingStrategy};
use super::{LossKind, Metric};
use crate::dataset::{AnnotationStore, DatasetSplit, FeatureBank};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub nesterov_momentum: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub margin: f64,
    pub epochs: usize,
    pub seed: u64,
    pub min_face_side: f64,
    pub embed_dim: usize,
    pub sampling: SamplingStrategy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.002,
            nesterov_momentum: 0.9,
            weight_decay: 0.0005,
            batch: 128,
            margin: 0.2,
            epochs: 20,
            seed: 0,
            min_face_side: 28.0,
            embed_dim: 128,
            sampling: SamplingStrategy::WithinClip,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.nesterov_momentum >= 0.0
            && self.weight_decay >= 0.0
            && self.batch > 0
            && self.margin > 0.0
            && self.embed_dim > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(
                "learning rate, batch, margin and embedding size must be positive; momentum and decay non-negative"
                    .into(),
            ))
        }
    }
}

/// SGD with Nesterov momentum and L2 weight decay:
/// `g = ∇ + λw; m = μm + g; w -= lr (g + μm)`.
#[derive(Debug, Clone)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    buffers: Option<Vec<Affine>>,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            lr,
            momentum,
            weight_decay,
            buffers: None,
        }
    }

    pub fn step(&mut self, model: &mut EmbeddingModel, grads: &Gradients) {
        let (lr, mu, wd) = (self.lr, self.momentum, self.weight_decay);
        let buffers = self.buffers.get_or_insert_with(|| {
            grads
                .blocks
                .iter()
                .map(|g| Affine::zeros(g.outputs(), g.inputs()))
                .collect()
        });
        for ((param, grad), buf) in model
            .affines_mut()
            .into_iter()
            .zip(&grads.blocks)
            .zip(buffers.iter_mut())
        {
            let update = |w: &mut f64, g: f64, m: &mut f64| {
                let g = g + wd * *w;
                *m = mu * *m + g;
                *w -= lr * (g + mu * *m);
            };
            ndarray::Zip::from(&mut param.weight)
                .and(&grad.weight)
                .and(&mut buf.weight)
                .for_each(|w, &g, m| update(w, g, m));
            ndarray::Zip::from(&mut param.bias)
                .and(&grad.bias)
                .and(&mut buf.bias)
                .for_each(|w, &g, m| update(w, g, m));
        }
    }
}

/// Epoch-by-epoch trainer; one epoch visits every training pair once in a
/// shuffled order.
pub struct Trainer<'a> {
    features: &'a FeatureBank,
    sampler: QuadrupleSampler,
    kind: LossKind,
    config: TrainConfig,
    model: EmbeddingModel,
    sgd: Sgd,
    rng: ChaCha8Rng,
    epoch: usize,
    losses: Vec<f64>,
}

impl<'a> Trainer<'a> {
    pub fn new(
        store: &AnnotationStore,
        features: &'a FeatureBank,
        split: &DatasetSplit,
        kind: LossKind,
        metric: Metric,
        config: &TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        let sampler = QuadrupleSampler::new(store, split, config.min_face_side, config.sampling);
        if sampler.pairs().is_empty() {
            return Err(Error::InvalidArgument(
                "the training split has no verb-track pairs".into(),
            ));
        }
        let model = EmbeddingModel::new(
            features.visual.dim(),
            features.verbs.dim(),
            config.embed_dim,
            metric,
            kind.is_binary(),
            config.seed,
        );
        Ok(Self {
            features,
            sampler,
            kind,
            config: config.clone(),
            model,
            sgd: Sgd::new(config.lr, config.nesterov_momentum, config.weight_decay),
            rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x7a11_da7a),
            epoch: 0,
            losses: Vec::new(),
        })
    }

    pub fn model(&self) -> &EmbeddingModel {
        &self.model
    }

    pub fn into_model(self) -> EmbeddingModel {
        self.model
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    /// Mean batch objective of every completed epoch.
    pub fn losses(&self) -> &[f64] {
        &self.losses
    }

    pub fn pair_count(&self) -> usize {
        self.sampler.pairs().len()
    }

    /// Runs one epoch and returns its mean batch objective. Hinge losses are
    /// averaged over the items of a batch; cross-entropy already is a mean.
    pub fn run_epoch(&mut self) -> Result<f64> {
        let mut order: Vec<usize> = (0..self.sampler.pairs().len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(self.config.batch) {
            let items = chunk
                .iter()
                .map(|&i| self.sampler.sample(i, self.features, &mut self.rng))
                .collect::<Result<Vec<_>>>()?;
            let batch = Batch::from_quadruples(self.kind, &items, self.model.visual_dim(), self.model.text_dim())?;
            let (mut loss, mut grads) = batch.loss_and_grad(&self.model, self.config.margin)?;
            if !self.kind.is_binary() {
                let s = 1.0 / items.len() as f64;
                loss *= s;
                grads.scale(s);
            }
            self.sgd.step(&mut self.model, &grads);
            total += loss;
            batches += 1;
        }
        if !self.model.is_finite() {
            return Err(Error::InvalidArgument("training diverged to non-finite weights".into()));
        }
        self.epoch += 1;
        let mean = total / batches.max(1) as f64;
        self.losses.push(mean);
        Ok(mean)
    }
}

/// Trains for `config.epochs` epochs and returns the final model.
pub fn train(
    store: &AnnotationStore,
    features: &FeatureBank,
    split: &DatasetSplit,
    kind: LossKind,
    metric: Metric,
    config: &TrainConfig,
) -> Result<EmbeddingModel> {
    let mut t = Trainer::new(store, features, split, kind, metric, config)?;
    for _ in 0..config.epochs {
        t.run_epoch()?;
    }
    Ok(t.into_model())
}
