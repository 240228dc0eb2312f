//! Hinge and cross-entropy losses over projected features.
//!
//! With `d(x, y)` the model metric between a visual projection `φ_v(x)` and a
//! textual projection `φ_t(y)` and margin `α`:
//!
//! ```text
//! p(a, b)      = d(a, b)
//! n(a, b)      = max(α - d(a, b), 0)
//! t(a, b, b⁻)  = max(d(a, b) - d(a, b⁻) + α, 0)
//! v(a, b, a⁻)  = max(d(a, b) - d(a⁻, b) + α, 0)
//! ```
//!
//! A [`Batch`] stores the raw inputs once and lists the terms over them; the
//! batch loss is the sum of its hinge terms plus the mean of its
//! cross-entropy terms.

use ndarray::{Array2, ArrayView1};

use super::model::{relu_in_place, sigmoid, Affine, EmbeddingModel};
use super::sampler::TrainingQuadruple;
use super::LossKind;
use crate::error::{Error, Result};

pub const BCE_EPSILON: f64 = 1e-7;

/// One loss term; indices refer to the rows of [`Batch::visual`] and
/// [`Batch::text`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Term {
    Pos {
        v: usize,
        t: usize,
    },
    Neg {
        v: usize,
        t: usize,
    },
    /// `t(a, b, b⁻)`: the anchor track must be closer to `t` than to `t_neg`.
    TripletText {
        v: usize,
        t: usize,
        t_neg: usize,
    },
    /// `v(a, b, a⁻)`: the verb must be closer to `v` than to `v_neg`.
    TripletVisual {
        v: usize,
        t: usize,
        v_neg: usize,
    },
    Binary {
        v: usize,
        t: usize,
        y: bool,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub visual: Array2<f64>,
    pub text: Array2<f64>,
    pub terms: Vec<Term>,
    /// Number of training items the terms came from.
    pub items: usize,
}

/// Gradient blocks in [`EmbeddingModel::affines`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub blocks: Vec<Affine>,
}

impl Gradients {
    pub fn scale(&mut self, s: f64) {
        for b in &mut self.blocks {
            b.weight *= s;
            b.bias *= s;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks
            .iter()
            .flat_map(|b| b.weight.iter().chain(b.bias.iter()))
            .fold(0.0, |m, v| m.max(v.abs()))
    }
}

struct Rows {
    dim: usize,
    data: Vec<f64>,
}

impl Rows {
    fn push(&mut self, x: &[f64]) -> Result<usize> {
        if x.len() != self.dim {
            return Err(Error::Dimension {
                expected: self.dim,
                actual: x.len(),
            });
        }
        self.data.extend_from_slice(x);
        Ok(self.data.len() / self.dim.max(1) - 1)
    }

    fn finish(self) -> Array2<f64> {
        let n = self.data.len().checked_div(self.dim).unwrap_or(0);
        Array2::from_shape_vec((n, self.dim), self.data).expect("rows are full")
    }
}

impl Batch {
    /// Terms of `kind` for each quadruple. Terms whose optional member is
    /// missing are left out.
    pub fn from_quadruples(
        kind: LossKind,
        items: &[TrainingQuadruple],
        visual_dim: usize,
        text_dim: usize,
    ) -> Result<Self> {
        let mut vis = Rows {
            dim: visual_dim,
            data: Vec::new(),
        };
        let mut txt = Rows {
            dim: text_dim,
            data: Vec::new(),
        };
        let mut terms = Vec::new();
        for q in items {
            let a = vis.push(&q.a)?;
            let b = txt.push(&q.b)?;
            let b_neg = q.b_neg.as_deref().map(|x| txt.push(x)).transpose()?;
            let a_pos = q.a_pos.as_deref().map(|x| vis.push(x)).transpose()?;
            let a_neg = q.a_neg.as_deref().map(|x| vis.push(x)).transpose()?;
            let a_wrong = q.a_wrong.as_deref().map(|x| vis.push(x)).transpose()?;
            let mut add = |t: Option<Term>| terms.extend(t);
            match kind {
                LossKind::Siamese => {
                    add(Some(Term::Pos { v: a, t: b }));
                    add(b_neg.map(|n| Term::Neg { v: a, t: n }));
                }
                LossKind::Triplet2 | LossKind::Triplet4 => {
                    add(b_neg.map(|n| Term::TripletText { v: a, t: b, t_neg: n }));
                    add(a_neg.map(|n| Term::TripletVisual { v: a, t: b, v_neg: n }));
                    if kind == LossKind::Triplet4 {
                        add(a_pos
                            .zip(b_neg)
                            .map(|(p, n)| Term::TripletText { v: p, t: b, t_neg: n }));
                        add(a_wrong.map(|w| Term::TripletVisual { v: a, t: b, v_neg: w }));
                    }
                }
                LossKind::Proposed => {
                    add(Some(Term::Pos { v: a, t: b }));
                    add(b_neg.map(|n| Term::Neg { v: a, t: n }));
                    add(a_pos.map(|p| Term::Pos { v: p, t: b }));
                    add(a_wrong.map(|w| Term::Neg { v: w, t: b }));
                }
                LossKind::Binary2 | LossKind::Binary4 => {
                    add(Some(Term::Binary { v: a, t: b, y: true }));
                    add(b_neg.map(|n| Term::Binary { v: a, t: n, y: false }));
                    if kind == LossKind::Binary4 {
                        add(a_pos.map(|p| Term::Binary { v: p, t: b, y: true }));
                        add(a_wrong.map(|w| Term::Binary { v: w, t: b, y: false }));
                    }
                }
            }
        }
        Ok(Self {
            visual: vis.finish(),
            text: txt.finish(),
            terms,
            items: items.len(),
        })
    }

    /// Batch loss without gradients.
    pub fn loss(&self, model: &EmbeddingModel, alpha: f64) -> Result<f64> {
        Ok(self.forward_backward(model, alpha, false)?.0)
    }

    /// Batch loss and its gradient with respect to every parameter.
    pub fn loss_and_grad(&self, model: &EmbeddingModel, alpha: f64) -> Result<(f64, Gradients)> {
        let (l, g) = self.forward_backward(model, alpha, true)?;
        Ok((l, g.expect("gradients requested")))
    }

    fn check(&self, model: &EmbeddingModel) -> Result<()> {
        for (have, want) in [
            (self.visual.ncols(), model.visual_dim()),
            (self.text.ncols(), model.text_dim()),
        ] {
            if have != want && !(self.terms.is_empty()) {
                return Err(Error::Dimension {
                    expected: want,
                    actual: have,
                });
            }
        }
        if model.head.is_none() && self.terms.iter().any(|t| matches!(t, Term::Binary { .. })) {
            return Err(Error::InvalidArgument(
                "cross-entropy terms need a model with a classifier head".into(),
            ));
        }
        Ok(())
    }

    fn forward_backward(
        &self,
        model: &EmbeddingModel,
        alpha: f64,
        want_grad: bool,
    ) -> Result<(f64, Option<Gradients>)> {
        self.check(model)?;
        let e = model.embed_dim();
        let metric = model.metric;
        let zv = model.visual.forward(self.visual.view());
        let zt = model.textual.forward(self.text.view());
        let mut ev = zv.clone();
        let mut et = zt.clone();
        relu_in_place(&mut ev);
        relu_in_place(&mut et);
        let mut gev = Array2::<f64>::zeros(ev.raw_dim());
        let mut get = Array2::<f64>::zeros(et.raw_dim());

        let row = |m: &Array2<f64>, i: usize| -> Vec<f64> { m.row(i).to_vec() };
        let mut loss = 0.0;
        let mut binary = Vec::new();
        // Adds `scale * ∂d(v, t)` into the gradient buffers.
        let push_dist = |gev: &mut Array2<f64>, get: &mut Array2<f64>, v: usize, t: usize, scale: f64| {
            let (_, gu, gw) = metric.dist_grad(&row(&ev, v), &row(&et, t));
            add_row(gev, v, &gu, scale);
            add_row(get, t, &gw, scale);
        };
        for term in &self.terms {
            match *term {
                Term::Pos { v, t } => {
                    loss += metric.dist(ev.row(v).as_slice().unwrap(), et.row(t).as_slice().unwrap());
                    if want_grad {
                        push_dist(&mut gev, &mut get, v, t, 1.0);
                    }
                }
                Term::Neg { v, t } => {
                    let d = metric.dist(ev.row(v).as_slice().unwrap(), et.row(t).as_slice().unwrap());
                    if alpha - d > 0.0 {
                        loss += alpha - d;
                        if want_grad {
                            push_dist(&mut gev, &mut get, v, t, -1.0);
                        }
                    }
                }
                Term::TripletText { v, t, t_neg } => {
                    let dp = metric.dist(ev.row(v).as_slice().unwrap(), et.row(t).as_slice().unwrap());
                    let dn = metric.dist(ev.row(v).as_slice().unwrap(), et.row(t_neg).as_slice().unwrap());
                    let h = dp - dn + alpha;
                    if h > 0.0 {
                        loss += h;
                        if want_grad {
                            push_dist(&mut gev, &mut get, v, t, 1.0);
                            push_dist(&mut gev, &mut get, v, t_neg, -1.0);
                        }
                    }
                }
                Term::TripletVisual { v, t, v_neg } => {
                    let dp = metric.dist(ev.row(v).as_slice().unwrap(), et.row(t).as_slice().unwrap());
                    let dn = metric.dist(ev.row(v_neg).as_slice().unwrap(), et.row(t).as_slice().unwrap());
                    let h = dp - dn + alpha;
                    if h > 0.0 {
                        loss += h;
                        if want_grad {
                            push_dist(&mut gev, &mut get, v, t, 1.0);
                            push_dist(&mut gev, &mut get, v_neg, t, -1.0);
                        }
                    }
                }
                Term::Binary { v, t, y } => binary.push((v, t, y)),
            }
        }

        let mut head_grads = None;
        if !binary.is_empty() {
            let head = model.head.as_ref().expect("checked above");
            let nb = binary.len();
            let mut hin = Array2::<f64>::zeros((nb, 2 * e));
            for (i, &(v, t, _)) in binary.iter().enumerate() {
                hin.row_mut(i).slice_mut(ndarray::s![..e]).assign(&ev.row(v));
                hin.row_mut(i).slice_mut(ndarray::s![e..]).assign(&et.row(t));
            }
            let zh = head.hidden.forward(hin.view());
            let mut hh = zh.clone();
            relu_in_place(&mut hh);
            let zo = head.out.forward(hh.view());
            let mut go = Array2::<f64>::zeros((nb, 1));
            let mut bce = 0.0;
            for (i, &(_, _, y)) in binary.iter().enumerate() {
                let p = sigmoid(zo[[i, 0]]);
                let pc = p.clamp(BCE_EPSILON, 1.0 - BCE_EPSILON);
                bce -= if y { pc.ln() } else { (1.0 - pc).ln() };
                if pc == p {
                    go[[i, 0]] = (p - if y { 1.0 } else { 0.0 }) / nb as f64;
                }
            }
            loss += bce / nb as f64;
            if want_grad {
                let mut g_out = Affine::zeros(1, e);
                g_out.accumulate(go.view(), hh.view());
                let mut gzh = go.dot(&head.out.weight);
                gzh.zip_mut_with(&zh, |g, z| {
                    if *z <= 0.0 {
                        *g = 0.0
                    }
                });
                let mut g_hidden = Affine::zeros(e, 2 * e);
                g_hidden.accumulate(gzh.view(), hin.view());
                let ghin = gzh.dot(&head.hidden.weight);
                for (i, &(v, t, _)) in binary.iter().enumerate() {
                    let r = ghin.row(i);
                    add_view(&mut gev, v, r.slice(ndarray::s![..e]));
                    add_view(&mut get, t, r.slice(ndarray::s![e..]));
                }
                head_grads = Some((g_hidden, g_out));
            }
        }
        if !want_grad {
            return Ok((loss, None));
        }

        // ReLU subgradient 0 at 0.
        gev.zip_mut_with(&zv, |g, z| {
            if *z <= 0.0 {
                *g = 0.0
            }
        });
        get.zip_mut_with(&zt, |g, z| {
            if *z <= 0.0 {
                *g = 0.0
            }
        });
        let mut g_visual = Affine::zeros(e, model.visual_dim());
        let mut g_textual = Affine::zeros(e, model.text_dim());
        if self.visual.nrows() > 0 {
            g_visual.accumulate(gev.view(), self.visual.view());
        }
        if self.text.nrows() > 0 {
            g_textual.accumulate(get.view(), self.text.view());
        }
        let mut blocks = vec![g_visual, g_textual];
        if let Some(h) = &model.head {
            let (gh, go) = head_grads.unwrap_or_else(|| {
                (
                    Affine::zeros(h.hidden.outputs(), h.hidden.inputs()),
                    Affine::zeros(1, h.out.inputs()),
                )
            });
            blocks.push(gh);
            blocks.push(go);
        }
        Ok((loss, Some(Gradients { blocks })))
    }
}

fn add_row(m: &mut Array2<f64>, i: usize, g: &[f64], scale: f64) {
    for (dst, v) in m.row_mut(i).iter_mut().zip(g) {
        *dst += scale * v;
    }
}

fn add_view(m: &mut Array2<f64>, i: usize, g: ArrayView1<f64>) {
    let mut r = m.row_mut(i);
    r += &g;
}

/// `(p, n)` for one track–verb pair.
pub fn loss_pair_terms(model: &EmbeddingModel, a: &[f64], b: &[f64], alpha: f64) -> Result<(f64, f64)> {
    let d = model.dist(&model.project_visual(a)?, &model.project_textual(b)?);
    Ok((d, (alpha - d).max(0.0)))
}

fn kind_loss(kind: LossKind, model: &EmbeddingModel, items: &[TrainingQuadruple], alpha: f64) -> Result<f64> {
    Batch::from_quadruples(kind, items, model.visual_dim(), model.text_dim())?.loss(model, alpha)
}

/// `Σ p(a, b) + n(a, b⁻)`.
pub fn loss_siamese(model: &EmbeddingModel, items: &[TrainingQuadruple], alpha: f64) -> Result<f64> {
    kind_loss(LossKind::Siamese, model, items, alpha)
}

/// `Σ t(a, b, b⁻) + v(a, b, a⁻)`.
pub fn loss_triplet2(model: &EmbeddingModel, items: &[TrainingQuadruple], alpha: f64) -> Result<f64> {
    kind_loss(LossKind::Triplet2, model, items, alpha)
}

/// The two-term triplet loss plus `t(a⁺, b, b⁻) + v(a, b, a^w)`.
pub fn loss_triplet4(model: &EmbeddingModel, items: &[TrainingQuadruple], alpha: f64) -> Result<f64> {
    kind_loss(LossKind::Triplet4, model, items, alpha)
}

/// `Σ p(a, b) + n(a, b⁻) + p(a⁺, b) + n(a^w, b)`.
pub fn loss_proposed(model: &EmbeddingModel, items: &[TrainingQuadruple], alpha: f64) -> Result<f64> {
    kind_loss(LossKind::Proposed, model, items, alpha)
}

/// Mean binary cross-entropy of the head's output on `(a, b, y)` pairs.
pub fn loss_binary(model: &EmbeddingModel, pairs: &[(Vec<f64>, Vec<f64>, bool)]) -> Result<f64> {
    if pairs.is_empty() {
        return Ok(0.0);
    }
    let mut vis = Rows {
        dim: model.visual_dim(),
        data: Vec::new(),
    };
    let mut txt = Rows {
        dim: model.text_dim(),
        data: Vec::new(),
    };
    let mut terms = Vec::new();
    for (a, b, y) in pairs {
        terms.push(Term::Binary {
            v: vis.push(a)?,
            t: txt.push(b)?,
            y: *y,
        });
    }
    let batch = Batch {
        visual: vis.finish(),
        text: txt.finish(),
        terms,
        items: pairs.len(),
    };
    batch.loss(model, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::embedding::{Affine, Metric};

    /// A model whose projections copy the first `e` input coordinates.
    fn copy_model(metric: Metric, e: usize) -> EmbeddingModel {
        let mut m = EmbeddingModel::new(e, e, e, metric, false, 0);
        for a in [&mut m.visual, &mut m.textual] {
            *a = Affine::zeros(e, e);
            for i in 0..e {
                a.weight[[i, i]] = 1.0;
            }
        }
        m
    }

    fn quad(
        a: Vec<f64>,
        b: Vec<f64>,
        b_neg: Vec<f64>,
        a_pos: Vec<f64>,
        a_neg: Vec<f64>,
        a_wrong: Vec<f64>,
    ) -> TrainingQuadruple {
        TrainingQuadruple {
            a,
            b,
            b_neg: Some(b_neg),
            a_pos: Some(a_pos),
            a_neg: Some(a_neg),
            a_wrong: Some(a_wrong),
        }
    }

    fn same(x: Vec<f64>) -> TrainingQuadruple {
        quad(x.clone(), x.clone(), x.clone(), x.clone(), x.clone(), x)
    }

    #[test]
    fn pair_terms() {
        let m = copy_model(Metric::EuclideanSq, 2);
        let (p, n) = loss_pair_terms(&m, &[1.0, 1.0], &[1.0, 1.0], 0.2).unwrap();
        assert_eq!((p, n), (0.0, 0.2));
        let (p, n) = loss_pair_terms(&m, &[1.0, 0.0], &[0.0, 0.0], 0.2).unwrap();
        assert_eq!((p, n), (1.0, 0.0));
        let (_, n) = loss_pair_terms(&m, &[0.1f64.sqrt(), 0.0], &[0.0, 0.0], 0.2).unwrap();
        assert!((n - 0.1).abs() < 1e-12);
    }

    #[test]
    fn coincident_projections() {
        let m = copy_model(Metric::EuclideanSq, 3);
        let items = vec![same(vec![1.0, 2.0, 0.5]); 3];
        assert!((loss_siamese(&m, &items, 0.2).unwrap() - 3.0 * 0.2).abs() < 1e-12);
        assert!((loss_triplet2(&m, &items, 0.2).unwrap() - 3.0 * 0.4).abs() < 1e-12);
        assert!((loss_triplet4(&m, &items, 0.2).unwrap() - 3.0 * 0.8).abs() < 1e-12);
        assert!((loss_proposed(&m, &items, 0.2).unwrap() - 3.0 * 0.4).abs() < 1e-12);
        assert_eq!(loss_proposed(&m, &[], 0.2).unwrap(), 0.0);
        assert_eq!(loss_triplet2(&m, &[], 0.2).unwrap(), 0.0);
    }

    #[test]
    fn satisfied_margins_give_zero() {
        let m = copy_model(Metric::EuclideanSq, 2);
        let o = vec![0.0, 0.0];
        // b⁻ at distance 1 from a, a^w at distance 4 from b.
        let q = quad(
            o.clone(),
            o.clone(),
            vec![1.0, 0.0],
            o.clone(),
            vec![0.0, 1.0],
            vec![2.0, 0.0],
        );
        assert_eq!(loss_proposed(&m, std::slice::from_ref(&q), 0.2).unwrap(), 0.0);
        assert_eq!(loss_triplet2(&m, std::slice::from_ref(&q), 0.2).unwrap(), 0.0);
        assert_eq!(loss_triplet4(&m, std::slice::from_ref(&q), 0.2).unwrap(), 0.0);
    }

    #[test]
    fn triplet_hand_case() {
        let m = copy_model(Metric::EuclideanSq, 2);
        // d(a, b) = 0.5, d(a, b⁻) = 0.4.
        let q = TrainingQuadruple {
            a: vec![0.0, 0.0],
            b: vec![0.5f64.sqrt(), 0.0],
            b_neg: Some(vec![0.0, 0.4f64.sqrt()]),
            a_pos: None,
            a_neg: None,
            a_wrong: None,
        };
        assert!((loss_triplet2(&m, &[q], 0.2).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn siamese_single_and_additive() {
        let m = copy_model(Metric::EuclideanSq, 1);
        let q = TrainingQuadruple {
            a: vec![0.0],
            b: vec![0.3f64.sqrt()],
            b_neg: Some(vec![1.0]),
            a_pos: None,
            a_neg: None,
            a_wrong: None,
        };
        let one = loss_siamese(&m, std::slice::from_ref(&q), 0.2).unwrap();
        assert!((one - 0.3).abs() < 1e-12);
        let two = loss_siamese(&m, &[q.clone(), q], 0.2).unwrap();
        assert!((two - 2.0 * one).abs() < 1e-12);
    }

    #[test]
    fn binary_values() {
        let mut m = EmbeddingModel::new(2, 2, 2, Metric::EuclideanSq, true, 0);
        let head = m.head.as_mut().unwrap();
        head.out = Affine::zeros(1, 2);
        let pairs = vec![(vec![1.0, 0.0], vec![0.0, 1.0], true)];
        assert!((loss_binary(&m, &pairs).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
        // Saturated output is clamped.
        m.head.as_mut().unwrap().out.bias[0] = 1e4;
        assert!(loss_binary(&m, &pairs).unwrap() < 1e-6);
        let wrong = vec![(vec![1.0, 0.0], vec![0.0, 1.0], false)];
        let l = loss_binary(&m, &wrong).unwrap();
        assert!((l - (-(BCE_EPSILON).ln())).abs() < 1e-6);
        m.head.as_mut().unwrap().out.bias[0] = 0.0;
        let no_head = EmbeddingModel::new(2, 2, 2, Metric::EuclideanSq, false, 0);
        assert!(loss_binary(&no_head, &pairs).is_err());
    }
}
