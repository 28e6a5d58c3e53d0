//! Semantic classification branch: project category word embeddings into
//! image-feature space, score query features against them, and map the
//! per-query similarity vector through a small MLP into class probabilities.

use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::Rng;

/// Learnable map from word-embedding space (d_w) to image-feature space (d).
#[derive(Debug, Clone)]
pub struct ProjectionLayer<F: Scalar> {
    pub weight: Tensor<F>,
}

impl<F: Scalar> ProjectionLayer<F> {
    pub fn init<R: Rng>(d_w: usize, d: usize, rng: &mut R) -> Self {
        ProjectionLayer {
            weight: Tensor::init_uniform(vec![d_w, d], d_w, rng),
        }
    }
}

/// Row-wise MLP over the q×N similarity matrix: N -> h -> N with ReLU.
#[derive(Debug, Clone)]
pub struct ClassifierHead<F: Scalar> {
    pub w1: Tensor<F>,
    pub b1: Tensor<F>,
    pub w2: Tensor<F>,
    pub b2: Tensor<F>,
}

impl<F: Scalar> ClassifierHead<F> {
    pub fn init<R: Rng>(n: usize, hidden: usize, rng: &mut R) -> Self {
        ClassifierHead {
            w1: Tensor::init_uniform(vec![n, hidden], n, rng),
            b1: Tensor::param(vec![hidden], vec![F::zero(); hidden]).unwrap(),
            w2: Tensor::init_uniform(vec![hidden, n], hidden, rng),
            b2: Tensor::param(vec![n], vec![F::zero(); n]).unwrap(),
        }
    }

    pub fn num_classes(&self) -> usize {
        self.w1.shape[0]
    }
}

/// Tape handles for the head weights, produced once per forward pass.
#[derive(Debug, Clone, Copy)]
pub struct HeadVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl<F: Scalar> ClassifierHead<F> {
    pub fn leaf(&self, tape: &mut Tape<F>) -> HeadVars {
        HeadVars {
            w1: tape.leaf(&self.w1),
            b1: tape.leaf(&self.b1),
            w2: tape.leaf(&self.w2),
            b2: tape.leaf(&self.b2),
        }
    }
}

/// W_se-vi = W_se · P.
pub fn project<F: Scalar>(tape: &mut Tape<F>, w_se: Var, p: Var) -> Result<Var> {
    let dw_rows = tape.shape(w_se).get(1).copied().unwrap_or(0);
    let dw_proj = tape.shape(p).first().copied().unwrap_or(0);
    if dw_rows != dw_proj {
        return Err(Error::Dimension(format!(
            "project: embeddings have d_w={}, projection expects d_w={}",
            dw_rows, dw_proj
        )));
    }
    tape.matmul(w_se, p)
}

/// Pred = softmax_rows(MLP(V · W_se-viᵀ)), applied row-wise; output is q×N.
pub fn classify<F: Scalar>(
    tape: &mut Tape<F>,
    v: Var,
    w_se_vi: Var,
    head: &HeadVars,
) -> Result<Var> {
    let d_v = tape.shape(v).get(1).copied().unwrap_or(0);
    let d_e = tape.shape(w_se_vi).get(1).copied().unwrap_or(0);
    if d_v != d_e {
        return Err(Error::Dimension(format!(
            "classify: query features have d={}, projected embeddings have d={}",
            d_v, d_e
        )));
    }
    let sim = tape.matmul_nt(v, w_se_vi)?;
    let h1 = tape.matmul(sim, head.w1)?;
    let h1 = tape.add_bias_row(h1, head.b1)?;
    let h1 = tape.relu(h1);
    let logits = tape.matmul(h1, head.w2)?;
    let logits = tape.add_bias_row(logits, head.b2)?;
    tape.softmax_rows(logits)
}

/// Value-only projection, for callers that do not need gradients.
pub fn project_values<F: Scalar>(
    embeddings: &EmbeddingMatrix<F>,
    projection: &ProjectionLayer<F>,
) -> Result<Tensor<F>> {
    let mut tape = Tape::new();
    let w = tape.constant(embeddings.rows.shape.clone(), embeddings.rows.data.clone());
    let p = tape.constant(projection.weight.shape.clone(), projection.weight.data.clone());
    let out = project(&mut tape, w, p)?;
    Tensor::new(tape.shape(out).to_vec(), tape.value(out).to_vec())
}

/// Value-only classification, for callers that do not need gradients.
pub fn classify_values<F: Scalar>(
    v: &Tensor<F>,
    w_se_vi: &Tensor<F>,
    head: &ClassifierHead<F>,
) -> Result<Tensor<F>> {
    let mut tape = Tape::new();
    let vv = tape.constant(v.shape.clone(), v.data.clone());
    let ev = tape.constant(w_se_vi.shape.clone(), w_se_vi.data.clone());
    let hv = head.leaf(&mut tape);
    let probs = classify(&mut tape, vv, ev, &hv)?;
    Tensor::new(tape.shape(probs).to_vec(), tape.value(probs).to_vec())
}
