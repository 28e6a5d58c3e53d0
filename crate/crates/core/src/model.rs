//! Toy box-free query-based instance segmentor: a small conv encoder, q
//! learnable queries attending over the feature map, a per-pixel mask head,
//! and either the semantic classification branch or a plain linear head.

use crate::data::{InstanceAnnotation, Mask};
use crate::embeddings::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::hungarian::assign_min_cost;
use crate::scalar::Scalar;
use crate::semantic::{classify, project, ClassifierHead, ProjectionLayer};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;
use rand::Rng;

#[derive(Debug, Clone)]
pub struct ModelConfig {
    /// Class count including background.
    pub num_classes: usize,
    pub num_queries: usize,
    /// Image feature dimension d (encoder output channels).
    pub feature_dim: usize,
    /// Classifier MLP hidden width; 0 means the 2N default.
    pub hidden: usize,
    pub semantic_branch: bool,
    pub freeze_embeddings: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            num_classes: 5,
            num_queries: 10,
            feature_dim: 32,
            hidden: 0,
            semantic_branch: true,
            freeze_embeddings: true,
        }
    }
}

impl ModelConfig {
    pub fn hidden_width(&self) -> usize {
        if self.hidden == 0 {
            2 * self.num_classes
        } else {
            self.hidden
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConvLayer<F: Scalar> {
    pub kernels: Tensor<F>,
    pub bias: Tensor<F>,
}

impl<F: Scalar> ConvLayer<F> {
    fn init<R: Rng>(c_in: usize, c_out: usize, rng: &mut R) -> Self {
        ConvLayer {
            kernels: Tensor::init_uniform(vec![c_out, c_in, 3, 3], c_in * 9, rng),
            bias: Tensor::param(vec![c_out], vec![F::zero(); c_out]).unwrap(),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Classifier<F: Scalar> {
    Semantic {
        embeddings: Tensor<F>,
        projection: ProjectionLayer<F>,
        head: ClassifierHead<F>,
    },
    Linear {
        weight: Tensor<F>,
        bias: Tensor<F>,
    },
}

#[derive(Debug, Clone)]
pub struct ModelWeights<F: Scalar> {
    pub config: ModelConfig,
    pub conv1: ConvLayer<F>,
    pub conv2: ConvLayer<F>,
    pub conv3: ConvLayer<F>,
    pub queries: Tensor<F>,
    pub mask_weight: Tensor<F>,
    pub mask_bias: Tensor<F>,
    pub classifier: Classifier<F>,
}

impl<F: Scalar> ModelWeights<F> {
    /// With the semantic branch on, `embeddings` supplies W_se; otherwise a
    /// plain linear d→N classifier is built.
    pub fn init<R: Rng>(
        config: ModelConfig,
        embeddings: Option<&EmbeddingMatrix<F>>,
        rng: &mut R,
    ) -> Result<Self> {
        let d = config.feature_dim;
        let n = config.num_classes;
        let classifier = if config.semantic_branch {
            let emb = embeddings.ok_or_else(|| {
                Error::Config("semantic branch requires an embedding matrix".into())
            })?;
            if emb.rows.shape[0] != n {
                return Err(Error::Dimension(format!(
                    "embeddings have {} rows, model expects N={}",
                    emb.rows.shape[0], n
                )));
            }
            let mut rows = emb.rows.clone();
            rows.requires_grad = !config.freeze_embeddings;
            Classifier::Semantic {
                embeddings: rows,
                projection: ProjectionLayer::init(emb.dim, d, rng),
                head: ClassifierHead::init(n, config.hidden_width(), rng),
            }
        } else {
            Classifier::Linear {
                weight: Tensor::init_uniform(vec![d, n], d, rng),
                bias: Tensor::param(vec![n], vec![F::zero(); n]).unwrap(),
            }
        };
        Ok(ModelWeights {
            conv1: ConvLayer::init(3, 16, rng),
            conv2: ConvLayer::init(16, 32, rng),
            conv3: ConvLayer::init(32, d, rng),
            queries: Tensor::init_uniform(vec![config.num_queries, d], d, rng),
            mask_weight: Tensor::init_uniform(vec![d, d], d, rng),
            mask_bias: Tensor::param(vec![d], vec![F::zero(); d]).unwrap(),
            classifier,
            config,
        })
    }

    pub fn visit(&self, f: &mut impl FnMut(&str, &Tensor<F>)) {
        f("conv1.kernels", &self.conv1.kernels);
        f("conv1.bias", &self.conv1.bias);
        f("conv2.kernels", &self.conv2.kernels);
        f("conv2.bias", &self.conv2.bias);
        f("conv3.kernels", &self.conv3.kernels);
        f("conv3.bias", &self.conv3.bias);
        f("queries", &self.queries);
        f("mask.weight", &self.mask_weight);
        f("mask.bias", &self.mask_bias);
        match &self.classifier {
            Classifier::Semantic {
                embeddings,
                projection,
                head,
            } => {
                f("embeddings", embeddings);
                f("projection", &projection.weight);
                f("head.w1", &head.w1);
                f("head.b1", &head.b1);
                f("head.w2", &head.w2);
                f("head.b2", &head.b2);
            }
            Classifier::Linear { weight, bias } => {
                f("linear.weight", weight);
                f("linear.bias", bias);
            }
        }
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&str, &mut Tensor<F>)) {
        f("conv1.kernels", &mut self.conv1.kernels);
        f("conv1.bias", &mut self.conv1.bias);
        f("conv2.kernels", &mut self.conv2.kernels);
        f("conv2.bias", &mut self.conv2.bias);
        f("conv3.kernels", &mut self.conv3.kernels);
        f("conv3.bias", &mut self.conv3.bias);
        f("queries", &mut self.queries);
        f("mask.weight", &mut self.mask_weight);
        f("mask.bias", &mut self.mask_bias);
        match &mut self.classifier {
            Classifier::Semantic {
                embeddings,
                projection,
                head,
            } => {
                f("embeddings", embeddings);
                f("projection", &mut projection.weight);
                f("head.w1", &mut head.w1);
                f("head.b1", &mut head.b1);
                f("head.w2", &mut head.w2);
                f("head.b2", &mut head.b2);
            }
            Classifier::Linear { weight, bias } => {
                f("linear.weight", weight);
                f("linear.bias", bias);
            }
        }
    }

    pub fn named_tensors(&self) -> Vec<(String, Tensor<F>)> {
        let mut out = Vec::new();
        self.visit(&mut |name, t| out.push((name.to_string(), t.clone())));
        out
    }

    pub fn tensor_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        let mut found: Option<*mut Tensor<F>> = None;
        self.visit_mut(&mut |n, t| {
            if n == name {
                found = Some(t as *mut _);
            }
        });
        // visit_mut hands out disjoint borrows one at a time; the raw pointer
        // is only read back while `self` is still exclusively borrowed.
        found.map(|p| unsafe { &mut *p })
    }

    /// Trainable parameter names and sizes, in visit order.
    pub fn trainable_sizes(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        self.visit(&mut |name, t| {
            if t.requires_grad {
                out.push((name.to_string(), t.numel()));
            }
        });
        out
    }

    pub fn zero_grads(&mut self) {
        self.visit_mut(&mut |_, t| t.zero_grad());
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, t| ok &= t.is_finite());
        ok
    }

    pub fn map_precision<G: Scalar>(&self) -> ModelWeights<G> {
        ModelWeights {
            config: self.config.clone(),
            conv1: ConvLayer {
                kernels: self.conv1.kernels.map_precision(),
                bias: self.conv1.bias.map_precision(),
            },
            conv2: ConvLayer {
                kernels: self.conv2.kernels.map_precision(),
                bias: self.conv2.bias.map_precision(),
            },
            conv3: ConvLayer {
                kernels: self.conv3.kernels.map_precision(),
                bias: self.conv3.bias.map_precision(),
            },
            queries: self.queries.map_precision(),
            mask_weight: self.mask_weight.map_precision(),
            mask_bias: self.mask_bias.map_precision(),
            classifier: match &self.classifier {
                Classifier::Semantic {
                    embeddings,
                    projection,
                    head,
                } => Classifier::Semantic {
                    embeddings: embeddings.map_precision(),
                    projection: ProjectionLayer {
                        weight: projection.weight.map_precision(),
                    },
                    head: ClassifierHead {
                        w1: head.w1.map_precision(),
                        b1: head.b1.map_precision(),
                        w2: head.w2.map_precision(),
                        b2: head.b2.map_precision(),
                    },
                },
                Classifier::Linear { weight, bias } => Classifier::Linear {
                    weight: weight.map_precision(),
                    bias: bias.map_precision(),
                },
            },
        }
    }
}

/// A recorded forward pass: the tape plus handles to outputs and parameters.
pub struct ForwardPass<F: Scalar> {
    pub tape: Tape<F>,
    pub class_probs: Var,
    pub mask_logits: Var,
    pub query_features: Var,
    pub h: usize,
    pub w: usize,
    params: Vec<(String, Var)>,
}

/// Value-only snapshot of a forward pass.
#[derive(Debug, Clone)]
pub struct Prediction<F: Scalar> {
    pub class_probs: Tensor<F>,
    pub mask_logits: Tensor<F>,
    pub query_features: Tensor<F>,
    pub h: usize,
    pub w: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchResult {
    /// (query index, ground-truth index) pairs.
    pub pairs: Vec<(usize, usize)>,
    pub unmatched_queries: Vec<usize>,
}

#[derive(Debug, Clone)]
pub struct Detection {
    pub class_id: usize,
    pub score: f64,
    pub mask: Mask,
}

pub fn image_tensor<F: Scalar>(image: &[f32], h: usize, w: usize) -> Tensor<F> {
    Tensor::new(
        vec![3, h, w],
        image.iter().map(|&x| F::real32(x)).collect(),
    )
    .expect("3×H×W image buffer")
}

/// Runs the segmentor on one image, recording the graph for backward.
pub fn forward<F: Scalar>(image: &Tensor<F>, weights: &ModelWeights<F>) -> Result<ForwardPass<F>> {
    let (h, w) = match image.shape[..] {
        [3, h, w] => (h, w),
        ref s => {
            return Err(Error::Dimension(format!(
                "segmentor input must be 3×H×W, got {:?}",
                s
            )))
        }
    };
    let d = weights.config.feature_dim;
    let mut tape = Tape::new();
    let mut params: Vec<(String, Var)> = Vec::new();
    let mut leaf = |tape: &mut Tape<F>, name: &str, t: &Tensor<F>| {
        let v = tape.leaf(t);
        params.push((name.to_string(), v));
        v
    };

    let img = tape.constant(image.shape.clone(), image.data.clone());
    let k1 = leaf(&mut tape, "conv1.kernels", &weights.conv1.kernels);
    let b1 = leaf(&mut tape, "conv1.bias", &weights.conv1.bias);
    let k2 = leaf(&mut tape, "conv2.kernels", &weights.conv2.kernels);
    let b2 = leaf(&mut tape, "conv2.bias", &weights.conv2.bias);
    let k3 = leaf(&mut tape, "conv3.kernels", &weights.conv3.kernels);
    let b3 = leaf(&mut tape, "conv3.bias", &weights.conv3.bias);
    let x = tape.conv2d(img, k1, b1)?;
    let x = tape.relu(x);
    let x = tape.conv2d(x, k2, b2)?;
    let x = tape.relu(x);
    let x = tape.conv2d(x, k3, b3)?;
    let feat_chw = tape.relu(x); // d×H×W

    // pixel-major feature matrix (HW×d): view d×H×W as d×(HW), transpose
    let feat_flat = {
        let reshaped = reshape2(&mut tape, feat_chw, d, h * w);
        tape.transpose(reshaped)?
    };

    // dot-product attention of queries over pixels, scaled by 1/sqrt(d)
    let queries = leaf(&mut tape, "queries", &weights.queries);
    let scores = tape.matmul_nt(queries, feat_flat)?; // q×HW
    let scores = tape.scale(scores, F::real(1.0 / (d as f64).sqrt()));
    let attention = tape.softmax_rows(scores)?;
    let v_feat = tape.matmul(attention, feat_flat)?; // q×d

    // per-pixel mask embedding and mask logits
    let mw = leaf(&mut tape, "mask.weight", &weights.mask_weight);
    let mb = leaf(&mut tape, "mask.bias", &weights.mask_bias);
    let embed = tape.matmul(feat_flat, mw)?;
    let embed = tape.add_bias_row(embed, mb)?;
    let mask_logits = tape.matmul_nt(v_feat, embed)?; // q×HW

    let class_probs = match &weights.classifier {
        Classifier::Semantic {
            embeddings,
            projection,
            head,
        } => {
            let w_se = leaf(&mut tape, "embeddings", embeddings);
            let p = leaf(&mut tape, "projection", &projection.weight);
            let w_se_vi = project(&mut tape, w_se, p)?;
            let hv = crate::semantic::HeadVars {
                w1: leaf(&mut tape, "head.w1", &head.w1),
                b1: leaf(&mut tape, "head.b1", &head.b1),
                w2: leaf(&mut tape, "head.w2", &head.w2),
                b2: leaf(&mut tape, "head.b2", &head.b2),
            };
            classify(&mut tape, v_feat, w_se_vi, &hv)?
        }
        Classifier::Linear { weight, bias } => {
            let lw = leaf(&mut tape, "linear.weight", weight);
            let lb = leaf(&mut tape, "linear.bias", bias);
            let logits = tape.matmul(v_feat, lw)?;
            let logits = tape.add_bias_row(logits, lb)?;
            tape.softmax_rows(logits)?
        }
    };

    Ok(ForwardPass {
        tape,
        class_probs,
        mask_logits,
        query_features: v_feat,
        h,
        w,
        params,
    })
}

/// Shape-only reinterpretation of a tape variable as m×n; the buffer layout
/// is identical, so gradients pass through unchanged.
fn reshape2<F: Scalar>(tape: &mut Tape<F>, v: Var, m: usize, n: usize) -> Var {
    let out = tape.scale(v, F::one());
    tape.reinterpret_shape(out, vec![m, n]);
    out
}

impl<F: Scalar> ForwardPass<F> {
    pub fn prediction(&self) -> Prediction<F> {
        Prediction {
            class_probs: Tensor::new(
                self.tape.shape(self.class_probs).to_vec(),
                self.tape.value(self.class_probs).to_vec(),
            )
            .expect("tape shape"),
            mask_logits: Tensor::new(
                self.tape.shape(self.mask_logits).to_vec(),
                self.tape.value(self.mask_logits).to_vec(),
            )
            .expect("tape shape"),
            query_features: Tensor::new(
                self.tape.shape(self.query_features).to_vec(),
                self.tape.value(self.query_features).to_vec(),
            )
            .expect("tape shape"),
            h: self.h,
            w: self.w,
        }
    }

    pub fn backward(&mut self, loss: Var) -> Result<()> {
        self.tape.backward(loss)
    }

    /// Adds `factor ×` the tape gradients into the weight tensors.
    pub fn accumulate_grads(&self, weights: &mut ModelWeights<F>, factor: F) -> Result<()> {
        for (name, var) in &self.params {
            let t = weights
                .tensor_mut(name)
                .ok_or_else(|| Error::Contract(format!("unknown parameter '{}'", name)))?;
            if t.requires_grad {
                t.accumulate_grad(self.tape.grad(*var), factor)?;
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LossWeights<F: Scalar> {
    pub class_ce: F,
    pub mask_bce: F,
    pub mask_dice: F,
}

impl<F: Scalar> Default for LossWeights<F> {
    fn default() -> Self {
        LossWeights {
            class_ce: F::one(),
            mask_bce: F::one(),
            mask_dice: F::one(),
        }
    }
}

fn mask_target<F: Scalar>(mask: &Mask) -> Vec<F> {
    mask.data
        .iter()
        .map(|&b| if b { F::one() } else { F::zero() })
        .collect()
}

/// Matching cost between every query and ground truth: class cross-entropy
/// plus Dice distance of the sigmoid mask. Row-major q×g.
pub fn match_cost<F: Scalar>(pred: &Prediction<F>, gt: &[InstanceAnnotation]) -> Result<Vec<f64>> {
    let q = pred.class_probs.shape[0];
    let n = pred.class_probs.shape[1];
    let hw = pred.h * pred.w;
    let mut cost = vec![0.0f64; q * gt.len()];
    for (j, inst) in gt.iter().enumerate() {
        if inst.class_id == 0 || inst.class_id >= n {
            return Err(Error::Label(format!(
                "ground-truth class id {} out of range [1, {})",
                inst.class_id, n
            )));
        }
        if inst.mask.h != pred.h || inst.mask.w != pred.w {
            return Err(Error::Dimension(format!(
                "ground-truth mask {}×{} vs prediction {}×{}",
                inst.mask.h, inst.mask.w, pred.h, pred.w
            )));
        }
        let t_sum = inst.mask.foreground_count() as f64;
        for i in 0..q {
            let p = pred.class_probs.data[i * n + inst.class_id]
                .to_f64_lossy()
                .max(crate::tape::CE_CLAMP);
            let ce = -p.ln();
            let mut inter = 0.0f64;
            let mut p_sum = 0.0f64;
            for (pix, &tgt) in inst.mask.data.iter().enumerate() {
                let x = pred.mask_logits.data[i * hw + pix].to_f64_lossy();
                let s = if x >= 0.0 {
                    1.0 / (1.0 + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (1.0 + e)
                };
                p_sum += s;
                if tgt {
                    inter += s;
                }
            }
            let dice = 1.0 - (2.0 * inter + 1.0) / (p_sum + t_sum + 1.0);
            cost[i * gt.len() + j] = ce + dice;
        }
    }
    Ok(cost)
}

/// Minimum-cost one-to-one assignment on a q×g cost matrix (g ≤ q), covering
/// every ground truth.
pub fn hungarian_match(cost: &[f64], q: usize, g: usize) -> Result<MatchResult> {
    if g > q {
        return Err(Error::Capacity(format!(
            "{} ground truths exceed {} queries",
            g, q
        )));
    }
    // assignment solver wants rows <= cols, so run it on the transpose
    let mut t = vec![0.0f64; g * q];
    for i in 0..q {
        for j in 0..g {
            t[j * q + i] = cost[i * g + j];
        }
    }
    let gt_to_query = assign_min_cost(&t, g, q)?;
    let pairs: Vec<(usize, usize)> = gt_to_query
        .iter()
        .enumerate()
        .map(|(gt, &query)| (query, gt))
        .collect();
    let unmatched_queries = (0..q)
        .filter(|i| !pairs.iter().any(|&(qi, _)| qi == *i))
        .collect();
    Ok(MatchResult {
        pairs,
        unmatched_queries,
    })
}

/// Training loss on a recorded forward pass: matched pairs get class CE +
/// mask BCE + Dice, unmatched queries get CE toward background (class 0).
pub fn compute_loss<F: Scalar>(
    fp: &mut ForwardPass<F>,
    gt: &[InstanceAnnotation],
    matching: &MatchResult,
    weights: LossWeights<F>,
) -> Result<Var> {
    let mut ce_targets: Vec<(usize, usize)> = Vec::new();
    let mut mask_pairs: Vec<(usize, Vec<F>)> = Vec::new();
    for &(query, gt_idx) in &matching.pairs {
        let inst = gt.get(gt_idx).ok_or_else(|| {
            Error::Contract(format!("match references ground truth {}", gt_idx))
        })?;
        ce_targets.push((query, inst.class_id));
        mask_pairs.push((query, mask_target(&inst.mask)));
    }
    for &query in &matching.unmatched_queries {
        ce_targets.push((query, 0));
    }
    ce_targets.sort_unstable();

    let ce = fp.tape.cross_entropy_rows(fp.class_probs, &ce_targets)?;
    let mut total = fp.tape.scale(ce, weights.class_ce);
    if !mask_pairs.is_empty() {
        let bce = fp.tape.bce_masks(fp.mask_logits, &mask_pairs)?;
        let bce = fp.tape.scale(bce, weights.mask_bce);
        total = fp.tape.add(total, bce)?;
        let dice = fp.tape.dice_masks(fp.mask_logits, &mask_pairs)?;
        let dice = fp.tape.scale(dice, weights.mask_dice);
        total = fp.tape.add(total, dice)?;
    }
    Ok(total)
}

/// Convenience: match then loss.
pub fn loss_against<F: Scalar>(
    fp: &mut ForwardPass<F>,
    gt: &[InstanceAnnotation],
    weights: LossWeights<F>,
) -> Result<Var> {
    let matching = if gt.is_empty() {
        MatchResult {
            pairs: Vec::new(),
            unmatched_queries: (0..fp.tape.shape(fp.class_probs)[0]).collect(),
        }
    } else {
        let pred = fp.prediction();
        let cost = match_cost(&pred, gt)?;
        hungarian_match(&cost, pred.class_probs.shape[0], gt.len())?
    };
    compute_loss(fp, gt, &matching, weights)
}

/// Inference decoding: per query, the best non-background class and its
/// probability; mask = sigmoid(logits) > 0.5. Queries at or below the score
/// floor, or with empty masks, are dropped.
pub fn decode<F: Scalar>(pred: &Prediction<F>, score_floor: f64) -> Vec<Detection> {
    let q = pred.class_probs.shape[0];
    let n = pred.class_probs.shape[1];
    let hw = pred.h * pred.w;
    let mut out = Vec::new();
    for i in 0..q {
        let row = &pred.class_probs.data[i * n..(i + 1) * n];
        let (class_id, score) = row
            .iter()
            .enumerate()
            .skip(1)
            .map(|(j, &p)| (j, p.to_f64_lossy()))
            .fold((0usize, f64::NEG_INFINITY), |best, cur| {
                if cur.1 > best.1 {
                    cur
                } else {
                    best
                }
            });
        if class_id == 0 || score <= score_floor {
            continue;
        }
        let mut mask = Mask::empty(pred.h, pred.w);
        let mut any = false;
        for p in 0..hw {
            if pred.mask_logits.data[i * hw + p] > F::zero() {
                mask.data[p] = true;
                any = true;
            }
        }
        if any {
            out.push(Detection {
                class_id,
                score,
                mask,
            });
        }
    }
    out
}
