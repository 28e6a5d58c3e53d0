//! Two-stage training: supervised warm-up on labeled data, then
//! teacher-student semi-supervised training with online pseudo labels,
//! threshold filtering, and EMA teacher updates.

use crate::augment::{strong_aug, weak_aug, StrongAugConfig, WeakAugConfig};
use crate::data::{DatasetSplit, ImageSample, InstanceAnnotation, Mask};
use crate::error::{Error, Result};
use crate::eval::{evaluate_model, APReport};
use crate::model::{
    decode, forward, image_tensor, loss_against, LossWeights, ModelWeights,
};
use crate::optim::{AdamWConfig, AdamWState};
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;

#[derive(Debug, Clone)]
pub struct TrainerConfig {
    pub supervised_epochs: usize,
    pub semi_epochs: usize,
    pub batch_size: usize,
    pub ratio_labeled: usize,
    pub ratio_unlabeled: usize,
    /// Pseudo-label score threshold t.
    pub score_threshold: f64,
    /// EMA keep rate r.
    pub keep_rate: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub unlabeled_loss_weight: f64,
    /// Decode floor used for evaluation detections.
    pub score_floor: f64,
    /// Evaluate the teacher on validation every this many stage-2 epochs;
    /// 0 = only after the final epoch.
    pub eval_every: usize,
    pub seed: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            supervised_epochs: 200,
            semi_epochs: 10,
            batch_size: 4,
            ratio_labeled: 1,
            ratio_unlabeled: 1,
            score_threshold: 0.7,
            keep_rate: 0.999,
            learning_rate: 1e-4,
            weight_decay: 0.05,
            unlabeled_loss_weight: 1.0,
            score_floor: 0.05,
            eval_every: 1,
            seed: 0,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.score_threshold) {
            return Err(Error::Config(format!(
                "score threshold must be in [0, 1], got {}",
                self.score_threshold
            )));
        }
        if !(0.0..=1.0).contains(&self.keep_rate) {
            return Err(Error::Config(format!(
                "keep rate must be in [0, 1], got {}",
                self.keep_rate
            )));
        }
        if self.ratio_labeled == 0 || self.ratio_unlabeled == 0 {
            return Err(Error::Config("ratio parts must be positive".into()));
        }
        if self.batch_size == 0
            || self.batch_size % (self.ratio_labeled + self.ratio_unlabeled) != 0
        {
            return Err(Error::Config(format!(
                "batch size {} must divide into ratio {}:{}",
                self.batch_size, self.ratio_labeled, self.ratio_unlabeled
            )));
        }
        Ok(())
    }

    pub fn labeled_per_batch(&self) -> usize {
        self.batch_size * self.ratio_labeled / (self.ratio_labeled + self.ratio_unlabeled)
    }

    pub fn unlabeled_per_batch(&self) -> usize {
        self.batch_size - self.labeled_per_batch()
    }

    pub fn optimizer_config<F: Scalar>(&self) -> AdamWConfig<F> {
        AdamWConfig {
            learning_rate: F::real(self.learning_rate),
            weight_decay: F::real(self.weight_decay),
            ..AdamWConfig::default()
        }
    }
}

/// Pseudo labels surviving the threshold filter, per unlabeled image of a
/// batch, in the geometry of that image's weakly augmented copy.
#[derive(Debug, Clone, Default)]
pub struct PseudoLabelSet {
    pub per_image: Vec<Vec<(usize, f64, Mask)>>,
}

impl PseudoLabelSet {
    pub fn count(&self) -> usize {
        self.per_image.iter().map(|v| v.len()).sum()
    }

    pub fn mean_score(&self) -> f64 {
        let n = self.count();
        if n == 0 {
            return 0.0;
        }
        self.per_image
            .iter()
            .flat_map(|v| v.iter().map(|(_, s, _)| s))
            .sum::<f64>()
            / n as f64
    }
}

/// Teacher inference + decode on (already weakly augmented) unlabeled images;
/// detections with score > t become pseudo labels. No gradients are recorded.
pub fn generate_pseudo_labels<F: Scalar>(
    teacher: &ModelWeights<F>,
    weak_batch: &[ImageSample],
    threshold: f64,
) -> Result<PseudoLabelSet> {
    let mut per_image = Vec::with_capacity(weak_batch.len());
    for s in weak_batch {
        let img = image_tensor::<F>(&s.image, s.h, s.w);
        let fp = forward(&img, teacher)?;
        let labels = decode(&fp.prediction(), threshold)
            .into_iter()
            .map(|d| (d.class_id, d.score, d.mask))
            .collect();
        per_image.push(labels);
    }
    Ok(PseudoLabelSet { per_image })
}

/// tea ← r·tea + (1−r)·stu, per scalar parameter.
pub fn ema_update<F: Scalar>(
    teacher: &mut ModelWeights<F>,
    student: &ModelWeights<F>,
    keep_rate: F,
) -> Result<()> {
    let student_named = student.named_tensors();
    let mut idx = 0usize;
    let mut err: Option<Error> = None;
    let r = keep_rate;
    teacher.visit_mut(&mut |name, t| {
        if err.is_some() {
            return;
        }
        match student_named.get(idx) {
            Some((sname, s)) if sname == name && s.shape == t.shape => {
                for (tv, &sv) in t.data.iter_mut().zip(&s.data) {
                    *tv = r * *tv + (F::one() - r) * sv;
                }
            }
            Some((sname, s)) => {
                err = Some(Error::Dimension(format!(
                    "ema: tensor '{}' ({:?}) does not line up with student '{}' ({:?})",
                    name, t.shape, sname, s.shape
                )));
            }
            None => {
                err = Some(Error::Dimension(format!(
                    "ema: teacher has extra tensor '{}'",
                    name
                )));
            }
        }
        idx += 1;
    });
    if let Some(e) = err {
        return Err(e);
    }
    if idx != student_named.len() {
        return Err(Error::Dimension(format!(
            "ema: student has {} tensors, teacher visited {}",
            student_named.len(),
            idx
        )));
    }
    Ok(())
}

fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Per-image augmentation stream, independent of batch iteration order so a
/// step with an empty unlabeled batch draws the same labeled augmentations.
fn image_rng(seed: u64, epoch: usize, id: &str) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64).wrapping_mul(0x9e3779b97f4a7c15) ^ fnv1a64(id.as_bytes()))
}

struct StepContext<'a> {
    config: &'a TrainerConfig,
    weak: &'a WeakAugConfig,
    strong: &'a StrongAugConfig,
    loss_weights: LossWeights<f64>,
    epoch: usize,
}

fn loss_weights_for<F: Scalar>(lw: &LossWeights<f64>) -> LossWeights<F> {
    LossWeights {
        class_ce: F::real(lw.class_ce),
        mask_bce: F::real(lw.mask_bce),
        mask_dice: F::real(lw.mask_dice),
    }
}

/// Forward + backward on one augmented copy; accumulates `factor ×` gradients
/// and returns the loss value.
fn train_copy<F: Scalar>(
    weights: &mut ModelWeights<F>,
    sample: &ImageSample,
    gt: &[InstanceAnnotation],
    lw: LossWeights<F>,
    factor: F,
) -> Result<f64> {
    let img = image_tensor::<F>(&sample.image, sample.h, sample.w);
    let mut fp = forward(&img, weights)?;
    let loss = loss_against(&mut fp, gt, lw)?;
    let value = fp.tape.item(loss).to_f64_lossy();
    if !value.is_finite() {
        return Err(Error::Numerical(format!(
            "non-finite loss on image {}",
            sample.id
        )));
    }
    fp.backward(loss)?;
    fp.accumulate_grads(weights, factor)?;
    Ok(value)
}

/// The labeled half of a step: weak and strong copies of every labeled image,
/// both supervised by the (transformed) ground truth. Returns the mean loss
/// over copies.
fn labeled_loss<F: Scalar>(
    weights: &mut ModelWeights<F>,
    batch: &[&ImageSample],
    ctx: &StepContext,
) -> Result<f64> {
    if batch.is_empty() {
        return Ok(0.0);
    }
    let lw = loss_weights_for::<F>(&ctx.loss_weights);
    let copies = 2 * batch.len();
    let factor = F::real(1.0 / copies as f64);
    let mut total = 0.0;
    for sample in batch {
        let mut rng = image_rng(ctx.config.seed, ctx.epoch, &sample.id);
        let (weak_copy, _) = weak_aug(sample, ctx.weak, &mut rng);
        let (strong_copy, _) = strong_aug(&weak_copy, ctx.strong, &mut rng);
        total += train_copy(weights, &weak_copy, &weak_copy.instances, lw, factor)?;
        total += train_copy(weights, &strong_copy, &weak_copy.instances, lw, factor)?;
    }
    Ok(total / copies as f64)
}

fn optimizer_step<F: Scalar>(
    weights: &mut ModelWeights<F>,
    opt: &mut AdamWState<F>,
) -> Result<()> {
    let names: Vec<String> = opt.moments.iter().map(|(n, _, _)| n.clone()).collect();
    // visit_mut cannot hand out simultaneous borrows, so collect raw pointers
    // under the single exclusive borrow of `weights`.
    let mut ptrs: Vec<(String, *mut Tensor<F>)> = Vec::new();
    weights.visit_mut(&mut |name, t| {
        if t.requires_grad {
            ptrs.push((name.to_string(), t as *mut _));
        }
    });
    let mut params: Vec<(&str, &mut Tensor<F>)> = Vec::new();
    for name in &names {
        let p = ptrs
            .iter()
            .find(|(n, _)| n == name)
            .ok_or_else(|| Error::Contract(format!("missing parameter '{}'", name)))?;
        params.push((name.as_str(), unsafe { &mut *p.1 }));
    }
    opt.step_update(&mut params)?;
    weights.zero_grads();
    Ok(())
}

pub fn new_optimizer<F: Scalar>(
    weights: &ModelWeights<F>,
    config: &TrainerConfig,
) -> AdamWState<F> {
    AdamWState::new(config.optimizer_config(), &weights.trainable_sizes())
}

/// Stage 1: supervised AdamW training over weak+strong augmented labeled
/// batches. Returns the mean loss per epoch.
pub fn supervised_stage<F: Scalar>(
    weights: &mut ModelWeights<F>,
    opt: &mut AdamWState<F>,
    labeled: &[&ImageSample],
    config: &TrainerConfig,
    weak: &WeakAugConfig,
    strong: &StrongAugConfig,
) -> Result<Vec<f64>> {
    config.validate()?;
    if labeled.is_empty() {
        return Err(Error::Config("supervised stage needs labeled images".into()));
    }
    let mut epoch_losses = Vec::with_capacity(config.supervised_epochs);
    let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x51a6_e001);
    let ctx_base = LossWeights::default();
    for epoch in 0..config.supervised_epochs {
        let mut order: Vec<&ImageSample> = labeled.to_vec();
        order.shuffle(&mut order_rng);
        let ctx = StepContext {
            config,
            weak,
            strong,
            loss_weights: ctx_base,
            epoch,
        };
        let mut total = 0.0;
        let mut batches = 0usize;
        for batch in order.chunks(config.batch_size.max(1)) {
            let loss = labeled_loss(weights, batch, &ctx)?;
            optimizer_step(weights, opt)?;
            total += loss;
            batches += 1;
        }
        let mean = total / batches.max(1) as f64;
        if !mean.is_finite() {
            return Err(Error::Numerical(format!("NaN loss at epoch {}", epoch)));
        }
        epoch_losses.push(mean);
    }
    Ok(epoch_losses)
}

#[derive(Debug, Clone)]
pub struct SemiStepOutcome {
    pub loss: f64,
    pub pseudo: PseudoLabelSet,
}

/// One semi-supervised iteration: augment both batches, pseudo-label the
/// weakly augmented unlabeled copies with the teacher, train the student on
/// all labeled copies plus all pseudo-labeled copies, then EMA the teacher.
///
/// Unlabeled images whose pseudo-label set is empty contribute nothing, so an
/// empty unlabeled batch (or t = 1) degenerates to a supervised step.
pub fn semi_supervised_step<F: Scalar>(
    teacher: &mut ModelWeights<F>,
    student: &mut ModelWeights<F>,
    opt: &mut AdamWState<F>,
    labeled_batch: &[&ImageSample],
    unlabeled_batch: &[&ImageSample],
    config: &TrainerConfig,
    weak: &WeakAugConfig,
    strong: &StrongAugConfig,
    epoch: usize,
) -> Result<SemiStepOutcome> {
    let ctx = StepContext {
        config,
        weak,
        strong,
        loss_weights: LossWeights::default(),
        epoch,
    };

    // weak copies of the unlabeled batch; the strong copy shares the weak
    // copy's geometry, so one pseudo mask set serves both
    let mut weak_copies = Vec::with_capacity(unlabeled_batch.len());
    let mut strong_copies = Vec::with_capacity(unlabeled_batch.len());
    for sample in unlabeled_batch {
        let mut rng = image_rng(config.seed, epoch, &sample.id);
        let (w, _) = weak_aug(sample, weak, &mut rng);
        let (s, _) = strong_aug(&w, strong, &mut rng);
        weak_copies.push(w);
        strong_copies.push(s);
    }
    let pseudo = generate_pseudo_labels(teacher, &weak_copies, config.score_threshold)?;

    let labeled_part = labeled_loss(student, labeled_batch, &ctx)?;

    let lw = loss_weights_for::<F>(&ctx.loss_weights);
    let mut unlabeled_part = 0.0;
    let supervised_copies: usize = pseudo
        .per_image
        .iter()
        .filter(|labels| !labels.is_empty())
        .count()
        * 2;
    if supervised_copies > 0 {
        let factor =
            F::real(config.unlabeled_loss_weight / supervised_copies as f64);
        for (i, labels) in pseudo.per_image.iter().enumerate() {
            if labels.is_empty() {
                continue;
            }
            let gt: Vec<InstanceAnnotation> = labels
                .iter()
                .map(|(class_id, _, mask)| InstanceAnnotation {
                    class_id: *class_id,
                    mask: mask.clone(),
                })
                .collect();
            unlabeled_part += train_copy(student, &weak_copies[i], &gt, lw, factor)?;
            unlabeled_part += train_copy(student, &strong_copies[i], &gt, lw, factor)?;
        }
        unlabeled_part /= supervised_copies as f64;
    }

    optimizer_step(student, opt)?;
    ema_update(teacher, student, F::real(config.keep_rate))?;

    Ok(SemiStepOutcome {
        loss: labeled_part + config.unlabeled_loss_weight * unlabeled_part,
        pseudo,
    })
}

#[derive(Debug, Clone)]
pub struct MetricsRow {
    pub stage: u8,
    pub epoch: usize,
    pub split: &'static str,
    pub loss: Option<f64>,
    pub report: Option<APReport>,
    pub num_pseudo_labels: Option<usize>,
    pub mean_pseudo_score: Option<f64>,
}

#[derive(Debug)]
pub struct TrainOutcome<F: Scalar> {
    pub teacher: ModelWeights<F>,
    pub student: ModelWeights<F>,
    pub metrics: Vec<MetricsRow>,
}

/// The full two-stage strategy. Stage 1 trains on labeled data only; stage 2
/// initializes teacher and student from the stage-1 weights and runs
/// `semi_epochs` passes over the labeled set, drawing unlabeled images to
/// match the configured ratio. Validation metrics use the teacher.
#[allow(clippy::too_many_arguments)]
pub fn two_stage_train<F: Scalar>(
    initial: ModelWeights<F>,
    samples: &[ImageSample],
    split: &DatasetSplit,
    validation: &[ImageSample],
    config: &TrainerConfig,
    weak: &WeakAugConfig,
    strong: &StrongAugConfig,
    run_stage2: bool,
) -> Result<TrainOutcome<F>> {
    config.validate()?;
    let by_id = crate::data::index_by_id(samples);
    let pick = |ids: &[String]| -> Result<Vec<&ImageSample>> {
        ids.iter()
            .map(|id| {
                by_id
                    .get(id.as_str())
                    .map(|&i| &samples[i])
                    .ok_or_else(|| Error::Config(format!("split references unknown id '{}'", id)))
            })
            .collect()
    };
    let labeled = pick(&split.labeled_ids)?;
    let unlabeled = pick(&split.unlabeled_ids)?;

    let mut metrics = Vec::new();
    let mut weights = initial;
    let mut opt = new_optimizer(&weights, config);
    let losses = supervised_stage(&mut weights, &mut opt, &labeled, config, weak, strong)?;
    for (epoch, loss) in losses.iter().enumerate() {
        metrics.push(MetricsRow {
            stage: 1,
            epoch,
            split: "train",
            loss: Some(*loss),
            report: None,
            num_pseudo_labels: None,
            mean_pseudo_score: None,
        });
    }
    if !validation.is_empty() {
        let report = evaluate_model(&weights, validation, config.score_floor)?;
        metrics.push(MetricsRow {
            stage: 1,
            epoch: config.supervised_epochs.saturating_sub(1),
            split: "val",
            loss: None,
            report: Some(report),
            num_pseudo_labels: None,
            mean_pseudo_score: None,
        });
    }

    let mut student = weights.clone();
    let mut teacher = weights;
    if run_stage2 && config.semi_epochs > 0 && !unlabeled.is_empty() {
        let mut opt = new_optimizer(&student, config);
        let mut order_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x51a6_e002);
        let lab_n = config.labeled_per_batch().max(1);
        let unlab_n = config.unlabeled_per_batch();
        for epoch in 0..config.semi_epochs {
            let mut lab_order = labeled.clone();
            lab_order.shuffle(&mut order_rng);
            let mut unlab_order = unlabeled.clone();
            unlab_order.shuffle(&mut order_rng);
            let mut unlab_iter = unlab_order.iter().cycle();
            let mut epoch_loss = 0.0;
            let mut pseudo_count = 0usize;
            let mut pseudo_score_sum = 0.0;
            let mut steps = 0usize;
            for lab_batch in lab_order.chunks(lab_n) {
                let unlab_batch: Vec<&ImageSample> =
                    (0..unlab_n).map(|_| *unlab_iter.next().unwrap()).collect();
                let outcome = semi_supervised_step(
                    &mut teacher,
                    &mut student,
                    &mut opt,
                    lab_batch,
                    &unlab_batch,
                    config,
                    weak,
                    strong,
                    // distinct augmentation streams per stage-2 epoch
                    config.supervised_epochs + 1 + epoch,
                )?;
                epoch_loss += outcome.loss;
                pseudo_score_sum += outcome.pseudo.mean_score() * outcome.pseudo.count() as f64;
                pseudo_count += outcome.pseudo.count();
                steps += 1;
            }
            let mean_loss = epoch_loss / steps.max(1) as f64;
            if !mean_loss.is_finite() {
                return Err(Error::Numerical(format!("NaN loss at stage-2 epoch {}", epoch)));
            }
            metrics.push(MetricsRow {
                stage: 2,
                epoch,
                split: "train",
                loss: Some(mean_loss),
                report: None,
                num_pseudo_labels: Some(pseudo_count),
                mean_pseudo_score: Some(if pseudo_count == 0 {
                    0.0
                } else {
                    pseudo_score_sum / pseudo_count as f64
                }),
            });
            let is_last = epoch + 1 == config.semi_epochs;
            let due = config.eval_every != 0 && (epoch + 1) % config.eval_every == 0;
            if !validation.is_empty() && (due || is_last) {
                let report = evaluate_model(&teacher, validation, config.score_floor)?;
                metrics.push(MetricsRow {
                    stage: 2,
                    epoch,
                    split: "val",
                    loss: None,
                    report: Some(report),
                    num_pseudo_labels: None,
                    mean_pseudo_score: None,
                });
            }
        }
    }
    Ok(TrainOutcome {
        teacher,
        student,
        metrics,
    })
}

// --- checkpoint format -----------------------------------------------------

const CHECKPOINT_MAGIC: &[u8; 4] = b"SSIC";
const CHECKPOINT_VERSION: u32 = 1;

/// Binary checkpoint: "SSIC", u32 LE version, u32 LE tensor count, then per
/// tensor a u16 LE name length + UTF-8 name, u8 rank, u32 LE dims, and
/// row-major f32 LE data.
pub fn save_checkpoint(path: &Path, named: &[(String, Tensor<f32>)]) -> Result<()> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(named.len() as u32).to_le_bytes());
    for (name, t) in named {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.push(t.shape.len() as u8);
        for &d in &t.shape {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &x in &t.data {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: &Path) -> Result<Vec<(String, Tensor<f32>)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let pname = path.display().to_string();
    let fail = |message: String| Error::Parse {
        path: pname.clone(),
        line: 0,
        message,
    };
    if bytes.len() < 12 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(fail("missing SSIC magic bytes".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != CHECKPOINT_VERSION {
        return Err(fail(format!("unsupported checkpoint version {}", version)));
    }
    let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let mut pos = 12usize;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let tensor_tag = |name: &str| {
            if name.is_empty() {
                format!("tensor #{}", i)
            } else {
                format!("tensor '{}'", name)
            }
        };
        if pos + 2 > bytes.len() {
            return Err(fail(format!("truncated at {}", tensor_tag(""))));
        }
        let name_len = u16::from_le_bytes(bytes[pos..pos + 2].try_into().unwrap()) as usize;
        pos += 2;
        if pos + name_len + 1 > bytes.len() {
            return Err(fail(format!("truncated name in {}", tensor_tag(""))));
        }
        let name = std::str::from_utf8(&bytes[pos..pos + name_len])
            .map_err(|_| fail(format!("non-UTF-8 name in tensor #{}", i)))?
            .to_string();
        pos += name_len;
        let rank = bytes[pos] as usize;
        pos += 1;
        if pos + 4 * rank > bytes.len() {
            return Err(fail(format!("truncated shape in {}", tensor_tag(&name))));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(u32::from_le_bytes(bytes[pos..pos + 4].try_into().unwrap()) as usize);
            pos += 4;
        }
        let numel: usize = shape.iter().product();
        if pos + 4 * numel > bytes.len() {
            return Err(fail(format!("truncated data in {}", tensor_tag(&name))));
        }
        let data = (0..numel)
            .map(|k| f32::from_le_bytes(bytes[pos + 4 * k..pos + 4 * k + 4].try_into().unwrap()))
            .collect();
        pos += 4 * numel;
        out.push((name, Tensor::new(shape, data)?));
    }
    Ok(out)
}

pub fn save_model(path: &Path, weights: &ModelWeights<f32>) -> Result<()> {
    save_checkpoint(path, &weights.named_tensors())
}

/// Fills an initialized model with checkpointed tensors, matched by name.
pub fn load_model_into(path: &Path, weights: &mut ModelWeights<f32>) -> Result<()> {
    let named = load_checkpoint(path)?;
    for (name, t) in named {
        let dst = weights.tensor_mut(&name).ok_or_else(|| Error::Parse {
            path: path.display().to_string(),
            line: 0,
            message: format!("checkpoint tensor '{}' has no place in this model", name),
        })?;
        if dst.shape != t.shape {
            return Err(Error::Dimension(format!(
                "checkpoint tensor '{}' is {:?}, model expects {:?}",
                name, t.shape, dst.shape
            )));
        }
        dst.data = t.data;
    }
    Ok(())
}

pub fn save_optimizer(path: &Path, opt: &AdamWState<f32>) -> Result<()> {
    let mut named = vec![(
        "adamw.step".to_string(),
        Tensor::scalar(opt.step as f32),
    )];
    for (name, m, v) in &opt.moments {
        named.push((format!("adamw.{}.m", name), Tensor::new(vec![m.len()], m.clone())?));
        named.push((format!("adamw.{}.v", name), Tensor::new(vec![v.len()], v.clone())?));
    }
    save_checkpoint(path, &named)
}
