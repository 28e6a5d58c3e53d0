//! Mask AP evaluation in the COCO convention: IoU sweep 0.50:0.05:0.95,
//! greedy score-ordered matching, 101-point interpolated average precision,
//! macro-averaged over classes with ground truth.

use crate::data::{ImageSample, Mask};
use crate::error::{Error, Result};
use crate::model::{decode, forward, image_tensor, ModelWeights};
use crate::scalar::Scalar;
use std::collections::HashMap;
use std::path::Path;

pub const IOU_THRESHOLDS: [f64; 10] = [0.50, 0.55, 0.60, 0.65, 0.70, 0.75, 0.80, 0.85, 0.90, 0.95];

#[derive(Debug, Clone)]
pub struct DetectionRecord {
    pub image_id: String,
    pub class_id: usize,
    pub score: f64,
    pub mask: Mask,
}

/// AP values on the 0..100 scale.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct APReport {
    pub ap: f64,
    pub ap50: f64,
    pub ap75: f64,
}

pub fn mask_iou(a: &Mask, b: &Mask) -> Result<f64> {
    a.iou(b)
}

/// Greedy matching for one image and one class: detections must arrive in
/// descending score order; each matches the highest-IoU unmatched ground
/// truth at or above the threshold.
pub fn match_detections(
    det_masks: &[&Mask],
    gt_masks: &[&Mask],
    iou_threshold: f64,
) -> Result<Vec<bool>> {
    let mut gt_used = vec![false; gt_masks.len()];
    let mut flags = Vec::with_capacity(det_masks.len());
    for det in det_masks {
        let mut best: Option<(usize, f64)> = None;
        for (j, gt) in gt_masks.iter().enumerate() {
            if gt_used[j] {
                continue;
            }
            let iou = mask_iou(det, gt)?;
            if iou >= iou_threshold && best.map_or(true, |(_, b)| iou > b) {
                best = Some((j, iou));
            }
        }
        match best {
            Some((j, _)) => {
                gt_used[j] = true;
                flags.push(true);
            }
            None => flags.push(false),
        }
    }
    Ok(flags)
}

/// 101-point interpolated AP on the 0..100 scale. Flags must be in score
/// order. Returns 0 when there are ground truths but no true positives can
/// be formed, and 0 when num_gt is 0 (callers skip such classes).
pub fn average_precision(flags: &[bool], num_gt: usize) -> f64 {
    if num_gt == 0 {
        return 0.0;
    }
    let mut precisions = Vec::with_capacity(flags.len());
    let mut recalls = Vec::with_capacity(flags.len());
    let mut tp = 0usize;
    for (i, &f) in flags.iter().enumerate() {
        if f {
            tp += 1;
        }
        precisions.push(tp as f64 / (i + 1) as f64);
        recalls.push(tp as f64 / num_gt as f64);
    }
    // monotonize precision from the right
    for i in (0..precisions.len().saturating_sub(1)).rev() {
        precisions[i] = precisions[i].max(precisions[i + 1]);
    }
    let mut total = 0.0;
    for k in 0..=100 {
        let r = k as f64 / 100.0;
        // first point with recall >= r
        let p = recalls
            .iter()
            .position(|&rec| rec >= r - 1e-12)
            .map(|i| precisions[i])
            .unwrap_or(0.0);
        total += p;
    }
    100.0 * total / 101.0
}

struct ClassEval<'a> {
    /// (image_id, mask), in global descending-score order.
    dets: Vec<(&'a str, &'a Mask)>,
    /// per image: ground-truth masks of this class
    gts: HashMap<&'a str, Vec<&'a Mask>>,
    num_gt: usize,
}

/// Full evaluation of detections against ground-truth samples.
pub fn evaluate(dets: &[DetectionRecord], gt_samples: &[ImageSample]) -> Result<APReport> {
    if gt_samples.is_empty() {
        return Err(Error::Config("evaluation needs a non-empty validation set".into()));
    }
    for d in dets {
        if !d.score.is_finite() {
            return Err(Error::Contract(format!(
                "detection on {} has non-finite score",
                d.image_id
            )));
        }
    }
    // classes with at least one ground-truth instance
    let mut classes: Vec<usize> = gt_samples
        .iter()
        .flat_map(|s| s.instances.iter().map(|i| i.class_id))
        .collect();
    classes.sort_unstable();
    classes.dedup();

    let mut per_class: HashMap<usize, ClassEval> = HashMap::new();
    for &c in &classes {
        let mut gts: HashMap<&str, Vec<&Mask>> = HashMap::new();
        let mut num_gt = 0;
        for s in gt_samples {
            let masks: Vec<&Mask> = s
                .instances
                .iter()
                .filter(|i| i.class_id == c)
                .map(|i| &i.mask)
                .collect();
            num_gt += masks.len();
            gts.insert(s.id.as_str(), masks);
        }
        let mut class_dets: Vec<(usize, &DetectionRecord)> = dets
            .iter()
            .enumerate()
            .filter(|(_, d)| d.class_id == c)
            .collect();
        // stable sort: ties keep input order
        class_dets.sort_by(|a, b| b.1.score.partial_cmp(&a.1.score).unwrap());
        per_class.insert(
            c,
            ClassEval {
                dets: class_dets
                    .into_iter()
                    .map(|(_, d)| (d.image_id.as_str(), &d.mask))
                    .collect(),
                gts,
                num_gt,
            },
        );
    }

    let mut sum_all = 0.0;
    let mut sum50 = 0.0;
    let mut sum75 = 0.0;
    let mut counted = 0usize;
    for &c in &classes {
        let ce = &per_class[&c];
        counted += 1;
        for (ti, &tau) in IOU_THRESHOLDS.iter().enumerate() {
            // greedy matching per image, in global score order
            let mut used: HashMap<&str, Vec<bool>> = HashMap::new();
            let mut flags = Vec::with_capacity(ce.dets.len());
            for &(image_id, mask) in &ce.dets {
                let empty = Vec::new();
                let gt_masks = ce.gts.get(image_id).unwrap_or(&empty);
                let used_flags = used
                    .entry(image_id)
                    .or_insert_with(|| vec![false; gt_masks.len()]);
                let mut best: Option<(usize, f64)> = None;
                for (j, gt) in gt_masks.iter().enumerate() {
                    if used_flags[j] {
                        continue;
                    }
                    let iou = mask_iou(mask, gt)?;
                    if iou >= tau && best.map_or(true, |(_, b)| iou > b) {
                        best = Some((j, iou));
                    }
                }
                match best {
                    Some((j, _)) => {
                        used_flags[j] = true;
                        flags.push(true);
                    }
                    None => flags.push(false),
                }
            }
            let ap = average_precision(&flags, ce.num_gt);
            sum_all += ap;
            if ti == 0 {
                sum50 += ap;
            }
            if (tau - 0.75).abs() < 1e-9 {
                sum75 += ap;
            }
        }
    }
    if counted == 0 {
        // no ground truth anywhere: report zeros
        return Ok(APReport {
            ap: 0.0,
            ap50: 0.0,
            ap75: 0.0,
        });
    }
    Ok(APReport {
        ap: sum_all / (counted as f64 * IOU_THRESHOLDS.len() as f64),
        ap50: sum50 / counted as f64,
        ap75: sum75 / counted as f64,
    })
}

/// Runs the segmentor over samples and evaluates the decoded detections.
pub fn evaluate_model<F: Scalar>(
    weights: &ModelWeights<F>,
    samples: &[ImageSample],
    score_floor: f64,
) -> Result<APReport> {
    let dets = model_detections(weights, samples, score_floor)?;
    evaluate(&dets, samples)
}

pub fn model_detections<F: Scalar>(
    weights: &ModelWeights<F>,
    samples: &[ImageSample],
    score_floor: f64,
) -> Result<Vec<DetectionRecord>> {
    let mut dets = Vec::new();
    for s in samples {
        let img = image_tensor::<F>(&s.image, s.h, s.w);
        let fp = forward(&img, weights)?;
        for d in decode(&fp.prediction(), score_floor) {
            dets.push(DetectionRecord {
                image_id: s.id.clone(),
                class_id: d.class_id,
                score: d.score,
                mask: d.mask,
            });
        }
    }
    Ok(dets)
}

/// Writes the line-oriented detection file plus one PGM per mask.
pub fn save_detections(dets: &[DetectionRecord], path: &Path) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mask_dir = dir.join("det_masks");
    std::fs::create_dir_all(&mask_dir).map_err(|e| Error::io(mask_dir.display().to_string(), e))?;
    let mut text = String::new();
    for (i, d) in dets.iter().enumerate() {
        let rel = format!("det_masks/det_{:06}.pgm", i);
        crate::data::write_mask_pgm(&dir.join(&rel), &d.mask)?;
        text.push_str(&format!(
            "{} {} {} {}\n",
            d.image_id, d.class_id, d.score, rel
        ));
    }
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a detection file; mask paths are relative to the file's directory.
pub fn load_detections(path: &Path) -> Result<Vec<DetectionRecord>> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: path.display().to_string(),
            line: lineno + 1,
            message: msg,
        };
        let tokens: Vec<&str> = line.split(' ').collect();
        if tokens.len() != 4 {
            return Err(parse_err(format!("expected 4 fields, got {}", tokens.len())));
        }
        let class_id = tokens[1]
            .parse()
            .map_err(|_| parse_err(format!("bad class id {:?}", tokens[1])))?;
        let score = tokens[2]
            .parse()
            .map_err(|_| parse_err(format!("bad score {:?}", tokens[2])))?;
        let mask = crate::data::read_pgm(&dir.join(tokens[3]))?;
        out.push(DetectionRecord {
            image_id: tokens[0].to_string(),
            class_id,
            score,
            mask,
        });
    }
    Ok(out)
}
