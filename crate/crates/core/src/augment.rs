//! Weak (geometric) and strong (photometric + erasing) augmentation.
//!
//! Weak transforms are recorded so the identical geometry can be replayed
//! onto any mask set; strong transforms never touch masks.

use crate::data::{ImageSample, InstanceAnnotation, Mask};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugKind {
    Weak,
    Strong,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugRecord {
    pub kind: AugKind,
    pub flip: bool,
    pub scale: f32,
    /// (brightness delta, contrast factor, saturation factor) when jitter fired.
    pub jitter: Option<(f32, f32, f32)>,
    pub grayscale: bool,
    pub blur_sigma: Option<f32>,
    /// (row, col, height, width) of the erased rect.
    pub erase: Option<(usize, usize, usize, usize)>,
}

impl AugRecord {
    fn identity(kind: AugKind) -> Self {
        AugRecord {
            kind,
            flip: false,
            scale: 1.0,
            jitter: None,
            grayscale: false,
            blur_sigma: None,
            erase: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WeakAugConfig {
    pub scale_min: f32,
    pub scale_max: f32,
    pub flip_prob: f64,
}

impl Default for WeakAugConfig {
    fn default() -> Self {
        WeakAugConfig {
            scale_min: 0.75,
            scale_max: 1.25,
            flip_prob: 0.5,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StrongAugConfig {
    pub jitter_prob: f64,
    pub grayscale_prob: f64,
    pub blur_prob: f64,
    pub erase_prob: f64,
    pub brightness_delta: f32,
    pub contrast_range: (f32, f32),
    pub saturation_range: (f32, f32),
    pub blur_sigma: (f32, f32),
    /// Erased rect area as a fraction of the image.
    pub erase_area: (f64, f64),
    /// Per-channel fill for erased rects; trainers set this to the dataset mean.
    pub erase_fill: [f32; 3],
}

impl Default for StrongAugConfig {
    fn default() -> Self {
        StrongAugConfig {
            jitter_prob: 0.8,
            grayscale_prob: 0.2,
            blur_prob: 0.5,
            erase_prob: 0.5,
            brightness_delta: 0.2,
            contrast_range: (0.8, 1.2),
            saturation_range: (0.8, 1.2),
            blur_sigma: (0.5, 1.5),
            erase_area: (0.02, 0.10),
            erase_fill: [0.5, 0.5, 0.5],
        }
    }
}

fn resize_bilinear(image: &[f32], h: usize, w: usize, h2: usize, w2: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; 3 * h2 * w2];
    for c in 0..3 {
        let src = &image[c * h * w..(c + 1) * h * w];
        for y in 0..h2 {
            let sy = ((y as f32 + 0.5) * h as f32 / h2 as f32 - 0.5).clamp(0.0, (h - 1) as f32);
            let y0 = sy.floor() as usize;
            let y1 = (y0 + 1).min(h - 1);
            let fy = sy - y0 as f32;
            for x in 0..w2 {
                let sx = ((x as f32 + 0.5) * w as f32 / w2 as f32 - 0.5).clamp(0.0, (w - 1) as f32);
                let x0 = sx.floor() as usize;
                let x1 = (x0 + 1).min(w - 1);
                let fx = sx - x0 as f32;
                let top = src[y0 * w + x0] * (1.0 - fx) + src[y0 * w + x1] * fx;
                let bot = src[y1 * w + x0] * (1.0 - fx) + src[y1 * w + x1] * fx;
                out[c * h2 * w2 + y * w2 + x] = top * (1.0 - fy) + bot * fy;
            }
        }
    }
    out
}

fn resize_nearest_mask(mask: &Mask, h2: usize, w2: usize) -> Mask {
    let mut out = Mask::empty(h2, w2);
    for y in 0..h2 {
        let sy = (((y as f32 + 0.5) * mask.h as f32 / h2 as f32) as usize).min(mask.h - 1);
        for x in 0..w2 {
            let sx = (((x as f32 + 0.5) * mask.w as f32 / w2 as f32) as usize).min(mask.w - 1);
            out.data[y * w2 + x] = mask.data[sy * mask.w + sx];
        }
    }
    out
}

/// Centered pad (zero fill) or crop from (h2, w2) back to (h, w). Returns the
/// offset mapping used for both image and masks.
fn pad_crop_offsets(h: usize, w: usize, h2: usize, w2: usize) -> (usize, usize, usize, usize) {
    // (dst_y0, src_y0, dst_x0, src_x0)
    let (dy, sy) = if h2 >= h {
        (0, (h2 - h) / 2)
    } else {
        ((h - h2) / 2, 0)
    };
    let (dx, sx) = if w2 >= w {
        (0, (w2 - w) / 2)
    } else {
        ((w - w2) / 2, 0)
    };
    (dy, sy, dx, sx)
}

fn pad_crop_image(image: &[f32], h2: usize, w2: usize, h: usize, w: usize) -> Vec<f32> {
    let (dy, sy, dx, sx) = pad_crop_offsets(h, w, h2, w2);
    let copy_h = h.min(h2);
    let copy_w = w.min(w2);
    let mut out = vec![0.0f32; 3 * h * w];
    for c in 0..3 {
        for y in 0..copy_h {
            for x in 0..copy_w {
                out[c * h * w + (dy + y) * w + dx + x] =
                    image[c * h2 * w2 + (sy + y) * w2 + sx + x];
            }
        }
    }
    out
}

fn pad_crop_mask(mask: &Mask, h: usize, w: usize) -> Mask {
    let (h2, w2) = (mask.h, mask.w);
    let (dy, sy, dx, sx) = pad_crop_offsets(h, w, h2, w2);
    let copy_h = h.min(h2);
    let copy_w = w.min(w2);
    let mut out = Mask::empty(h, w);
    for y in 0..copy_h {
        for x in 0..copy_w {
            out.data[(dy + y) * w + dx + x] = mask.data[(sy + y) * w2 + sx + x];
        }
    }
    out
}

fn flip_image(image: &mut [f32], h: usize, w: usize) {
    for c in 0..3 {
        for y in 0..h {
            let row = &mut image[c * h * w + y * w..c * h * w + (y + 1) * w];
            row.reverse();
        }
    }
}

fn flip_mask(mask: &mut Mask) {
    for y in 0..mask.h {
        mask.data[y * mask.w..(y + 1) * mask.w].reverse();
    }
}

/// Applies the geometric transform of a weak record to a mask. This is the
/// single code path for augmentation, record replay, and pseudo-label
/// geometry, so the three always agree.
pub fn replay_weak_mask(mask: &Mask, record: &AugRecord) -> Mask {
    let (h, w) = (mask.h, mask.w);
    let h2 = ((h as f32 * record.scale).round() as usize).max(1);
    let w2 = ((w as f32 * record.scale).round() as usize).max(1);
    let mut m = if h2 == h && w2 == w {
        mask.clone()
    } else {
        pad_crop_mask(&resize_nearest_mask(mask, h2, w2), h, w)
    };
    if record.flip {
        flip_mask(&mut m);
    }
    m
}

fn apply_weak(sample: &ImageSample, record: &AugRecord) -> ImageSample {
    let (h, w) = (sample.h, sample.w);
    let h2 = ((h as f32 * record.scale).round() as usize).max(1);
    let w2 = ((w as f32 * record.scale).round() as usize).max(1);
    let mut image = if h2 == h && w2 == w {
        sample.image.clone()
    } else {
        pad_crop_image(&resize_bilinear(&sample.image, h, w, h2, w2), h2, w2, h, w)
    };
    if record.flip {
        flip_image(&mut image, h, w);
    }
    let instances = sample
        .instances
        .iter()
        .map(|inst| InstanceAnnotation {
            class_id: inst.class_id,
            mask: replay_weak_mask(&inst.mask, record),
        })
        .filter(|inst| inst.mask.foreground_count() > 0)
        .collect();
    ImageSample {
        id: sample.id.clone(),
        h,
        w,
        image,
        instances,
    }
}

/// Random resize + horizontal flip; image and every mask get the identical
/// geometric transform.
pub fn weak_aug<R: Rng>(
    sample: &ImageSample,
    config: &WeakAugConfig,
    rng: &mut R,
) -> (ImageSample, AugRecord) {
    let mut record = AugRecord::identity(AugKind::Weak);
    record.scale = rng.gen_range(config.scale_min..=config.scale_max);
    record.flip = rng.gen_bool(config.flip_prob);
    (apply_weak(sample, &record), record)
}

fn gaussian_kernel5(sigma: f32) -> [f32; 25] {
    let mut k = [0.0f32; 25];
    let mut sum = 0.0;
    for y in 0..5i32 {
        for x in 0..5i32 {
            let dy = (y - 2) as f32;
            let dx = (x - 2) as f32;
            let v = (-(dy * dy + dx * dx) / (2.0 * sigma * sigma)).exp();
            k[(y * 5 + x) as usize] = v;
            sum += v;
        }
    }
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

fn blur_channel(src: &[f32], h: usize, w: usize, kernel: &[f32; 25]) -> Vec<f32> {
    let reflect = |i: i64, n: usize| -> usize {
        let n = n as i64;
        let mut i = i;
        if i < 0 {
            i = -i - 1;
        }
        if i >= n {
            i = 2 * n - 1 - i;
        }
        i.clamp(0, n - 1) as usize
    };
    let mut out = vec![0.0f32; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for ky in 0..5i64 {
                let sy = reflect(y as i64 + ky - 2, h);
                for kx in 0..5i64 {
                    let sx = reflect(x as i64 + kx - 2, w);
                    acc += kernel[(ky * 5 + kx) as usize] * src[sy * w + sx];
                }
            }
            out[y * w + x] = acc;
        }
    }
    out
}

fn apply_strong(sample: &ImageSample, record: &AugRecord, fill: [f32; 3]) -> ImageSample {
    let (h, w) = (sample.h, sample.w);
    let mut image = sample.image.clone();
    if let Some((brightness, contrast, saturation)) = record.jitter {
        for c in 0..3 {
            let plane = &mut image[c * h * w..(c + 1) * h * w];
            let mean: f32 = plane.iter().sum::<f32>() / plane.len() as f32;
            for v in plane.iter_mut() {
                *v = (*v - mean) * contrast + mean + brightness;
            }
        }
        for p in 0..h * w {
            let gray = 0.299 * image[p] + 0.587 * image[h * w + p] + 0.114 * image[2 * h * w + p];
            for c in 0..3 {
                let v = &mut image[c * h * w + p];
                *v = gray + (*v - gray) * saturation;
            }
        }
    }
    if record.grayscale {
        for p in 0..h * w {
            let gray = 0.299 * image[p] + 0.587 * image[h * w + p] + 0.114 * image[2 * h * w + p];
            for c in 0..3 {
                image[c * h * w + p] = gray;
            }
        }
    }
    if let Some(sigma) = record.blur_sigma {
        let kernel = gaussian_kernel5(sigma);
        for c in 0..3 {
            let blurred = blur_channel(&image[c * h * w..(c + 1) * h * w], h, w, &kernel);
            image[c * h * w..(c + 1) * h * w].copy_from_slice(&blurred);
        }
    }
    if let Some((row, col, rh, rw)) = record.erase {
        for c in 0..3 {
            for y in row..row + rh {
                for x in col..col + rw {
                    image[c * h * w + y * w + x] = fill[c];
                }
            }
        }
    }
    image.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    ImageSample {
        id: sample.id.clone(),
        h,
        w,
        image,
        instances: sample.instances.clone(),
    }
}

/// Photometric-only augmentation: color jitter, grayscale, gaussian blur,
/// random erasing. Instance masks are returned bitwise unchanged.
pub fn strong_aug<R: Rng>(
    sample: &ImageSample,
    config: &StrongAugConfig,
    rng: &mut R,
) -> (ImageSample, AugRecord) {
    let (h, w) = (sample.h, sample.w);
    let mut record = AugRecord::identity(AugKind::Strong);
    if rng.gen_bool(config.jitter_prob) {
        record.jitter = Some((
            rng.gen_range(-config.brightness_delta..=config.brightness_delta),
            rng.gen_range(config.contrast_range.0..=config.contrast_range.1),
            rng.gen_range(config.saturation_range.0..=config.saturation_range.1),
        ));
    }
    record.grayscale = rng.gen_bool(config.grayscale_prob);
    if rng.gen_bool(config.blur_prob) {
        record.blur_sigma = Some(rng.gen_range(config.blur_sigma.0..=config.blur_sigma.1));
    }
    if rng.gen_bool(config.erase_prob) {
        let area = rng.gen_range(config.erase_area.0..=config.erase_area.1) * (h * w) as f64;
        let aspect: f64 = rng.gen_range(0.5..=2.0);
        let rh = ((area * aspect).sqrt().round() as usize).clamp(1, h);
        let rw = ((area / aspect).sqrt().round() as usize).clamp(1, w);
        let row = rng.gen_range(0..=h - rh);
        let col = rng.gen_range(0..=w - rw);
        record.erase = Some((row, col, rh, rw));
    }
    (apply_strong(sample, &record, config.erase_fill), record)
}

/// Re-applies a previously drawn strong record (used when a test needs the
/// exact same photometric transform twice).
pub fn apply_strong_record(sample: &ImageSample, record: &AugRecord, fill: [f32; 3]) -> ImageSample {
    apply_strong(sample, record, fill)
}

/// Re-applies a previously drawn weak record.
pub fn apply_weak_record(sample: &ImageSample, record: &AugRecord) -> ImageSample {
    apply_weak(sample, record)
}
