//! Synthetic shape scenes with per-instance masks, labeled/unlabeled splits,
//! and the on-disk dataset layout (manifest + PPM images + PGM masks).

use crate::error::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub h: usize,
    pub w: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn empty(h: usize, w: usize) -> Self {
        Mask {
            h,
            w,
            data: vec![false; h * w],
        }
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    /// Tight bounding box (min_row, min_col, max_row, max_col), inclusive.
    pub fn bbox(&self) -> Option<(usize, usize, usize, usize)> {
        let mut bb: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.h {
            for x in 0..self.w {
                if self.data[y * self.w + x] {
                    bb = Some(match bb {
                        None => (y, x, y, x),
                        Some((r0, c0, r1, c1)) => (r0.min(y), c0.min(x), r1.max(y), c1.max(x)),
                    });
                }
            }
        }
        bb
    }

    pub fn iou(&self, other: &Mask) -> Result<f64> {
        if self.h != other.h || self.w != other.w {
            return Err(Error::Dimension(format!(
                "mask iou: {}×{} vs {}×{}",
                self.h, self.w, other.h, other.w
            )));
        }
        let mut inter = 0usize;
        let mut union = 0usize;
        for (&a, &b) in self.data.iter().zip(&other.data) {
            if a && b {
                inter += 1;
            }
            if a || b {
                union += 1;
            }
        }
        Ok(if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceAnnotation {
    /// In [1, N); 0 is reserved for background.
    pub class_id: usize,
    pub mask: Mask,
}

/// One image with its annotations. Pixels are RGB floats in [0,1], stored
/// channel-major (3×H×W) and always 8-bit quantized so disk round-trips are
/// exact.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageSample {
    pub id: String,
    pub h: usize,
    pub w: usize,
    pub image: Vec<f32>,
    pub instances: Vec<InstanceAnnotation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub labeled_ids: Vec<String>,
    pub unlabeled_ids: Vec<String>,
    pub fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeClass {
    Circle,
    Square,
    Triangle,
    Bar,
}

impl ShapeClass {
    pub const ALL: [ShapeClass; 4] = [
        ShapeClass::Circle,
        ShapeClass::Square,
        ShapeClass::Triangle,
        ShapeClass::Bar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ShapeClass::Circle => "circle",
            ShapeClass::Square => "square",
            ShapeClass::Triangle => "triangle",
            ShapeClass::Bar => "bar",
        }
    }

    fn base_color(self) -> [f32; 3] {
        match self {
            ShapeClass::Circle => [0.85, 0.15, 0.15],
            ShapeClass::Square => [0.15, 0.8, 0.2],
            ShapeClass::Triangle => [0.2, 0.3, 0.9],
            ShapeClass::Bar => [0.9, 0.8, 0.15],
        }
    }
}

#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub h: usize,
    pub w: usize,
    pub classes: Vec<ShapeClass>,
    pub min_instances: usize,
    pub max_instances: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub color_jitter: f32,
    pub overlap_allowed: bool,
}

impl Default for SceneSpec {
    fn default() -> Self {
        SceneSpec {
            h: 64,
            w: 64,
            classes: ShapeClass::ALL.to_vec(),
            min_instances: 1,
            max_instances: 3,
            min_size: 5,
            max_size: 11,
            color_jitter: 0.08,
            overlap_allowed: true,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Config("scene spec needs at least one shape class".into()));
        }
        if self.min_instances < 1 || self.max_instances > 8 || self.min_instances > self.max_instances
        {
            return Err(Error::Config(format!(
                "instance count range [{}, {}] must lie within [1, 8]",
                self.min_instances, self.max_instances
            )));
        }
        if self.min_size < 2 || self.min_size > self.max_size {
            return Err(Error::Config(format!(
                "size range [{}, {}] invalid",
                self.min_size, self.max_size
            )));
        }
        Ok(())
    }

    /// Class id for a shape: 1 + its index in the class list.
    pub fn class_id(&self, shape: ShapeClass) -> Option<usize> {
        self.classes.iter().position(|&c| c == shape).map(|i| i + 1)
    }
}

fn quantize(x: f32) -> f32 {
    let q = (x.clamp(0.0, 1.0) * 255.0).round() as u8;
    q as f32 / 255.0
}

fn rasterize(shape: ShapeClass, cy: i64, cx: i64, r: i64, h: usize, w: usize) -> Mask {
    let mut mask = Mask::empty(h, w);
    for y in 0..h as i64 {
        for x in 0..w as i64 {
            let dy = y - cy;
            let dx = x - cx;
            let inside = match shape {
                ShapeClass::Circle => dy * dy + dx * dx <= r * r,
                ShapeClass::Square => dy.abs() <= r && dx.abs() <= r,
                ShapeClass::Triangle => {
                    // upward triangle: apex at cy-r, base at cy+r
                    if dy < -r || dy > r {
                        false
                    } else {
                        let halfwidth = (dy + r) / 2;
                        dx.abs() <= halfwidth
                    }
                }
                ShapeClass::Bar => dy.abs() <= (r / 3).max(1) && dx.abs() <= r,
            };
            if inside {
                mask.data[(y as usize) * w + x as usize] = true;
            }
        }
    }
    mask
}

/// Deterministic scene generation: shapes are drawn back to front, later
/// shapes occlude earlier ones, and instances occluded down to zero pixels
/// are dropped.
pub fn generate_scene(spec: &SceneSpec, seed: u64, id: impl Into<String>) -> Result<ImageSample> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, w) = (spec.h, spec.w);
    let mut image = vec![0.0f32; 3 * h * w];
    // flat dark background with mild per-pixel noise
    for c in 0..3 {
        for p in 0..h * w {
            image[c * h * w + p] = 0.10 + rng.gen_range(0.0..0.05);
        }
    }
    let count = rng.gen_range(spec.min_instances..=spec.max_instances);
    let mut shapes: Vec<(usize, Mask, [f32; 3])> = Vec::new();
    for _ in 0..count {
        let mut placed = false;
        for _attempt in 0..10 {
            let shape = spec.classes[rng.gen_range(0..spec.classes.len())];
            let r = rng.gen_range(spec.min_size..=spec.max_size) as i64;
            let cy = rng.gen_range(0..h as i64);
            let cx = rng.gen_range(0..w as i64);
            let mask = rasterize(shape, cy, cx, r, h, w);
            if mask.foreground_count() == 0 {
                continue;
            }
            if !spec.overlap_allowed
                && shapes
                    .iter()
                    .any(|(_, m, _)| m.data.iter().zip(&mask.data).any(|(&a, &b)| a && b))
            {
                continue;
            }
            let base = shape.base_color();
            let mut color = [0.0f32; 3];
            for c in 0..3 {
                color[c] =
                    (base[c] + rng.gen_range(-spec.color_jitter..=spec.color_jitter)).clamp(0.0, 1.0);
            }
            let class_id = spec.class_id(shape).expect("class drawn from spec list");
            shapes.push((class_id, mask, color));
            placed = true;
            break;
        }
        let _ = placed; // degenerate draws are skipped after 10 retries
    }

    // paint in order; occlude earlier masks
    for i in 0..shapes.len() {
        let (mask, color) = (shapes[i].1.clone(), shapes[i].2);
        for p in 0..h * w {
            if mask.data[p] {
                for c in 0..3 {
                    image[c * h * w + p] = color[c];
                }
            }
        }
        for (_, earlier, _) in shapes.iter_mut().take(i) {
            for p in 0..h * w {
                if mask.data[p] {
                    earlier.data[p] = false;
                }
            }
        }
    }
    image.iter_mut().for_each(|x| *x = quantize(*x));

    let instances = shapes
        .into_iter()
        .filter(|(_, m, _)| m.foreground_count() > 0)
        .map(|(class_id, mask, _)| InstanceAnnotation { class_id, mask })
        .collect();
    Ok(ImageSample {
        id: id.into(),
        h,
        w,
        image,
        instances,
    })
}

/// Pure function of (spec, seed, count): per-scene seeds are drawn from one
/// seeded stream.
pub fn generate_dataset(spec: &SceneSpec, count: usize, seed: u64) -> Result<Vec<ImageSample>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let scene_seed: u64 = rng.gen();
            generate_scene(spec, scene_seed, format!("img_{:05}", i))
        })
        .collect()
}

/// Seeded uniform sample without replacement; |labeled| = round(fraction·pool),
/// minimum 1.
pub fn split_dataset(ids: &[String], fraction: f64, seed: u64) -> Result<DatasetSplit> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::Config(format!(
            "labeled fraction must be in (0, 1], got {}",
            fraction
        )));
    }
    if ids.is_empty() {
        return Err(Error::Config("cannot split an empty pool".into()));
    }
    let labeled_count = ((fraction * ids.len() as f64).round() as usize)
        .max(1)
        .min(ids.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pool: Vec<String> = ids.to_vec();
    pool.shuffle(&mut rng);
    let mut labeled_ids: Vec<String> = pool[..labeled_count].to_vec();
    let mut unlabeled_ids: Vec<String> = pool[labeled_count..].to_vec();
    labeled_ids.sort();
    unlabeled_ids.sort();
    Ok(DatasetSplit {
        labeled_ids,
        unlabeled_ids,
        fraction,
    })
}

fn write_ppm(path: &Path, sample: &ImageSample) -> Result<()> {
    let (h, w) = (sample.h, sample.w);
    let mut buf = Vec::with_capacity(20 + 3 * h * w);
    write!(buf, "P6\n{} {}\n255\n", w, h).expect("in-memory write");
    for p in 0..h * w {
        for c in 0..3 {
            buf.push((sample.image[c * h * w + p] * 255.0).round() as u8);
        }
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

fn parse_pnm_header<'a>(bytes: &'a [u8], magic: &str, path: &Path) -> Result<(usize, usize, usize)> {
    // magic, whitespace-separated width/height/maxval, single whitespace, raster
    let err = |msg: String| Error::Parse {
        path: path.display().to_string(),
        line: 1,
        message: msg,
    };
    if bytes.len() < 2 || &bytes[..2] != magic.as_bytes() {
        return Err(err(format!("expected {} magic", magic)));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        while pos < bytes.len() && (bytes[pos] as char).is_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && (bytes[pos] as char).is_ascii_digit() {
            pos += 1;
        }
        let s = std::str::from_utf8(&bytes[start..pos]).unwrap_or("");
        *field = s
            .parse()
            .map_err(|_| err(format!("bad header field {:?}", s)))?;
    }
    pos += 1; // single whitespace before raster
    if pos > bytes.len() {
        return Err(err("truncated header".into()));
    }
    Ok((fields[0], fields[1], pos))
}

fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<f32>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let (w, h, offset) = parse_pnm_header(&bytes, "P6", path)?;
    let expect = 3 * h * w;
    if bytes.len() < offset + expect {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 1,
            message: format!("raster has {} bytes, expected {}", bytes.len() - offset, expect),
        });
    }
    let mut image = vec![0.0f32; 3 * h * w];
    for p in 0..h * w {
        for c in 0..3 {
            image[c * h * w + p] = bytes[offset + 3 * p + c] as f32 / 255.0;
        }
    }
    Ok((h, w, image))
}

fn write_pgm(path: &Path, mask: &Mask) -> Result<()> {
    let mut buf = Vec::with_capacity(20 + mask.h * mask.w);
    write!(buf, "P5\n{} {}\n255\n", mask.w, mask.h).expect("in-memory write");
    buf.extend(mask.data.iter().map(|&b| if b { 255u8 } else { 0 }));
    std::fs::write(path, buf).map_err(|e| Error::io(path.display().to_string(), e))
}

pub(crate) fn read_pgm(path: &Path) -> Result<Mask> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let (w, h, offset) = parse_pnm_header(&bytes, "P5", path)?;
    if bytes.len() < offset + h * w {
        return Err(Error::Parse {
            path: path.display().to_string(),
            line: 1,
            message: format!("raster has {} bytes, expected {}", bytes.len() - offset, h * w),
        });
    }
    Ok(Mask {
        h,
        w,
        data: bytes[offset..offset + h * w].iter().map(|&b| b >= 128).collect(),
    })
}

pub(crate) fn write_mask_pgm(path: &Path, mask: &Mask) -> Result<()> {
    write_pgm(path, mask)
}

/// Writes manifest.txt plus images/ and masks/ subdirectories.
pub fn save_dataset(samples: &[ImageSample], split: &DatasetSplit, dir: &Path) -> Result<()> {
    let images_dir = dir.join("images");
    let masks_dir = dir.join("masks");
    for d in [dir, &images_dir, &masks_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d.display().to_string(), e))?;
    }
    let mut manifest = String::new();
    for sample in samples {
        let image_rel = format!("images/{}.ppm", sample.id);
        write_ppm(&dir.join(&image_rel), sample)?;
        let flag = if split.labeled_ids.contains(&sample.id) {
            "labeled"
        } else {
            "unlabeled"
        };
        manifest.push_str(&format!(
            "{} {} {} {}",
            sample.id,
            flag,
            image_rel,
            sample.instances.len()
        ));
        for (j, inst) in sample.instances.iter().enumerate() {
            let mask_rel = format!("masks/{}_{}.pgm", sample.id, j);
            write_pgm(&dir.join(&mask_rel), &inst.mask)?;
            manifest.push_str(&format!(" {} {}", mask_rel, inst.class_id));
        }
        manifest.push('\n');
    }
    let mpath = dir.join("manifest.txt");
    std::fs::write(&mpath, manifest).map_err(|e| Error::io(mpath.display().to_string(), e))
}

/// Reads a dataset directory back; images and masks round-trip exactly.
pub fn load_dataset(dir: &Path) -> Result<(Vec<ImageSample>, DatasetSplit)> {
    let mpath: PathBuf = dir.join("manifest.txt");
    let text = std::fs::read_to_string(&mpath).map_err(|e| Error::io(mpath.display().to_string(), e))?;
    let mut samples = Vec::new();
    let mut labeled_ids = Vec::new();
    let mut unlabeled_ids = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: mpath.display().to_string(),
            line: lineno + 1,
            message: msg,
        };
        let tokens: Vec<&str> = line.split(' ').collect();
        if tokens.len() < 4 {
            return Err(parse_err(format!("record has {} fields, need >= 4", tokens.len())));
        }
        let id = tokens[0].to_string();
        match tokens[1] {
            "labeled" => labeled_ids.push(id.clone()),
            "unlabeled" => unlabeled_ids.push(id.clone()),
            other => return Err(parse_err(format!("bad split flag {:?}", other))),
        }
        let (h, w, image) = read_ppm(&dir.join(tokens[2]))?;
        let k: usize = tokens[3]
            .parse()
            .map_err(|_| parse_err(format!("bad instance count {:?}", tokens[3])))?;
        if tokens.len() != 4 + 2 * k {
            return Err(parse_err(format!(
                "record promises {} instances but has {} fields",
                k,
                tokens.len()
            )));
        }
        let mut instances = Vec::with_capacity(k);
        for j in 0..k {
            let mask = read_pgm(&dir.join(tokens[4 + 2 * j]))?;
            let class_id: usize = tokens[5 + 2 * j]
                .parse()
                .map_err(|_| parse_err(format!("bad class id {:?}", tokens[5 + 2 * j])))?;
            if mask.h != h || mask.w != w {
                return Err(parse_err(format!(
                    "mask {} is {}×{}, image is {}×{}",
                    tokens[4 + 2 * j],
                    mask.h,
                    mask.w,
                    h,
                    w
                )));
            }
            instances.push(InstanceAnnotation { class_id, mask });
        }
        samples.push(ImageSample {
            id,
            h,
            w,
            image,
            instances,
        });
    }
    let fraction = if labeled_ids.is_empty() && unlabeled_ids.is_empty() {
        1.0
    } else {
        labeled_ids.len() as f64 / (labeled_ids.len() + unlabeled_ids.len()) as f64
    };
    labeled_ids.sort();
    unlabeled_ids.sort();
    Ok((
        samples,
        DatasetSplit {
            labeled_ids,
            unlabeled_ids,
            fraction,
        },
    ))
}

/// Index from id to sample position, for split lookups.
pub fn index_by_id(samples: &[ImageSample]) -> HashMap<&str, usize> {
    samples
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect()
}
