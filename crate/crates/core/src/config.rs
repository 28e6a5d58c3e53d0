//! Experiment configuration: line-oriented "section.key = value" files with
//! "#" comments. Every key is validated; unknown keys are rejected. The
//! resolved config can be echoed back out and re-parsed to reproduce a run.

use crate::augment::{StrongAugConfig, WeakAugConfig};
use crate::data::{SceneSpec, ShapeClass};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::train::TrainerConfig;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    // data.*
    pub data_h: usize,
    pub data_w: usize,
    pub data_classes: Vec<ShapeClass>,
    pub data_min_instances: usize,
    pub data_max_instances: usize,
    pub data_min_size: usize,
    pub data_max_size: usize,
    pub data_color_jitter: f64,
    pub data_overlap_allowed: bool,
    pub data_train_count: usize,
    pub data_val_count: usize,
    pub data_fraction: f64,
    pub data_seed: u64,
    // model.*
    pub model_q: usize,
    pub model_d: usize,
    pub model_h: usize,
    pub model_d_w: usize,
    pub model_freeze_embeddings: bool,
    // train.*
    pub train_supervised_epochs: usize,
    pub train_semi_epochs: usize,
    pub train_batch_size: usize,
    pub train_ratio_labeled: usize,
    pub train_ratio_unlabeled: usize,
    pub train_score_threshold: f64,
    pub train_keep_rate: f64,
    pub train_learning_rate: f64,
    pub train_weight_decay: f64,
    pub train_unlabeled_loss_weight: f64,
    pub train_eval_every: usize,
    pub train_seed: u64,
    // augment.*
    pub augment_scale_min: f64,
    pub augment_scale_max: f64,
    pub augment_flip_prob: f64,
    pub augment_jitter_prob: f64,
    pub augment_grayscale_prob: f64,
    pub augment_blur_prob: f64,
    pub augment_erase_prob: f64,
    // ablation.*
    pub ablation_semantic_branch: bool,
    pub ablation_two_stage: bool,
    // eval.*
    pub eval_score_floor: f64,
    // paths.*
    pub paths_embeddings: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data_h: 64,
            data_w: 64,
            data_classes: ShapeClass::ALL.to_vec(),
            data_min_instances: 1,
            data_max_instances: 3,
            data_min_size: 5,
            data_max_size: 11,
            data_color_jitter: 0.08,
            data_overlap_allowed: true,
            data_train_count: 400,
            data_val_count: 100,
            data_fraction: 0.05,
            data_seed: 0,
            model_q: 10,
            model_d: 32,
            model_h: 0,
            model_d_w: 32,
            model_freeze_embeddings: true,
            train_supervised_epochs: 200,
            train_semi_epochs: 10,
            train_batch_size: 4,
            train_ratio_labeled: 1,
            train_ratio_unlabeled: 1,
            train_score_threshold: 0.7,
            train_keep_rate: 0.999,
            train_learning_rate: 1e-4,
            train_weight_decay: 0.05,
            train_unlabeled_loss_weight: 1.0,
            train_eval_every: 1,
            train_seed: 0,
            augment_scale_min: 0.75,
            augment_scale_max: 1.25,
            augment_flip_prob: 0.5,
            augment_jitter_prob: 0.8,
            augment_grayscale_prob: 0.2,
            augment_blur_prob: 0.5,
            augment_erase_prob: 0.5,
            ablation_semantic_branch: true,
            ablation_two_stage: true,
            eval_score_floor: 0.05,
            paths_embeddings: String::new(),
        }
    }
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "on" | "1" => Ok(true),
        "false" | "off" | "0" => Ok(false),
        _ => Err(Error::Config(format!("{}: expected on/off, got {:?}", key, v))),
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| Error::Config(format!("{}: invalid value {:?}", key, v)))
}

fn parse_classes(key: &str, v: &str) -> Result<Vec<ShapeClass>> {
    v.split(',')
        .map(|name| {
            ShapeClass::ALL
                .iter()
                .find(|c| c.name() == name.trim())
                .copied()
                .ok_or_else(|| Error::Config(format!("{}: unknown shape class {:?}", key, name)))
        })
        .collect()
}

impl ExperimentConfig {
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "data.h" => self.data_h = parse_num(key, value)?,
            "data.w" => self.data_w = parse_num(key, value)?,
            "data.classes" => self.data_classes = parse_classes(key, value)?,
            "data.min_instances" => self.data_min_instances = parse_num(key, value)?,
            "data.max_instances" => self.data_max_instances = parse_num(key, value)?,
            "data.min_size" => self.data_min_size = parse_num(key, value)?,
            "data.max_size" => self.data_max_size = parse_num(key, value)?,
            "data.color_jitter" => self.data_color_jitter = parse_num(key, value)?,
            "data.overlap_allowed" => self.data_overlap_allowed = parse_bool(key, value)?,
            "data.train_count" => self.data_train_count = parse_num(key, value)?,
            "data.val_count" => self.data_val_count = parse_num(key, value)?,
            "data.fraction" => self.data_fraction = parse_num(key, value)?,
            "data.seed" => self.data_seed = parse_num(key, value)?,
            "model.q" => self.model_q = parse_num(key, value)?,
            "model.d" => self.model_d = parse_num(key, value)?,
            "model.h" => self.model_h = parse_num(key, value)?,
            "model.d_w" => self.model_d_w = parse_num(key, value)?,
            "model.freeze_embeddings" => self.model_freeze_embeddings = parse_bool(key, value)?,
            "train.supervised_epochs" => self.train_supervised_epochs = parse_num(key, value)?,
            "train.semi_epochs" => self.train_semi_epochs = parse_num(key, value)?,
            "train.batch_size" => self.train_batch_size = parse_num(key, value)?,
            "train.ratio_labeled" => self.train_ratio_labeled = parse_num(key, value)?,
            "train.ratio_unlabeled" => self.train_ratio_unlabeled = parse_num(key, value)?,
            "train.score_threshold" => self.train_score_threshold = parse_num(key, value)?,
            "train.keep_rate" => self.train_keep_rate = parse_num(key, value)?,
            "train.learning_rate" => self.train_learning_rate = parse_num(key, value)?,
            "train.weight_decay" => self.train_weight_decay = parse_num(key, value)?,
            "train.unlabeled_loss_weight" => {
                self.train_unlabeled_loss_weight = parse_num(key, value)?
            }
            "train.eval_every" => self.train_eval_every = parse_num(key, value)?,
            "train.seed" => self.train_seed = parse_num(key, value)?,
            "augment.scale_min" => self.augment_scale_min = parse_num(key, value)?,
            "augment.scale_max" => self.augment_scale_max = parse_num(key, value)?,
            "augment.flip_prob" => self.augment_flip_prob = parse_num(key, value)?,
            "augment.jitter_prob" => self.augment_jitter_prob = parse_num(key, value)?,
            "augment.grayscale_prob" => self.augment_grayscale_prob = parse_num(key, value)?,
            "augment.blur_prob" => self.augment_blur_prob = parse_num(key, value)?,
            "augment.erase_prob" => self.augment_erase_prob = parse_num(key, value)?,
            "ablation.semantic_branch" => self.ablation_semantic_branch = parse_bool(key, value)?,
            "ablation.two_stage" => self.ablation_two_stage = parse_bool(key, value)?,
            "eval.score_floor" => self.eval_score_floor = parse_num(key, value)?,
            "paths.embeddings" => self.paths_embeddings = value.to_string(),
            _ => return Err(Error::Config(format!("unknown key '{}'", key))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.scene_spec().validate()?;
        self.trainer_config().validate()?;
        if !(self.data_fraction > 0.0 && self.data_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "data.fraction must be in (0, 1], got {}",
                self.data_fraction
            )));
        }
        if self.data_train_count == 0 {
            return Err(Error::Config("data.train_count must be positive".into()));
        }
        if self.model_q == 0 || self.model_d == 0 || self.model_d_w < 2 {
            return Err(Error::Config(
                "model.q and model.d must be positive, model.d_w >= 2".into(),
            ));
        }
        let ranges = [
            ("augment.flip_prob", self.augment_flip_prob),
            ("augment.jitter_prob", self.augment_jitter_prob),
            ("augment.grayscale_prob", self.augment_grayscale_prob),
            ("augment.blur_prob", self.augment_blur_prob),
            ("augment.erase_prob", self.augment_erase_prob),
            ("eval.score_floor", self.eval_score_floor),
        ];
        for (key, v) in ranges {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{} must be in [0, 1], got {}", key, v)));
            }
        }
        if !(self.augment_scale_min > 0.0 && self.augment_scale_min <= self.augment_scale_max) {
            return Err(Error::Config(format!(
                "augment scale range [{}, {}] invalid",
                self.augment_scale_min, self.augment_scale_max
            )));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected 'key = value'", lineno + 1))
            })?;
            cfg.apply(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        Self::parse(&text)
    }

    /// Echo of the fully resolved config; parsing it reproduces `self`.
    pub fn to_config_string(&self) -> String {
        let classes: Vec<&str> = self.data_classes.iter().map(|c| c.name()).collect();
        let b = |v: bool| if v { "on" } else { "off" };
        let mut s = String::new();
        let mut push = |k: &str, v: String| s.push_str(&format!("{} = {}\n", k, v));
        push("data.h", self.data_h.to_string());
        push("data.w", self.data_w.to_string());
        push("data.classes", classes.join(","));
        push("data.min_instances", self.data_min_instances.to_string());
        push("data.max_instances", self.data_max_instances.to_string());
        push("data.min_size", self.data_min_size.to_string());
        push("data.max_size", self.data_max_size.to_string());
        push("data.color_jitter", self.data_color_jitter.to_string());
        push("data.overlap_allowed", b(self.data_overlap_allowed).into());
        push("data.train_count", self.data_train_count.to_string());
        push("data.val_count", self.data_val_count.to_string());
        push("data.fraction", self.data_fraction.to_string());
        push("data.seed", self.data_seed.to_string());
        push("model.q", self.model_q.to_string());
        push("model.d", self.model_d.to_string());
        push("model.h", self.model_h.to_string());
        push("model.d_w", self.model_d_w.to_string());
        push(
            "model.freeze_embeddings",
            b(self.model_freeze_embeddings).into(),
        );
        push(
            "train.supervised_epochs",
            self.train_supervised_epochs.to_string(),
        );
        push("train.semi_epochs", self.train_semi_epochs.to_string());
        push("train.batch_size", self.train_batch_size.to_string());
        push("train.ratio_labeled", self.train_ratio_labeled.to_string());
        push(
            "train.ratio_unlabeled",
            self.train_ratio_unlabeled.to_string(),
        );
        push(
            "train.score_threshold",
            self.train_score_threshold.to_string(),
        );
        push("train.keep_rate", self.train_keep_rate.to_string());
        push("train.learning_rate", self.train_learning_rate.to_string());
        push("train.weight_decay", self.train_weight_decay.to_string());
        push(
            "train.unlabeled_loss_weight",
            self.train_unlabeled_loss_weight.to_string(),
        );
        push("train.eval_every", self.train_eval_every.to_string());
        push("train.seed", self.train_seed.to_string());
        push("augment.scale_min", self.augment_scale_min.to_string());
        push("augment.scale_max", self.augment_scale_max.to_string());
        push("augment.flip_prob", self.augment_flip_prob.to_string());
        push("augment.jitter_prob", self.augment_jitter_prob.to_string());
        push(
            "augment.grayscale_prob",
            self.augment_grayscale_prob.to_string(),
        );
        push("augment.blur_prob", self.augment_blur_prob.to_string());
        push("augment.erase_prob", self.augment_erase_prob.to_string());
        push(
            "ablation.semantic_branch",
            b(self.ablation_semantic_branch).into(),
        );
        push("ablation.two_stage", b(self.ablation_two_stage).into());
        push("eval.score_floor", self.eval_score_floor.to_string());
        push("paths.embeddings", self.paths_embeddings.clone());
        s
    }

    pub fn scene_spec(&self) -> SceneSpec {
        SceneSpec {
            h: self.data_h,
            w: self.data_w,
            classes: self.data_classes.clone(),
            min_instances: self.data_min_instances,
            max_instances: self.data_max_instances,
            min_size: self.data_min_size,
            max_size: self.data_max_size,
            color_jitter: self.data_color_jitter as f32,
            overlap_allowed: self.data_overlap_allowed,
        }
    }

    /// Class count including background.
    pub fn num_classes(&self) -> usize {
        self.data_classes.len() + 1
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            num_classes: self.num_classes(),
            num_queries: self.model_q,
            feature_dim: self.model_d,
            hidden: self.model_h,
            semantic_branch: self.ablation_semantic_branch,
            freeze_embeddings: self.model_freeze_embeddings,
        }
    }

    pub fn trainer_config(&self) -> TrainerConfig {
        TrainerConfig {
            supervised_epochs: self.train_supervised_epochs,
            semi_epochs: self.train_semi_epochs,
            batch_size: self.train_batch_size,
            ratio_labeled: self.train_ratio_labeled,
            ratio_unlabeled: self.train_ratio_unlabeled,
            score_threshold: self.train_score_threshold,
            keep_rate: self.train_keep_rate,
            learning_rate: self.train_learning_rate,
            weight_decay: self.train_weight_decay,
            unlabeled_loss_weight: self.train_unlabeled_loss_weight,
            score_floor: self.eval_score_floor,
            eval_every: self.train_eval_every,
            seed: self.train_seed,
        }
    }

    pub fn weak_config(&self) -> WeakAugConfig {
        WeakAugConfig {
            scale_min: self.augment_scale_min as f32,
            scale_max: self.augment_scale_max as f32,
            flip_prob: self.augment_flip_prob,
        }
    }

    pub fn strong_config(&self) -> StrongAugConfig {
        StrongAugConfig {
            jitter_prob: self.augment_jitter_prob,
            grayscale_prob: self.augment_grayscale_prob,
            blur_prob: self.augment_blur_prob,
            erase_prob: self.augment_erase_prob,
            ..StrongAugConfig::default()
        }
    }

    /// Vocabulary for the configured shape classes, background first.
    pub fn vocabulary(&self) -> Result<crate::embeddings::CategoryVocabulary> {
        let names: Vec<&str> = self.data_classes.iter().map(|c| c.name()).collect();
        crate::embeddings::CategoryVocabulary::new(&names)
    }
}
