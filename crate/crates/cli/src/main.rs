//! Experiment driver: dataset generation, two-stage training, evaluation, and
//! threshold/ratio sweeps over the semi-supervised segmentor.
//!
//! Exit codes: 0 success, 2 configuration error, 3 I/O or file-format error,
//! 4 numerical failure.

use clap::{Parser, Subcommand};
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use ssis_core::config::ExperimentConfig;
use ssis_core::data::{generate_dataset, load_dataset, save_dataset, split_dataset, DatasetSplit, ImageSample};
use ssis_core::embeddings::{hash_embed, load_embeddings, EmbeddingMatrix};
use ssis_core::error::Error;
use ssis_core::eval::{evaluate, evaluate_model, load_detections, APReport};
use ssis_core::model::ModelWeights;
use ssis_core::train::{load_model_into, save_model, two_stage_train, MetricsRow, TrainOutcome};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "ssis", about = "semi-supervised instance segmentation lab")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset (train + val) and the labeled split.
    GenData {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the two-stage training loop and write checkpoints + metrics.csv.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint (or a saved detection file) on the val split.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        detections: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep the pseudo-label threshold or the labeled:unlabeled ratio,
    /// reusing one stage-1 checkpoint across all values.
    Sweep {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        axis: String,
        #[arg(long)]
        values: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenData { config, out } => gen_data(config.as_deref(), &out),
        Command::Train { config, data, out } => train(config.as_deref(), &data, &out),
        Command::Eval {
            config,
            checkpoint,
            data,
            detections,
            out,
        } => eval(
            config.as_deref(),
            checkpoint.as_deref(),
            &data,
            detections.as_deref(),
            out.as_deref(),
        ),
        Command::Sweep {
            config,
            data,
            out,
            axis,
            values,
        } => sweep(config.as_deref(), &data, &out, &axis, values.as_deref()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io { .. } | Error::Parse { .. } => 3,
        Error::Numerical(_) => 4,
        _ => 2,
    }
}

fn load_config(path: Option<&Path>) -> Result<ExperimentConfig, Error> {
    match path {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn write_file(path: &Path, contents: &str) -> Result<(), Error> {
    std::fs::write(path, contents).map_err(|e| Error::io(path.display().to_string(), e))
}

fn echo_config(cfg: &ExperimentConfig, dir: &Path) -> Result<(), Error> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    write_file(&dir.join("config.resolved.conf"), &cfg.to_config_string())
}

fn gen_data(config: Option<&Path>, out: &Path) -> Result<(), Error> {
    let cfg = load_config(config)?;
    cfg.validate()?;
    echo_config(&cfg, out)?;
    let spec = cfg.scene_spec();
    let train = generate_dataset(&spec, cfg.data_train_count, cfg.data_seed)?;
    let ids: Vec<String> = train.iter().map(|s| s.id.clone()).collect();
    let split = split_dataset(&ids, cfg.data_fraction, cfg.data_seed)?;
    save_dataset(&train, &split, &out.join("train"))?;
    // validation is fully labeled and drawn from an independent seed stream
    let val = generate_dataset(&spec, cfg.data_val_count, cfg.data_seed ^ 0x7a11)?;
    let val_split = DatasetSplit {
        labeled_ids: val.iter().map(|s| s.id.clone()).collect(),
        unlabeled_ids: Vec::new(),
        fraction: 1.0,
    };
    save_dataset(&val, &val_split, &out.join("val"))?;
    println!(
        "wrote {} train images ({} labeled, {} unlabeled) and {} val images to {}",
        train.len(),
        split.labeled_ids.len(),
        split.unlabeled_ids.len(),
        val.len(),
        out.display()
    );
    Ok(())
}

fn embeddings_for(cfg: &ExperimentConfig) -> Result<EmbeddingMatrix<f32>, Error> {
    let vocab = cfg.vocabulary()?;
    if cfg.paths_embeddings.is_empty() {
        hash_embed(&vocab, cfg.model_d_w, cfg.data_seed)
    } else {
        load_embeddings(Path::new(&cfg.paths_embeddings), &vocab)
    }
}

fn init_model(cfg: &ExperimentConfig) -> Result<ModelWeights<f32>, Error> {
    let emb;
    let emb_ref = if cfg.ablation_semantic_branch {
        emb = embeddings_for(cfg)?;
        Some(&emb)
    } else {
        None
    };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train_seed);
    ModelWeights::init(cfg.model_config(), emb_ref, &mut rng)
}

const METRICS_HEADER: &str = "stage,epoch,split,loss,AP,AP50,AP75,num_pseudo_labels,mean_pseudo_score";

fn fmt_opt_f64(v: Option<f64>) -> String {
    v.map(|x| format!("{:.6}", x)).unwrap_or_default()
}

fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let (ap, ap50, ap75) = match &r.report {
            Some(rep) => (Some(rep.ap), Some(rep.ap50), Some(rep.ap75)),
            None => (None, None, None),
        };
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.stage,
            r.epoch,
            r.split,
            fmt_opt_f64(r.loss),
            fmt_opt_f64(ap),
            fmt_opt_f64(ap50),
            fmt_opt_f64(ap75),
            r.num_pseudo_labels.map(|n| n.to_string()).unwrap_or_default(),
            fmt_opt_f64(r.mean_pseudo_score),
        ));
    }
    s
}

fn run_training(
    cfg: &ExperimentConfig,
    initial: ModelWeights<f32>,
    data: &Path,
) -> Result<(TrainOutcome<f32>, Vec<ImageSample>), Error> {
    let (train_samples, split) = load_dataset(&data.join("train"))?;
    let (val_samples, _) = load_dataset(&data.join("val"))?;
    let outcome = two_stage_train(
        initial,
        &train_samples,
        &split,
        &val_samples,
        &cfg.trainer_config(),
        &cfg.weak_config(),
        &cfg.strong_config(),
        cfg.ablation_two_stage,
    )?;
    Ok((outcome, val_samples))
}

fn train(config: Option<&Path>, data: &Path, out: &Path) -> Result<(), Error> {
    let cfg = load_config(config)?;
    cfg.validate()?;
    echo_config(&cfg, out)?;
    let initial = init_model(&cfg)?;
    let (outcome, _) = run_training(&cfg, initial, data)?;
    save_model(&out.join("teacher.ckpt"), &outcome.teacher)?;
    save_model(&out.join("student.ckpt"), &outcome.student)?;
    write_file(&out.join("metrics.csv"), &metrics_csv(&outcome.metrics))?;
    if let Some(rep) = last_val_report(&outcome.metrics) {
        println!("final val: AP {:.4} AP50 {:.4} AP75 {:.4}", rep.ap, rep.ap50, rep.ap75);
    }
    println!("wrote checkpoints and metrics.csv to {}", out.display());
    Ok(())
}

fn last_val_report(rows: &[MetricsRow]) -> Option<APReport> {
    rows.iter().rev().find_map(|r| {
        if r.split == "val" {
            r.report
        } else {
            None
        }
    })
}

fn eval(
    config: Option<&Path>,
    checkpoint: Option<&Path>,
    data: &Path,
    detections: Option<&Path>,
    out: Option<&Path>,
) -> Result<(), Error> {
    let cfg = load_config(config)?;
    cfg.validate()?;
    let (val_samples, _) = load_dataset(&data.join("val"))?;
    let report = match (detections, checkpoint) {
        (Some(path), _) => {
            let dets = load_detections(path)?;
            evaluate(&dets, &val_samples)?
        }
        (None, Some(path)) => {
            let mut weights = init_model(&cfg)?;
            load_model_into(path, &mut weights)?;
            evaluate_model(&weights, &val_samples, cfg.eval_score_floor)?
        }
        (None, None) => {
            return Err(Error::Config(
                "eval needs --checkpoint or --detections".into(),
            ))
        }
    };
    println!(
        "AP {:.4} AP50 {:.4} AP75 {:.4}",
        report.ap, report.ap50, report.ap75
    );
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
        write_file(
            &dir.join("eval.csv"),
            &format!(
                "AP,AP50,AP75\n{:.6},{:.6},{:.6}\n",
                report.ap, report.ap50, report.ap75
            ),
        )?;
    }
    Ok(())
}

enum SweepAxis {
    Threshold,
    Ratio,
}

fn parse_axis(axis: &str) -> Result<SweepAxis, Error> {
    match axis {
        "threshold" => Ok(SweepAxis::Threshold),
        "ratio" => Ok(SweepAxis::Ratio),
        _ => Err(Error::Config(format!(
            "unknown sweep axis '{}' (expected threshold or ratio)",
            axis
        ))),
    }
}

fn apply_sweep_value(
    cfg: &ExperimentConfig,
    axis: &SweepAxis,
    value: &str,
) -> Result<ExperimentConfig, Error> {
    let mut c = cfg.clone();
    match axis {
        SweepAxis::Threshold => {
            c.train_score_threshold = value
                .parse()
                .map_err(|_| Error::Config(format!("bad threshold value '{}'", value)))?;
        }
        SweepAxis::Ratio => {
            let (l, u) = value
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("bad ratio value '{}', expected L:U", value)))?;
            let l: usize = l
                .parse()
                .map_err(|_| Error::Config(format!("bad ratio value '{}'", value)))?;
            let u: usize = u
                .parse()
                .map_err(|_| Error::Config(format!("bad ratio value '{}'", value)))?;
            c.train_ratio_labeled = l;
            c.train_ratio_unlabeled = u;
            // keep the batch compatible with the new ratio
            let parts = l + u;
            if parts == 0 || c.train_batch_size % parts != 0 {
                c.train_batch_size = parts.max(1);
            }
        }
    }
    c.validate()?;
    Ok(c)
}

fn sweep(
    config: Option<&Path>,
    data: &Path,
    out: &Path,
    axis: &str,
    values: Option<&str>,
) -> Result<(), Error> {
    let cfg = load_config(config)?;
    cfg.validate()?;
    let axis_kind = parse_axis(axis)?;
    let values: Vec<String> = match values {
        Some(list) => list.split(',').map(|v| v.trim().to_string()).collect(),
        None => match axis_kind {
            SweepAxis::Threshold => ["0.3", "0.5", "0.7", "0.9"],
            SweepAxis::Ratio => ["1:1", "1:2", "1:3", "1:4"],
        }
        .iter()
        .map(|s| s.to_string())
        .collect(),
    };
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    for v in &values {
        apply_sweep_value(&cfg, &axis_kind, v)?;
    }
    echo_config(&cfg, out)?;

    // stage 1 runs once and is shared by every sweep value
    let stage1_path = out.join("stage1.ckpt");
    let mut stage1_cfg = cfg.clone();
    stage1_cfg.train_semi_epochs = 0;
    let initial = init_model(&stage1_cfg)?;
    let (outcome, _) = run_training(&stage1_cfg, initial, data)?;
    save_model(&stage1_path, &outcome.teacher)?;
    write_file(&out.join("stage1_metrics.csv"), &metrics_csv(&outcome.metrics))?;

    let mut sweep_csv = String::from("axis,value,AP,AP50,AP75\n");
    for value in &values {
        let mut run_cfg = apply_sweep_value(&cfg, &axis_kind, value)?;
        run_cfg.train_supervised_epochs = 0;
        let mut weights = init_model(&run_cfg)?;
        load_model_into(&stage1_path, &mut weights)?;
        let (outcome, _) = run_training(&run_cfg, weights, data)?;
        let run_dir = out.join(format!("{}_{}", axis, value.replace(':', "-")));
        std::fs::create_dir_all(&run_dir).map_err(|e| Error::io(run_dir.display().to_string(), e))?;
        write_file(&run_dir.join("metrics.csv"), &metrics_csv(&outcome.metrics))?;
        save_model(&run_dir.join("teacher.ckpt"), &outcome.teacher)?;
        let rep = last_val_report(&outcome.metrics).unwrap_or(APReport {
            ap: 0.0,
            ap50: 0.0,
            ap75: 0.0,
        });
        sweep_csv.push_str(&format!(
            "{},{},{:.6},{:.6},{:.6}\n",
            axis, value, rep.ap, rep.ap50, rep.ap75
        ));
        println!("{} = {}: AP {:.4}", axis, value, rep.ap);
    }
    write_file(&out.join("sweep.csv"), &sweep_csv)?;
    Ok(())
}
