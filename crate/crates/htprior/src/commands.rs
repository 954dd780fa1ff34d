//! Operator-facing commands behind the CLI: dataset generation, training,
//! evaluation, detection, and gradient checking. Every command is
//! deterministic given its arguments and seed; reports carry no timestamps.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::checkpoint::{self, OptState};
use crate::config::{load_train_config, TrainConfig};
use crate::dataset::{self, Raster};
use crate::detect::{detect_lines, rasterize_line};
use crate::error::{Error, Result};
use crate::eval::{self, default_thresholds};
use crate::gradcheck::{check_model_kind, GradCheckReport};
use crate::hough::{build_grid, build_vote_mask, DEFAULT_N_RHO, DEFAULT_N_THETA};
use crate::model::{Model, ModelKind};
use crate::pgm;
use crate::train::{self, ResumeState, TrainSettings};

/// Generates the Line-Circle dataset under `out/{train,val,test}`.
/// Refuses to overwrite an existing dataset unless `force` is set.
pub fn cmd_gen_data(seed: u64, out: &Path, force: bool) -> Result<()> {
    let exists = ["train", "val", "test"]
        .iter()
        .any(|s| out.join(s).join("manifest.txt").exists());
    if exists && !force {
        return Err(Error::Usage(format!(
            "{} already holds a dataset; pass --force to overwrite",
            out.display()
        )));
    }
    let data = dataset::generate_dataset(seed)?;
    dataset::save_split(&out.join("train"), &data.train)?;
    dataset::save_split(&out.join("val"), &data.val)?;
    dataset::save_split(&out.join("test"), &data.test)?;
    println!(
        "wrote {} train / {} val / {} test samples to {}",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        out.display()
    );
    Ok(())
}

/// Result of a completed training run.
pub struct TrainSummary {
    pub best_epoch: usize,
    pub best_val_ap: f64,
    pub best_ckpt: PathBuf,
    pub last_ckpt: PathBuf,
}

/// Trains per the config file; writes `best.ckpt`, `last.ckpt`,
/// `train_log.csv`, and `report.txt` into the config's `out` directory.
pub fn cmd_train(config_path: &Path) -> Result<TrainSummary> {
    let config = load_train_config(config_path)?;
    run_training(&config)
}

/// Training entry used by both the CLI and tests.
pub fn run_training(config: &TrainConfig) -> Result<TrainSummary> {
    let train_samples = dataset::load_split(&config.data_dir.join("train"))?;
    let val_samples = dataset::load_split(&config.data_dir.join("val"))?;

    let resume = match &config.resume {
        Some(path) => {
            let loaded = checkpoint::load(path)?;
            let state = loaded.opt_state.ok_or_else(|| {
                Error::Usage(format!(
                    "{}: checkpoint lacks optimizer state, cannot resume",
                    path.display()
                ))
            })?;
            Some(ResumeState {
                params: loaded.params,
                adam_step: state.adam_step,
                next_epoch: state.completed_epochs as usize + 1,
            })
        }
        None => None,
    };

    fs::create_dir_all(&config.out_dir).map_err(|e| Error::io(&config.out_dir, e))?;
    let mut log = String::from("epoch,train_loss,val_ap\n");
    let outcome = train::train(
        &config.settings,
        &train_samples,
        &val_samples,
        resume,
        |s| {
            println!(
                "epoch {:3}  train_loss {:.6}  val_ap {:.4}",
                s.epoch, s.train_loss, s.val_ap
            );
            let _ = writeln!(log, "{},{:.6},{:.6}", s.epoch, s.train_loss, s.val_ap);
        },
    )?;

    let best_ckpt = config.out_dir.join("best.ckpt");
    checkpoint::save(&best_ckpt, &outcome.best_model.params, None)?;
    let last_ckpt = config.out_dir.join("last.ckpt");
    let completed = outcome.history.last().map(|h| h.epoch).unwrap_or(0) as u64;
    checkpoint::save(
        &last_ckpt,
        &outcome.last_model.params,
        Some(OptState {
            adam_step: outcome.last_adam_step,
            completed_epochs: completed,
        }),
    )?;

    let log_path = config.out_dir.join("train_log.csv");
    fs::write(&log_path, &log).map_err(|e| Error::io(&log_path, e))?;
    let mut report = String::new();
    let _ = writeln!(report, "model: {}", config.settings.kind.name());
    let _ = writeln!(report, "seed: {}", config.settings.seed);
    let _ = writeln!(report, "epochs_run: {}", outcome.history.len());
    let _ = writeln!(report, "best_epoch: {}", outcome.best_epoch);
    let _ = writeln!(report, "best_val_ap: {:.6}", outcome.best_val_ap);
    let report_path = config.out_dir.join("report.txt");
    fs::write(&report_path, &report).map_err(|e| Error::io(&report_path, e))?;

    println!(
        "best epoch {} (val AP {:.4}); checkpoints in {}",
        outcome.best_epoch,
        outcome.best_val_ap,
        config.out_dir.display()
    );
    Ok(TrainSummary {
        best_epoch: outcome.best_epoch,
        best_val_ap: outcome.best_val_ap,
        best_ckpt,
        last_ckpt,
    })
}

/// Loads a checkpoint and rebuilds its model, inferring the architecture
/// from parameter names and shapes.
pub fn load_model(ckpt: &Path) -> Result<Model> {
    let loaded = checkpoint::load(ckpt)?;
    let kind = Model::kind_from_params(&loaded.params)?;
    Model::from_params(kind, loaded.params)
}

/// Evaluates a checkpoint on one dataset split; returns the report text.
pub fn cmd_eval(ckpt: &Path, split: &str, data_dir: &Path, out: Option<&Path>) -> Result<String> {
    if !matches!(split, "train" | "val" | "test") {
        return Err(Error::Usage(format!(
            "unknown split '{split}' (want train, val, or test)"
        )));
    }
    let model = load_model(ckpt)?;
    let samples = dataset::load_split(&data_dir.join(split))?;
    let side = (samples[0].image.width, samples[0].image.height);
    let grid = build_grid(side.0, side.1, DEFAULT_N_RHO, DEFAULT_N_THETA)?;
    let mask = Arc::new(build_vote_mask(&grid));
    let thresholds = default_thresholds();
    let curves = eval::map_samples(&samples, |s| {
        let pred = model
            .predict(&s.image.to_tensor(), &mask)
            .expect("evaluation forward pass");
        eval::pr_curve(pred.data(), &s.target, &thresholds)
    });
    let (ap, pooled) = eval::dataset_ap(&curves);
    let title = format!(
        "model {} on split {split} ({} samples)",
        model.kind.name(),
        samples.len()
    );
    let report = eval::text_report(&title, ap, &pooled);
    if let Some(dir) = out {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let csv_path = dir.join("pr.csv");
        fs::write(&csv_path, eval::pr_csv(&pooled)).map_err(|e| Error::io(&csv_path, e))?;
        let rpt_path = dir.join("report.txt");
        fs::write(&rpt_path, &report).map_err(|e| Error::io(&rpt_path, e))?;
    }
    Ok(report)
}

/// Detection mode of [`cmd_detect`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DetectMode {
    Learned,
    Classic,
}

/// Runs detection on one PGM image. Classic mode writes `lines.txt`
/// (ρ θ score rows) plus the rasterized detections; learned mode writes the
/// model's prediction map.
pub fn cmd_detect(
    image_path: &Path,
    mode: DetectMode,
    ckpt: Option<&Path>,
    out: &Path,
    peaks: usize,
    nms_radius: usize,
) -> Result<()> {
    let (w, h, bytes) = pgm::read_pgm(image_path)?;
    let image = Raster {
        width: w,
        height: h,
        data: bytes.iter().map(|&v| u8::from(v > 127)).collect(),
    };
    let grid = build_grid(w, h, DEFAULT_N_RHO, DEFAULT_N_THETA)?;
    let mask = Arc::new(build_vote_mask(&grid));
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    match mode {
        DetectMode::Classic => {
            let detections = detect_lines(&image, &mask, peaks, nms_radius)?;
            let mut lines_txt = String::new();
            let mut overlay = Raster::new(w, h);
            for d in &detections {
                let _ = writeln!(lines_txt, "{:.4} {:.6} {:.6}", d.line.rho, d.line.theta, d.score);
                if d.score > 0.0 {
                    let r = rasterize_line(&d.line, &grid)?;
                    for (dst, src) in overlay.data.iter_mut().zip(&r.data) {
                        *dst |= src;
                    }
                }
            }
            let txt_path = out.join("lines.txt");
            fs::write(&txt_path, lines_txt).map_err(|e| Error::io(&txt_path, e))?;
            let bytes: Vec<u8> = overlay
                .data
                .iter()
                .map(|&v| if v != 0 { 255 } else { 0 })
                .collect();
            pgm::write_pgm(&out.join("pred.pgm"), w, h, &bytes)?;
            println!(
                "wrote {} detections to {}",
                detections.iter().filter(|d| d.score > 0.0).count(),
                out.display()
            );
        }
        DetectMode::Learned => {
            let ckpt = ckpt.ok_or_else(|| {
                Error::Usage("learned mode needs --ckpt CHECKPOINT".into())
            })?;
            let model = load_model(ckpt)?;
            let pred = model.predict(&image.to_tensor(), &mask)?;
            let bytes: Vec<u8> = pred
                .data()
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect();
            pgm::write_pgm(&out.join("pred.pgm"), w, h, &bytes)?;
            println!("wrote prediction map to {}", out.display());
        }
    }
    Ok(())
}

/// Finite-difference gradient report for one model kind on an 8×8 input.
pub fn cmd_gradcheck(model: &str, seed: u64) -> Result<GradCheckReport> {
    let kind = ModelKind::parse(model)?;
    let report = check_model_kind(kind, seed, 8)?;
    for (name, err) in &report.per_param {
        println!("{name}: max relative error {err:.3e}");
    }
    println!("worst: {:.3e}", report.worst);
    Ok(report)
}
