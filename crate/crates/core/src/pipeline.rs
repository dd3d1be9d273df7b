//! End-to-end runs: data preparation, staged training with checkpoints,
//! evaluation and report files.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use edgesel_tensor::ParamStore;
use rayon::prelude::*;

use crate::checkpoint::Checkpoint;
use crate::config::{EvalSplit, RunConfig};
use crate::data::{downscale_halving, read_dataset, split_samples, synth_dataset, tiled_predict, Sample};
use crate::error::{Error, Result};
use crate::mask::EdgeMap;
use crate::metrics::{dataset_metrics, delta_table, DeltaRow, MetricReport};
use crate::selector::{EdgeModel, Mode};
use crate::train::{run_stage, EpochRecord, StagePlan, TrainConfig};

pub fn build_id() -> String {
    format!(
        "edgesel-core {} {}-{}",
        env!("CARGO_PKG_VERSION"),
        std::env::consts::ARCH,
        std::env::consts::OS
    )
}

#[derive(Clone, Debug)]
pub struct Datasets {
    pub train: Vec<Sample>,
    pub eval: Vec<Sample>,
}

impl Datasets {
    pub fn for_eval(&self, split: EvalSplit) -> &[Sample] {
        match split {
            EvalSplit::Train => &self.train,
            EvalSplit::Eval => &self.eval,
        }
    }
}

/// Loads (or generates) the samples, downscales them and splits them.
pub fn prepare_data(cfg: &RunConfig) -> Result<Datasets> {
    let samples = if cfg.synth_count > 0 {
        synth_dataset(cfg.synth_count, cfg.synth_size, cfg.seed, cfg.synth_texture)?
    } else {
        let root = cfg
            .data_root
            .as_ref()
            .ok_or_else(|| Error::Config("no data_root configured and synth_count is 0".into()))?;
        read_dataset(root)?
    };
    let samples: Vec<Sample> = samples
        .par_iter()
        .map(|s| downscale_halving(s, cfg.downscale_limit, cfg.downscale_inclusive))
        .collect();
    let (train, eval) = split_samples(samples, cfg.split_seed, cfg.train_ratio);
    Ok(Datasets { train, eval })
}

pub fn checkpoint_path(dir: &Path, stage: u8) -> PathBuf {
    dir.join(format!("ckpt_stage{stage}.ckpt"))
}

/// Append-only run log.
pub struct RunLog {
    path: PathBuf,
}

impl RunLog {
    /// Opens `dir/name` and writes the run header: build, seed and the
    /// resolved configuration.
    pub fn start(dir: &Path, name: &str, cfg: &RunConfig, command: &str) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let log = RunLog { path: dir.join(name) };
        log.line(&format!("# {command}"))?;
        log.line(&format!("# build {}", build_id()))?;
        log.line(&format!("# seed {}", cfg.seed))?;
        for l in cfg.to_text().lines() {
            log.line(&format!("# config {l}"))?;
        }
        Ok(log)
    }

    pub fn line(&self, text: &str) -> Result<()> {
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .map_err(|e| Error::io(&self.path, e))?;
        writeln!(f, "{text}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

pub fn load_model(cfg: &RunConfig, checkpoint: &Path) -> Result<(EdgeModel, ParamStore<f32>)> {
    let (model, mut store) = EdgeModel::new(&cfg.model, cfg.seed)?;
    Checkpoint::load(checkpoint)?.restore(&mut store, &cfg.model_digest())?;
    Ok((model, store))
}

/// Trains the requested stages in order, writing `ckpt_stage{s}.ckpt` to
/// `out_dir` after each. A stage above 1 that is not preceded by its
/// predecessor in `stages` starts from the predecessor's checkpoint.
pub fn train(cfg: &RunConfig, stages: &[u8], samples: &[Sample], out_dir: &Path, log: Option<&RunLog>) -> Result<Vec<EpochRecord>> {
    let (model, mut store) = EdgeModel::new(&cfg.model, cfg.seed)?;
    let digest = cfg.model_digest();
    let mut previous: Option<u8> = None;
    let mut records = Vec::new();
    for &stage in stages {
        let plan = StagePlan::new(stage)?;
        if stage > 1 && previous != Some(stage - 1) {
            let path = checkpoint_path(out_dir, stage - 1);
            if !path.exists() {
                return Err(Error::Config(format!(
                    "stage {stage} needs the stage {} checkpoint at {}",
                    stage - 1,
                    path.display()
                )));
            }
            let ckpt = Checkpoint::load(&path)?;
            ckpt.restore(&mut store, &digest)?;
        }
        let tc = TrainConfig::from_run(cfg, stage);
        let mut on_epoch = |r: &EpochRecord| {
            log::info!("{}", r.to_line());
            if let Some(l) = log {
                let _ = l.line(&r.to_line());
            }
        };
        records.extend(run_stage(&plan, samples, &model, &mut store, &tc, &mut on_epoch)?);
        let path = checkpoint_path(out_dir, stage);
        Checkpoint::capture(&store, &digest, stage, tc.epochs).save(&path)?;
        if let Some(l) = log {
            l.line(&format!("checkpoint {}", path.display()))?;
        }
        previous = Some(stage);
    }
    Ok(records)
}

/// Tiled predictions for every sample, in sample order.
pub fn predict_all(model: &EdgeModel, store: &ParamStore<f32>, samples: &[Sample], tile: usize, mode: Mode) -> Result<Vec<EdgeMap>> {
    samples
        .par_iter()
        .map(|s| {
            tiled_predict(model, store, &s.image, tile, mode).map_err(|e| match e {
                Error::Contract(m) => Error::Contract(format!("{}: {m}", s.id)),
                other => other,
            })
        })
        .collect()
}

pub fn evaluate(cfg: &RunConfig, model: &EdgeModel, store: &ParamStore<f32>, samples: &[Sample], mode: Mode) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::Contract("evaluation split is empty".into()));
    }
    let preds = predict_all(model, store, samples, cfg.tile, mode)?;
    let gts: Vec<_> = samples.iter().map(|s| s.gt.clone()).collect();
    dataset_metrics(&preds, &gts, &cfg.threshold_levels(), cfg.tolerance)
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// `<name>.txt`, `<name>.csv` and `<name>_curve.csv` in `dir`.
pub fn write_report(dir: &Path, name: &str, report: &MetricReport) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(&dir.join(format!("{name}.txt")), &report.to_text())?;
    write(&dir.join(format!("{name}.csv")), &report.to_csv())?;
    write(&dir.join(format!("{name}_curve.csv")), &report.curve_csv())
}

pub fn write_delta(dir: &Path, baseline: &MetricReport, selected: &MetricReport) -> Result<String> {
    let table = delta_table(&DeltaRow::from_reports(baseline, selected));
    write(&dir.join("delta.txt"), &table)?;
    Ok(table)
}
