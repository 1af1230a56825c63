use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{OptimizerConfig, RunConfig, SplitMode};
use super::{all_finite, batch_grad, batch_sse, thread_pool, write_json};
use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::model::{load_checkpoint, save_checkpoint, Checkpoint, Graph, Model, Params};
use crate::nbody::{read_dataset, split_indices, Split, TrajectorySample};
use crate::RTensor;

pub const METRICS_HEADER: &str = "epoch,train_mse,val_mse,lr,wall_seconds";

/// Adam with bias correction; moments are keyed by parameter name.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    t: i32,
    m: BTreeMap<String, RTensor>,
    v: BTreeMap<String, RTensor>,
}

impl Adam {
    pub fn new(cfg: &OptimizerConfig) -> Self {
        Adam { lr: cfg.lr, beta1: cfg.betas[0], beta2: cfg.betas[1], eps: cfg.eps, t: 0, m: BTreeMap::new(), v: BTreeMap::new() }
    }

    /// One update with gradients multiplied by `scale`.
    pub fn step(&mut self, params: &mut Params, grads: &BTreeMap<String, RTensor>, scale: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for (name, p) in params.iter_mut() {
            let Some(g) = grads.get(name) else { continue };
            let m = self.m.entry(name.clone()).or_insert_with(|| RTensor::zeros(g.shape()));
            let v = self.v.entry(name.clone()).or_insert_with(|| RTensor::zeros(g.shape()));
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (k, (x, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                let gk = gk * scale;
                md[k] = self.beta1 * md[k] + (1.0 - self.beta1) * gk;
                vd[k] = self.beta2 * vd[k] + (1.0 - self.beta2) * gk * gk;
                *x -= self.lr * (md[k] / c1) / ((vd[k] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Cuts the learning rate by `factor` once the monitored value has not
/// improved (relative threshold 1e-4) for more than `patience` epochs.
#[derive(Clone, Debug)]
pub struct Plateau {
    best: f64,
    bad: usize,
    patience: usize,
    factor: f64,
    min_lr: f64,
}

impl Plateau {
    pub fn new(cfg: &OptimizerConfig) -> Self {
        Plateau { best: f64::INFINITY, bad: 0, patience: cfg.patience, factor: cfg.factor, min_lr: cfg.min_lr }
    }

    pub fn step(&mut self, value: f64, lr: f64) -> f64 {
        if value < self.best * (1.0 - 1e-4) {
            self.best = value;
            self.bad = 0;
            return lr;
        }
        self.bad += 1;
        if self.bad > self.patience {
            self.bad = 0;
            return (lr * self.factor).max(self.min_lr);
        }
        lr
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub lr: f64,
    pub wall_seconds: f64,
}

impl MetricsRow {
    fn csv(&self) -> String {
        format!("{},{},{},{},{}", self.epoch, self.train_mse, self.val_mse, self.lr, self.wall_seconds)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub variant: String,
    pub param_count: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub final_train_mse: f64,
    pub final_lr: f64,
    pub n_train: usize,
    pub n_val: usize,
    pub checkpoint: PathBuf,
    #[serde(skip)]
    pub rows: Vec<MetricsRow>,
}

struct Set {
    graphs: Vec<Graph>,
    targets: Vec<Vec<Vec3<f64>>>,
}

impl Set {
    fn new(samples: &[TrajectorySample], idx: &[usize]) -> Result<Self> {
        Ok(Set {
            graphs: idx.iter().map(|&i| samples[i].graph()).collect::<Result<_>>()?,
            targets: idx.iter().map(|&i| samples[i].target_positions.clone()).collect(),
        })
    }

    fn len(&self) -> usize {
        self.graphs.len()
    }

    fn refs(&self, idx: &[usize]) -> (Vec<&Graph>, Vec<&[Vec3<f64>]>) {
        (idx.iter().map(|&i| &self.graphs[i]).collect(), idx.iter().map(|&i| self.targets[i].as_slice()).collect())
    }
}

/// Train/validation/test split of a dataset file, keyed by the seed of its first trajectory.
pub(crate) fn dataset_split(samples: &[TrajectorySample]) -> Split {
    split_indices(samples.len(), samples[0].meta.seed)
}

/// Train from `cfg`, writing `metrics.csv`, `best.ckpt`, `config.toml` and
/// `train.json` under `cfg.out_dir`.
///
/// The best-validation checkpoint is rewritten whenever validation improves;
/// a non-finite loss aborts the run and leaves the last good checkpoint.
pub fn train(cfg: &RunConfig) -> Result<TrainReport> {
    cfg.validate()?;
    let samples = read_dataset(&cfg.dataset)?;
    let (train_idx, val_idx) = match cfg.split {
        SplitMode::Holdout => {
            let s = dataset_split(&samples);
            (s.train, s.val)
        }
        SplitMode::All => ((0..samples.len()).collect(), (0..samples.len()).collect()),
    };
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(Error::Config(format!(
            "dataset of {} trajectories leaves an empty train or validation split",
            samples.len()
        )));
    }
    let train_set = Set::new(&samples, &train_idx)?;
    let val_set = Set::new(&samples, &val_idx)?;

    let out = &cfg.out_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let cfg_path = out.join("config.toml");
    std::fs::write(&cfg_path, cfg.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
    let ckpt_path = out.join("best.ckpt");
    let metrics_path = out.join("metrics.csv");
    let mut metrics = BufWriter::new(File::create(&metrics_path).map_err(|e| Error::io(&metrics_path, e))?);
    writeln!(metrics, "{METRICS_HEADER}").map_err(|e| Error::io(&metrics_path, e))?;

    let pool = thread_pool()?;
    let mut model = Model::init(cfg.model.clone(), cfg.seed)?;
    let mut adam = Adam::new(&cfg.optimizer);
    let mut plateau = Plateau::new(&cfg.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x7261_696e);
    let all_val: Vec<usize> = (0..val_set.len()).collect();
    let val_mse = |m: &Model| -> Result<f64> {
        let (g, t) = val_set.refs(&all_val);
        let (s, k) = batch_sse(m, &pool, &g, &t)?;
        Ok(s / k as f64)
    };

    let save = |m: &Model, epoch: usize, val: f64| {
        let extra = serde_json::json!({ "epoch": epoch, "val_mse": val, "seed": cfg.seed });
        save_checkpoint(&ckpt_path, &Checkpoint { config: m.config.clone(), params: m.params.clone(), extra: Some(extra) })
    };
    let mut best = (0, val_mse(&model)?);
    save(&model, 0, best.1)?;

    let start = Instant::now();
    let mut rows = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut sse, mut count) = (0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let (g, t) = train_set.refs(batch);
            let bg = batch_grad(&model, &pool, &g, &t)?;
            if !bg.sse.is_finite() || !all_finite(&bg.grads) {
                metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;
                return Err(Error::Numerical {
                    what: format!("non-finite loss in epoch {epoch}; best checkpoint kept at {}", ckpt_path.display()),
                    iterations: epoch,
                });
            }
            adam.step(&mut model.params, &bg.grads, 1.0 / bg.count as f64);
            sse += bg.sse;
            count += bg.count;
        }
        let train_mse = sse / count as f64;
        let val = val_mse(&model)?;
        let row = MetricsRow {
            epoch,
            train_mse,
            val_mse: val,
            lr: adam.lr,
            wall_seconds: if cfg.record_wall_clock { start.elapsed().as_secs_f64() } else { 0.0 },
        };
        writeln!(metrics, "{}", row.csv()).and_then(|_| metrics.flush()).map_err(|e| Error::io(&metrics_path, e))?;
        log::info!("epoch {epoch}: train {train_mse:.6e} val {val:.6e} lr {:.2e}", adam.lr);
        rows.push(row);
        if val.is_finite() && val < best.1 {
            best = (epoch, val);
            save(&model, epoch, val)?;
        }
        adam.lr = plateau.step(val, adam.lr);
    }
    metrics.flush().map_err(|e| Error::io(&metrics_path, e))?;

    let last = rows.last().expect("at least one epoch");
    let report = TrainReport {
        variant: format!("{:?}", cfg.model.variant).to_lowercase(),
        param_count: model.params.count(),
        epochs: cfg.epochs,
        best_epoch: best.0,
        best_val_mse: best.1,
        final_train_mse: last.train_mse,
        final_lr: adam.lr,
        n_train: train_set.len(),
        n_val: val_set.len(),
        checkpoint: ckpt_path.clone(),
        rows: rows.clone(),
    };
    write_json(out, "train.json", &report)?;
    Ok(report)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalSplit {
    Test,
    Val,
    Train,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub test_mse: f64,
    pub n_samples: usize,
    pub field: String,
}

/// MSE of a checkpoint on one split of a dataset; writes `eval.json` when
/// `out_dir` is given.
pub fn evaluate(ckpt: &Path, dataset: &Path, split: EvalSplit, out_dir: Option<&Path>) -> Result<EvalReport> {
    let ck = load_checkpoint(ckpt)?;
    let model = Model::new(ck.config, ck.params)?;
    let samples = read_dataset(dataset)?;
    let s = dataset_split(&samples);
    let idx = match split {
        EvalSplit::Test => s.test,
        EvalSplit::Val => s.val,
        EvalSplit::Train => s.train,
        EvalSplit::All => (0..samples.len()).collect(),
    };
    if idx.is_empty() {
        return Err(Error::Config(format!("{split:?} split of {} trajectories is empty", samples.len())));
    }
    let set = Set::new(&samples, &idx)?;
    let all: Vec<usize> = (0..set.len()).collect();
    let (g, t) = set.refs(&all);
    let pool = thread_pool()?;
    let (sse, k) = batch_sse(&model, &pool, &g, &t)?;
    let report = EvalReport { test_mse: sse / k as f64, n_samples: idx.len(), field: samples[0].meta.field.to_string() };
    if let Some(dir) = out_dir {
        write_json(dir, "eval.json", &report)?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = Params::from_map(BTreeMap::from([("w".to_string(), RTensor::new(vec![2], vec![1.0, -1.0]).unwrap())]));
        let g = BTreeMap::from([("w".to_string(), RTensor::new(vec![2], vec![3.0, -0.5]).unwrap())]);
        let mut a = Adam::new(&OptimizerConfig { lr: 0.1, ..Default::default() });
        a.step(&mut p, &g, 1.0);
        let w = p.get("w").unwrap().data();
        assert!((w[0] - 0.9).abs() < 1e-6 && (w[1] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn plateau_halves_after_patience() {
        let cfg = OptimizerConfig { patience: 2, ..Default::default() };
        let mut p = Plateau::new(&cfg);
        let mut lr = 1.0;
        lr = p.step(1.0, lr);
        for _ in 0..2 {
            lr = p.step(1.0, lr);
            assert_eq!(lr, 1.0);
        }
        lr = p.step(1.0, lr);
        assert_eq!(lr, 0.5);
        let mut p = Plateau::new(&OptimizerConfig { patience: 0, min_lr: 0.3, ..Default::default() });
        p.step(1.0, 0.5);
        assert_eq!(p.step(2.0, 0.5), 0.3);
    }
}
