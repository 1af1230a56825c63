//! Workflows behind the `spatea` command line: training, evaluation,
//! invariant checks, kernel compression and the DMRG demo.
//!
//! Every workflow is deterministic for a fixed seed. Batches are split into
//! fixed-size chunks that worker threads evaluate independently; results are
//! reduced in chunk order, so the thread count never changes the numbers.

pub mod check;
mod compression;
mod config;
mod ground_state;
mod train;

use std::collections::BTreeMap;
use std::path::Path;

pub use check::{run_checks, CheckRecord, CheckReport, Suite};
pub use compression::{compress_report, CompressReport, NodeCompression};
pub use config::{apply_override, OptimizerConfig, OptimizerKind, RunConfig, SplitMode};
pub use ground_state::{dmrg_row, DmrgRow, DMRG_TOLERANCE};
pub use train::{evaluate, train, Adam, EvalReport, EvalSplit, MetricsRow, Plateau, TrainReport, METRICS_HEADER};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::Vec3;
use crate::model::{BatchGrad, Graph, Model};
use crate::RTensor;

/// Graphs per independently evaluated chunk.
pub const CHUNK: usize = 8;

/// Worker count: `SPATEA_THREADS` if set, otherwise the available cores.
pub fn thread_count() -> usize {
    std::env::var("SPATEA_THREADS")
        .ok()
        .and_then(|s| s.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

pub fn thread_pool() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| Error::Capability(format!("thread pool: {e}")))
}

/// Exit status for an error: 2 usage/config/schema, 3 I/O, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => 3,
        Error::Config(_) | Error::Argument(_) | Error::Checkpoint(_) | Error::Dataset { .. } => 2,
        _ => 1,
    }
}

/// Summed gradient over a batch, chunked across the pool.
pub(crate) fn batch_grad(model: &Model, pool: &rayon::ThreadPool, graphs: &[&Graph], targets: &[&[Vec3<f64>]]) -> Result<BatchGrad> {
    let parts: Vec<Result<BatchGrad>> = pool.install(|| {
        graphs
            .par_chunks(CHUNK)
            .zip(targets.par_chunks(CHUNK))
            .map(|(g, t)| model.loss_and_grad(g, t))
            .collect()
    });
    let mut total = BatchGrad { sse: 0.0, count: 0, grads: BTreeMap::new() };
    for p in parts {
        let p = p?;
        total.sse += p.sse;
        total.count += p.count;
        for (k, g) in p.grads {
            match total.grads.get_mut(&k) {
                Some(acc) => acc.data_mut().iter_mut().zip(g.data()).for_each(|(a, b)| *a += b),
                None => {
                    total.grads.insert(k, g);
                }
            }
        }
    }
    Ok(total)
}

/// Summed squared error and target count, chunked across the pool.
pub(crate) fn batch_sse(model: &Model, pool: &rayon::ThreadPool, graphs: &[&Graph], targets: &[&[Vec3<f64>]]) -> Result<(f64, usize)> {
    let parts: Vec<Result<(f64, usize)>> = pool.install(|| {
        graphs
            .par_chunks(CHUNK)
            .zip(targets.par_chunks(CHUNK))
            .map(|(g, t)| {
                let pred = model.forward_batch(g)?;
                let mut s = 0.0;
                let mut k = 0;
                for (p, q) in pred.iter().zip(t) {
                    for (a, b) in p.iter().zip(q.iter()) {
                        s += (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>();
                        k += 3;
                    }
                }
                Ok((s, k))
            })
            .collect()
    });
    parts.into_iter().try_fold((0.0, 0), |(s, k), p| p.map(|(a, b)| (s + a, k + b)))
}

pub(crate) fn write_json(dir: &Path, name: &str, value: &impl serde::Serialize) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let path = dir.join(name);
    let mut body = serde_json::to_string_pretty(value).expect("reports serialize");
    body.push('\n');
    std::fs::write(&path, body).map_err(|e| Error::io(&path, e))
}

pub(crate) fn all_finite(grads: &BTreeMap<String, RTensor>) -> bool {
    grads.values().all(|g| g.is_finite())
}
