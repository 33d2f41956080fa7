use std::collections::BTreeMap;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::batch::build_loss_graph;
use super::config::TrainConfig;
use super::metrics::{EpochMetrics, MetricsRecord};
use super::optim::{lr_schedule, optimizer_step, AdamState};
use crate::data::{window_at, window_starts, TrajectoryDataset, WindowBatch};
use crate::error::{KaeError, Result};
use crate::loss::LossReport;
use crate::model::{KoopmanAutoencoder, ModelConfig};
use crate::tensor::Tensor;

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "KAE_THREADS";

/// A model sized for `ds`, with RBF centers spanning its φ range.
pub fn init_model(
    cfg: &ModelConfig,
    ds: &TrajectoryDataset,
    seed: u64,
) -> Result<KoopmanAutoencoder> {
    let (lo, hi) = ds
        .phi_range()
        .ok_or_else(|| KaeError::Format("dataset has no trajectories".into()))?;
    KoopmanAutoencoder::new(cfg, ds.shape(), cfg.embedding(lo, hi)?, seed)
}

/// Worker pool honoring [`THREADS_ENV`]; zero or unset means one thread per
/// core.
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v.trim().parse::<usize>().map_err(|_| {
            KaeError::Config(format!(
                "{THREADS_ENV} must be a non-negative integer, got `{v}`"
            ))
        })?,
        Err(_) => 0,
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| KaeError::Config(format!("cannot start worker threads: {e}")))
}

/// Optimization state that can be checkpointed and resumed between epochs.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer {
    pub model: KoopmanAutoencoder,
    pub optimizer: AdamState,
    pub cfg: TrainConfig,
    /// Next epoch to run.
    pub epoch: usize,
}

type ChunkResult = (usize, LossReport, BTreeMap<String, Tensor>);

impl Trainer {
    pub fn new(model: KoopmanAutoencoder, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            model,
            optimizer: AdamState::new(),
            cfg,
            epoch: 0,
        })
    }

    pub fn is_done(&self) -> bool {
        self.epoch >= self.cfg.epochs
    }

    fn check_dataset(&self, ds: &TrajectoryDataset) -> Result<()> {
        if ds.shape() != self.model.state {
            return Err(KaeError::Config(format!(
                "dataset fields are {:?}, model expects {:?}",
                ds.shape(),
                self.model.state
            )));
        }
        Ok(())
    }

    /// Runs every remaining epoch, calling `on_epoch` after each.
    pub fn train(
        &mut self,
        ds: &TrajectoryDataset,
        mut on_epoch: impl FnMut(&Trainer, &EpochMetrics) -> Result<()>,
    ) -> Result<Vec<EpochMetrics>> {
        let pool = thread_pool()?;
        let mut out = Vec::new();
        while !self.is_done() {
            let m = self.run_epoch_in(ds, &pool)?;
            on_epoch(self, &m)?;
            out.push(m);
        }
        Ok(out)
    }

    pub fn run_epoch(&mut self, ds: &TrajectoryDataset) -> Result<EpochMetrics> {
        self.run_epoch_in(ds, &thread_pool()?)
    }

    /// One pass over every window in an order shuffled by `(seed, epoch)`.
    fn run_epoch_in(
        &mut self,
        ds: &TrajectoryDataset,
        pool: &rayon::ThreadPool,
    ) -> Result<EpochMetrics> {
        if self.is_done() {
            return Err(KaeError::InvalidArgument(format!(
                "all {} epochs have already run",
                self.cfg.epochs
            )));
        }
        self.check_dataset(ds)?;
        let started = Instant::now();
        let epoch = self.epoch;
        let lr = lr_schedule(epoch, &self.cfg)?;
        let mut starts = window_starts(ds, self.cfg.horizon, self.cfg.stride)?;
        if starts.is_empty() {
            return Err(KaeError::Config(format!(
                "no trajectory is long enough for a window of {} frames",
                self.cfg.horizon + crate::data::CONTEXT
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.cfg.seed);
        rng.set_stream(epoch as u64);
        starts.shuffle(&mut rng);

        let mut parts = Vec::new();
        let mut batches = 0;
        for (bi, batch) in starts.chunks(self.cfg.batch_size).enumerate() {
            let windows: Vec<WindowBatch<'_>> = batch
                .iter()
                .map(|&(t, s)| window_at(ds, t, s, self.cfg.horizon))
                .collect();
            let embed = &self.model.operator.embed;
            let embeddings: Vec<Vec<f64>> = windows
                .iter()
                .map(|w| embed.embed_noisy(w.phi, &mut rng))
                .collect();
            let provenance = || KaeError::NonFiniteLoss {
                epoch,
                batch: bi,
                starts: batch.to_vec(),
            };
            let (report, grads) = self
                .batch_gradient(pool, ds.meta.dt, &windows, &embeddings)
                .map_err(|e| match e {
                    KaeError::NonFinite { .. } => provenance(),
                    other => other,
                })?;
            if !report.total.is_finite() {
                return Err(provenance());
            }
            optimizer_step(&mut self.model, &grads, &mut self.optimizer, &self.cfg, lr)?;
            parts.push((report, batch.len() as f64));
            batches += 1;
        }
        let windows = starts.len();
        for p in &mut parts {
            p.1 /= windows as f64;
        }
        self.epoch += 1;
        Ok(EpochMetrics {
            epoch,
            lr,
            batches,
            windows,
            seconds: started.elapsed().as_secs_f64(),
            loss: LossReport::weighted_mean(&parts),
        })
    }

    /// Loss report and gradient of the batch mean, reduced over chunks in
    /// order.
    fn batch_gradient(
        &self,
        pool: &rayon::ThreadPool,
        dt: f64,
        windows: &[WindowBatch<'_>],
        embeddings: &[Vec<f64>],
    ) -> Result<(LossReport, BTreeMap<String, Tensor>)> {
        let chunk = self.cfg.chunk_size;
        let results: Vec<Result<ChunkResult>> = pool.install(|| {
            windows
                .par_chunks(chunk)
                .zip(embeddings.par_chunks(chunk))
                .map(|(w, e)| {
                    let lg =
                        build_loss_graph(&self.model, w, e, dt, self.cfg.scheme, &self.cfg.loss)?;
                    let grads = lg.graph.gradient(lg.total)?;
                    Ok((
                        w.len(),
                        lg.terms.report(&lg.graph, lg.total),
                        grads.into_map(),
                    ))
                })
                .collect()
        });
        let total = windows.len() as f64;
        let mut reports = Vec::with_capacity(results.len());
        let mut sum: BTreeMap<String, Tensor> = BTreeMap::new();
        for r in results {
            let (n, report, grads) = r?;
            let w = n as f64 / total;
            reports.push((report, w));
            for (name, g) in grads {
                match sum.get_mut(&name) {
                    Some(acc) => {
                        for (a, v) in acc.data_mut().iter_mut().zip(g.data()) {
                            *a += w * v;
                        }
                    }
                    None => {
                        sum.insert(name, g.map(|v| w * v));
                    }
                }
            }
        }
        Ok((LossReport::weighted_mean(&reports), sum))
    }
}

/// Trains a fresh optimizer over all configured epochs.
pub fn train(
    ds: &TrajectoryDataset,
    model: KoopmanAutoencoder,
    cfg: &TrainConfig,
) -> Result<(KoopmanAutoencoder, MetricsRecord)> {
    let mut t = Trainer::new(model, cfg.clone())?;
    let epochs = t.train(ds, |_, _| Ok(()))?;
    Ok((
        t.model,
        MetricsRecord {
            epochs,
            evals: Vec::new(),
        },
    ))
}
