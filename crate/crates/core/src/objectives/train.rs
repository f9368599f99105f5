//! Alternating adversarial training.
//!
//! Each step runs the generator once, updates the discriminator on the
//! (photo, real masks) and (photo, detached fake masks) pairs, then updates
//! the generator by back-propagating the adversarial and L1 terms through
//! the just-updated discriminator, whose parameters stay fixed during that
//! pass.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::codec::ModelSample;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::nn::checkpoint;
use crate::nn::params::Bound;
use crate::nn::{Discriminator, Generator, NetConfig, ParamStore};
use crate::objectives::adam::{adam_step, AdamConfig, AdamState};
use crate::objectives::losses::{loss_discriminator, loss_generator, DEFAULT_D_WEIGHT};
use crate::rng::{streams, RngState};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lambda_l1: f64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Weight applied to the summed real/fake discriminator terms.
    pub d_loss_weight: f64,
    /// Write an extra checkpoint every this many epochs.
    pub checkpoint_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_l1: 100.0,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 100,
            batch_size: 1,
            seed: 0,
            d_loss_weight: DEFAULT_D_WEIGHT,
            checkpoint_every: None,
        }
    }
}

impl TrainConfig {
    /// Negated comparisons also reject NaN.
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.lambda_l1 >= 0.0) {
            return bad(format!("lambda_l1 must be >= 0, got {}", self.lambda_l1));
        }
        if !(self.lr > 0.0) {
            return bad(format!("learning rate must be > 0, got {}", self.lr));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.adam_eps > 0.0) {
            return bad(format!("adam epsilon must be > 0, got {}", self.adam_eps));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.d_loss_weight > 0.0) {
            return bad(format!("discriminator loss weight must be > 0, got {}", self.d_loss_weight));
        }
        if self.checkpoint_every == Some(0) {
            return bad("checkpoint interval must be at least 1".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
        }
    }
}

/// Loss components of one training step.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub loss_d: f64,
    pub loss_g_total: f64,
    pub loss_g_adv: f64,
    pub loss_g_l1: f64,
}

/// One line of the metrics log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub loss_d: f64,
    pub loss_g_adv: f64,
    pub loss_g_l1: f64,
    pub loss_g_total: f64,
}

/// Generator loss values evaluated without updating anything.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GeneratorLossValues {
    pub total: f64,
    pub adv: f64,
    pub l1: f64,
}

/// Both networks, their parameters and optimizer states.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub cfg: TrainConfig,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub g_params: ParamStore,
    pub d_params: ParamStore,
    pub opt_g: AdamState,
    pub opt_d: AdamState,
    dropout_rng: RngState,
    steps: usize,
}

impl Trainer {
    /// Builds and initializes both networks from `cfg.seed`.
    pub fn new(netcfg: NetConfig, cfg: TrainConfig) -> Result<Self> {
        cfg.validate()?;
        let root = RngState::new(cfg.seed);
        let (generator, g_params) = Generator::build(netcfg, &mut root.fork(streams::INIT_GENERATOR))?;
        let (discriminator, d_params) =
            Discriminator::build(netcfg, &mut root.fork(streams::INIT_DISCRIMINATOR))?;
        Ok(Self {
            opt_g: AdamState::new(&g_params),
            opt_d: AdamState::new(&d_params),
            dropout_rng: root.fork(streams::DROPOUT),
            generator,
            discriminator,
            g_params,
            d_params,
            cfg,
            steps: 0,
        })
    }

    pub fn net_config(&self) -> &NetConfig {
        self.generator.config()
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Generator and discriminator parameters in one store.
    pub fn params(&self) -> Result<ParamStore> {
        self.g_params.merged(&self.d_params)
    }

    /// Current dropout stream; cloning it replays the next step's draws.
    pub fn dropout_rng(&self) -> &RngState {
        &self.dropout_rng
    }

    /// Generator output for a batch with dropout drawn from `rng`.
    pub fn generate(&self, x: &Tensor, rng: &mut RngState) -> Result<Tensor> {
        self.generator.predict(&self.g_params, x, rng)
    }

    /// Discriminator loss of `(x, y)` versus `(x, fake)` under the current weights.
    pub fn discriminator_loss(&self, x: &Tensor, y: &Tensor, fake: &Tensor) -> Result<f64> {
        let mut g = Graph::new();
        let bound = self.d_params.bind(&mut g, false);
        let loss = self.discriminator_graph(&mut g, &bound, x, y, fake)?;
        Ok(g.value(loss).item() as f64)
    }

    fn discriminator_graph(
        &self,
        g: &mut Graph,
        bound: &Bound,
        x: &Tensor,
        y: &Tensor,
        fake: &Tensor,
    ) -> Result<NodeId> {
        let xn = g.constant(x.clone());
        let yn = g.constant(y.clone());
        let fake = g.constant(fake.clone());
        let real_scores = self.discriminator.forward(g, bound, xn, yn)?;
        let fake_scores = self.discriminator.forward(g, bound, xn, fake)?;
        loss_discriminator(g, real_scores, fake_scores, self.cfg.d_loss_weight)
    }

    /// One discriminator update with `fake` treated as a constant. Returns
    /// the loss before the update.
    pub fn discriminator_step(&mut self, x: &Tensor, y: &Tensor, fake: &Tensor) -> Result<f64> {
        let mut g = Graph::new();
        let bound = self.d_params.bind(&mut g, true);
        let loss = self.discriminator_graph(&mut g, &bound, x, y, fake)?;
        let value = g.value(loss).item() as f64;
        if !value.is_finite() {
            return Err(Error::NonFinite {
                what: "discriminator loss",
                step: self.steps,
            });
        }
        g.backward(loss)?;
        let grads = self.d_params.grads_from(&mut g, &bound)?;
        adam_step(&mut self.d_params, &grads, &mut self.opt_d, &self.cfg.adam())?;
        Ok(value)
    }

    /// Generator loss under the current weights with dropout from `rng`.
    pub fn generator_loss(&self, x: &Tensor, y: &Tensor, rng: &mut RngState) -> Result<GeneratorLossValues> {
        let mut g = Graph::new();
        let bound_g = self.g_params.bind(&mut g, false);
        let xn = g.constant(x.clone());
        let fake = self.generator.forward(&mut g, &bound_g, xn, rng)?;
        let bound_d = self.d_params.bind(&mut g, false);
        let ids = self.generator_graph(&mut g, &bound_d, xn, fake, y)?;
        Ok(ids.values(&g))
    }

    fn generator_graph(
        &self,
        g: &mut Graph,
        bound_d: &Bound,
        x: NodeId,
        fake: NodeId,
        y: &Tensor,
    ) -> Result<LossIds> {
        let scores = self.discriminator.forward(g, bound_d, x, fake)?;
        let target = g.constant(y.clone());
        let l = loss_generator(g, scores, fake, target, self.cfg.lambda_l1)?;
        Ok(LossIds {
            total: l.total,
            adv: l.adv,
            l1: l.l1,
        })
    }

    /// One generator update with dropout from `rng`; the discriminator is
    /// only read. Returns the loss before the update.
    pub fn generator_step(&mut self, x: &Tensor, y: &Tensor, rng: &mut RngState) -> Result<GeneratorLossValues> {
        let mut g = Graph::new();
        let bound_g = self.g_params.bind(&mut g, true);
        let xn = g.constant(x.clone());
        let fake = self.generator.forward(&mut g, &bound_g, xn, rng)?;
        self.finish_generator_step(g, bound_g, xn, fake, y)
    }

    fn finish_generator_step(
        &mut self,
        mut g: Graph,
        bound_g: Bound,
        xn: NodeId,
        fake: NodeId,
        y: &Tensor,
    ) -> Result<GeneratorLossValues> {
        let bound_d = self.d_params.bind(&mut g, false);
        let ids = self.generator_graph(&mut g, &bound_d, xn, fake, y)?;
        let values = ids.values(&g);
        if ![values.total, values.adv, values.l1].iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite {
                what: "generator loss",
                step: self.steps,
            });
        }
        g.backward(ids.total)?;
        let grads = self.g_params.grads_from(&mut g, &bound_g)?;
        adam_step(&mut self.g_params, &grads, &mut self.opt_g, &self.cfg.adam())?;
        Ok(values)
    }

    /// Discriminator step followed by generator step on one batch
    /// (`x`: `[N,3,H,W]`, `y`: `[N,6,H,W]`), generating the fake masks once.
    pub fn train_step(&mut self, x: &Tensor, y: &Tensor) -> Result<StepReport> {
        let mut g = Graph::new();
        let bound_g = self.g_params.bind(&mut g, true);
        let xn = g.constant(x.clone());
        let mut rng = self.dropout_rng.clone();
        let fake = self.generator.forward(&mut g, &bound_g, xn, &mut rng)?;
        self.dropout_rng = rng;
        let fake_value = g.value(fake).clone();

        let loss_d = self.discriminator_step(x, y, &fake_value)?;
        let gen = self.finish_generator_step(g, bound_g, xn, fake, y)?;
        self.steps += 1;
        Ok(StepReport {
            loss_d,
            loss_g_total: gen.total,
            loss_g_adv: gen.adv,
            loss_g_l1: gen.l1,
        })
    }

    /// Runs `cfg.epochs` passes over `data`, reshuffling each epoch, and
    /// calls `on_epoch` after every epoch with that epoch's mean losses.
    pub fn fit(
        &mut self,
        data: &[ModelSample],
        mut on_epoch: impl FnMut(&EpochMetrics, &Self) -> Result<()>,
    ) -> Result<Vec<EpochMetrics>> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut shuffle = RngState::with_stream(self.cfg.seed, streams::SHUFFLE);
        let mut log = Vec::with_capacity(self.cfg.epochs);
        let mut order: Vec<usize> = (0..data.len()).collect();
        for epoch in 1..=self.cfg.epochs {
            shuffle.shuffle(&mut order);
            let mut sums = [0.0f64; 4];
            let mut count = 0usize;
            for chunk in order.chunks(self.cfg.batch_size) {
                let (x, y) = batch(data, chunk)?;
                let r = self.train_step(&x, &y)?;
                for (s, v) in sums.iter_mut().zip([r.loss_d, r.loss_g_adv, r.loss_g_l1, r.loss_g_total]) {
                    *s += v;
                }
                count += 1;
            }
            let mean = |i: usize| sums[i] / count as f64;
            let metrics = EpochMetrics {
                epoch,
                loss_d: mean(0),
                loss_g_adv: mean(1),
                loss_g_l1: mean(2),
                loss_g_total: mean(3),
            };
            log::info!(
                "epoch {epoch}: loss_d {:.4} loss_g_adv {:.4} loss_g_l1 {:.4}",
                metrics.loss_d,
                metrics.loss_g_adv,
                metrics.loss_g_l1
            );
            on_epoch(&metrics, self)?;
            log.push(metrics);
        }
        Ok(log)
    }
}

struct LossIds {
    total: NodeId,
    adv: NodeId,
    l1: NodeId,
}

impl LossIds {
    fn values(&self, g: &Graph) -> GeneratorLossValues {
        GeneratorLossValues {
            total: g.value(self.total).item() as f64,
            adv: g.value(self.adv).item() as f64,
            l1: g.value(self.l1).item() as f64,
        }
    }
}

/// Stacks the samples at `indices` into `[N,3,H,W]` and `[N,6,H,W]` tensors.
pub fn batch(data: &[ModelSample], indices: &[usize]) -> Result<(Tensor, Tensor)> {
    let xs: Vec<&Tensor> = indices.iter().map(|&i| &data[i].x).collect();
    let ys: Vec<&Tensor> = indices.iter().map(|&i| &data[i].y).collect();
    Ok((Tensor::stack(&xs)?, Tensor::stack(&ys)?))
}

/// Where a training run writes its artifacts.
#[derive(Clone, Debug)]
pub struct RunOutputs {
    pub dir: PathBuf,
}

impl RunOutputs {
    pub const METRICS: &'static str = "metrics.jsonl";
    pub const CHECKPOINT: &'static str = "checkpoint.bin";

    pub fn metrics_path(&self) -> PathBuf {
        self.dir.join(Self::METRICS)
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.dir.join(Self::CHECKPOINT)
    }

    pub fn epoch_checkpoint_path(&self, epoch: usize) -> PathBuf {
        self.dir.join(format!("checkpoint_epoch{epoch:04}.bin"))
    }
}

/// Result of [`train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub trainer: Trainer,
    pub log: Vec<EpochMetrics>,
}

impl TrainOutcome {
    pub fn params(&self) -> Result<ParamStore> {
        self.trainer.params()
    }
}

/// Trains from scratch. With `outputs`, appends one JSON line per epoch to
/// the metrics log, writes periodic checkpoints when configured, and a
/// final checkpoint.
pub fn train(
    data: &[ModelSample],
    cfg: &TrainConfig,
    netcfg: NetConfig,
    outputs: Option<&RunOutputs>,
) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut trainer = Trainer::new(netcfg, cfg.clone())?;
    let mut writer = match outputs {
        Some(o) => {
            fs::create_dir_all(&o.dir).map_err(|e| Error::io(&o.dir, e))?;
            let path = o.metrics_path();
            let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
            Some((BufWriter::new(file), path))
        }
        None => None,
    };
    let every = cfg.checkpoint_every;
    let log = trainer.fit(data, |m, t| {
        if let Some((w, path)) = writer.as_mut() {
            let line = serde_json::to_string(m)?;
            writeln!(w, "{line}")
                .and_then(|_| w.flush())
                .map_err(|e| Error::io(path.as_path(), e))?;
        }
        if let (Some(o), Some(k)) = (outputs, every) {
            if m.epoch % k == 0 {
                checkpoint::save(&t.params()?, &o.epoch_checkpoint_path(m.epoch))?;
            }
        }
        Ok(())
    })?;
    if let Some(o) = outputs {
        checkpoint::save(&trainer.params()?, &o.checkpoint_path())?;
    }
    Ok(TrainOutcome { trainer, log })
}

/// Reads a metrics log written by [`train`].
pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
