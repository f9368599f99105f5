//! PatchGAN discriminator.
//!
//! Input is the channel concatenation of the photo and a mask stack
//! (3 + 6 = 9 channels). Three stride-2 4×4 blocks of width `base·{1,2,4}`,
//! one stride-1 block of width `8·base`, then a stride-1 4×4 convolution to
//! `disc_out_channels` raw scores. Only the first block skips batch norm.
//! At 256×256 the score map is 30×30.

use crate::error::{Error, Result};
use crate::graph::{Activation, Graph, NodeId};
use crate::nn::config::{NetConfig, LEAKY_SLOPE, NORM_EPS};
use crate::nn::generator::norm;
use crate::nn::params::{init_params, Bound, ParamStore};
use crate::rng::RngState;
use crate::tensor::{Scalar, Tensor};

const KERNEL: usize = 4;
const BLOCKS: usize = 4;

/// How the discriminator's batch-norm layers obtain their statistics.
#[derive(Clone, Debug, Default)]
pub enum NormStats {
    /// Statistics of the current batch.
    #[default]
    Batch,
    /// Current-batch statistics, recorded per normalized block.
    Record(Vec<Vec<(f64, f64)>>),
    /// Previously recorded statistics, used as constants.
    Replay(Vec<Vec<(f64, f64)>>),
}

#[derive(Clone, Debug)]
pub struct Discriminator {
    cfg: NetConfig,
}

impl Discriminator {
    pub fn new(cfg: NetConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    pub fn build(cfg: NetConfig, rng: &mut RngState) -> Result<(Self, ParamStore)> {
        let net = Self::new(cfg)?;
        let mut store = net.empty_params()?;
        init_params(&mut store, rng);
        Ok((net, store))
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    fn block_width(&self, k: usize) -> usize {
        self.cfg.base_width << (k - 1)
    }

    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        let mut prev = self.cfg.in_channels + self.cfg.mask_channels;
        for k in 1..=BLOCKS {
            let w = self.block_width(k);
            out.push((format!("d.block{k}.w"), vec![w, prev, KERNEL, KERNEL]));
            out.push((format!("d.block{k}.b"), vec![w]));
            if k > 1 {
                out.push((format!("d.block{k}.gamma"), vec![w]));
                out.push((format!("d.block{k}.beta"), vec![w]));
            }
            prev = w;
        }
        let o = self.cfg.disc_out_channels;
        out.push(("d.out.w".into(), vec![o, prev, KERNEL, KERNEL]));
        out.push(("d.out.b".into(), vec![o]));
        out
    }

    pub fn empty_params<S: Scalar>(&self) -> Result<ParamStore<S>> {
        let mut store = ParamStore::new();
        for (name, shape) in self.param_shapes() {
            store.insert(name, Tensor::zeros(&shape))?;
        }
        Ok(store)
    }

    /// Scores the pair `(image, masks)`; returns `[N, disc_out_channels, h, w]`.
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        p: &Bound,
        image: NodeId,
        masks: NodeId,
    ) -> Result<NodeId> {
        self.forward_with(g, p, image, masks, &mut NormStats::Batch)
    }

    pub fn forward_with<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        p: &Bound,
        image: NodeId,
        masks: NodeId,
        stats: &mut NormStats,
    ) -> Result<NodeId> {
        let [_, ci, _, _] = g.value(image).dims4("discriminator")?;
        let [_, cm, _, _] = g.value(masks).dims4("discriminator")?;
        if ci != self.cfg.in_channels || cm != self.cfg.mask_channels {
            return Err(Error::shape(
                "discriminator",
                format!(
                    "expected {} image and {} mask channels, got {ci} and {cm}",
                    self.cfg.in_channels, self.cfg.mask_channels
                ),
            ));
        }
        let mut h = g.concat_channels(image, masks)?;
        for k in 1..=BLOCKS {
            let name = format!("d.block{k}");
            let stride = if k < BLOCKS { 2 } else { 1 };
            h = g.conv2d(h, p.get(&format!("{name}.w"))?, p.get(&format!("{name}.b"))?, stride, 1)?;
            if k > 1 {
                h = match stats {
                    NormStats::Batch => norm(g, p, &name, h)?,
                    NormStats::Record(rec) => {
                        rec.push(g.channel_stats(h)?);
                        norm(g, p, &name, h)?
                    }
                    NormStats::Replay(rec) => {
                        let s = rec.get(k - 2).ok_or_else(|| {
                            Error::Config(format!("no recorded statistics for {name}"))
                        })?;
                        g.batch_norm2d_frozen(
                            h,
                            p.get(&format!("{name}.gamma"))?,
                            p.get(&format!("{name}.beta"))?,
                            NORM_EPS,
                            s,
                        )?
                    }
                };
            }
            h = g.activation(h, Activation::LeakyRelu(LEAKY_SLOPE))?;
        }
        g.conv2d(h, p.get("d.out.w")?, p.get("d.out.b")?, 1, 1)
    }

    /// Scores a batch outside any training graph.
    pub fn score(&self, params: &ParamStore, image: &Tensor, masks: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let (x, y) = (g.constant(image.clone()), g.constant(masks.clone()));
        let out = self.forward(&mut g, &bound, x, y)?;
        Ok(g.value(out).clone())
    }
}
