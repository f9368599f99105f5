//! U-Net generator with a 6-channel tanh mask head.
//!
//! Encoder block `i` (1-based) is a stride-2 4×4 convolution to width
//! `base·min(2^(i-1), 8)`, batch norm (except the first and the innermost
//! block) and leaky ReLU. Decoder block `j` is a stride-2 4×4 transposed
//! convolution to the width of encoder block `depth - j`, batch norm,
//! dropout for `j <= 3`, ReLU, then concatenation with that encoder block's
//! output. The head is a transposed convolution to the mask channels plus tanh.

use crate::error::{Error, Result};
use crate::graph::{Activation, Graph, NodeId};
use crate::nn::config::{NetConfig, DROPOUT_BLOCKS, DROPOUT_RATE, LEAKY_SLOPE, NORM_EPS};
use crate::nn::params::{init_params, Bound, ParamStore};
use crate::rng::RngState;
use crate::tensor::{Scalar, Tensor};

const KERNEL: usize = 4;

#[derive(Clone, Debug)]
pub struct Generator {
    cfg: NetConfig,
}

impl Generator {
    pub fn new(cfg: NetConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self { cfg })
    }

    /// Builds the network and a freshly initialized parameter store.
    pub fn build(cfg: NetConfig, rng: &mut RngState) -> Result<(Self, ParamStore)> {
        let net = Self::new(cfg)?;
        let mut store = net.empty_params()?;
        init_params(&mut store, rng);
        Ok((net, store))
    }

    pub fn config(&self) -> &NetConfig {
        &self.cfg
    }

    pub fn depth(&self) -> usize {
        self.cfg.depth()
    }

    /// Output width of encoder block `i` (1-based).
    pub fn encoder_width(&self, i: usize) -> usize {
        self.cfg.base_width * (1usize << (i - 1)).min(8)
    }

    fn encoder_normalized(&self, i: usize) -> bool {
        i != 1 && i != self.depth()
    }

    /// Input channels of decoder block `j` (1-based): the innermost encoder
    /// output for `j = 1`, otherwise the previous decoder output concatenated
    /// with its skip connection.
    pub fn decoder_in_channels(&self, j: usize) -> usize {
        let l = self.depth();
        if j == 1 {
            self.encoder_width(l)
        } else {
            2 * self.encoder_width(l - j + 1)
        }
    }

    pub fn decoder_out_channels(&self, j: usize) -> usize {
        self.encoder_width(self.depth() - j)
    }

    /// Parameter names and shapes in construction order.
    pub fn param_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let l = self.depth();
        let mut out = Vec::new();
        let conv = |out: &mut Vec<(String, Vec<usize>)>, name: String, shape: [usize; 2], norm: bool| {
            let ch_out = if name.starts_with("g.enc") { shape[0] } else { shape[1] };
            out.push((format!("{name}.w"), vec![shape[0], shape[1], KERNEL, KERNEL]));
            out.push((format!("{name}.b"), vec![ch_out]));
            if norm {
                out.push((format!("{name}.gamma"), vec![ch_out]));
                out.push((format!("{name}.beta"), vec![ch_out]));
            }
        };
        let mut prev = self.cfg.in_channels;
        for i in 1..=l {
            let w = self.encoder_width(i);
            conv(&mut out, format!("g.enc{i}"), [w, prev], self.encoder_normalized(i));
            prev = w;
        }
        for j in 1..l {
            conv(
                &mut out,
                format!("g.dec{j}"),
                [self.decoder_in_channels(j), self.decoder_out_channels(j)],
                true,
            );
        }
        conv(
            &mut out,
            "g.out".into(),
            [2 * self.encoder_width(1), self.cfg.mask_channels],
            false,
        );
        out
    }

    pub fn empty_params<S: Scalar>(&self) -> Result<ParamStore<S>> {
        let mut store = ParamStore::new();
        for (name, shape) in self.param_shapes() {
            store.insert(name, Tensor::zeros(&shape))?;
        }
        Ok(store)
    }

    /// Maps `x` (`[N,3,H,W]` in `[-1,1]`) to masks `[N,6,H,W]` in `(-1,1)`.
    /// Dropout masks are drawn from `rng`.
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        p: &Bound,
        x: NodeId,
        rng: &mut RngState,
    ) -> Result<NodeId> {
        let [_, c, h, w] = g.value(x).dims4("generator")?;
        if c != self.cfg.in_channels || h != self.cfg.image_size || w != self.cfg.image_size {
            return Err(Error::shape(
                "generator",
                format!(
                    "expected [N,{},{s},{s}], got {:?}",
                    self.cfg.in_channels,
                    g.value(x).shape(),
                    s = self.cfg.image_size
                ),
            ));
        }
        let l = self.depth();
        let mut skips = Vec::with_capacity(l);
        let mut h = x;
        for i in 1..=l {
            let name = format!("g.enc{i}");
            h = g.conv2d(h, p.get(&format!("{name}.w"))?, p.get(&format!("{name}.b"))?, 2, 1)?;
            if self.encoder_normalized(i) {
                h = norm(g, p, &name, h)?;
            }
            h = g.activation(h, Activation::LeakyRelu(LEAKY_SLOPE))?;
            skips.push(h);
        }
        for j in 1..l {
            let name = format!("g.dec{j}");
            h = g.conv_transpose2d(h, p.get(&format!("{name}.w"))?, p.get(&format!("{name}.b"))?, 2, 1)?;
            h = norm(g, p, &name, h)?;
            if j <= DROPOUT_BLOCKS {
                h = g.dropout(h, DROPOUT_RATE, rng)?;
            }
            h = g.activation(h, Activation::Relu)?;
            h = g.concat_channels(h, skips[l - j - 1])?;
        }
        h = g.conv_transpose2d(h, p.get("g.out.w")?, p.get("g.out.b")?, 2, 1)?;
        g.activation(h, Activation::Tanh)
    }

    /// Runs the generator on a batch outside any training graph.
    pub fn predict(&self, params: &ParamStore, x: &Tensor, rng: &mut RngState) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = params.bind(&mut g, false);
        let input = g.constant(x.clone());
        let out = self.forward(&mut g, &bound, input, rng)?;
        Ok(g.value(out).clone())
    }
}

pub(crate) fn norm<S: Scalar>(g: &mut Graph<S>, p: &Bound, name: &str, h: NodeId) -> Result<NodeId> {
    g.batch_norm2d(
        h,
        p.get(&format!("{name}.gamma"))?,
        p.get(&format!("{name}.beta"))?,
        NORM_EPS,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(size: usize) -> NetConfig {
        NetConfig::new(size, 1).unwrap().with_base_width(4)
    }

    #[test]
    fn output_matches_input_size() {
        for size in [32, 64] {
            let (net, params) = Generator::build(small(size), &mut RngState::new(1)).unwrap();
            let x = Tensor::full(&[2, 3, size, size], 0.1);
            let y = net.predict(&params, &x, &mut RngState::new(2)).unwrap();
            assert_eq!(y.shape(), &[2, 6, size, size]);
            assert!(y.data().iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn skip_widths_line_up() {
        let net = Generator::new(NetConfig::new(256, 1).unwrap()).unwrap();
        let l = net.depth();
        for j in 2..l {
            assert_eq!(
                net.decoder_in_channels(j),
                net.decoder_out_channels(j - 1) + net.encoder_width(l - j + 1)
            );
        }
        let widths: Vec<_> = (1..=l).map(|i| net.encoder_width(i)).collect();
        assert_eq!(widths, [64, 128, 256, 512, 512, 512, 512, 512]);
    }

    #[test]
    fn rejects_wrong_input_size() {
        let (net, params) = Generator::build(small(32), &mut RngState::new(1)).unwrap();
        let x = Tensor::zeros(&[1, 3, 64, 64]);
        assert!(net.predict(&params, &x, &mut RngState::new(2)).is_err());
    }

    #[test]
    fn dropout_is_the_noise_source() {
        let (net, params) = Generator::build(small(32), &mut RngState::new(1)).unwrap();
        let x = Tensor::from_fn(&[1, 3, 32, 32], |i| ((i as f32) * 0.01).sin());
        let a = net.predict(&params, &x, &mut RngState::new(10)).unwrap();
        let b = net.predict(&params, &x, &mut RngState::new(10)).unwrap();
        let c = net.predict(&params, &x, &mut RngState::new(11)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }
}
