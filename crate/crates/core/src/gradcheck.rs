//! Central finite-difference checks of every differentiable operation.
//!
//! Each case builds a small graph from named inputs. Analytic gradients come
//! from [`Graph::backward`] at the precision under test; the numeric
//! reference is always evaluated in `f64` with central differences, so the
//! comparison measures the backward rules rather than rounding in the
//! forward pass. Non-scalar outputs are reduced with a fixed random
//! projection `Σ out·r`.
//!
//! The error of one input is `‖a − n‖ / max(‖a‖, ‖n‖, floor)` over its checked
//! coordinates, where `floor = 1e-3 · rms · √k` and `rms` is the RMS of every
//! checked analytic derivative in the case. The floor only matters for
//! inputs whose true gradient vanishes, such as a bias that feeds a batch norm.

use std::fmt;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::graph::{Activation, Graph, NodeId};
use crate::nn::config::LEAKY_SLOPE;
use crate::nn::{Bound, Discriminator, Generator, NetConfig, ParamStore};
use crate::objectives::losses::{loss_discriminator, loss_generator};
use crate::rng::RngState;
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_EPS: f64 = 1e-3;
/// Step halvings allowed when a difference straddles a kink.
pub const MAX_HALVINGS: u32 = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

/// Named groups of cases.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Suite {
    Conv2d,
    ConvTranspose2d,
    BatchNorm2d,
    LeakyRelu,
    Relu,
    Tanh,
    Sigmoid,
    Dropout,
    ConcatChannels,
    Add,
    Sub,
    Mul,
    Scale,
    Abs,
    Sum,
    Mean,
    BceWithLogits,
    LossDiscriminator,
    LossGenerator,
    Generator,
    Discriminator,
}

impl Suite {
    pub const ALL: [Suite; 21] = [
        Suite::Conv2d,
        Suite::ConvTranspose2d,
        Suite::BatchNorm2d,
        Suite::LeakyRelu,
        Suite::Relu,
        Suite::Tanh,
        Suite::Sigmoid,
        Suite::Dropout,
        Suite::ConcatChannels,
        Suite::Add,
        Suite::Sub,
        Suite::Mul,
        Suite::Scale,
        Suite::Abs,
        Suite::Sum,
        Suite::Mean,
        Suite::BceWithLogits,
        Suite::LossDiscriminator,
        Suite::LossGenerator,
        Suite::Generator,
        Suite::Discriminator,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Conv2d => "conv2d",
            Suite::ConvTranspose2d => "conv_transpose2d",
            Suite::BatchNorm2d => "batch_norm2d",
            Suite::LeakyRelu => "leaky_relu",
            Suite::Relu => "relu",
            Suite::Tanh => "tanh",
            Suite::Sigmoid => "sigmoid",
            Suite::Dropout => "dropout",
            Suite::ConcatChannels => "concat_channels",
            Suite::Add => "add",
            Suite::Sub => "sub",
            Suite::Mul => "mul",
            Suite::Scale => "scale",
            Suite::Abs => "abs",
            Suite::Sum => "sum",
            Suite::Mean => "mean",
            Suite::BceWithLogits => "bce_with_logits",
            Suite::LossDiscriminator => "loss_discriminator",
            Suite::LossGenerator => "loss_generator",
            Suite::Generator => "generator",
            Suite::Discriminator => "discriminator",
        }
    }

    pub fn from_name(name: &str) -> Option<Suite> {
        Suite::ALL.into_iter().find(|s| s.name() == name)
    }

    /// Whole networks are checked at a looser tolerance in 32-bit mode.
    fn is_network(self) -> bool {
        matches!(self, Suite::Generator | Suite::Discriminator)
    }

    /// Maximum accepted relative error.
    pub fn tolerance(self, precision: Precision) -> f64 {
        match (precision, self.is_network()) {
            (Precision::F64, false) => 1e-6,
            (Precision::F64, true) => 1e-5,
            (Precision::F32, false) => 1e-3,
            (Precision::F32, true) => 1e-2,
        }
    }

    /// Coordinates sampled per input; `None` checks all of them.
    fn coords_per_input(self) -> Option<usize> {
        if self.is_network() {
            Some(5)
        } else {
            Some(64)
        }
    }

    fn cases(self) -> Vec<Case> {
        use CaseKind as K;
        let act = |name, kind| Case::new(name, K::Activation(kind), 0x20);
        match self {
            Suite::Conv2d => vec![
                Case::new("k3 s1 p0 [1,2,5,5]", K::Conv { transpose: false, x: [1, 2, 5, 5], f: 3, k: 3, stride: 1, pad: 0 }, 0x01),
                Case::new("k4 s2 p1 [2,2,6,6]", K::Conv { transpose: false, x: [2, 2, 6, 6], f: 2, k: 4, stride: 2, pad: 1 }, 0x02),
            ],
            Suite::ConvTranspose2d => vec![
                Case::new("k4 s2 p1 [1,2,3,3]", K::Conv { transpose: true, x: [1, 2, 3, 3], f: 3, k: 4, stride: 2, pad: 1 }, 0x03),
                Case::new("k3 s1 p0 [2,2,2,2]", K::Conv { transpose: true, x: [2, 2, 2, 2], f: 2, k: 3, stride: 1, pad: 0 }, 0x04),
            ],
            Suite::BatchNorm2d => vec![Case::new("[2,3,4,4]", K::BatchNorm, 0x05)],
            Suite::LeakyRelu => vec![act("20 points", Activation::LeakyRelu(LEAKY_SLOPE))],
            Suite::Relu => vec![act("20 points", Activation::Relu)],
            Suite::Tanh => vec![act("20 points", Activation::Tanh)],
            Suite::Sigmoid => vec![act("20 points", Activation::Sigmoid)],
            Suite::Dropout => vec![Case::new("rate 0.5 [2,3,4,4]", K::Dropout, 0x06)],
            Suite::ConcatChannels => vec![Case::new("[1,2,3,3] ++ [1,3,3,3]", K::Concat, 0x07)],
            Suite::Add => vec![Case::new("[2,3,3]", K::Binary(Binary::Add), 0x08)],
            Suite::Sub => vec![Case::new("[2,3,3]", K::Binary(Binary::Sub), 0x09)],
            Suite::Mul => vec![Case::new("[2,3,3]", K::Binary(Binary::Mul), 0x0a)],
            Suite::Scale => vec![Case::new("factor -2.5", K::Unary(Unary::Scale), 0x0b)],
            Suite::Abs => vec![Case::new("[2,3,3]", K::Unary(Unary::Abs), 0x0c)],
            Suite::Sum => vec![Case::new("[2,3,3]", K::Unary(Unary::Sum), 0x0d)],
            Suite::Mean => vec![Case::new("[2,3,3]", K::Unary(Unary::Mean), 0x0e)],
            Suite::BceWithLogits => vec![
                Case::new("target 1", K::Bce(1.0), 0x0f),
                Case::new("target 0", K::Bce(0.0), 0x10),
            ],
            Suite::LossDiscriminator => vec![
                Case::new("1 channel", K::LossD(1), 0x11),
                Case::new("6 channels", K::LossD(6), 0x12),
            ],
            Suite::LossGenerator => vec![
                Case::new("lambda 100", K::LossG(100.0), 0x13),
                Case::new("lambda 1", K::LossG(1.0), 0x14),
            ],
            Suite::Generator => vec![Case::new("32px width 4 batch 2 + L1", K::Generator, 0x15)],
            Suite::Discriminator => vec![Case::new("32px width 4 batch 2, 6 ch", K::Discriminator, 0x16)],
        }
    }
}

#[derive(Clone, Copy, Debug)]
enum Binary {
    Add,
    Sub,
    Mul,
}

#[derive(Clone, Copy, Debug)]
enum Unary {
    Scale,
    Abs,
    Sum,
    Mean,
}

#[derive(Clone, Copy, Debug)]
enum CaseKind {
    Conv {
        transpose: bool,
        x: [usize; 4],
        f: usize,
        k: usize,
        stride: usize,
        pad: usize,
    },
    BatchNorm,
    Activation(Activation),
    Dropout,
    Concat,
    Binary(Binary),
    Unary(Unary),
    Bce(f64),
    LossD(usize),
    LossG(f64),
    Generator,
    Discriminator,
}

const NET_SIZE: usize = 32;
const NET_WIDTH: usize = 4;
const DROPOUT_STREAM: u64 = 0xd0;

struct Case {
    label: &'static str,
    kind: CaseKind,
    stream: u64,
}

/// Inputs of one case: all are graph parameters; only `checked` ones are
/// compared.
struct Inputs {
    store: ParamStore<f64>,
    checked: Vec<String>,
    projection: Option<Tensor<f64>>,
}

/// Away from the kinks of relu-like functions and `abs`.
fn off_zero(rng: &mut RngState) -> f64 {
    let m = rng.range(0.1, 2.0);
    if rng.bernoulli(0.5) {
        m
    } else {
        -m
    }
}

fn normal(shape: &[usize], rng: &mut RngState) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.normal(0.0, 1.0))
}

fn sampled(shape: &[usize], rng: &mut RngState, f: fn(&mut RngState) -> f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| f(rng))
}

/// Network parameters at a generic point: weights scaled by fan-in so a
/// step of `eps` is a small relative change, unit-order norm scales and
/// nonzero shifts.
fn network_point(name: &str, shape: &[usize], rng: &mut RngState) -> Tensor<f64> {
    match name.rsplit('.').next() {
        Some("w") => {
            let transposed = name.starts_with("g.dec") || name.starts_with("g.out");
            let taps = (shape[2] * shape[3]) as f64;
            let fan_in = if transposed {
                shape[0] as f64 * taps / 4.0
            } else {
                shape[1] as f64 * taps
            };
            normal(shape, rng).map(|v| v / fan_in.sqrt())
        }
        Some("gamma") => Tensor::from_fn(shape, |_| rng.range(0.5, 1.5)),
        _ => normal(shape, rng).map(|v| 0.1 * v),
    }
}

impl Case {
    fn new(label: &'static str, kind: CaseKind, stream: u64) -> Self {
        Self { label, kind, stream }
    }

    fn net_config(&self) -> NetConfig {
        NetConfig {
            image_size: NET_SIZE,
            base_width: NET_WIDTH,
            disc_out_channels: 6,
            ..NetConfig::default()
        }
    }

    fn inputs(&self, seed: u64) -> Result<Inputs> {
        let mut rng = RngState::with_stream(seed, self.stream);
        let rng = &mut rng;
        let mut store = ParamStore::new();
        let put = |store: &mut ParamStore<f64>, name: &str, t: Tensor<f64>| store.insert(name, t);
        match self.kind {
            CaseKind::Conv { transpose, x, f, k, .. } => {
                put(&mut store, "x", normal(&x, rng))?;
                let w = if transpose { [x[1], f, k, k] } else { [f, x[1], k, k] };
                put(&mut store, "w", normal(&w, rng))?;
                put(&mut store, "b", normal(&[f], rng))?;
            }
            CaseKind::BatchNorm => {
                put(&mut store, "x", normal(&[2, 3, 4, 4], rng))?;
                put(&mut store, "gamma", Tensor::from_fn(&[3], |_| rng.range(0.5, 1.5)))?;
                put(&mut store, "beta", normal(&[3], rng))?;
            }
            CaseKind::Activation(_) => put(&mut store, "x", sampled(&[1, 1, 4, 5], rng, off_zero))?,
            CaseKind::Dropout => put(&mut store, "x", normal(&[2, 3, 4, 4], rng))?,
            CaseKind::Concat => {
                put(&mut store, "a", normal(&[1, 2, 3, 3], rng))?;
                put(&mut store, "b", normal(&[1, 3, 3, 3], rng))?;
            }
            CaseKind::Binary(_) => {
                put(&mut store, "a", normal(&[2, 3, 3], rng))?;
                put(&mut store, "b", normal(&[2, 3, 3], rng))?;
            }
            CaseKind::Unary(_) => put(&mut store, "x", sampled(&[2, 3, 3], rng, off_zero))?,
            CaseKind::Bce(_) => put(&mut store, "s", Tensor::from_fn(&[2, 1, 3, 3], |_| rng.normal(0.0, 2.0)))?,
            CaseKind::LossD(c) => {
                put(&mut store, "real", Tensor::from_fn(&[1, c, 3, 3], |_| rng.normal(0.0, 2.0)))?;
                put(&mut store, "fake", Tensor::from_fn(&[1, c, 3, 3], |_| rng.normal(0.0, 2.0)))?;
            }
            CaseKind::LossG(_) => {
                put(&mut store, "d_fake", Tensor::from_fn(&[1, 1, 2, 2], |_| rng.normal(0.0, 2.0)))?;
                put(&mut store, "g_out", Tensor::from_fn(&[1, 6, 3, 3], |_| rng.range(-0.9, 0.9)))?;
                put(&mut store, "y", Tensor::from_fn(&[1, 6, 3, 3], |_| if rng.bernoulli(0.5) { 1.0 } else { -1.0 }))?;
            }
            CaseKind::Generator | CaseKind::Discriminator => {
                let cfg = self.net_config();
                let shapes = if matches!(self.kind, CaseKind::Generator) {
                    Generator::new(cfg)?.param_shapes()
                } else {
                    Discriminator::new(cfg)?.param_shapes()
                };
                for (name, shape) in shapes {
                    put(&mut store, &name, network_point(&name, &shape, rng))?;
                }
                let s = NET_SIZE;
                put(&mut store, "~x", Tensor::from_fn(&[2, 3, s, s], |_| rng.range(-1.0, 1.0)))?;
                let masks = Tensor::from_fn(&[2, 6, s, s], |_| if rng.bernoulli(0.5) { 1.0 } else { -1.0 });
                put(&mut store, "~y", masks)?;
            }
        }
        let checked = store
            .names()
            .filter(|n| !n.starts_with('~') && !matches!((self.kind, *n), (CaseKind::LossG(_), "y")))
            .map(str::to_string)
            .collect();
        let mut probe = Graph::<f64>::new();
        let bound = store.bind(&mut probe, false);
        let out = self.build(&mut probe, &bound)?;
        let shape = probe.value(out).shape().to_vec();
        let projection = (shape.iter().product::<usize>() != 1).then(|| normal(&shape, rng));
        Ok(Inputs {
            store,
            checked,
            projection,
        })
    }

    fn build<S: Scalar>(&self, g: &mut Graph<S>, p: &Bound) -> Result<NodeId> {
        match self.kind {
            CaseKind::Conv { transpose, stride, pad, .. } => {
                let (x, w, b) = (p.get("x")?, p.get("w")?, p.get("b")?);
                if transpose {
                    g.conv_transpose2d(x, w, b, stride, pad)
                } else {
                    g.conv2d(x, w, b, stride, pad)
                }
            }
            CaseKind::BatchNorm => g.batch_norm2d(p.get("x")?, p.get("gamma")?, p.get("beta")?, 1e-5),
            CaseKind::Activation(kind) => g.activation(p.get("x")?, kind),
            CaseKind::Dropout => {
                let mut rng = RngState::with_stream(0, DROPOUT_STREAM);
                g.dropout(p.get("x")?, 0.5, &mut rng)
            }
            CaseKind::Concat => g.concat_channels(p.get("a")?, p.get("b")?),
            CaseKind::Binary(op) => {
                let (a, b) = (p.get("a")?, p.get("b")?);
                match op {
                    Binary::Add => g.add(a, b),
                    Binary::Sub => g.sub(a, b),
                    Binary::Mul => g.mul(a, b),
                }
            }
            CaseKind::Unary(op) => {
                let x = p.get("x")?;
                Ok(match op {
                    Unary::Scale => g.scale(x, -2.5),
                    Unary::Abs => g.abs(x),
                    Unary::Sum => g.sum(x),
                    Unary::Mean => g.mean(x),
                })
            }
            CaseKind::Bce(target) => Ok(g.bce_with_logits(p.get("s")?, target)),
            CaseKind::LossD(_) => loss_discriminator(g, p.get("real")?, p.get("fake")?, 0.5),
            CaseKind::LossG(lambda) => {
                Ok(loss_generator(g, p.get("d_fake")?, p.get("g_out")?, p.get("y")?, lambda)?.total)
            }
            CaseKind::Generator => {
                let mut rng = RngState::with_stream(0, DROPOUT_STREAM);
                let out = Generator::new(self.net_config())?.forward(g, p, p.get("~x")?, &mut rng)?;
                let diff = g.sub(p.get("~y")?, out)?;
                let abs = g.abs(diff);
                Ok(g.mean(abs))
            }
            CaseKind::Discriminator => {
                Discriminator::new(self.net_config())?.forward(g, p, p.get("~x")?, p.get("~y")?)
            }
        }
    }

    /// Scalar objective: the output itself, or its projection onto `r`.
    fn objective<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        p: &Bound,
        projection: Option<&Tensor<f64>>,
    ) -> Result<NodeId> {
        let out = self.build(g, p)?;
        match projection {
            None => Ok(out),
            Some(r) => {
                let r = g.constant(r.cast());
                let prod = g.mul(out, r)?;
                Ok(g.sum(prod))
            }
        }
    }

    /// Central difference along coordinate `i` of input `name`. A difference
    /// across a kink says nothing about the derivative, so the step is halved
    /// until both evaluations share the base point's sign pattern; `None` if
    /// that never happens within `MAX_HALVINGS`.
    fn difference(
        &self,
        store: &ParamStore<f64>,
        name: &str,
        i: usize,
        base: u64,
        projection: Option<&Tensor<f64>>,
        eps: f64,
    ) -> Result<Option<(f64, f64)>> {
        let mut shifted = store.clone();
        let orig = store.get(name)?.data()[i];
        let mut step = eps;
        for _ in 0..=MAX_HALVINGS {
            shifted.get_mut(name)?.data_mut()[i] = orig + step;
            let (plus, sp) = self.evaluate(&shifted, projection)?;
            shifted.get_mut(name)?.data_mut()[i] = orig - step;
            let (minus, sm) = self.evaluate(&shifted, projection)?;
            if sp == base && sm == base {
                return Ok(Some(((plus - minus) / (2.0 * step), step)));
            }
            step /= 2.0;
        }
        Ok(None)
    }

    /// Objective value and kink signature at `store`.
    fn evaluate(&self, store: &ParamStore<f64>, projection: Option<&Tensor<f64>>) -> Result<(f64, u64)> {
        let mut g = Graph::<f64>::new();
        let bound = store.bind(&mut g, false);
        let root = self.objective(&mut g, &bound, projection)?;
        Ok((g.value(root).item(), g.kink_signature()))
    }

    fn run<S: Scalar>(&self, suite: Suite, precision: Precision, opts: &GradCheckOptions) -> Result<CaseReport> {
        let inputs = self.inputs(opts.seed)?;
        let projection = inputs.projection.as_ref();

        let store: ParamStore<S> = inputs.store.cast();
        let mut g = Graph::<S>::new();
        let bound = store.bind(&mut g, true);
        let root = self.objective(&mut g, &bound, projection)?;
        g.backward(root)?;
        let analytic = store.grads_from(&mut g, &bound)?;

        let (_, base) = self.evaluate(&inputs.store, projection)?;
        let mut pick = RngState::with_stream(opts.seed, self.stream | 0x100);
        let mut per_input = Vec::new();
        let mut skipped = 0;
        let mut min_step = opts.eps;
        for name in &inputs.checked {
            let value = inputs.store.get(name)?;
            let mut order: Vec<usize> = (0..value.numel()).collect();
            pick.shuffle(&mut order);
            let want = suite.coords_per_input().unwrap_or(order.len()).min(order.len());
            let mut coords = Vec::with_capacity(want);
            let mut numeric = Vec::with_capacity(want);
            for chunk in order.chunks(want.max(1)) {
                let diffs = chunk
                    .par_iter()
                    .map(|&i| Ok((i, self.difference(&inputs.store, name, i, base, projection, opts.eps)?)))
                    .collect::<Result<Vec<_>>>()?;
                for (i, diff) in diffs {
                    if coords.len() == want {
                        break;
                    }
                    match diff {
                        Some((d, step)) => {
                            coords.push(i);
                            numeric.push(d);
                            min_step = min_step.min(step);
                        }
                        None => skipped += 1,
                    }
                }
                if coords.len() == want {
                    break;
                }
            }
            let grad = analytic.get(name)?;
            let analytic: Vec<f64> = coords.iter().map(|&i| grad.data()[i].as_f64()).collect();
            per_input.push((name.clone(), analytic, numeric));
        }

        let all: Vec<f64> = per_input.iter().flat_map(|(_, a, _)| a.iter().copied()).collect();
        let rms = (all.iter().map(|v| v * v).sum::<f64>() / all.len().max(1) as f64).sqrt();
        let mut worst = (String::new(), 0.0f64);
        let mut coords = 0;
        for (name, a, n) in &per_input {
            let err = relative_error(a, n, 1e-3 * rms * (a.len() as f64).sqrt());
            coords += a.len();
            if err > worst.1 || worst.0.is_empty() {
                worst = (name.clone(), err);
            }
        }
        let tolerance = suite.tolerance(precision);
        let passed = worst.1.is_finite() && worst.1 < tolerance;
        Ok(CaseReport {
            suite,
            case: self.label.to_string(),
            precision,
            coords,
            max_rel_error: worst.1,
            worst_input: worst.0,
            skipped,
            min_step,
            tolerance,
            passed,
        })
    }
}

/// `‖a − n‖ / max(‖a‖, ‖n‖, floor)`; zero when both vectors are zero.
pub fn relative_error(a: &[f64], n: &[f64], floor: f64) -> f64 {
    let norm = |v: &mut dyn Iterator<Item = f64>| v.map(|x| x * x).sum::<f64>().sqrt();
    let diff = norm(&mut a.iter().zip(n).map(|(x, y)| x - y));
    let scale = norm(&mut a.iter().copied()).max(norm(&mut n.iter().copied())).max(floor);
    if diff == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckOptions {
    pub eps: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            eps: DEFAULT_EPS,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CaseReport {
    pub suite: Suite,
    pub case: String,
    pub precision: Precision,
    pub coords: usize,
    pub max_rel_error: f64,
    /// Input with the largest error.
    pub worst_input: String,
    /// Coordinates with a kink closer than `eps / 2^MAX_HALVINGS`.
    pub skipped: usize,
    /// Smallest step used; below `eps` only where a kink was near.
    pub min_step: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl fmt::Display for CaseReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<4} {:<18} {:<27} {} max rel err {:.3e} (tol {:.0e}, worst `{}`, {} coords, min step {:.0e})",
            if self.passed { "PASS" } else { "FAIL" },
            self.suite.name(),
            self.case,
            self.precision,
            self.max_rel_error,
            self.tolerance,
            self.worst_input,
            self.coords,
            self.min_step,
        )
    }
}

/// Runs every case of `suite` at `precision`.
pub fn check_suite(suite: Suite, precision: Precision, opts: &GradCheckOptions) -> Result<Vec<CaseReport>> {
    if !(opts.eps > 0.0 && opts.eps.is_finite()) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {}", opts.eps)));
    }
    suite
        .cases()
        .iter()
        .map(|case| match precision {
            Precision::F32 => case.run::<f32>(suite, precision, opts),
            Precision::F64 => case.run::<f64>(suite, precision, opts),
        })
        .collect()
}

/// Runs `suites` in order at `precision`.
pub fn check_all(suites: &[Suite], precision: Precision, opts: &GradCheckOptions) -> Result<Vec<CaseReport>> {
    let mut out = Vec::new();
    for &suite in suites {
        out.extend(check_suite(suite, precision, opts)?);
    }
    Ok(out)
}
