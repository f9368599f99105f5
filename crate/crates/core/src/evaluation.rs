//! Binarization of generator output and per-attribute Jaccard scoring.

use std::fmt::Write as _;

use image::RgbImage;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::codec::masks::{image_to_model_space, pack, Attribute, Bitmap, MaskSet, SamplePair};
use crate::error::{Error, Result};
use crate::nn::{Generator, NetConfig, ParamStore};
use crate::rng::{streams, RngState};
use crate::tensor::Tensor;

/// Thresholds a `[6,H,W]` tanh-space tensor at 0; exactly 0 counts as foreground.
pub fn binarize(g_out: &Tensor, image_id: impl Into<String>) -> Result<MaskSet> {
    let (h, w) = match g_out.shape() {
        [6, h, w] => (*h, *w),
        s => return Err(Error::shape("binarize", format!("expected [6,H,W], got {s:?}"))),
    };
    let plane = h * w;
    let masks = std::array::from_fn(|c| {
        let bits = g_out.data()[c * plane..(c + 1) * plane]
            .iter()
            .map(|&v| (v >= 0.0) as u8)
            .collect();
        Bitmap::from_bits(w as u32, h as u32, bits).expect("plane has H·W values")
    });
    MaskSet::new(image_id, masks)
}

/// Intersection and union pixel counts of two masks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Overlap {
    pub intersection: u64,
    pub union: u64,
}

impl Overlap {
    pub fn of(a: &Bitmap, b: &Bitmap) -> Result<Self> {
        if a.dims() != b.dims() {
            return Err(Error::shape(
                "jaccard",
                format!("mask sizes {:?} and {:?}", a.dims(), b.dims()),
            ));
        }
        let mut o = Overlap::default();
        for (&x, &y) in a.bits().iter().zip(b.bits()) {
            o.intersection += (x & y) as u64;
            o.union += (x | y) as u64;
        }
        Ok(o)
    }

    /// `|a∧b| / |a∨b|`, or `None` when both masks are empty.
    pub fn ratio(&self) -> Option<f64> {
        (self.union > 0).then(|| self.intersection as f64 / self.union as f64)
    }
}

/// Jaccard index; two empty masks score 1.0.
pub fn jaccard(a: &Bitmap, b: &Bitmap) -> Result<f64> {
    Ok(Overlap::of(a, b)?.ratio().unwrap_or(1.0))
}

/// Scoring of a pair of empty masks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmptyPolicy {
    /// Correctly predicted absence scores 1.
    #[default]
    One,
    Zero,
    /// Leave the pair out of the mean.
    Skip,
}

impl EmptyPolicy {
    fn score(self, o: &Overlap) -> Option<f64> {
        match (o.ratio(), self) {
            (Some(r), _) => Some(r),
            (None, EmptyPolicy::One) => Some(1.0),
            (None, EmptyPolicy::Zero) => Some(0.0),
            (None, EmptyPolicy::Skip) => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalOptions {
    pub empty_policy: EmptyPolicy,
    /// Aggregate intersections and unions over the set instead of
    /// averaging per-image indices.
    pub pooled: bool,
    /// Generator passes averaged before thresholding.
    pub eval_samples: usize,
    pub eval_seed: u64,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            empty_policy: EmptyPolicy::One,
            pooled: false,
            eval_samples: 1,
            eval_seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeScore {
    pub attribute: Attribute,
    pub label: String,
    /// `None` only when every pair was skipped.
    pub jaccard: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleScores {
    pub image_id: String,
    pub jaccard: [Option<f64>; 6],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub attributes: Vec<AttributeScore>,
    pub samples: Vec<SampleScores>,
    pub sample_count: usize,
    pub disc_out_channels: Option<usize>,
    pub net: Option<NetConfig>,
    pub options: EvalOptions,
}

impl MetricsReport {
    /// Mean over attributes that have a score.
    pub fn mean_jaccard(&self) -> f64 {
        let vals: Vec<f64> = self.attributes.iter().filter_map(|a| a.jaccard).collect();
        vals.iter().sum::<f64>() / vals.len().max(1) as f64
    }

    pub fn get(&self, attr: Attribute) -> Option<f64> {
        self.attributes[attr.index()].jaccard
    }

    /// Two-column text table, one row per attribute in channel order.
    pub fn to_table(&self) -> String {
        let width = Attribute::ALL.iter().map(|a| a.label().len()).max().unwrap_or(0);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  Jaccard index", "Attribute");
        for a in &self.attributes {
            let v = a.jaccard.map_or("n/a".to_string(), |j| format!("{j:.4}"));
            let _ = writeln!(out, "{:<width$}  {v}", a.label);
        }
        out
    }
}

/// Scores predictions produced by `predict(index, sample)` against each
/// sample's ground truth.
pub fn evaluate_with<F>(samples: &[SamplePair], opts: &EvalOptions, predict: F) -> Result<MetricsReport>
where
    F: Fn(usize, &SamplePair) -> Result<MaskSet> + Sync,
{
    let overlaps: Vec<[Overlap; 6]> = samples
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let pred = predict(i, s)?;
            let mut out = [Overlap::default(); 6];
            for attr in Attribute::ALL {
                out[attr.index()] = Overlap::of(s.masks.get(attr), pred.get(attr))?;
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;

    let per_sample: Vec<SampleScores> = samples
        .iter()
        .zip(&overlaps)
        .map(|(s, o)| SampleScores {
            image_id: s.id().to_string(),
            jaccard: std::array::from_fn(|c| opts.empty_policy.score(&o[c])),
        })
        .collect();

    let attributes = Attribute::ALL
        .iter()
        .map(|&attr| {
            let c = attr.index();
            let jaccard = if opts.pooled {
                let total = overlaps.iter().fold(Overlap::default(), |acc, o| Overlap {
                    intersection: acc.intersection + o[c].intersection,
                    union: acc.union + o[c].union,
                });
                opts.empty_policy.score(&total)
            } else {
                let vals: Vec<f64> = per_sample.iter().filter_map(|s| s.jaccard[c]).collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            };
            AttributeScore {
                attribute: attr,
                label: attr.label().to_string(),
                jaccard,
            }
        })
        .collect();

    Ok(MetricsReport {
        attributes,
        samples: per_sample,
        sample_count: samples.len(),
        disc_out_channels: None,
        net: None,
        options: *opts,
    })
}

/// Generator prediction for one sample, averaging `opts.eval_samples`
/// dropout draws from the evaluation stream of sample `index`.
pub fn predict_masks(
    generator: &Generator,
    params: &ParamStore,
    sample_index: usize,
    image: &RgbImage,
    image_id: &str,
    opts: &EvalOptions,
) -> Result<MaskSet> {
    let size = generator.config().image_size as u32;
    let image = if image.dimensions() == (size, size) {
        image.clone()
    } else {
        image::imageops::resize(image, size, size, image::imageops::FilterType::Triangle)
    };
    let x = image_to_model_space(&image);
    let x = x.clone().reshape(&[1, 3, size as usize, size as usize])?;
    let mut rng = RngState::with_stream(opts.eval_seed, streams::EVAL_BASE + sample_index as u64);
    let passes = opts.eval_samples.max(1);
    let mut acc = vec![0.0f64; 6 * (size * size) as usize];
    for _ in 0..passes {
        let y = generator.predict(params, &x, &mut rng)?;
        for (a, v) in acc.iter_mut().zip(y.data()) {
            *a += *v as f64;
        }
    }
    let mean = Tensor::new(
        &[6, size as usize, size as usize],
        acc.into_iter().map(|v| (v / passes as f64) as f32).collect(),
    )?;
    binarize(&mean, image_id)
}

/// Checks that `params` holds exactly the generator parameters of `netcfg`.
pub fn check_generator_params(netcfg: &NetConfig, params: &ParamStore) -> Result<Generator> {
    let generator = Generator::new(*netcfg)?;
    for (name, shape) in generator.param_shapes() {
        let t = params.get(&name).map_err(|_| {
            Error::shape("evaluate", format!("checkpoint lacks `{name}` required by the configuration"))
        })?;
        if t.shape() != shape.as_slice() {
            return Err(Error::shape(
                "evaluate",
                format!("`{name}` has shape {:?}, configuration expects {shape:?}", t.shape()),
            ));
        }
    }
    Ok(generator)
}

/// Runs the generator over `samples` and scores each attribute.
pub fn evaluate(
    params: &ParamStore,
    samples: &[SamplePair],
    netcfg: &NetConfig,
    opts: &EvalOptions,
) -> Result<MetricsReport> {
    let generator = check_generator_params(netcfg, params)?;
    let mut report = evaluate_with(samples, opts, |i, s| {
        predict_masks(&generator, params, i, &s.image, s.id(), opts)
    })?;
    report.disc_out_channels = Some(netcfg.disc_out_channels);
    report.net = Some(*netcfg);
    Ok(report)
}

/// One row per sample: photo | true packs | predicted packs.
pub fn render_grid(samples: &[SamplePair], predictions: &[MaskSet]) -> Result<RgbImage> {
    let first = samples.first().ok_or(Error::EmptyDataset)?;
    let (w, h) = first.image.dimensions();
    let mut grid = RgbImage::new(w * 5, h * samples.len() as u32);
    for (row, (s, p)) in samples.iter().zip(predictions).enumerate() {
        if s.image.dimensions() != (w, h) || p.dims() != (w, h) {
            return Err(Error::shape("render_grid", "all samples must share one size"));
        }
        let (ta, tb) = pack(&s.masks);
        let (pa, pb) = pack(p);
        for (col, tile) in [&s.image, &ta, &tb, &pa, &pb].into_iter().enumerate() {
            image::imageops::replace(&mut grid, tile, (col as u32 * w) as i64, (row as u32 * h) as i64);
        }
    }
    Ok(grid)
}
