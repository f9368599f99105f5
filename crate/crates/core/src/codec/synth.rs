//! Synthetic lesion photos with known attribute masks.
//!
//! Each sample is a textured skin background with one rotated elliptical
//! lesion. Attributes are regions inside the ellipse, each present with
//! probability 0.5: a ring near the border (pigment network), an
//! off-centre patch (negative network), two arcs (streaks), small dots
//! (milia-like cysts) and larger blobs (globules). Every region adds its own
//! colour offset to the photo so the mapping is learnable.

use std::f64::consts::{PI, TAU};
use std::path::Path;

use image::{Rgb, RgbImage};
use rayon::prelude::*;

use crate::codec::dataset::write_sample;
use crate::codec::masks::{Attribute, Bitmap, MaskSet, SamplePair};
use crate::error::{Error, Result};
use crate::rng::{streams, RngState};

const PRESENCE: f64 = 0.5;

struct Lesion {
    cx: f64,
    cy: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Lesion {
    /// Position in the ellipse frame: normalized radius and angle.
    fn polar(&self, x: f64, y: f64) -> (f64, f64) {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let u = (dx * self.cos + dy * self.sin) / self.a;
        let v = (-dx * self.sin + dy * self.cos) / self.b;
        ((u * u + v * v).sqrt(), v.atan2(u))
    }

    /// Pixel coordinates of a point given in the ellipse frame.
    fn to_pixel(&self, r: f64, phi: f64) -> (f64, f64) {
        let (u, v) = (r * phi.cos() * self.a, r * phi.sin() * self.b);
        (
            self.cx + u * self.cos - v * self.sin,
            self.cy + u * self.sin + v * self.cos,
        )
    }
}

fn angle_in(phi: f64, start: f64, span: f64) -> bool {
    (phi - start).rem_euclid(TAU) <= span
}

fn discs(rng: &mut RngState, lesion: &Lesion, count: usize, r_max: f64) -> Vec<(f64, f64)> {
    (0..count)
        .map(|_| {
            let r = rng.range(0.1, r_max);
            let phi = rng.range(0.0, TAU);
            lesion.to_pixel(r, phi)
        })
        .collect()
}

fn near_any(x: f64, y: f64, centres: &[(f64, f64)], radius: f64) -> bool {
    centres
        .iter()
        .any(|&(cx, cy)| (x - cx).powi(2) + (y - cy).powi(2) <= radius * radius)
}

/// Colour offset added to the photo for each attribute.
fn tint(attr: Attribute) -> [f64; 3] {
    match attr {
        Attribute::LesionBoundary => [-45.0, -55.0, -50.0],
        Attribute::PigmentNetwork => [-90.0, -70.0, -40.0],
        Attribute::NegativeNetwork => [30.0, 70.0, 110.0],
        Attribute::Streaks => [-30.0, -60.0, 100.0],
        Attribute::MiliaLikeCysts => [100.0, 110.0, 30.0],
        Attribute::Globules => [-60.0, 60.0, -60.0],
    }
}

/// Renders synthetic sample `index` of the dataset seeded by `seed`.
pub fn synth_sample(index: usize, image_size: u32, seed: u64) -> SamplePair {
    let mut rng = RngState::with_stream(seed, streams::SYNTH_BASE + index as u64);
    let s = image_size as f64;
    let theta = rng.range(0.0, PI);
    let lesion = Lesion {
        cx: s / 2.0 + rng.range(-0.08, 0.08) * s,
        cy: s / 2.0 + rng.range(-0.08, 0.08) * s,
        a: rng.range(0.36, 0.44) * s,
        b: rng.range(0.3, 0.38) * s,
        cos: theta.cos(),
        sin: theta.sin(),
    };
    let present: [bool; 5] = std::array::from_fn(|_| rng.bernoulli(PRESENCE));
    let patch_phi = rng.range(0.0, TAU);
    let patch = lesion.to_pixel(0.3, patch_phi);
    let streak_phi = rng.range(0.0, TAU);
    let n_dots = 3 + rng.below(3);
    let dots = discs(&mut rng, &lesion, n_dots, 0.6);
    let n_blobs = 2 + rng.below(2);
    let blobs = discs(&mut rng, &lesion, n_blobs, 0.55);

    let dot_r = (s / 14.0).max(2.0);
    let blob_r = (s / 11.0).max(2.5);
    let patch_r = s * 0.17;

    let member = |attr: Attribute, x: f64, y: f64| -> bool {
        let (r, phi) = lesion.polar(x, y);
        if r > 1.0 {
            return false;
        }
        match attr {
            Attribute::LesionBoundary => true,
            Attribute::PigmentNetwork => present[0] && (0.68..=0.95).contains(&r),
            Attribute::NegativeNetwork => present[1] && near_any(x, y, &[patch], patch_r),
            Attribute::Streaks => {
                present[2]
                    && (0.32..=0.66).contains(&r)
                    && (angle_in(phi, streak_phi, 1.6) || angle_in(phi, streak_phi + PI, 1.6))
            }
            Attribute::MiliaLikeCysts => present[3] && near_any(x, y, &dots, dot_r),
            Attribute::Globules => present[4] && near_any(x, y, &blobs, blob_r),
        }
    };

    let id = format!("{:07}", index);
    let masks = std::array::from_fn(|i| {
        let attr = Attribute::ALL[i];
        Bitmap::from_fn(image_size, image_size, |x, y| member(attr, x as f64 + 0.5, y as f64 + 0.5))
    });
    let masks = MaskSet::new(id, masks).expect("channels share one size");

    let skin = [
        rng.range(190.0, 215.0),
        rng.range(150.0, 175.0),
        rng.range(125.0, 150.0),
    ];
    let phase = rng.range(0.0, TAU);
    let noise: Vec<f64> = (0..image_size * image_size)
        .map(|_| rng.range(-4.0, 4.0))
        .collect();
    let image = RgbImage::from_fn(image_size, image_size, |x, y| {
        let (fx, fy) = (x as f64, y as f64);
        let texture = 4.0 * ((fx * 0.9 + phase).sin() * (fy * 0.7 - phase).cos());
        let mut px = [0.0; 3];
        for c in 0..3 {
            px[c] = skin[c] + texture + noise[(y * image_size + x) as usize];
        }
        for attr in Attribute::ALL {
            if masks.get(attr).get(x, y) {
                for (v, t) in px.iter_mut().zip(tint(attr)) {
                    *v += t;
                }
            }
        }
        Rgb(px.map(|v| v.round().clamp(0.0, 255.0) as u8))
    });
    SamplePair::new(image, masks).expect("photo and masks share one size")
}

/// `n` synthetic samples, in id order.
pub fn synth_samples(n: usize, image_size: u32, seed: u64) -> Vec<SamplePair> {
    (0..n)
        .into_par_iter()
        .map(|i| synth_sample(i, image_size, seed))
        .collect()
}

/// Writes `n` synthetic samples to `out_dir` in the ISIC layout.
pub fn synth_dataset(n: usize, image_size: u32, seed: u64, out_dir: &Path) -> Result<Vec<SamplePair>> {
    if n == 0 {
        return Err(Error::Config("synthetic dataset needs at least one sample".into()));
    }
    let samples = synth_samples(n, image_size, seed);
    samples
        .par_iter()
        .map(|s| write_sample(out_dir, s))
        .collect::<Result<()>>()?;
    Ok(samples)
}
