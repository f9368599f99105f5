use image::{GrayImage, Luma, Rgb, RgbImage};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// The six mask channels, in their fixed order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Attribute {
    LesionBoundary,
    PigmentNetwork,
    NegativeNetwork,
    Streaks,
    MiliaLikeCysts,
    Globules,
}

impl Attribute {
    pub const ALL: [Attribute; 6] = [
        Attribute::LesionBoundary,
        Attribute::PigmentNetwork,
        Attribute::NegativeNetwork,
        Attribute::Streaks,
        Attribute::MiliaLikeCysts,
        Attribute::Globules,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Human-readable row label.
    pub fn label(self) -> &'static str {
        match self {
            Attribute::LesionBoundary => "lesion boundary",
            Attribute::PigmentNetwork => "pigment network",
            Attribute::NegativeNetwork => "negative network",
            Attribute::Streaks => "streaks",
            Attribute::MiliaLikeCysts => "milia-like cysts",
            Attribute::Globules => "globules",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Attribute::LesionBoundary => "lesion_boundary",
            Attribute::PigmentNetwork => "pigment_network",
            Attribute::NegativeNetwork => "negative_network",
            Attribute::Streaks => "streaks",
            Attribute::MiliaLikeCysts => "milia_like_cysts",
            Attribute::Globules => "globules",
        }
    }

    /// Mask file suffixes accepted for this channel, preferred spelling first.
    /// The boundary uses the ISIC segmentation file.
    pub fn file_suffixes(self) -> &'static [&'static str] {
        match self {
            Attribute::LesionBoundary => &["segmentation", "attribute_lesion_boundary"],
            Attribute::PigmentNetwork => &["attribute_pigment_network"],
            Attribute::NegativeNetwork => &["attribute_negative_network"],
            Attribute::Streaks => &["attribute_streaks"],
            Attribute::MiliaLikeCysts => &["attribute_milia_like_cyst", "attribute_milia_like_cysts"],
            Attribute::Globules => &["attribute_globules"],
        }
    }
}

/// Binary bitmap with values in {0, 1}.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bitmap {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl Bitmap {
    pub fn empty(width: u32, height: u32) -> Self {
        Self {
            width,
            height,
            data: vec![0; (width * height) as usize],
        }
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> bool) -> Self {
        let mut data = Vec::with_capacity((width * height) as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y) as u8);
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    /// From raw row-major bits; any non-zero byte counts as foreground.
    pub fn from_bits(width: u32, height: u32, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != (width * height) as usize {
            return Err(Error::shape(
                "bitmap",
                format!("{width}x{height} needs {} bits, got {}", width * height, bits.len()),
            ));
        }
        Ok(Self {
            width,
            height,
            data: bits.into_iter().map(|b| (b != 0) as u8).collect(),
        })
    }

    /// Thresholds an 8-bit image at 128.
    pub fn from_gray(img: &GrayImage) -> Self {
        Self {
            width: img.width(),
            height: img.height(),
            data: img.pixels().map(|p| threshold(p.0[0])).collect(),
        }
    }

    pub fn to_gray(&self) -> GrayImage {
        GrayImage::from_fn(self.width, self.height, |x, y| Luma([self.get(x, y) as u8 * 255]))
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dims(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn bits(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        self.data[(y * self.width + x) as usize] != 0
    }

    pub fn set(&mut self, x: u32, y: u32, on: bool) {
        self.data[(y * self.width + x) as usize] = on as u8;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&b| b == 0)
    }

    /// Nearest-neighbour resize, which keeps the bitmap binary.
    pub fn resize(&self, width: u32, height: u32) -> Self {
        if (width, height) == self.dims() {
            return self.clone();
        }
        let resized = image::imageops::resize(
            &self.to_gray(),
            width,
            height,
            image::imageops::FilterType::Nearest,
        );
        Self::from_gray(&resized)
    }
}

/// Threshold used when reading 8-bit mask channels.
pub const MASK_THRESHOLD: u8 = 128;

fn threshold(v: u8) -> u8 {
    (v >= MASK_THRESHOLD) as u8
}

/// Six binary masks of one lesion, in [`Attribute::ALL`] order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MaskSet {
    pub image_id: String,
    masks: [Bitmap; 6],
}

impl MaskSet {
    pub fn new(image_id: impl Into<String>, masks: [Bitmap; 6]) -> Result<Self> {
        let dims = masks[0].dims();
        if let Some(m) = masks.iter().find(|m| m.dims() != dims) {
            return Err(Error::shape(
                "mask set",
                format!("channel size {:?} differs from {:?}", m.dims(), dims),
            ));
        }
        Ok(Self {
            image_id: image_id.into(),
            masks,
        })
    }

    pub fn empty(image_id: impl Into<String>, width: u32, height: u32) -> Self {
        Self {
            image_id: image_id.into(),
            masks: std::array::from_fn(|_| Bitmap::empty(width, height)),
        }
    }

    pub fn dims(&self) -> (u32, u32) {
        self.masks[0].dims()
    }

    pub fn get(&self, attr: Attribute) -> &Bitmap {
        &self.masks[attr.index()]
    }

    pub fn get_mut(&mut self, attr: Attribute) -> &mut Bitmap {
        &mut self.masks[attr.index()]
    }

    pub fn channels(&self) -> &[Bitmap; 6] {
        &self.masks
    }

    pub fn resize(&self, width: u32, height: u32) -> Self {
        Self {
            image_id: self.image_id.clone(),
            masks: std::array::from_fn(|i| self.masks[i].resize(width, height)),
        }
    }
}

/// Splits a mask set into two RGB images: the first carries lesion
/// boundary, pigment network and negative network in R, G, B; the second
/// streaks, milia-like cysts and globules. Foreground is 255.
pub fn pack(masks: &MaskSet) -> (RgbImage, RgbImage) {
    let (w, h) = masks.dims();
    let image = |first: usize| {
        RgbImage::from_fn(w, h, |x, y| {
            Rgb(std::array::from_fn(|c| masks.masks[first + c].get(x, y) as u8 * 255))
        })
    };
    (image(0), image(3))
}

/// Inverse of [`pack`]; channels are thresholded at 128.
pub fn unpack(a: &RgbImage, b: &RgbImage, image_id: impl Into<String>) -> Result<MaskSet> {
    if a.dimensions() != b.dimensions() {
        return Err(Error::shape(
            "unpack",
            format!("packed images are {:?} and {:?}", a.dimensions(), b.dimensions()),
        ));
    }
    let (w, h) = a.dimensions();
    let masks = std::array::from_fn(|i| {
        let src = if i < 3 { a } else { b };
        let c = i % 3;
        Bitmap {
            width: w,
            height: h,
            data: src.pixels().map(|p| threshold(p.0[c])).collect(),
        }
    });
    MaskSet::new(image_id, masks)
}

/// A lesion photo and its masks.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplePair {
    pub image: RgbImage,
    pub masks: MaskSet,
}

impl SamplePair {
    pub fn new(image: RgbImage, masks: MaskSet) -> Result<Self> {
        if image.dimensions() != masks.dims() {
            return Err(Error::shape(
                "sample",
                format!("photo {:?} vs masks {:?}", image.dimensions(), masks.dims()),
            ));
        }
        Ok(Self { image, masks })
    }

    pub fn id(&self) -> &str {
        &self.masks.image_id
    }

    /// Bilinear resize for the photo, nearest-neighbour for the masks.
    pub fn resized(&self, size: u32) -> Self {
        let image = if self.image.dimensions() == (size, size) {
            self.image.clone()
        } else {
            image::imageops::resize(&self.image, size, size, image::imageops::FilterType::Triangle)
        };
        Self {
            image,
            masks: self.masks.resize(size, size),
        }
    }
}

/// A sample in network coordinates: photo in `[-1,1]` and masks in `{-1,+1}`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelSample {
    pub id: String,
    /// `[3,H,W]`
    pub x: Tensor,
    /// `[6,H,W]`
    pub y: Tensor,
}

pub fn image_to_model_space(image: &RgbImage) -> Tensor {
    let (w, h) = image.dimensions();
    let plane = (w * h) as usize;
    let raw = image.as_raw();
    Tensor::from_fn(&[3, h as usize, w as usize], |i| {
        let (c, p) = (i / plane, i % plane);
        raw[p * 3 + c] as f32 / 127.5 - 1.0
    })
}

pub fn masks_to_model_space(masks: &MaskSet) -> Tensor {
    let (w, h) = masks.dims();
    let plane = (w * h) as usize;
    Tensor::from_fn(&[6, h as usize, w as usize], |i| {
        if masks.masks[i / plane].data[i % plane] != 0 {
            1.0
        } else {
            -1.0
        }
    })
}

pub fn to_model_space(pair: &SamplePair) -> ModelSample {
    ModelSample {
        id: pair.id().to_string(),
        x: image_to_model_space(&pair.image),
        y: masks_to_model_space(&pair.masks),
    }
}

/// Maps a `[3,H,W]` tensor in `[-1,1]` back to 8-bit RGB.
pub fn image_from_model_space(x: &Tensor) -> Result<RgbImage> {
    let (h, w) = match x.shape() {
        [3, h, w] => (*h, *w),
        s => return Err(Error::shape("image_from_model_space", format!("expected [3,H,W], got {s:?}"))),
    };
    let plane = h * w;
    let d = x.data();
    Ok(RgbImage::from_fn(w as u32, h as u32, |px, py| {
        let p = py as usize * w + px as usize;
        Rgb(std::array::from_fn(|c| {
            ((d[c * plane + p] + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
        }))
    }))
}
