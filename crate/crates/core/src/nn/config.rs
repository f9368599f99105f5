use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SUPPORTED_IMAGE_SIZES: [usize; 4] = [32, 64, 128, 256];

/// Leaky-ReLU slope used throughout both networks.
pub const LEAKY_SLOPE: f64 = 0.2;
/// Batch-norm epsilon.
pub const NORM_EPS: f64 = 1e-5;
/// Dropout rate of the first three decoder blocks; this dropout is the
/// generator's only noise source.
pub const DROPOUT_RATE: f64 = 0.5;
/// Number of leading decoder blocks with dropout.
pub const DROPOUT_BLOCKS: usize = 3;

/// Shape hyper-parameters shared by the generator and discriminator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetConfig {
    pub image_size: usize,
    pub in_channels: usize,
    pub mask_channels: usize,
    pub base_width: usize,
    pub disc_out_channels: usize,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            image_size: 256,
            in_channels: 3,
            mask_channels: 6,
            base_width: 64,
            disc_out_channels: 1,
        }
    }
}

impl NetConfig {
    pub fn new(image_size: usize, disc_out_channels: usize) -> Result<Self> {
        let cfg = Self {
            image_size,
            disc_out_channels,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_base_width(mut self, base_width: usize) -> Self {
        self.base_width = base_width;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !SUPPORTED_IMAGE_SIZES.contains(&self.image_size) {
            return Err(Error::Config(format!(
                "image size {} not supported; expected one of {SUPPORTED_IMAGE_SIZES:?}",
                self.image_size
            )));
        }
        if self.in_channels != 3 {
            return Err(Error::Config(format!(
                "input images must have 3 channels, got {}",
                self.in_channels
            )));
        }
        if self.mask_channels != 6 {
            return Err(Error::Config(format!(
                "mask stack must have 6 channels, got {}",
                self.mask_channels
            )));
        }
        if ![1, 6].contains(&self.disc_out_channels) {
            return Err(Error::Config(format!(
                "discriminator output channels must be 1 or 6, got {}",
                self.disc_out_channels
            )));
        }
        if self.base_width == 0 {
            return Err(Error::Config("base width must be positive".into()));
        }
        Ok(())
    }

    /// Number of stride-2 encoder stages needed to reach a 1×1 bottleneck.
    pub fn depth(&self) -> usize {
        self.image_size.trailing_zeros() as usize
    }

    /// Spatial side of the discriminator's score map.
    pub fn patch_grid(&self) -> usize {
        self.image_size / 8 - 2
    }
}
