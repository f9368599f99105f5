//! Generator and discriminator networks plus their parameter storage.

pub mod checkpoint;
pub mod config;
pub mod discriminator;
pub mod generator;
pub mod params;

pub use config::NetConfig;
pub use discriminator::{Discriminator, NormStats};
pub use generator::Generator;
pub use params::{init_params, Bound, ParamStore};
