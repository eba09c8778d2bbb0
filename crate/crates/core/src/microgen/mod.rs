//! Periodic two-phase microstructure generation: Latin-hypercube descriptor
//! sampling, random sequential adsorption and rasterization.

mod dataset;
mod lhs;
mod raster;
mod rsa;

pub use dataset::{
    generate_dataset, record_id, CompositeKind, DatasetManifest, GenConfig, GenerationOutput,
    ManifestRecord, MANIFEST_FILE,
};
pub use lhs::{latin_hypercube, lhs_sample, DescriptorRanges, Range};
pub use raster::{rasterize, RasterImage, INCLUSION_PIXEL, MATRIX_PIXEL};
pub use rsa::{
    circle_count, ellipses_overlap, rsa_place, rsa_place_circles, size_fibers, with_reseed,
    Ellipse, Rve, BOUNDARY_SAMPLES, MAX_RESEEDS,
};

pub(crate) use raster::{write_grid_csv, write_png};

use serde::{Deserialize, Serialize};

/// Sampled microstructure parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DescriptorPoint {
    pub n_particles: u32,
    pub aspect_ratio: f64,
    pub volume_fraction: f64,
}

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for item `index` under `base`, independent of generation order.
pub fn derive_seed(base: u64, index: u64) -> u64 {
    mix(base ^ mix(index))
}
