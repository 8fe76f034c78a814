//! Active learning for sound event detection.
//!
//! Pipeline: [`audio`] → [`features`] → [`embeddings`] → [`segmentation`]
//! produce candidate segments; [`selection`] picks batches for annotation;
//! [`model`] trains an attention-pooled detector on partially labeled
//! recordings; [`metrics`] scores detections; [`synth`] generates labeled
//! corpora and simulates the annotator; [`experiment`] drives the loop.

pub mod audio;
pub mod binio;
pub mod embeddings;
pub mod error;
pub mod experiment;
pub mod features;
pub mod labels;
pub mod metrics;
pub mod model;
pub mod segmentation;
pub mod selection;
pub mod synth;

pub use error::{Error, Result};

/// Order-preserving map, parallel when the `parallel` feature is on.
pub(crate) fn par_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> R + Sync + Send) -> Vec<R> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// Independent sub-seed for `stream` under `seed` (splitmix64 mixing).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    mix(seed ^ mix(stream))
}
