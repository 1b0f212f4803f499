//! Fixtures shared by the benchmarks.

use usln::data::synthetic::{clean_image, Degradation};
use usln::Tensor;

/// A degraded synthetic scene of the given size.
pub fn scene(size: usize, seed: u64) -> Tensor {
    Degradation::default().apply(&clean_image(seed, size, size))
}
