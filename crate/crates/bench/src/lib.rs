//! Shared inputs for the criterion benchmarks.

use halosep_core::synth::reference_texture;
use halosep_core::{apply_halo, synth_halo, HaloParams, ImageF, LightCenter, Result};

/// A textured `size x size` scene under a Gaussian halo, and the halo center.
pub fn lit_scene(size: usize, seed: u64) -> Result<(ImageF, LightCenter)> {
    let scene = reference_texture(size, size, seed)?;
    let center = LightCenter::new(size as f64 * 0.45, size as f64 * 0.55);
    let halo = synth_halo(size, size, &HaloParams::gaussian(size as f64 * 0.3, 0.25), center)?;
    Ok((apply_halo(&scene, &halo)?, center))
}
