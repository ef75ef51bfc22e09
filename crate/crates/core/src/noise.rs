//! Reproducible Gaussian noise per path.
//!
//! Each path owns a ChaCha20 stream selected by `(seed, path_id)`, so a path's
//! draws never depend on worker count or on the order in which paths run.
//! A slab holds, in order: `n` standard normals for the initial state, then
//! for each step `r` increments of `w` followed by `r̃` increments of `w̃`,
//! each scaled to variance `dt`.

use alloc::vec::Vec;

use rand_chacha::ChaCha20Rng;
use rand_core::SeedableRng;
use rand_distr::{Distribution, StandardNormal};

/// Independent auxiliary streams live above this stream offset so they never
/// collide with path streams.
pub const AUX_STREAM_BASE: u64 = 1 << 62;

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSlab {
    pub seed: u64,
    pub path_id: u64,
    pub steps: usize,
    pub state_noise: usize,
    pub obs_noise: usize,
    pub x0: Vec<f64>,
    buf: Vec<f64>,
}

/// RNG for `(seed, stream)`.
pub fn stream_rng(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

impl NoiseSlab {
    pub fn empty(steps: usize, n: usize, r: usize, rt: usize) -> Self {
        Self {
            seed: 0,
            path_id: 0,
            steps,
            state_noise: r,
            obs_noise: rt,
            x0: alloc::vec![0.0; n],
            buf: alloc::vec![0.0; steps * (r + rt)],
        }
    }

    /// Refills the slab in place for `(seed, path_id)`.
    pub fn fill(&mut self, seed: u64, path_id: u64, dt: f64) {
        let mut rng = stream_rng(seed, path_id);
        self.seed = seed;
        self.path_id = path_id;
        for v in self.x0.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        let s = libm::sqrt(dt);
        for v in self.buf.iter_mut() {
            let z: f64 = StandardNormal.sample(&mut rng);
            *v = s * z;
        }
    }

    pub fn dw(&self, step: usize) -> &[f64] {
        let w = self.state_noise + self.obs_noise;
        &self.buf[step * w..step * w + self.state_noise]
    }

    pub fn dwt(&self, step: usize) -> &[f64] {
        let w = self.state_noise + self.obs_noise;
        &self.buf[step * w + self.state_noise..(step + 1) * w]
    }
}

/// Fresh slab for `(seed, path_id)` on `steps` steps of size `dt`.
pub fn brownian_increments(
    seed: u64,
    path_id: u64,
    steps: usize,
    dt: f64,
    n: usize,
    r: usize,
    rt: usize,
) -> NoiseSlab {
    let mut s = NoiseSlab::empty(steps, n, r, rt);
    s.fill(seed, path_id, dt);
    s
}
