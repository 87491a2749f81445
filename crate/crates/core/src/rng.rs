//! Deterministic random number generation.
//!
//! Two flavors share the same 64-bit mixing core:
//!
//! - [`Mix64`]: a sequential splitmix64 stream, used where a plain seeded
//!   RNG is enough (clustering, phantom generation).
//! - [`VoxelRng`]: a counter-based stream keyed by (seed, h, w, c), so a
//!   voxel's draws depend only on its coordinates, never on traversal or
//!   thread order.
//!
//! Not cryptographically secure; never use for secrets.

/// splitmix64 finalizer: a full-period bijective mix of a 64-bit word.
#[inline(always)]
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

/// Sequential splitmix64 generator.
#[derive(Clone, Debug)]
pub struct Mix64 {
    state: u64,
}

impl Mix64 {
    pub fn new(seed: u64) -> Self {
        Self { state: seed }
    }

    #[inline(always)]
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN);
        mix(self.state)
    }

    /// Uniform in [0, 1).
    #[inline(always)]
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in (0, 1]; safe as a logarithm argument.
    #[inline(always)]
    pub fn next_f64_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n). Uses the widening-multiply map; the
    /// bias is below 2^-64 * n and irrelevant at simulation scale.
    #[inline(always)]
    pub fn next_index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (((self.next_u64() as u128) * (n as u128)) >> 64) as usize
    }

    /// Uniform in [lo, hi).
    #[inline(always)]
    pub fn next_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }
}

/// Counter-based stream for one voxel: the starting counter is a hash of
/// (seed, h, w, c), after which draws advance a private splitmix64 stream.
/// Streams for distinct voxels are disjoint except with probability
/// ~(draws * voxels)^2 / 2^64, negligible at any realistic scan size.
#[derive(Clone, Debug)]
pub struct VoxelRng {
    inner: Mix64,
}

impl VoxelRng {
    pub fn new(seed: u64, h: usize, w: usize, c: usize) -> Self {
        let mut k = seed;
        k = mix(k ^ (h as u64).wrapping_mul(0xD6E8_FEB8_6659_FD93));
        k = mix(k ^ (w as u64).wrapping_mul(0xCA5A_8263_9512_1157));
        k = mix(k ^ (c as u64).wrapping_mul(GOLDEN));
        Self { inner: Mix64::new(k) }
    }

    #[inline(always)]
    pub fn next_f64(&mut self) -> f64 {
        self.inner.next_f64()
    }

    #[inline(always)]
    pub fn next_f64_open(&mut self) -> f64 {
        self.inner.next_f64_open()
    }
}
