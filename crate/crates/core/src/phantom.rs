//! Synthetic ground-truth scenes: a planted spectral dictionary,
//! piecewise-constant abundances over a Voronoi partition, and an RGB
//! image whose edges track the abundance edges to a configurable
//! degree.
//!
//! Atoms are sums of one to three narrow Gaussian peaks on the channel
//! axis with pairwise-distinct primary peak channels. Every region
//! mixes a sparse random subset of atoms, and the whole volume is
//! scaled so its largest rate equals `peak_rate`. Generation is a pure
//! function of the config.

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::rng::Mix64;
use crate::volume::{Abundance, Dictionary, RateVolume, RgbImage};

#[derive(Clone, Copy, Debug)]
pub struct PhantomConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Number of planted atoms; at most `channels`.
    pub m_true: usize,
    /// Number of piecewise-constant Voronoi zones; at most H·W.
    pub regions: usize,
    /// The maximum rate in the generated volume.
    pub peak_rate: f64,
    /// Probability that an abundance boundary is visible in the RGB
    /// image; 1 plants an RGB edge on every boundary, 0 merges all
    /// region colors into one.
    pub rgb_correlation: f64,
    pub seed: u64,
}

impl PhantomConfig {
    fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.channels == 0 {
            return Err(Error::Config("phantom dimensions must be positive".into()));
        }
        if self.m_true == 0 || self.m_true > self.channels {
            return Err(Error::Config(format!(
                "m_true must lie in [1, channels]; got {} with {} channels",
                self.m_true, self.channels
            )));
        }
        if self.regions == 0 || self.regions > self.height * self.width {
            return Err(Error::Config(format!(
                "regions must lie in [1, H*W]; got {} on a {}x{} grid",
                self.regions, self.height, self.width
            )));
        }
        if !(self.peak_rate.is_finite() && self.peak_rate > 0.0) {
            return Err(Error::Config(format!(
                "peak_rate must be positive, got {}",
                self.peak_rate
            )));
        }
        if !(0.0..=1.0).contains(&self.rgb_correlation) {
            return Err(Error::Config(format!(
                "rgb_correlation must lie in [0, 1], got {}",
                self.rgb_correlation
            )));
        }
        Ok(())
    }
}

/// Draw `k` distinct values from 0..n by a partial shuffle.
fn sample_distinct(rng: &mut Mix64, n: usize, k: usize) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + rng.next_index(n - i);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

fn gaussian_peak_atoms(rng: &mut Mix64, channels: usize, m_true: usize) -> Array2<f64> {
    let primary = sample_distinct(rng, channels, m_true);
    let mut atoms = Array2::zeros((channels, m_true));
    for (j, &peak) in primary.iter().enumerate() {
        // One unit-amplitude primary line plus up to two weaker ones.
        let mut lines = vec![(peak as f64, 1.0, 0.5 + rng.next_f64())];
        let extras = rng.next_index(3);
        for _ in 0..extras {
            let mu = rng.next_index(channels) as f64;
            let amp = 0.15 + 0.3 * rng.next_f64();
            let sigma = 0.5 + rng.next_f64();
            lines.push((mu, amp, sigma));
        }
        for c in 0..channels {
            let mut v = 0.0;
            for &(mu, amp, sigma) in &lines {
                let z = (c as f64 - mu) / sigma;
                v += amp * (-0.5 * z * z).exp();
            }
            atoms[[c, j]] = v;
        }
    }
    atoms
}

/// Nearest planted site per pixel; ties go to the lowest site index.
fn voronoi_regions(
    rng: &mut Mix64,
    height: usize,
    width: usize,
    regions: usize,
) -> Vec<usize> {
    let sites: Vec<(f64, f64)> = sample_distinct(rng, height * width, regions)
        .into_iter()
        .map(|p| ((p / width) as f64, (p % width) as f64))
        .collect();
    let mut region_of = vec![0usize; height * width];
    for h in 0..height {
        for w in 0..width {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (r, &(sh, sw)) in sites.iter().enumerate() {
                let d = (h as f64 - sh).powi(2) + (w as f64 - sw).powi(2);
                if d < best_d {
                    best_d = d;
                    best = r;
                }
            }
            region_of[h * width + w] = best;
        }
    }
    region_of
}

/// Sparse non-negative mixing weights per region: each atom joins with
/// probability one half, and at least one always joins.
fn region_weights(rng: &mut Mix64, m_true: usize, regions: usize) -> Array2<f64> {
    let mut weights = Array2::zeros((m_true, regions));
    for r in 0..regions {
        let mut any = false;
        for j in 0..m_true {
            if rng.next_f64() < 0.5 {
                weights[[j, r]] = 0.2 + 0.8 * rng.next_f64();
                any = true;
            }
        }
        if !any {
            let j = rng.next_index(m_true);
            weights[[j, r]] = 0.2 + 0.8 * rng.next_f64();
        }
    }
    weights
}

struct UnionFind(Vec<usize>);

impl UnionFind {
    fn new(n: usize) -> Self {
        Self((0..n).collect())
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.0[x] != x {
            self.0[x] = self.0[self.0[x]];
            x = self.0[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize) {
        let (ra, rb) = (self.find(a), self.find(b));
        let (lo, hi) = (ra.min(rb), ra.max(rb));
        self.0[hi] = lo;
    }
}

fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h.fract() * 6.0;
    let i = h6.floor() as i64;
    let f = h6 - i as f64;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i.rem_euclid(6) {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Color the regions. Adjacent regions keep distinct colors with
/// probability `rgb_correlation` per boundary; otherwise their colors
/// merge (transitively), hiding that abundance edge from the image.
fn region_colors(
    rng: &mut Mix64,
    region_of: &[usize],
    width: usize,
    regions: usize,
    rgb_correlation: f64,
) -> Vec<[f64; 3]> {
    let height = region_of.len() / width;
    let mut pairs = std::collections::BTreeSet::new();
    for h in 0..height {
        for w in 0..width {
            let r = region_of[h * width + w];
            if w + 1 < width {
                let other = region_of[h * width + w + 1];
                if other != r {
                    pairs.insert((r.min(other), r.max(other)));
                }
            }
            if h + 1 < height {
                let other = region_of[(h + 1) * width + w];
                if other != r {
                    pairs.insert((r.min(other), r.max(other)));
                }
            }
        }
    }
    let mut groups = UnionFind::new(regions);
    for &(a, b) in &pairs {
        if rng.next_f64() < 1.0 - rgb_correlation {
            groups.union(a, b);
        }
    }

    // Dense group index in ascending root order, then golden-ratio hue
    // spacing so every group gets a distinct color.
    let roots: Vec<usize> = (0..regions).map(|r| groups.find(r)).collect();
    let mut sorted: Vec<usize> = {
        let mut uniq = roots.clone();
        uniq.sort_unstable();
        uniq.dedup();
        uniq
    };
    sorted.shrink_to_fit();
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let hue0 = rng.next_f64();
    (0..regions)
        .map(|r| {
            let g = sorted.binary_search(&roots[r]).unwrap();
            hsv_to_rgb(hue0 + g as f64 * INV_PHI, 0.65, 0.85)
        })
        .collect()
}

/// Generate a scene: rates with an exact rank-`m_true` factorization,
/// the matching RGB image, and the planted factors themselves.
pub fn make_phantom(
    cfg: &PhantomConfig,
) -> Result<(RateVolume, RgbImage, Dictionary, Abundance)> {
    cfg.validate()?;
    let mut rng = Mix64::new(cfg.seed);
    let (height, width) = (cfg.height, cfg.width);
    let n = height * width;

    let atoms = gaussian_peak_atoms(&mut rng, cfg.channels, cfg.m_true);
    let region_of = voronoi_regions(&mut rng, height, width, cfg.regions);
    let weights = region_weights(&mut rng, cfg.m_true, cfg.regions);

    let mut a = Array2::zeros((cfg.m_true, n));
    for (pix, &r) in region_of.iter().enumerate() {
        for j in 0..cfg.m_true {
            a[[j, pix]] = weights[[j, r]];
        }
    }

    // Scale the abundances so the brightest voxel hits peak_rate
    // exactly; the planted dictionary stays as drawn.
    let rates_mat = atoms.dot(&a);
    let max = rates_mat.iter().cloned().fold(0.0, f64::max);
    debug_assert!(max > 0.0, "every region mixes at least one atom");
    a.mapv_inplace(|v| v * (cfg.peak_rate / max));

    let colors = region_colors(&mut rng, &region_of, width, cfg.regions, cfg.rgb_correlation);
    let mut pixels = Array3::zeros((height, width, 3));
    for h in 0..height {
        for w in 0..width {
            let rgb = colors[region_of[h * width + w]];
            for (c, v) in rgb.iter().enumerate() {
                pixels[[h, w, c]] = *v;
            }
        }
    }

    let d = Dictionary::new(atoms)?;
    let a = Abundance::new(a)?;
    let rates = RateVolume::from_matrix(&d.atoms.dot(&a.data), height, width)?;
    let img = RgbImage::new(pixels)?;
    Ok((rates, img, d, a))
}
