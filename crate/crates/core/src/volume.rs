//! Domain types for scan volumes, dictionaries, and abundances.
//!
//! A scan volume is indexed (h, w, c): spatial row, spatial column,
//! spectral channel. The matrix views used by the factorization flatten
//! the spatial grid row-major, so pixel n = h * width + w, and place
//! channels on rows: a volume (H, W, C) becomes a matrix (C, N) with
//! N = H * W.

use ndarray::{Array2, Array3, ShapeBuilder};

use crate::error::{Error, Result};

/// Row-major correspondence between grid coordinates and pixel columns.
#[derive(Clone, Copy, Debug)]
pub struct PixelOrder {
    pub height: usize,
    pub width: usize,
}

impl PixelOrder {
    pub fn new(height: usize, width: usize) -> Self {
        Self { height, width }
    }

    #[inline(always)]
    pub fn index(&self, h: usize, w: usize) -> usize {
        debug_assert!(h < self.height && w < self.width);
        h * self.width + w
    }

    #[inline(always)]
    pub fn coords(&self, n: usize) -> (usize, usize) {
        debug_assert!(n < self.len());
        (n / self.width, n % self.width)
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Photon counts from a scan, with the dwell time that produced them.
#[derive(Clone, Debug)]
pub struct CountVolume {
    /// Counts, shape (H, W, C).
    pub counts: Array3<u32>,
    /// Dwell time per pixel in seconds; strictly positive.
    pub dwell_s: f64,
}

impl CountVolume {
    pub fn new(counts: Array3<u32>, dwell_s: f64) -> Result<Self> {
        if !(dwell_s.is_finite() && dwell_s > 0.0) {
            return Err(Error::Config(format!(
                "dwell time must be finite and positive, got {dwell_s}"
            )));
        }
        Ok(Self { counts, dwell_s })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.counts.dim()
    }

    pub fn order(&self) -> PixelOrder {
        let (h, w, _) = self.counts.dim();
        PixelOrder::new(h, w)
    }

    /// Counts as a (C, N) matrix of f64, pixels in row-major order.
    pub fn to_matrix(&self) -> Array2<f64> {
        let (height, width, channels) = self.counts.dim();
        let n = height * width;
        let mut m = Array2::zeros((channels, n));
        for h in 0..height {
            for w in 0..width {
                let col = h * width + w;
                for c in 0..channels {
                    m[[c, col]] = f64::from(self.counts[[h, w, c]]);
                }
            }
        }
        m
    }
}

/// Photon rates in photons per second, shape (H, W, C).
#[derive(Clone, Debug)]
pub struct RateVolume {
    pub rates: Array3<f64>,
}

impl RateVolume {
    pub fn new(rates: Array3<f64>) -> Result<Self> {
        if rates.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Invariant(
                "rates must be finite and non-negative".into(),
            ));
        }
        Ok(Self { rates })
    }

    pub fn dims(&self) -> (usize, usize, usize) {
        self.rates.dim()
    }

    pub fn order(&self) -> PixelOrder {
        let (h, w, _) = self.rates.dim();
        PixelOrder::new(h, w)
    }

    pub fn to_matrix(&self) -> Array2<f64> {
        let (height, width, channels) = self.rates.dim();
        let n = height * width;
        let mut m = Array2::zeros((channels, n));
        for h in 0..height {
            for w in 0..width {
                let col = h * width + w;
                for c in 0..channels {
                    m[[c, col]] = self.rates[[h, w, c]];
                }
            }
        }
        m
    }

    /// Rebuild a volume from a (C, N) matrix and the grid shape.
    pub fn from_matrix(m: &Array2<f64>, height: usize, width: usize) -> Result<Self> {
        let (channels, n) = m.dim();
        if n != height * width {
            return Err(Error::ShapeMismatch(format!(
                "matrix has {n} columns but grid is {height}x{width}"
            )));
        }
        let mut rates = Array3::zeros((height, width, channels));
        for h in 0..height {
            for w in 0..width {
                let col = h * width + w;
                for c in 0..channels {
                    rates[[h, w, c]] = m[[c, col]];
                }
            }
        }
        Self::new(rates)
    }
}

/// Registered RGB photograph, shape (H, W, 3), values in [0, 1].
#[derive(Clone, Debug)]
pub struct RgbImage {
    pub pixels: Array3<f64>,
}

impl RgbImage {
    pub fn new(pixels: Array3<f64>) -> Result<Self> {
        let (_, _, c) = pixels.dim();
        if c != 3 {
            return Err(Error::ShapeMismatch(format!(
                "rgb image needs 3 channels, got {c}"
            )));
        }
        if pixels.iter().any(|v| !v.is_finite() || *v < 0.0 || *v > 1.0) {
            return Err(Error::Invariant(
                "rgb values must be finite and within [0, 1]".into(),
            ));
        }
        Ok(Self { pixels })
    }

    pub fn dims(&self) -> (usize, usize) {
        let (h, w, _) = self.pixels.dim();
        (h, w)
    }
}

/// Spectral dictionary, shape (C, M): one column per atom.
#[derive(Clone, Debug)]
pub struct Dictionary {
    pub atoms: Array2<f64>,
}

impl Dictionary {
    pub fn new(atoms: Array2<f64>) -> Result<Self> {
        if atoms.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Invariant(
                "dictionary entries must be finite and non-negative".into(),
            ));
        }
        Ok(Self { atoms })
    }

    pub fn channels(&self) -> usize {
        self.atoms.nrows()
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.ncols()
    }
}

/// Abundance matrix, shape (M, N), with an activity mask of the same
/// shape. Entries whose mask is false are pruned: held at exactly zero
/// and excluded from gradient updates.
#[derive(Clone, Debug)]
pub struct Abundance {
    pub data: Array2<f64>,
    pub active: Array2<bool>,
}

impl Abundance {
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Invariant(
                "abundances must be finite and non-negative".into(),
            ));
        }
        let active = Array2::from_elem(data.dim(), true);
        Ok(Self { data, active })
    }

    pub fn with_mask(data: Array2<f64>, active: Array2<bool>) -> Result<Self> {
        if data.dim() != active.dim() {
            return Err(Error::ShapeMismatch(format!(
                "abundance {:?} vs mask {:?}",
                data.dim(),
                active.dim()
            )));
        }
        let mut out = Self::new(data)?;
        out.active = active;
        out.enforce_mask();
        Ok(out)
    }

    /// Zero every inactive entry.
    pub fn enforce_mask(&mut self) {
        ndarray::Zip::from(&mut self.data)
            .and(&self.active)
            .for_each(|v, &a| {
                if !a {
                    *v = 0.0;
                }
            });
    }

    pub fn n_atoms(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_pixels(&self) -> usize {
        self.data.ncols()
    }

    /// Fraction of entries still active.
    pub fn active_fraction(&self) -> f64 {
        let total = self.active.len();
        if total == 0 {
            return 0.0;
        }
        let on = self.active.iter().filter(|&&a| a).count();
        on as f64 / total as f64
    }
}

/// View one abundance row as its (H, W) spatial plane, row-major.
pub fn abundance_plane(abund: &Abundance, atom: usize, order: PixelOrder) -> Array2<f64> {
    let row = abund.data.row(atom);
    Array2::from_shape_vec(
        (order.height, order.width).strides((order.width, 1)),
        row.to_vec(),
    )
    .expect("row length equals height * width")
}
