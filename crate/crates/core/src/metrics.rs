//! Evaluation metrics: MSE, PSNR, and Poisson negative log-likelihood
//! of an estimated rate volume, per volume and per channel band.
//!
//! The PNLL metric scores an estimate against observed counts, t·est −
//! counts·ln(t·est + ε) averaged over voxels; its minimum over
//! estimates is attained at the empirical rate counts/t, and that floor
//! is reported alongside the raw value. Band metrics compare per-pixel
//! channel-window sums, which for Poisson data are again Poisson
//! counts.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::objective::DEFAULT_LOG_EPS;
use crate::volume::{CountVolume, RateVolume};

/// Half-open channel window [lo, hi), standing in for an emission-line
/// band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Band {
    pub label: String,
    pub lo: usize,
    pub hi: usize,
}

impl Band {
    pub fn new(label: impl Into<String>, lo: usize, hi: usize) -> Self {
        Self {
            label: label.into(),
            lo,
            hi,
        }
    }

    fn check(&self, channels: usize) -> Result<()> {
        if self.lo >= self.hi {
            return Err(Error::Config(format!(
                "band '{}' is empty: [{}, {})",
                self.label, self.lo, self.hi
            )));
        }
        if self.hi > channels {
            return Err(Error::Config(format!(
                "band '{}' ends at {} but the volume has {channels} channels",
                self.label, self.hi
            )));
        }
        Ok(())
    }
}

fn check_same_dims(a: (usize, usize, usize), b: (usize, usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!(
            "volume shapes differ: {a:?} vs {b:?}"
        )));
    }
    Ok(())
}

/// Mean squared error over all voxels, summed in a fixed order.
pub fn mse(est: &RateVolume, gt: &RateVolume) -> Result<f64> {
    check_same_dims(est.dims(), gt.dims())?;
    let mut acc = 0.0;
    for (e, g) in est.rates.iter().zip(gt.rates.iter()) {
        let r = e - g;
        acc += r * r;
    }
    Ok(acc / est.rates.len() as f64)
}

fn psnr_from_mse(m: f64, peak: f64) -> f64 {
    if m == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (peak * peak / m).log10()
    }
}

/// Peak signal-to-noise ratio in dB; `peak` defaults to the ground
/// truth maximum. Infinite exactly when the MSE is zero.
pub fn psnr(est: &RateVolume, gt: &RateVolume, peak: Option<f64>) -> Result<f64> {
    let peak = match peak {
        Some(p) => p,
        None => gt.rates.iter().cloned().fold(0.0, f64::max),
    };
    if !(peak.is_finite() && peak > 0.0) {
        return Err(Error::Config(format!(
            "psnr peak must be positive and finite, got {peak}"
        )));
    }
    Ok(psnr_from_mse(mse(est, gt)?, peak))
}

/// Mean per-voxel Poisson negative log-likelihood of the estimated
/// rates under the observed counts.
pub fn pnll_metric(est: &RateVolume, counts: &CountVolume) -> Result<f64> {
    check_same_dims(est.dims(), counts.dims())?;
    let t = counts.dwell_s;
    let mut acc = 0.0;
    for (e, k) in est.rates.iter().zip(counts.counts.iter()) {
        let model = t * e;
        acc += model - f64::from(*k) * (model + DEFAULT_LOG_EPS).ln();
    }
    Ok(acc / est.rates.len() as f64)
}

/// Per-pixel sum of rates over the band's channels.
pub fn band_map(v: &RateVolume, band: &Band) -> Result<Array2<f64>> {
    let (height, width, channels) = v.dims();
    band.check(channels)?;
    let mut map = Array2::zeros((height, width));
    for h in 0..height {
        for w in 0..width {
            let mut acc = 0.0;
            for c in band.lo..band.hi {
                acc += v.rates[[h, w, c]];
            }
            map[[h, w]] = acc;
        }
    }
    Ok(map)
}

fn band_counts(x: &CountVolume, band: &Band) -> Array2<f64> {
    let (height, width, _) = x.dims();
    let mut map = Array2::zeros((height, width));
    for h in 0..height {
        for w in 0..width {
            let mut acc = 0.0;
            for c in band.lo..band.hi {
                acc += f64::from(x.counts[[h, w, c]]);
            }
            map[[h, w]] = acc;
        }
    }
    map
}

fn map_mse(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b.iter()) {
        let r = x - y;
        acc += r * r;
    }
    acc / a.len() as f64
}

fn map_pnll(est: &Array2<f64>, counts: &Array2<f64>, t: f64) -> f64 {
    let mut acc = 0.0;
    for (e, k) in est.iter().zip(counts.iter()) {
        let model = t * e;
        acc += model - k * (model + DEFAULT_LOG_EPS).ln();
    }
    acc / est.len() as f64
}

/// PSNR values serialize as a JSON number, or the string "inf" for the
/// zero-error case, which plain JSON cannot represent as a number.
mod serde_db {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
        if v.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(*v)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Raw::Text(t) => Err(serde::de::Error::custom(format!(
                "expected a number or \"inf\", got \"{t}\""
            ))),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BandEval {
    pub label: String,
    pub mse: f64,
    #[serde(with = "serde_db")]
    pub psnr: f64,
    pub pnll: f64,
}

/// Volume-level metrics plus the per-band table. `pnll_floor` is the
/// metric of the empirical rate counts/t itself, the minimum any
/// estimate can attain on this data.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EvalResult {
    pub mse: f64,
    #[serde(with = "serde_db")]
    pub psnr: f64,
    pub pnll: f64,
    pub pnll_floor: f64,
    pub bands: Vec<BandEval>,
}

/// Score an estimate against reference counts: the ground-truth rates
/// are the empirical rates of `reference`, and PNLL is taken directly
/// against its counts.
pub fn evaluate(
    est: &RateVolume,
    reference: &CountVolume,
    bands: &[Band],
) -> Result<EvalResult> {
    check_same_dims(est.dims(), reference.dims())?;
    let gt = crate::sim::ground_truth_rates(reference);
    let t = reference.dwell_s;

    let full_mse = mse(est, &gt)?;
    let full_psnr = psnr(est, &gt, None)?;
    let full_pnll = pnll_metric(est, reference)?;
    let floor = pnll_metric(&gt, reference)?;

    let mut table = Vec::with_capacity(bands.len());
    for band in bands {
        let est_map = band_map(est, band)?;
        let gt_map = band_map(&gt, band)?;
        let counts_map = band_counts(reference, band);
        let band_mse = map_mse(&est_map, &gt_map);
        let peak = gt_map.iter().cloned().fold(0.0, f64::max);
        if !(peak > 0.0) {
            return Err(Error::Config(format!(
                "band '{}' has an all-zero reference map; psnr is undefined",
                band.label
            )));
        }
        table.push(BandEval {
            label: band.label.clone(),
            mse: band_mse,
            psnr: psnr_from_mse(band_mse, peak),
            pnll: map_pnll(&est_map, &counts_map, t),
        });
    }

    Ok(EvalResult {
        mse: full_mse,
        psnr: full_psnr,
        pnll: full_pnll,
        pnll_floor: floor,
        bands: table,
    })
}
