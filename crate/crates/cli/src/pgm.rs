//! 16-bit binary PGM export for band maps. Values are scaled against a
//! caller-chosen maximum so that an estimate and its reference can
//! share one gray scale, and written big-endian per the PGM format.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use xrf_restore::Result;

/// Write `map` as a binary 16-bit PGM. `scale_max` maps to 65535;
/// values above it saturate, and a non-positive `scale_max` produces an
/// all-black image.
pub fn write_pgm16(map: &Array2<f64>, scale_max: f64, path: &Path) -> Result<()> {
    let (height, width) = map.dim();
    let mut bytes = Vec::with_capacity(32 + 2 * height * width);
    write!(&mut bytes, "P5\n{width} {height}\n65535\n").expect("in-memory write");
    for v in map.iter() {
        let level = if scale_max > 0.0 {
            (v / scale_max * 65535.0).round().clamp(0.0, 65535.0) as u16
        } else {
            0
        };
        bytes.extend_from_slice(&level.to_be_bytes());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}
