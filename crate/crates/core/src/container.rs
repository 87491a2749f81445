//! XRFC v1 container I/O.
//!
//! Layout: 8-byte magic `XRFC0001`, a 4-byte little-endian header length
//! L, a UTF-8 JSON header of L bytes, the raw little-endian payload, and
//! a trailing 8-byte CRC-64 (XZ polynomial) of the payload.
//!
//! The header carries {kind, dims, dwell_s (counts only), dtype, order}.
//! Volumes serialize channel-fastest (c innermost, then w, then h);
//! matrices serialize row-major. Abundance payloads append one mask byte
//! per entry (1 = active) after the coefficient data.
//!
//! write∘read is bit-for-bit identity for every kind.

use std::fs;
use std::path::Path;

use crc::{Crc, CRC_64_XZ};
use ndarray::{Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::volume::{Abundance, CountVolume, Dictionary, RateVolume, RgbImage};

const MAGIC: &[u8; 8] = b"XRFC0001";
const ORDER: &str = "h,w,c-c-fastest";
const CRC64: Crc<u64> = Crc::<u64>::new(&CRC_64_XZ);

/// Any object an XRFC file can hold.
#[derive(Clone, Debug)]
pub enum Container {
    Counts(CountVolume),
    Rates(RateVolume),
    Rgb(RgbImage),
    Dict(Dictionary),
    Abund(Abundance),
}

impl Container {
    pub fn kind(&self) -> &'static str {
        match self {
            Container::Counts(_) => "counts",
            Container::Rates(_) => "rates",
            Container::Rgb(_) => "rgb",
            Container::Dict(_) => "dict",
            Container::Abund(_) => "abund",
        }
    }

    pub fn into_counts(self) -> Result<CountVolume> {
        match self {
            Container::Counts(v) => Ok(v),
            other => Err(Error::Format(format!(
                "expected counts container, found {}",
                other.kind()
            ))),
        }
    }

    pub fn into_rates(self) -> Result<RateVolume> {
        match self {
            Container::Rates(v) => Ok(v),
            other => Err(Error::Format(format!(
                "expected rates container, found {}",
                other.kind()
            ))),
        }
    }

    pub fn into_rgb(self) -> Result<RgbImage> {
        match self {
            Container::Rgb(v) => Ok(v),
            other => Err(Error::Format(format!(
                "expected rgb container, found {}",
                other.kind()
            ))),
        }
    }

    pub fn into_dict(self) -> Result<Dictionary> {
        match self {
            Container::Dict(v) => Ok(v),
            other => Err(Error::Format(format!(
                "expected dict container, found {}",
                other.kind()
            ))),
        }
    }

    pub fn into_abund(self) -> Result<Abundance> {
        match self {
            Container::Abund(v) => Ok(v),
            other => Err(Error::Format(format!(
                "expected abund container, found {}",
                other.kind()
            ))),
        }
    }
}

impl From<CountVolume> for Container {
    fn from(v: CountVolume) -> Self {
        Container::Counts(v)
    }
}
impl From<RateVolume> for Container {
    fn from(v: RateVolume) -> Self {
        Container::Rates(v)
    }
}
impl From<RgbImage> for Container {
    fn from(v: RgbImage) -> Self {
        Container::Rgb(v)
    }
}
impl From<Dictionary> for Container {
    fn from(v: Dictionary) -> Self {
        Container::Dict(v)
    }
}
impl From<Abundance> for Container {
    fn from(v: Abundance) -> Self {
        Container::Abund(v)
    }
}

/// Field order here fixes the byte layout of the serialized header.
#[derive(Serialize, Deserialize)]
struct Header {
    kind: String,
    dims: Vec<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dwell_s: Option<f64>,
    dtype: String,
    order: String,
}

fn push_f64s<'a>(payload: &mut Vec<u8>, values: impl Iterator<Item = &'a f64>) {
    for v in values {
        payload.extend_from_slice(&v.to_le_bytes());
    }
}

fn encode(obj: &Container) -> (Header, Vec<u8>) {
    let mut payload = Vec::new();
    let (dims, dwell_s, dtype) = match obj {
        Container::Counts(v) => {
            for c in v.counts.iter() {
                payload.extend_from_slice(&c.to_le_bytes());
            }
            let (h, w, c) = v.counts.dim();
            (vec![h, w, c], Some(v.dwell_s), "u32")
        }
        Container::Rates(v) => {
            push_f64s(&mut payload, v.rates.iter());
            let (h, w, c) = v.rates.dim();
            (vec![h, w, c], None, "f64")
        }
        Container::Rgb(v) => {
            push_f64s(&mut payload, v.pixels.iter());
            let (h, w, c) = v.pixels.dim();
            (vec![h, w, c], None, "f64")
        }
        Container::Dict(v) => {
            push_f64s(&mut payload, v.atoms.iter());
            let (c, m) = v.atoms.dim();
            (vec![c, m], None, "f64")
        }
        Container::Abund(v) => {
            push_f64s(&mut payload, v.data.iter());
            for &a in v.active.iter() {
                payload.push(u8::from(a));
            }
            let (m, n) = v.data.dim();
            (vec![m, n], None, "f64")
        }
    };
    let header = Header {
        kind: obj.kind().to_string(),
        dims,
        dwell_s,
        dtype: dtype.to_string(),
        order: ORDER.to_string(),
    };
    (header, payload)
}

pub fn write_container(obj: &Container, path: &Path) -> Result<()> {
    let (header, payload) = encode(obj);
    let header_bytes = serde_json::to_vec(&header)
        .map_err(|e| Error::Format(format!("header serialization failed: {e}")))?;
    let mut bytes =
        Vec::with_capacity(MAGIC.len() + 4 + header_bytes.len() + payload.len() + 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&u32::try_from(header_bytes.len()).unwrap().to_le_bytes());
    bytes.extend_from_slice(&header_bytes);
    bytes.extend_from_slice(&payload);
    bytes.extend_from_slice(&CRC64.checksum(&payload).to_le_bytes());
    fs::write(path, bytes)?;
    Ok(())
}

fn take_f64s(payload: &[u8], count: usize) -> Vec<f64> {
    (0..count)
        .map(|i| f64::from_le_bytes(payload[8 * i..8 * i + 8].try_into().unwrap()))
        .collect()
}

fn dims3(dims: &[usize]) -> Result<(usize, usize, usize)> {
    match dims {
        [h, w, c] => Ok((*h, *w, *c)),
        other => Err(Error::Format(format!(
            "expected 3 dims for a volume, got {}",
            other.len()
        ))),
    }
}

fn dims2(dims: &[usize]) -> Result<(usize, usize)> {
    match dims {
        [r, c] => Ok((*r, *c)),
        other => Err(Error::Format(format!(
            "expected 2 dims for a matrix, got {}",
            other.len()
        ))),
    }
}

pub fn read_container(path: &Path) -> Result<Container> {
    let bytes = fs::read(path)?;
    if bytes.len() < MAGIC.len() + 4 {
        return Err(Error::Format("file shorter than magic and length".into()));
    }
    if &bytes[..8] != MAGIC {
        return Err(Error::Format("bad magic, not an XRFC v1 file".into()));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let header_end = 12 + header_len;
    if bytes.len() < header_end + 8 {
        return Err(Error::Format("truncated header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[12..header_end])
        .map_err(|e| Error::Format(format!("malformed header: {e}")))?;
    if header.order != ORDER {
        return Err(Error::Format(format!(
            "unsupported element order {:?}",
            header.order
        )));
    }

    let payload = &bytes[header_end..bytes.len() - 8];
    let count: usize = header.dims.iter().product();
    // Length first, so truncation reports as truncation and not as a
    // checksum mismatch.
    let expected_payload = match header.kind.as_str() {
        "counts" => 4 * count,
        "rates" | "rgb" | "dict" => 8 * count,
        "abund" => 9 * count,
        other => return Err(Error::Format(format!("unknown container kind {other:?}"))),
    };
    if payload.len() != expected_payload {
        return Err(Error::Format(format!(
            "truncated or oversized payload: header declares {expected_payload} bytes, found {}",
            payload.len()
        )));
    }
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    let computed = CRC64.checksum(payload);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }

    let expect_dtype = |want: &str| -> Result<()> {
        if header.dtype == want {
            Ok(())
        } else {
            Err(Error::Format(format!(
                "kind {:?} requires dtype {want}, got {:?}",
                header.kind, header.dtype
            )))
        }
    };

    match header.kind.as_str() {
        "counts" => {
            expect_dtype("u32")?;
            let dwell = header
                .dwell_s
                .ok_or_else(|| Error::Format("counts header missing dwell_s".into()))?;
            let (h, w, c) = dims3(&header.dims)?;
            let data: Vec<u32> = (0..count)
                .map(|i| u32::from_le_bytes(payload[4 * i..4 * i + 4].try_into().unwrap()))
                .collect();
            let counts = Array3::from_shape_vec((h, w, c), data)
                .map_err(|e| Error::Format(format!("bad dims: {e}")))?;
            Ok(Container::Counts(CountVolume::new(counts, dwell)?))
        }
        "rates" => {
            expect_dtype("f64")?;
            let (h, w, c) = dims3(&header.dims)?;
            let rates = Array3::from_shape_vec((h, w, c), take_f64s(payload, count))
                .map_err(|e| Error::Format(format!("bad dims: {e}")))?;
            Ok(Container::Rates(RateVolume::new(rates)?))
        }
        "rgb" => {
            expect_dtype("f64")?;
            let (h, w, c) = dims3(&header.dims)?;
            let pixels = Array3::from_shape_vec((h, w, c), take_f64s(payload, count))
                .map_err(|e| Error::Format(format!("bad dims: {e}")))?;
            Ok(Container::Rgb(RgbImage::new(pixels)?))
        }
        "dict" => {
            expect_dtype("f64")?;
            let (c, m) = dims2(&header.dims)?;
            let atoms = Array2::from_shape_vec((c, m), take_f64s(payload, count))
                .map_err(|e| Error::Format(format!("bad dims: {e}")))?;
            Ok(Container::Dict(Dictionary::new(atoms)?))
        }
        "abund" => {
            expect_dtype("f64")?;
            let (m, n) = dims2(&header.dims)?;
            let data = Array2::from_shape_vec((m, n), take_f64s(payload, count))
                .map_err(|e| Error::Format(format!("bad dims: {e}")))?;
            let mask_bytes = &payload[8 * count..];
            let mut active = Vec::with_capacity(count);
            for &b in mask_bytes {
                match b {
                    0 => active.push(false),
                    1 => active.push(true),
                    other => {
                        return Err(Error::Format(format!(
                            "mask byte must be 0 or 1, got {other}"
                        )))
                    }
                }
            }
            let active = Array2::from_shape_vec((m, n), active)
                .map_err(|e| Error::Format(format!("bad dims: {e}")))?;
            for ((i, j), &a) in active.indexed_iter() {
                if !a && data[[i, j]] != 0.0 {
                    return Err(Error::Invariant(format!(
                        "abundance entry ({i}, {j}) is inactive but nonzero"
                    )));
                }
            }
            Ok(Container::Abund(Abundance::with_mask(data, active)?))
        }
        other => Err(Error::Format(format!("unknown container kind {other:?}"))),
    }
}

/// Export a dictionary as CSV for inspection: a header row of atom
/// indices, then one row per channel.
pub fn write_dictionary_csv(d: &Dictionary, path: &Path) -> Result<()> {
    let mut out = String::new();
    let header: Vec<String> = (0..d.n_atoms()).map(|m| format!("atom_{m}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for c in 0..d.channels() {
        let row: Vec<String> = (0..d.n_atoms())
            .map(|m| format!("{}", d.atoms[[c, m]]))
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}
