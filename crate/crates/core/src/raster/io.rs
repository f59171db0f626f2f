//! Raster container: a JSON header plus a flat little-endian `f32` payload.
//!
//! `scene.json` describes the raster and names its payload (by default the
//! sibling `scene.bin`). Values are band-sequential: band, then row, then
//! column. Single-band 8/16-bit binary PGM files are accepted for PAN input.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::Raster;
use crate::error::{Error, Result};

pub const DTYPE: &str = "f32le";
pub const LAYOUT: &str = "band-sequential";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RasterHeader {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    pub dtype: String,
    pub layout: String,
    pub radiometric_range: [f64; 2],
    /// Payload file name relative to the header; defaults to `<stem>.bin`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub payload: Option<String>,
}

impl RasterHeader {
    fn for_raster(r: &Raster, payload: String) -> Self {
        let (lo, hi) = r.radiometric_range();
        RasterHeader {
            width: r.width(),
            height: r.height(),
            bands: r.bands(),
            dtype: DTYPE.into(),
            layout: LAYOUT.into(),
            radiometric_range: [lo, hi],
            payload: Some(payload),
        }
    }
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedHeader {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Payload path for a header path: the header's `payload` entry, or the
/// header path with its extension replaced by `bin`.
pub fn payload_path(header_path: &Path, header: &RasterHeader) -> PathBuf {
    match &header.payload {
        Some(name) => header_path.with_file_name(name),
        None => header_path.with_extension("bin"),
    }
}

/// Loads a raster from a JSON header (or a binary PGM file).
pub fn load_raster(path: &Path) -> Result<Raster> {
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm")) {
        return load_pgm(path);
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let header: RasterHeader = serde_json::from_str(&text).map_err(|e| malformed(path, e.to_string()))?;
    if header.dtype != DTYPE {
        return Err(malformed(path, format!("unsupported dtype '{}'", header.dtype)));
    }
    if header.layout != LAYOUT {
        return Err(malformed(path, format!("unsupported layout '{}'", header.layout)));
    }
    if header.width == 0 || header.height == 0 || header.bands == 0 {
        return Err(malformed(path, "zero dimension"));
    }
    let [lo, hi] = header.radiometric_range;
    if !(lo.is_finite() && hi.is_finite() && lo < hi) {
        return Err(malformed(path, "radiometric_range must be finite with min < max"));
    }
    let bin = payload_path(path, &header);
    let bytes = std::fs::read(&bin).map_err(|e| Error::io(&bin, e))?;
    let expected = header.bands * header.height * header.width * 4;
    if bytes.len() < expected {
        return Err(Error::TruncatedPayload {
            path: bin,
            expected,
            found: bytes.len(),
        });
    }
    if bytes.len() > expected {
        return Err(malformed(path, format!("payload {} holds {} bytes, expected {expected}", bin.display(), bytes.len())));
    }
    let mut data = Vec::with_capacity(expected / 4);
    for (index, chunk) in bytes.chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]);
        if !v.is_finite() {
            return Err(Error::NonFinite { path: bin, index });
        }
        data.push(v as f64);
    }
    Raster::new(header.bands, header.height, header.width, data, (lo, hi))
}

/// Writes `<path>` (JSON header) and its payload. Values are rounded to `f32`.
pub fn save_raster(r: &Raster, path: &Path) -> Result<()> {
    let stem = path
        .file_stem()
        .ok_or_else(|| Error::contract(format!("{} has no file name", path.display())))?;
    let payload = format!("{}.bin", stem.to_string_lossy());
    let header = RasterHeader::for_raster(r, payload);
    let mut bytes = Vec::with_capacity(r.data().len() * 4);
    for &v in r.data() {
        let f = v as f32;
        if !f.is_finite() {
            return Err(Error::contract(format!("value {v} does not fit in f32")));
        }
        bytes.extend_from_slice(&f.to_le_bytes());
    }
    let bin = payload_path(path, &header);
    std::fs::write(&bin, bytes).map_err(|e| Error::io(&bin, e))?;
    let text = serde_json::to_string_pretty(&header)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Binary (P5) PGM with 8- or 16-bit big-endian samples. The radiometric
/// range is `(0, maxval)`.
pub fn load_pgm(path: &Path) -> Result<Raster> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut pos = 0;
    let mut token = |bytes: &[u8]| -> Option<String> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        (pos > start).then(|| String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    if token(&bytes).as_deref() != Some("P5") {
        return Err(malformed(path, "not a binary PGM (P5)"));
    }
    let mut num = |what: &str| -> Result<usize> {
        token(&bytes)
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| malformed(path, format!("bad {what}")))
    };
    let (w, h, maxval) = (num("width")?, num("height")?, num("maxval")?);
    if w == 0 || h == 0 || maxval == 0 || maxval > 65535 {
        return Err(malformed(path, "invalid PGM dimensions or maxval"));
    }
    // single whitespace byte separates the header from the samples
    let start = pos + 1;
    let bps = if maxval > 255 { 2 } else { 1 };
    let expected = w * h * bps;
    let found = bytes.len().saturating_sub(start);
    if found < expected {
        return Err(Error::TruncatedPayload {
            path: path.to_path_buf(),
            expected,
            found,
        });
    }
    let body = &bytes[start..start + expected];
    let data: Vec<f64> = if bps == 2 {
        body.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]]) as f64).collect()
    } else {
        body.iter().map(|&v| v as f64).collect()
    };
    Raster::new(1, h, w, data, (0.0, maxval as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_file_loads() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        save_raster(&Raster::filled(4, 8, 8, 100.0, (0.0, 2047.0)).unwrap(), &p).unwrap();
        let r = load_raster(&p).unwrap();
        assert_eq!((r.bands(), r.height(), r.width()), (4, 8, 8));
        assert!(r.data().iter().all(|&v| v == 100.0));
        assert_eq!(r.radiometric_range(), (0.0, 2047.0));
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for k in 0..5 {
            let (b, h, w) = (rng.gen_range(1..5), rng.gen_range(1..20), rng.gen_range(1..20));
            let data = (0..b * h * w).map(|_| rng.gen_range(-1e4f32..1e4) as f64).collect();
            let r = Raster::new(b, h, w, data, (-1e4, 1e4)).unwrap();
            let p = dir.path().join(format!("r{k}.json"));
            save_raster(&r, &p).unwrap();
            let back = load_raster(&p).unwrap();
            assert_eq!(back, r);
            let bytes = std::fs::read(p.with_extension("bin")).unwrap();
            let p2 = dir.path().join(format!("s{k}.json"));
            save_raster(&back, &p2).unwrap();
            assert_eq!(std::fs::read(p2.with_extension("bin")).unwrap(), bytes);
        }
    }

    #[test]
    fn missing_band_is_a_truncated_payload() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.json");
        save_raster(&Raster::filled(3, 8, 8, 1.0, (0.0, 1.0)).unwrap(), &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap().replace("\"bands\": 3", "\"bands\": 4");
        std::fs::write(&p, text).unwrap();
        match load_raster(&p) {
            Err(Error::TruncatedPayload { expected, found, .. }) => {
                assert_eq!((expected, found), (4 * 64 * 4, 3 * 64 * 4))
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn non_finite_and_malformed_inputs() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("n.json");
        save_raster(&Raster::filled(1, 2, 2, 1.0, (0.0, 1.0)).unwrap(), &p).unwrap();
        let mut bytes = std::fs::read(p.with_extension("bin")).unwrap();
        bytes[8..12].copy_from_slice(&f32::NAN.to_le_bytes());
        std::fs::write(p.with_extension("bin"), bytes).unwrap();
        assert!(matches!(load_raster(&p), Err(Error::NonFinite { index: 2, .. })));

        std::fs::write(&p, "{\"width\": 2}").unwrap();
        assert!(matches!(load_raster(&p), Err(Error::MalformedHeader { .. })));
        assert!(matches!(load_raster(&dir.path().join("absent.json")), Err(Error::Io { .. })));
    }

    #[test]
    fn sixteen_bit_pgm() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("pan.pgm");
        let mut bytes = b"P5\n# comment\n3 2\n2047\n".to_vec();
        for v in [0u16, 1, 256, 1000, 2047, 7] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        std::fs::write(&p, &bytes).unwrap();
        let r = load_raster(&p).unwrap();
        assert_eq!(r.dims(), (2, 3));
        assert_eq!(r.data(), &[0.0, 1.0, 256.0, 1000.0, 2047.0, 7.0]);
        assert_eq!(r.radiometric_range(), (0.0, 2047.0));
        std::fs::write(&p, &bytes[..bytes.len() - 1]).unwrap();
        assert!(matches!(load_raster(&p), Err(Error::TruncatedPayload { .. })));
    }
}
