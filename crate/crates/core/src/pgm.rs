//! Binary PGM (P5) images: 16-bit big-endian on write, 8- or 16-bit on read.

use std::io;
use std::path::Path;

use thiserror::Error;

use crate::tensor::Tensor;
use crate::util::write_atomic;

pub const MAXVAL: u16 = 65535;

#[derive(Debug, Error)]
pub enum PgmError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("malformed PGM: {0}")]
    Format(String),
}

/// Encodes a `[1, H, W]` or `[H, W]` image with values in [0, 1] as 16-bit P5.
/// Each sample is `round(65535 · clamp(v, 0, 1))`.
pub fn encode(image: &Tensor) -> Vec<u8> {
    let (h, w) = plane_dims(image);
    let mut out = format!("P5\n{w} {h}\n{MAXVAL}\n").into_bytes();
    out.reserve(2 * h * w);
    for &v in image.data() {
        let q = (v.clamp(0.0, 1.0) * MAXVAL as f64).round() as u16;
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}

fn plane_dims(image: &Tensor) -> (usize, usize) {
    match *image.shape() {
        [1, h, w] | [h, w] => (h, w),
        ref s => panic!("PGM encoding needs a single plane, got {s:?}"),
    }
}

/// Decodes a P5 image into a `[1, H, W]` tensor scaled to [0, 1].
pub fn decode(bytes: &[u8]) -> Result<Tensor, PgmError> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)?;
    if magic != b"P5" {
        return Err(PgmError::Format(format!(
            "expected magic P5, found {:?}",
            String::from_utf8_lossy(magic)
        )));
    }
    let w = parse_num(next_token(bytes, &mut pos)?)?;
    let h = parse_num(next_token(bytes, &mut pos)?)?;
    let maxval = parse_num(next_token(bytes, &mut pos)?)?;
    if w == 0 || h == 0 || maxval == 0 || maxval > MAXVAL as usize {
        return Err(PgmError::Format(format!(
            "bad header: {w}x{h}, maxval {maxval}"
        )));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let bps = if maxval < 256 { 1 } else { 2 };
    let need = w * h * bps;
    let raster = bytes
        .get(pos..pos + need)
        .ok_or_else(|| PgmError::Format(format!("raster truncated: need {need} bytes")))?;
    let scale = maxval as f64;
    let data: Vec<f64> = if bps == 1 {
        raster.iter().map(|&b| b as f64 / scale).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale)
            .collect()
    };
    Tensor::new(vec![1, h, w], data).map_err(|e| PgmError::Format(e.to_string()))
}

fn next_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8], PgmError> {
    loop {
        match bytes.get(*pos) {
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(_) => break,
            None => return Err(PgmError::Format("header truncated".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace()) {
        *pos += 1;
    }
    Ok(&bytes[start..*pos])
}

fn parse_num(tok: &[u8]) -> Result<usize, PgmError> {
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| PgmError::Format(format!("bad number {:?}", String::from_utf8_lossy(tok))))
}

pub fn write(path: &Path, image: &Tensor) -> Result<(), PgmError> {
    write_atomic(path, &encode(image)).map_err(|source| PgmError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn read(path: &Path) -> Result<Tensor, PgmError> {
    let bytes = std::fs::read(path).map_err(|source| PgmError::Io {
        path: path.display().to_string(),
        source,
    })?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let img = Tensor::new(vec![1, 1, 2], vec![0.0, 1.0]).unwrap();
        assert_eq!(encode(&img), b"P5\n2 1\n65535\n\x00\x00\xff\xff");
    }

    #[test]
    fn reads_8bit_with_comments() {
        let bytes = b"P5\n# made by hand\n2 2\n255\n\x00\x33\xcc\xff";
        let t = decode(bytes).unwrap();
        assert_eq!(t.shape(), &[1, 2, 2]);
        assert_eq!(t.data(), &[0.0, 0.2, 0.8, 1.0]);
    }

    #[test]
    fn rejects_truncation_and_other_formats() {
        assert!(decode(b"P5\n2 2\n65535\n\x00\x00").is_err());
        assert!(decode(b"P2\n1 1\n255\n0").is_err());
        assert!(decode(b"P5\n2").is_err());
    }

    proptest! {
        #[test]
        fn quantized_round_trip(h in 1usize..6, w in 1usize..6, seed in 0u64..1000) {
            let vals: Vec<f64> = (0..h * w)
                .map(|i| (((i as u64 + 1) * (seed + 7919)) % 65536) as f64 / 65535.0)
                .collect();
            let img = Tensor::new(vec![1, h, w], vals).unwrap();
            let back = decode(&encode(&img)).unwrap();
            prop_assert_eq!(&back, &img);
            prop_assert_eq!(encode(&back), encode(&img));
        }
    }
}
