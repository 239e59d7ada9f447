//! Portable float map (PFM) reading and writing.
//!
//! Header: `Pf` (grayscale) or `PF` (RGB), then `width height`, then a scale
//! whose sign gives the byte order (negative = little-endian). Pixel rows are
//! stored bottom-up. Files are always written grayscale-or-RGB little-endian
//! with scale `-1.0`.

use std::fs;
use std::path::Path;

use crate::error::{PadError, Result};
use crate::raster::Raster;

pub fn encode(raster: &Raster) -> Result<Vec<u8>> {
    let tag = match raster.channels {
        1 => "Pf",
        3 => "PF",
        n => {
            return Err(PadError::InvalidInput(format!(
                "PFM supports 1 or 3 channels, got {n}"
            )))
        }
    };
    let mut out = format!("{tag}\n{} {}\n-1.0\n", raster.width, raster.height).into_bytes();
    let row_len = raster.width * raster.channels;
    out.reserve(raster.data.len() * 4);
    for y in (0..raster.height).rev() {
        for v in &raster.data[y * row_len..(y + 1) * row_len] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Raster> {
    let err = |m: &str| PadError::format(path, m);
    let mut pos = 0;
    let mut tokens = Vec::with_capacity(4);
    // Four whitespace-separated header tokens; a single whitespace byte
    // terminates the last one.
    while tokens.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(err("truncated header"));
        }
        tokens.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| err("non-ascii header"))?);
    }
    pos += 1;

    let channels = match tokens[0] {
        "Pf" => 1,
        "PF" => 3,
        t => return Err(err(&format!("bad magic {t:?}"))),
    };
    let width: usize = tokens[1].parse().map_err(|_| err("bad width"))?;
    let height: usize = tokens[2].parse().map_err(|_| err("bad height"))?;
    let scale: f32 = tokens[3].parse().map_err(|_| err("bad scale"))?;
    if width == 0 || height == 0 {
        return Err(err("zero dimension"));
    }
    if scale == 0.0 || !scale.is_finite() {
        return Err(err("scale must be finite and non-zero"));
    }
    let little = scale < 0.0;

    let n = width * height * channels;
    let body = bytes.get(pos..).unwrap_or(&[]);
    if body.len() != n * 4 {
        return Err(err(&format!(
            "expected {} data bytes, found {}",
            n * 4,
            body.len()
        )));
    }
    let mut data = vec![0.0f32; n];
    let row_len = width * channels;
    for (file_row, chunk) in body.chunks_exact(row_len * 4).enumerate() {
        let y = height - 1 - file_row;
        for (i, b) in chunk.chunks_exact(4).enumerate() {
            let b = [b[0], b[1], b[2], b[3]];
            data[y * row_len + i] = if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            };
        }
    }
    Ok(Raster {
        width,
        height,
        channels,
        data,
    })
}

pub fn read(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| PadError::io(path, e))?;
    decode(&bytes, path)
}

pub fn write(path: &Path, raster: &Raster) -> Result<()> {
    let bytes = encode(raster)?;
    crate::cache::write_atomic(path, &bytes)
}
