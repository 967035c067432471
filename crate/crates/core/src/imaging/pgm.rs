//! Netpbm graymap (PGM) reading and writing.
//!
//! Reads plain (`P2`) and binary (`P5`) files with `maxval` 255, with `#`
//! comments allowed between header fields. Writes canonical binary files:
//! `P5\n<w> <h>\n255\n` followed by `w*h` bytes, each `round(i * 255)` with
//! `i` clamped to `[0, 1]`.

use super::{Image, Mask};
use crate::error::{Error, Result};

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b' ' | b'\t' | b'\n' | b'\r' | 0x0b | 0x0c => self.pos += 1,
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(if self.pos >= self.bytes.len() {
                Error::parse(self.pos, format!("unexpected end of data, expected {what}"))
            } else {
                Error::parse(self.pos, format!("expected {what}"))
            });
        }
        // Header fields are short ASCII digit runs; overflow means garbage.
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::parse(start, format!("{what} out of range")))
    }
}

/// Parse a PGM file into an image with intensities `p / 255`.
pub fn read_pgm(bytes: &[u8]) -> Result<Image> {
    let (w, h, px) = read_raw(bytes)?;
    Image::new(w, h, px.into_iter().map(|p| p as f64 / 255.0).collect())
}

fn read_raw(bytes: &[u8]) -> Result<(usize, usize, Vec<u8>)> {
    if bytes.len() < 2 {
        return Err(Error::parse(0, "missing magic number"));
    }
    let binary = match &bytes[..2] {
        b"P5" => true,
        b"P2" => false,
        _ => return Err(Error::parse(0, "magic number is not P2 or P5")),
    };
    let mut cur = Cursor { bytes, pos: 2 };
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval_at = {
        cur.skip_whitespace_and_comments();
        cur.pos
    };
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::parse(maxval_at, "zero image dimension"));
    }
    if maxval != 255 {
        return Err(Error::parse(
            maxval_at,
            format!("unsupported maxval {maxval}, only 255 is accepted"),
        ));
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::parse(2, "image dimensions overflow"))?;

    let pixels = if binary {
        // Exactly one whitespace byte separates the header from the raster.
        match bytes.get(cur.pos) {
            Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
            Some(_) => return Err(Error::parse(cur.pos, "expected whitespace after maxval")),
            None => return Err(Error::parse(cur.pos, "truncated header")),
        }
        let payload = &bytes[cur.pos..];
        if payload.len() < n {
            return Err(Error::parse(
                bytes.len(),
                format!(
                    "truncated payload: expected {n} bytes, found {}",
                    payload.len()
                ),
            ));
        }
        payload[..n].to_vec()
    } else {
        let mut px = Vec::with_capacity(n);
        for _ in 0..n {
            let at = cur.pos;
            let v = cur.number("pixel value")?;
            if v > maxval {
                return Err(Error::parse(at, format!("pixel value {v} exceeds maxval")));
            }
            px.push(v as u8);
        }
        px
    };
    Ok((width, height, pixels))
}

fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn write_raw(width: usize, height: usize, pixels: impl Iterator<Item = u8>) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.reserve(width * height);
    out.extend(pixels);
    out
}

/// Encode as canonical binary PGM.
pub fn write_pgm(img: &Image) -> Vec<u8> {
    write_raw(
        img.width(),
        img.height(),
        img.data().iter().map(|&v| quantize(v)),
    )
}

/// Parse a mask file: values above 127 are known, the rest unknown.
pub fn read_mask_pgm(bytes: &[u8]) -> Result<Mask> {
    let (w, h, px) = read_raw(bytes)?;
    Mask::new(w, h, px.into_iter().map(|p| p > 127).collect())
}

/// Encode a mask with 255 for known and 0 for unknown pixels.
pub fn write_mask_pgm(mask: &Mask) -> Vec<u8> {
    write_raw(
        mask.width(),
        mask.height(),
        mask.known().iter().map(|&k| if k { 255 } else { 0 }),
    )
}
