//! External per-pixel feature maps (`CFEAT v1`).
//!
//! Layout: the ASCII header `CFEAT v1\n<W> <H> <D>\n`, then `W*H*D`
//! little-endian `f32` values, row-major with the feature index fastest.

use crate::error::{Error, Result};

const MAGIC: &[u8] = b"CFEAT v1\n";

#[derive(Debug, Clone, PartialEq)]
pub struct ExternalFeatures {
    pub width: usize,
    pub height: usize,
    pub depth: usize,
    pub data: Vec<f32>,
}

impl ExternalFeatures {
    pub fn new(width: usize, height: usize, depth: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != width * height * depth {
            return Err(Error::contract(format!(
                "feature data has {} values, expected {width}x{height}x{depth}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            depth,
            data,
        })
    }

    #[inline]
    pub fn at(&self, pixel: usize, channel: usize) -> f32 {
        self.data[pixel * self.depth + channel]
    }

    pub fn read(bytes: &[u8]) -> Result<Self> {
        if !bytes.starts_with(MAGIC) {
            return Err(Error::parse(0, "missing 'CFEAT v1' header"));
        }
        let rest = &bytes[MAGIC.len()..];
        let eol = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::parse(MAGIC.len(), "unterminated dimension line"))?;
        let line = std::str::from_utf8(&rest[..eol])
            .map_err(|_| Error::parse(MAGIC.len(), "dimension line is not UTF-8"))?;
        let dims: Vec<usize> = line
            .split_ascii_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::parse(MAGIC.len(), format!("bad dimension line '{line}'")))?;
        let [width, height, depth] = dims[..] else {
            return Err(Error::parse(MAGIC.len(), "expected three dimensions W H D"));
        };
        let start = MAGIC.len() + eol + 1;
        let count = width * height * depth;
        let payload = &bytes[start..];
        if payload.len() != count * 4 {
            return Err(Error::parse(
                bytes.len(),
                format!("expected {} payload bytes, found {}", count * 4, payload.len()),
            ));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(width, height, depth, data)
    }

    pub fn write(&self) -> Vec<u8> {
        let mut out = MAGIC.to_vec();
        out.extend(format!("{} {} {}\n", self.width, self.height, self.depth).bytes());
        for v in &self.data {
            out.extend(v.to_le_bytes());
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_layout() {
        let f = ExternalFeatures::new(2, 1, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let bytes = f.write();
        assert!(bytes.starts_with(b"CFEAT v1\n2 1 2\n"));
        assert_eq!(ExternalFeatures::read(&bytes).unwrap(), f);
        assert_eq!(f.at(1, 0), 3.0);
    }

    #[test]
    fn rejects_malformed() {
        assert!(ExternalFeatures::read(b"CFEAT v2\n1 1 1\n\0\0\0\0").is_err());
        assert!(ExternalFeatures::read(b"CFEAT v1\n1 1\n\0\0\0\0").is_err());
        assert!(matches!(
            ExternalFeatures::read(b"CFEAT v1\n1 1 1\n\0\0"),
            Err(Error::Parse { .. })
        ));
    }
}
