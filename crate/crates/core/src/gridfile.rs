//! Little-endian float grid container shared by grounding maps (`GMAP`)
//! and appearance sidecars (`FEAT`).
//!
//! Layout: 4 magic bytes, `u32` width, `u32` height, then `width * height`
//! `f32` values, row-major, top row first.

use std::path::Path;

use crate::error::{Error, Result};
use crate::fsio;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Magic {
    GroundingMap,
    Features,
}

impl Magic {
    pub fn bytes(self) -> &'static [u8; 4] {
        match self {
            Magic::GroundingMap => b"GMAP",
            Magic::Features => b"FEAT",
        }
    }
}

const HEADER: usize = 12;

#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f32>,
}

impl Grid {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::Shape(format!(
                "grid {width}x{height} needs {} values, got {}",
                width * height,
                values.len()
            )));
        }
        Ok(Grid {
            width,
            height,
            values,
        })
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.values[r * self.width..(r + 1) * self.width]
    }

    pub fn encode(&self, magic: Magic) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER + 4 * self.values.len());
        out.extend_from_slice(magic.bytes());
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(magic: Magic, bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < HEADER {
            return Err(format!("truncated header ({} bytes)", bytes.len()));
        }
        if &bytes[..4] != magic.bytes() {
            return Err(format!(
                "expected magic {:?}, found {:?}",
                String::from_utf8_lossy(magic.bytes()),
                String::from_utf8_lossy(&bytes[..4])
            ));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        let (width, height) = (u32_at(4), u32_at(8));
        let n = width
            .checked_mul(height)
            .ok_or_else(|| "dimensions overflow".to_string())?;
        let body = &bytes[HEADER..];
        if body.len() != 4 * n {
            return Err(format!(
                "{width}x{height} grid needs {} payload bytes, found {}",
                4 * n,
                body.len()
            ));
        }
        let values = body
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Grid {
            width,
            height,
            values,
        })
    }

    pub fn read(path: &Path, magic: Magic) -> Result<Self> {
        let bytes = fsio::read(path)?;
        Self::decode(magic, &bytes).map_err(|msg| Error::GridFormat {
            path: path.to_path_buf(),
            msg,
        })
    }

    pub fn write(&self, path: &Path, magic: Magic) -> Result<()> {
        fsio::write_atomic(path, &self.encode(magic))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout() {
        let g = Grid::new(2, 1, vec![1.0, -0.5]).unwrap();
        let bytes = g.encode(Magic::GroundingMap);
        assert_eq!(&bytes[..4], b"GMAP");
        assert_eq!(&bytes[4..12], &[2, 0, 0, 0, 1, 0, 0, 0]);
        assert_eq!(&bytes[12..16], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 20);
    }

    #[test]
    fn rejects_wrong_magic_and_truncation() {
        let g = Grid::new(1, 1, vec![0.0]).unwrap();
        let bytes = g.encode(Magic::Features);
        assert!(Grid::decode(Magic::GroundingMap, &bytes).is_err());
        assert!(Grid::decode(Magic::Features, &bytes[..15]).is_err());
        assert!(Grid::decode(Magic::Features, &bytes[..8]).is_err());
    }

    proptest! {
        #[test]
        fn bit_exact_round_trip(w in 1usize..6, h in 1usize..6, seed in any::<u64>()) {
            // raw bit patterns, including NaN payloads
            let values: Vec<f32> = (0..w * h)
                .map(|i| f32::from_bits((seed.rotate_left(i as u32 * 7) as u32) ^ i as u32))
                .collect();
            let g = Grid::new(w, h, values).unwrap();
            let bytes = g.encode(Magic::GroundingMap);
            let back = Grid::decode(Magic::GroundingMap, &bytes).unwrap();
            prop_assert_eq!(back.encode(Magic::GroundingMap), bytes);
        }
    }
}
