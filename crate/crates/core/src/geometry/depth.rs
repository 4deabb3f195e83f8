use alloc::vec;
use alloc::vec::Vec;

use super::GeometryError;

/// Dense per-pixel camera-space depth in meters with an explicit validity
/// mask. Invalid pixels never enter arithmetic; the NaN sentinel exists only
/// in the serialized form.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthMap {
    width: u32,
    height: u32,
    values: Vec<f32>,
    valid: Vec<bool>,
}

pub(crate) const DEPTH_MAGIC: &[u8; 4] = b"DPTH";

impl DepthMap {
    pub fn new_invalid(width: u32, height: u32) -> Self {
        let n = (width * height) as usize;
        DepthMap {
            width,
            height,
            values: vec![0.0; n],
            valid: vec![false; n],
        }
    }

    pub fn filled(width: u32, height: u32, depth: f64) -> Self {
        let n = (width * height) as usize;
        DepthMap {
            width,
            height,
            values: vec![depth as f32; n],
            valid: vec![true; n],
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    #[inline]
    fn idx(&self, x: u32, y: u32) -> usize {
        debug_assert!(x < self.width && y < self.height);
        (y * self.width + x) as usize
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> Option<f64> {
        let i = self.idx(x, y);
        if self.valid[i] {
            Some(self.values[i] as f64)
        } else {
            None
        }
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, depth: f64) {
        debug_assert!(depth > 0.0 && depth.is_finite());
        let i = self.idx(x, y);
        self.values[i] = depth as f32;
        self.valid[i] = true;
    }

    #[inline]
    pub fn clear(&mut self, x: u32, y: u32) {
        let i = self.idx(x, y);
        self.valid[i] = false;
        self.values[i] = 0.0;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    /// Scale every valid depth by `factor` (> 0).
    pub fn scaled(&self, factor: f64) -> DepthMap {
        let mut out = self.clone();
        for (i, v) in out.values.iter_mut().enumerate() {
            if out.valid[i] {
                *v = (*v as f64 * factor) as f32;
            }
        }
        out
    }

    /// Serialize: 16-byte header (magic "DPTH", u32 width, u32 height,
    /// u32 reserved, little-endian) then row-major f32; NaN marks invalid.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.values.len() * 4);
        out.extend_from_slice(DEPTH_MAGIC);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for (i, v) in self.values.iter().enumerate() {
            let stored = if self.valid[i] { *v } else { f32::NAN };
            out.extend_from_slice(&stored.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, GeometryError> {
        let bad = |reason| GeometryError::BadFormat {
            kind: "DPTH",
            reason,
        };
        if bytes.len() < 16 || &bytes[0..4] != DEPTH_MAGIC {
            return Err(bad("missing DPTH header"));
        }
        let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        let n = (width as usize) * (height as usize);
        if bytes.len() != 16 + n * 4 {
            return Err(bad("payload length mismatch"));
        }
        let mut values = Vec::with_capacity(n);
        let mut valid = Vec::with_capacity(n);
        for i in 0..n {
            let off = 16 + i * 4;
            let v = f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());
            if v.is_nan() {
                values.push(0.0);
                valid.push(false);
            } else {
                values.push(v);
                valid.push(true);
            }
        }
        Ok(DepthMap {
            width,
            height,
            values,
            valid,
        })
    }
}
