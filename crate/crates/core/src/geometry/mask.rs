use alloc::vec;
use alloc::vec::Vec;

use super::GeometryError;

/// Identifier of a scene object; 0 is reserved for the background.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ObjectId(pub u16);

impl ObjectId {
    pub const BACKGROUND: ObjectId = ObjectId(0);

    pub fn is_background(self) -> bool {
        self.0 == 0
    }
}

impl core::fmt::Display for ObjectId {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// Per-pixel object labels, row-major, 0 = background.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegMask {
    width: u32,
    height: u32,
    labels: Vec<u16>,
}

pub(crate) const SEG_MAGIC: &[u8; 4] = b"SEGM";

impl SegMask {
    pub fn new_background(width: u32, height: u32) -> Self {
        SegMask {
            width,
            height,
            labels: vec![0; (width * height) as usize],
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
    pub fn label_at(&self, x: u32, y: u32) -> ObjectId {
        ObjectId(self.labels[self.idx(x, y)])
    }

    #[inline]
    pub fn set_label(&mut self, x: u32, y: u32, label: ObjectId) {
        let i = self.idx(x, y);
        self.labels[i] = label.0;
    }

    pub fn count_label(&self, label: ObjectId) -> usize {
        self.labels.iter().filter(|l| **l == label.0).count()
    }

    pub fn is_empty_for(&self, label: ObjectId) -> bool {
        !self.labels.contains(&label.0)
    }

    /// Labels present in the mask, excluding background, ascending.
    pub fn present_labels(&self) -> Vec<ObjectId> {
        let mut seen = [false; u16::MAX as usize + 1];
        for l in &self.labels {
            seen[*l as usize] = true;
        }
        (1..=u16::MAX)
            .filter(|l| seen[*l as usize])
            .map(ObjectId)
            .collect()
    }

    /// Keep only `label` pixels (used to turn a full label map into a
    /// single-object track frame).
    pub fn isolate(&self, label: ObjectId) -> SegMask {
        let mut out = SegMask::new_background(self.width, self.height);
        for (i, l) in self.labels.iter().enumerate() {
            if *l == label.0 {
                out.labels[i] = label.0;
            }
        }
        out
    }

    /// Morphological dilation (`radius > 0`) or erosion (`radius < 0`) of one
    /// label's region with a Euclidean disc, leaving other labels untouched
    /// except where dilation claims background pixels.
    pub fn morph_label(&self, label: ObjectId, radius: i32) -> SegMask {
        if radius == 0 {
            return self.clone();
        }
        let r = radius.unsigned_abs() as i32;
        let r2 = r * r;
        let mut out = self.clone();
        let inside = |x: i32, y: i32| -> bool {
            x >= 0 && y >= 0 && (x as u32) < self.width && (y as u32) < self.height
        };
        for y in 0..self.height as i32 {
            for x in 0..self.width as i32 {
                let mut hit = false;
                'disc: for dy in -r..=r {
                    for dx in -r..=r {
                        if dx * dx + dy * dy > r2 {
                            continue;
                        }
                        let (nx, ny) = (x + dx, y + dy);
                        let neighbor_is_label = inside(nx, ny)
                            && self.labels[(ny as u32 * self.width + nx as u32) as usize]
                                == label.0;
                        if radius > 0 {
                            // dilate: any labeled neighbor claims this pixel
                            if neighbor_is_label {
                                hit = true;
                                break 'disc;
                            }
                        } else {
                            // erode: any non-labeled neighbor clears this pixel
                            if !neighbor_is_label {
                                hit = true;
                                break 'disc;
                            }
                        }
                    }
                }
                let i = (y as u32 * self.width + x as u32) as usize;
                if radius > 0 {
                    if hit && self.labels[i] == 0 {
                        out.labels[i] = label.0;
                    }
                } else if hit && self.labels[i] == label.0 {
                    out.labels[i] = 0;
                }
            }
        }
        out
    }

    /// Serialize: 16-byte header (magic "SEGM", u32 width, u32 height,
    /// u32 reserved, little-endian) then row-major u16 labels.
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.labels.len() * 2);
        out.extend_from_slice(SEG_MAGIC);
        out.extend_from_slice(&self.width.to_le_bytes());
        out.extend_from_slice(&self.height.to_le_bytes());
        out.extend_from_slice(&0u32.to_le_bytes());
        for l in &self.labels {
            out.extend_from_slice(&l.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, GeometryError> {
        let bad = |reason| GeometryError::BadFormat {
            kind: "SEGM",
            reason,
        };
        if bytes.len() < 16 || &bytes[0..4] != SEG_MAGIC {
            return Err(bad("missing SEGM header"));
        }
        let width = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        let height = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        let n = (width as usize) * (height as usize);
        if bytes.len() != 16 + n * 2 {
            return Err(bad("payload length mismatch"));
        }
        let labels = (0..n)
            .map(|i| u16::from_le_bytes(bytes[16 + i * 2..18 + i * 2].try_into().unwrap()))
            .collect();
        Ok(SegMask {
            width,
            height,
            labels,
        })
    }
}

/// Intersection over union of `label`'s region in the two masks.
/// Both regions empty counts as perfect agreement (1.0).
pub fn iou(a: &SegMask, b: &SegMask, label: ObjectId) -> Result<f64, GeometryError> {
    if a.width != b.width || a.height != b.height {
        return Err(GeometryError::ResolutionMismatch(
            a.width, a.height, b.width, b.height,
        ));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (la, lb) in a.labels.iter().zip(&b.labels) {
        let ia = *la == label.0;
        let ib = *lb == label.0;
        if ia && ib {
            inter += 1;
        }
        if ia || ib {
            union += 1;
        }
    }
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(mask: &mut SegMask, x0: u32, y0: u32, w: u32, h: u32, label: ObjectId) {
        for y in y0..y0 + h {
            for x in x0..x0 + w {
                mask.set_label(x, y, label);
            }
        }
    }

    #[test]
    fn identical_masks_have_iou_one() {
        let mut a = SegMask::new_background(32, 32);
        square(&mut a, 4, 4, 10, 10, ObjectId(2));
        assert_eq!(iou(&a, &a, ObjectId(2)).unwrap(), 1.0);
    }

    #[test]
    fn disjoint_masks_have_iou_zero() {
        let mut a = SegMask::new_background(32, 32);
        let mut b = SegMask::new_background(32, 32);
        square(&mut a, 0, 0, 5, 5, ObjectId(1));
        square(&mut b, 20, 20, 5, 5, ObjectId(1));
        assert_eq!(iou(&a, &b, ObjectId(1)).unwrap(), 0.0);
    }

    #[test]
    fn half_overlap_matches_pixel_count_oracle() {
        // 10x10 squares overlapping in a 5x10 strip: 50 / 150.
        let mut a = SegMask::new_background(40, 40);
        let mut b = SegMask::new_background(40, 40);
        square(&mut a, 0, 0, 10, 10, ObjectId(1));
        square(&mut b, 5, 0, 10, 10, ObjectId(1));
        let got = iou(&a, &b, ObjectId(1)).unwrap();
        assert!((got - 50.0 / 150.0).abs() < 1e-12);
    }

    #[test]
    fn both_empty_is_one_and_one_empty_is_zero() {
        let empty = SegMask::new_background(8, 8);
        let mut full = SegMask::new_background(8, 8);
        square(&mut full, 0, 0, 3, 3, ObjectId(7));
        assert_eq!(iou(&empty, &empty, ObjectId(7)).unwrap(), 1.0);
        assert_eq!(iou(&empty, &full, ObjectId(7)).unwrap(), 0.0);
    }

    #[test]
    fn iou_resolution_mismatch() {
        let a = SegMask::new_background(8, 8);
        let b = SegMask::new_background(9, 8);
        assert!(iou(&a, &b, ObjectId(1)).is_err());
    }

    #[test]
    fn morph_dilate_then_erode_contains_original() {
        let mut a = SegMask::new_background(32, 32);
        square(&mut a, 10, 10, 6, 6, ObjectId(3));
        let dilated = a.morph_label(ObjectId(3), 2);
        assert!(dilated.count_label(ObjectId(3)) > a.count_label(ObjectId(3)));
        let eroded = a.morph_label(ObjectId(3), -2);
        assert!(eroded.count_label(ObjectId(3)) < a.count_label(ObjectId(3)));
        // every original pixel survives dilation
        for y in 10..16 {
            for x in 10..16 {
                assert_eq!(dilated.label_at(x, y), ObjectId(3));
            }
        }
    }

    #[test]
    fn encode_decode_roundtrip() {
        let mut a = SegMask::new_background(6, 4);
        square(&mut a, 1, 1, 2, 2, ObjectId(9));
        let bytes = a.encode();
        assert_eq!(&bytes[0..4], b"SEGM");
        assert_eq!(SegMask::decode(&bytes).unwrap(), a);
    }

    #[test]
    fn iou_symmetry_and_monotonicity() {
        let mut a = SegMask::new_background(32, 32);
        let mut b = SegMask::new_background(32, 32);
        square(&mut a, 2, 2, 12, 9, ObjectId(1));
        square(&mut b, 6, 4, 12, 9, ObjectId(1));
        let ab = iou(&a, &b, ObjectId(1)).unwrap();
        let ba = iou(&b, &a, ObjectId(1)).unwrap();
        assert_eq!(ab, ba);
        // removing intersection pixels cannot increase IoU
        let mut shrunk = a.clone();
        shrunk.set_label(7, 5, ObjectId::BACKGROUND);
        assert!(iou(&shrunk, &b, ObjectId(1)).unwrap() <= ab);
    }
}
