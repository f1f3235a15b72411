//! Training targets for the nuclear-pixel (NP) and HoVer branches.
//!
//! Inside each instance, `h` is the column offset of a pixel from the
//! instance centroid divided by the largest absolute column offset in that
//! instance; `v` is the same for rows. Background is 0 in both maps.

use crate::instance::InstanceMap;

/// Binary foreground target, 1 = nuclear pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NpTarget {
    height: usize,
    width: usize,
    mask: Vec<u8>,
}

impl NpTarget {
    pub fn new(height: usize, width: usize, mask: Vec<u8>) -> crate::Result<Self> {
        if mask.len() != height * width {
            return Err(crate::Error::LengthMismatch {
                expected: height * width,
                actual: mask.len(),
            });
        }
        Ok(NpTarget {
            height,
            width,
            mask: mask.into_iter().map(|m| u8::from(m > 0)).collect(),
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.mask
    }

    pub fn is_set(&self, index: usize) -> bool {
        self.mask[index] != 0
    }
}

/// Paired horizontal / vertical distance maps, values in [-1, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct HoverMaps {
    height: usize,
    width: usize,
    h: Vec<f32>,
    v: Vec<f32>,
}

impl HoverMaps {
    /// Build from raw grids. Values are clamped to [-1, 1].
    pub fn new(height: usize, width: usize, h: Vec<f32>, v: Vec<f32>) -> crate::Result<Self> {
        for len in [h.len(), v.len()] {
            if len != height * width {
                return Err(crate::Error::LengthMismatch {
                    expected: height * width,
                    actual: len,
                });
            }
        }
        let clamp = |x: f32| if x.is_nan() { 0.0 } else { x.clamp(-1.0, 1.0) };
        Ok(HoverMaps {
            height,
            width,
            h: h.into_iter().map(clamp).collect(),
            v: v.into_iter().map(clamp).collect(),
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        HoverMaps {
            height,
            width,
            h: vec![0.0; height * width],
            v: vec![0.0; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn h(&self) -> &[f32] {
        &self.h
    }

    pub fn v(&self) -> &[f32] {
        &self.v
    }
}

pub fn compute_np_target(map: &InstanceMap) -> NpTarget {
    NpTarget {
        height: map.height(),
        width: map.width(),
        mask: map.as_slice().iter().map(|&l| u8::from(l > 0)).collect(),
    }
}

/// HoVer regression targets for a canonical instance map.
///
/// An axis along which the instance is one pixel thick has zero offset
/// everywhere and yields 0 on that axis.
pub fn compute_hover_maps(map: &InstanceMap) -> HoverMaps {
    let (height, width) = map.shape();
    let mut h = vec![0f32; height * width];
    let mut v = vec![0f32; height * width];
    for pixels in map.pixels_by_label() {
        if pixels.is_empty() {
            continue;
        }
        let n = pixels.len() as f64;
        let (mut sum_r, mut sum_c) = (0f64, 0f64);
        for &i in &pixels {
            sum_r += (i / width) as f64;
            sum_c += (i % width) as f64;
        }
        let (cr, cc) = (sum_r / n, sum_c / n);
        let (mut max_dr, mut max_dc) = (0f64, 0f64);
        for &i in &pixels {
            max_dr = max_dr.max(((i / width) as f64 - cr).abs());
            max_dc = max_dc.max(((i % width) as f64 - cc).abs());
        }
        for &i in &pixels {
            if max_dc > 0.0 {
                h[i] = (((i % width) as f64 - cc) / max_dc) as f32;
            }
            if max_dr > 0.0 {
                v[i] = (((i / width) as f64 - cr) / max_dr) as f32;
            }
        }
    }
    HoverMaps {
        height,
        width,
        h,
        v,
    }
}
