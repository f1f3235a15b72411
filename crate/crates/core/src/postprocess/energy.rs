//! Boundary energy from predicted HoVer maps.
//!
//! Inside a nucleus `h` rises from -1 to +1 left to right (and `v` top to
//! bottom), so a boundary, whether against background or a touching
//! nucleus, is where the map *decreases*. Each axis contributes the
//! decreasing part of its 3x3 Sobel response, min-max rescaled to [0, 1];
//! the energy is the pixelwise max of the two terms.

use crate::hover::HoverMaps;

/// Per-pixel boundary energy in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyMap {
    height: usize,
    width: usize,
    values: Vec<f32>,
}

impl EnergyMap {
    pub fn new(height: usize, width: usize, values: Vec<f32>) -> crate::Result<Self> {
        if values.len() != height * width {
            return Err(crate::Error::LengthMismatch {
                expected: height * width,
                actual: values.len(),
            });
        }
        Ok(EnergyMap {
            height,
            width,
            values,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.width + col]
    }
}

#[derive(Clone, Copy)]
enum Axis {
    X,
    Y,
}

/// 3x3 Sobel derivative with edge-replication padding, computed in f64.
///
/// `Axis::X` uses `[[-1,0,1],[-2,0,2],[-1,0,1]]`, `Axis::Y` its transpose.
fn sobel(img: &[f32], h: usize, w: usize, axis: Axis) -> Vec<f64> {
    let at = |r: isize, c: isize| -> f64 {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        img[r * w + c] as f64
    };
    let mut out = Vec::with_capacity(h * w);
    for r in 0..h as isize {
        for c in 0..w as isize {
            let g = match axis {
                Axis::X => {
                    (at(r - 1, c + 1) - at(r - 1, c - 1))
                        + 2.0 * (at(r, c + 1) - at(r, c - 1))
                        + (at(r + 1, c + 1) - at(r + 1, c - 1))
                }
                Axis::Y => {
                    (at(r + 1, c - 1) - at(r - 1, c - 1))
                        + 2.0 * (at(r + 1, c) - at(r - 1, c))
                        + (at(r + 1, c + 1) - at(r - 1, c + 1))
                }
            };
            out.push(g);
        }
    }
    out
}

/// Min-max rescale to [0, 1]; a constant image maps to all zeros.
fn rescale(values: &mut [f64]) {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
            (lo.min(x), hi.max(x))
        });
    let span = hi - lo;
    if !(span > 0.0) {
        values.iter_mut().for_each(|x| *x = 0.0);
        return;
    }
    values.iter_mut().for_each(|x| *x = (*x - lo) / span);
}

fn boundary_term(img: &[f32], h: usize, w: usize, axis: Axis) -> Vec<f64> {
    let mut g = sobel(img, h, w, axis);
    g.iter_mut().for_each(|x| *x = (-*x).max(0.0));
    rescale(&mut g);
    g
}

pub fn hover_energy(hover: &HoverMaps) -> EnergyMap {
    let (h, w) = hover.shape();
    if h == 0 || w == 0 {
        return EnergyMap {
            height: h,
            width: w,
            values: Vec::new(),
        };
    }
    let ex = boundary_term(hover.h(), h, w, Axis::X);
    let ey = boundary_term(hover.v(), h, w, Axis::Y);
    let values = ex
        .iter()
        .zip(&ey)
        .map(|(&a, &b)| a.max(b) as f32)
        .collect();
    EnergyMap {
        height: h,
        width: w,
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hover_rows(h_rows: &[&[f32]]) -> HoverMaps {
        let (hh, ww) = (h_rows.len(), h_rows[0].len());
        HoverMaps::new(hh, ww, h_rows.concat(), vec![0.0; hh * ww]).unwrap()
    }

    #[test]
    fn zero_hover_gives_zero_energy() {
        let e = hover_energy(&HoverMaps::zeros(5, 6));
        assert!(e.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn sobel_matches_hand_computation() {
        // row 0 holds two touching 1x3 bars, row 1 is background
        let img = [-1.0f32, 0.0, 1.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        let gx = sobel(&img, 2, 6, Axis::X);
        assert_eq!(gx, vec![3.0, 6.0, -3.0, -3.0, 6.0, 3.0, 1.0, 2.0, -1.0, -1.0, 2.0, 1.0]);
        let gy = sobel(&img, 2, 6, Axis::Y);
        // replicated top row: d/dy = row1 - row0 weighted 1,2,1 over columns
        assert_eq!(gy[0], (0.0 - -1.0) * 3.0 + (0.0 - 0.0));
    }

    #[test]
    fn junction_of_two_bars_is_maximal() {
        let hv = hover_rows(&[&[-1.0, 0.0, 1.0, -1.0, 0.0, 1.0], &[0.0; 6]]);
        let e = hover_energy(&hv);
        // negative part: row 0 cols 2,3 -> 3; row 1 cols 2,3 -> 1
        let expected = [0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0 / 3.0, 1.0 / 3.0, 0.0, 0.0];
        for (a, b) in e.as_slice().iter().zip(expected) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
        let max = e.as_slice().iter().cloned().fold(0.0f32, f32::max);
        assert_eq!(e.get(0, 2), max);
        assert_eq!(e.get(0, 3), max);
    }

    #[test]
    fn smooth_instance_interior_below_junction() {
        let hv = hover_rows(&[&[0.0, -1.0, 0.0, 1.0, 0.0, 0.0], &[0.0; 6]]);
        let e = hover_energy(&hv);
        // interior pixel of the single bar
        assert!(e.get(0, 2) < 1.0);
        assert_eq!(e.get(0, 2), 0.0);
    }

    #[test]
    fn vertical_axis_uses_v() {
        let v = vec![-1.0, 0.0, 1.0, -1.0, 0.0, 1.0];
        let hv = HoverMaps::new(6, 1, vec![0.0; 6], v).unwrap();
        let e = hover_energy(&hv);
        assert_eq!(e.get(2, 0), 1.0);
        assert_eq!(e.get(3, 0), 1.0);
        assert_eq!(e.get(1, 0), 0.0);
    }
}
