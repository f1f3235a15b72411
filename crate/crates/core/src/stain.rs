//! Stain separation and restaining in optical-density space.
//!
//! This is a classical, deterministic stand-in for a learned restaining
//! model. Pixels are taken to optical density, `od = -log10((v + 1) / 256)`
//! per channel, where H&E mixing is approximately linear. Two stain
//! directions are estimated from the extreme angles of the tissue OD cloud
//! in its principal plane; concentrations are unmixed by least squares,
//! rescaled to a template's 99th percentiles and recomposed through the
//! template's stain vectors.

use nalgebra::{Matrix2x3, Matrix3, Matrix3x2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// OD norm above which a pixel counts as tissue.
pub const TISSUE_OD_THRESHOLD: f64 = 0.15;
/// Minimum tissue fraction for stain estimation.
pub const MIN_TISSUE_FRACTION: f64 = 0.01;
/// Percentile of the angular distribution taken as each stain direction.
pub const ANGLE_PERCENTILE: f64 = 1.0;
/// Percentile of concentrations matched between source and template.
pub const CONCENTRATION_PERCENTILE: f64 = 99.0;
/// Smallest angle (radians) between two usable stain directions.
pub const MIN_STAIN_SEPARATION: f64 = 0.05;

/// 8-bit RGB image, interleaved row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::LengthMismatch {
                expected: height * width * 3,
                actual: data.len(),
            });
        }
        Ok(RgbImage {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel(&self, index: usize) -> [u8; 3] {
        let p = &self.data[index * 3..index * 3 + 3];
        [p[0], p[1], p[2]]
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }
}

/// Optical density image, interleaved like [`RgbImage`].
#[derive(Debug, Clone, PartialEq)]
pub struct OdImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl OdImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * 3 {
            return Err(Error::LengthMismatch {
                expected: height * width * 3,
                actual: data.len(),
            });
        }
        Ok(OdImage {
            height,
            width,
            data,
        })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, index: usize) -> Vector3<f64> {
        Vector3::new(self.data[index * 3], self.data[index * 3 + 1], self.data[index * 3 + 2])
    }

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }
}

pub fn value_to_od(v: u8) -> f64 {
    -((v as f64 + 1.0) / 256.0).log10()
}

/// Inverse of [`value_to_od`], rounded to the nearest 8-bit value.
pub fn od_to_value(od: f64) -> u8 {
    (256.0 * 10f64.powf(-od) - 1.0).round().clamp(0.0, 255.0) as u8
}

pub fn rgb_to_od(img: &RgbImage) -> OdImage {
    OdImage {
        height: img.height,
        width: img.width,
        data: img.data.iter().map(|&v| value_to_od(v)).collect(),
    }
}

pub fn od_to_rgb(od: &OdImage) -> RgbImage {
    RgbImage {
        height: od.height,
        width: od.width,
        data: od.data.iter().map(|&x| od_to_value(x)).collect(),
    }
}

/// Stain vectors and concentration scale of one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StainProfile {
    /// Rows are R, G, B; column 0 is hematoxylin, column 1 eosin. Columns
    /// have unit Euclidean norm and non-negative entries.
    pub stain_matrix: [[f64; 2]; 3],
    /// 99th percentile of each stain's tissue concentrations.
    pub concentration_p99: [f64; 2],
}

impl StainProfile {
    pub fn matrix(&self) -> Matrix3x2<f64> {
        let s = &self.stain_matrix;
        Matrix3x2::new(s[0][0], s[0][1], s[1][0], s[1][1], s[2][0], s[2][1])
    }

    pub fn column(&self, k: usize) -> Vector3<f64> {
        Vector3::new(self.stain_matrix[0][k], self.stain_matrix[1][k], self.stain_matrix[2][k])
    }

    /// Render concentrations (hematoxylin, eosin per pixel) through this
    /// profile's stain vectors.
    pub fn render(&self, height: usize, width: usize, concentrations: &[[f64; 2]]) -> Result<RgbImage> {
        if concentrations.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                actual: concentrations.len(),
            });
        }
        Ok(od_to_rgb(&self.compose(height, width, concentrations)))
    }

    /// Optical density of the given concentrations, without quantization.
    pub fn compose(&self, height: usize, width: usize, concentrations: &[[f64; 2]]) -> OdImage {
        let s = self.matrix();
        let mut data = Vec::with_capacity(concentrations.len() * 3);
        for c in concentrations {
            let od = s * nalgebra::Vector2::new(c[0], c[1]);
            data.extend_from_slice(od.as_slice());
        }
        OdImage {
            height,
            width,
            data,
        }
    }

    /// Build from two stain directions (normalized here) and stats.
    pub fn from_columns(hematoxylin: [f64; 3], eosin: [f64; 3], concentration_p99: [f64; 2]) -> Self {
        let h = Vector3::from(hematoxylin).normalize();
        let e = Vector3::from(eosin).normalize();
        StainProfile {
            stain_matrix: [[h[0], e[0]], [h[1], e[1]], [h[2], e[2]]],
            concentration_p99,
        }
    }
}

/// Angle in radians between two directions.
pub fn angular_distance(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    let cos = a.dot(b) / (a.norm() * b.norm());
    cos.clamp(-1.0, 1.0).acos()
}

/// Nearest-rank percentile of an ascending slice.
fn percentile_sorted(sorted: &[f64], q: f64) -> f64 {
    let idx = ((q / 100.0) * (sorted.len() - 1) as f64).round() as usize;
    sorted[idx.min(sorted.len() - 1)]
}

fn tissue_indices(od: &OdImage) -> Vec<usize> {
    (0..od.n_pixels())
        .filter(|&i| od.pixel(i).norm() > TISSUE_OD_THRESHOLD)
        .collect()
}

fn pseudo_inverse(s: &Matrix3x2<f64>) -> Result<Matrix2x3<f64>> {
    let gram = s.transpose() * s;
    let inv = gram
        .try_inverse()
        .ok_or_else(|| Error::DegenerateStains("stain vectors are linearly dependent".into()))?;
    Ok(inv * s.transpose())
}

/// Least-squares concentrations of every pixel, clipped at 0.
pub fn unmix(od: &OdImage, profile: &StainProfile) -> Result<Vec<[f64; 2]>> {
    let pinv = pseudo_inverse(&profile.matrix())?;
    Ok((0..od.n_pixels())
        .map(|i| {
            let c = pinv * od.pixel(i);
            [c[0].max(0.0), c[1].max(0.0)]
        })
        .collect())
}

fn concentration_p99(concentrations: &[[f64; 2]], tissue: &[usize]) -> [f64; 2] {
    std::array::from_fn(|k| {
        let mut v: Vec<f64> = tissue.iter().map(|&i| concentrations[i][k]).collect();
        v.sort_by(f64::total_cmp);
        percentile_sorted(&v, CONCENTRATION_PERCENTILE)
    })
}

pub fn estimate_stain_profile(img: &RgbImage) -> Result<StainProfile> {
    estimate_stain_profile_od(&rgb_to_od(img))
}

/// Stain profile from an optical density image.
pub fn estimate_stain_profile_od(od: &OdImage) -> Result<StainProfile> {
    let tissue = tissue_indices(od);
    let total = od.n_pixels();
    if tissue.len() < 2 || (tissue.len() as f64) < MIN_TISSUE_FRACTION * total as f64 {
        return Err(Error::NoTissue {
            tissue_pixels: tissue.len(),
            total_pixels: total,
        });
    }

    let n = tissue.len() as f64;
    let mean = tissue.iter().map(|&i| od.pixel(i)).sum::<Vector3<f64>>() / n;
    let mut cov = Matrix3::zeros();
    for &i in &tissue {
        let d = od.pixel(i) - mean;
        cov += d * d.transpose();
    }
    cov /= n;

    let eig = cov.symmetric_eigen();
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (l1, l2) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
    if !(l1 > 0.0) || l2 <= 1e-9 * l1 {
        return Err(Error::DegenerateStains(format!(
            "tissue optical densities span one direction (eigenvalues {l1:e}, {l2:e})"
        )));
    }
    let orient = |v: Vector3<f64>| if v.sum() < 0.0 { -v } else { v };
    let e1 = orient(eig.eigenvectors.column(order[0]).into_owned());
    let e2 = orient(eig.eigenvectors.column(order[1]).into_owned());

    let mut angles: Vec<f64> = tissue
        .iter()
        .map(|&i| {
            let p = od.pixel(i);
            p.dot(&e2).atan2(p.dot(&e1))
        })
        .collect();
    angles.sort_by(f64::total_cmp);
    let lo = percentile_sorted(&angles, ANGLE_PERCENTILE);
    let hi = percentile_sorted(&angles, 100.0 - ANGLE_PERCENTILE);
    let direction = |phi: f64| -> Vector3<f64> {
        let v = e1 * phi.cos() + e2 * phi.sin();
        v.map(|x| x.max(0.0))
    };
    let (a, b) = (direction(lo), direction(hi));
    if a.norm() == 0.0 || b.norm() == 0.0 {
        return Err(Error::DegenerateStains("a stain direction has no positive absorbance".into()));
    }
    let (a, b) = (a.normalize(), b.normalize());
    let separation = angular_distance(&a, &b);
    if separation < MIN_STAIN_SEPARATION {
        return Err(Error::DegenerateStains(format!(
            "stain directions only {separation:.4} rad apart"
        )));
    }
    // hematoxylin absorbs more in the blue channel than eosin
    let (h, e) = if a[2] >= b[2] { (a, b) } else { (b, a) };
    let mut profile = StainProfile {
        stain_matrix: [[h[0], e[0]], [h[1], e[1]], [h[2], e[2]]],
        concentration_p99: [0.0; 2],
    };
    let conc = unmix(od, &profile)?;
    profile.concentration_p99 = concentration_p99(&conc, &tissue);
    Ok(profile)
}

/// Restain `img` into the style of `template`.
///
/// Fails like [`estimate_stain_profile`] on blank or single-stain tiles; the
/// caller decides whether to pass such tiles through unchanged.
pub fn normalize_to_template(img: &RgbImage, template: &StainProfile) -> Result<RgbImage> {
    let od = rgb_to_od(img);
    let source = estimate_stain_profile_od(&od)?;
    let conc = unmix(&od, &source)?;
    let scale: [f64; 2] = std::array::from_fn(|k| {
        if source.concentration_p99[k] > 0.0 {
            template.concentration_p99[k] / source.concentration_p99[k]
        } else {
            0.0
        }
    });
    if scale.iter().any(|&s| s == 0.0 || !s.is_finite()) {
        return Err(Error::DegenerateStains(format!(
            "cannot match concentration percentiles {:?} to {:?}",
            source.concentration_p99, template.concentration_p99
        )));
    }
    let scaled: Vec<[f64; 2]> = conc.iter().map(|c| [c[0] * scale[0], c[1] * scale[1]]).collect();
    template.render(img.height, img.width, &scaled)
}
