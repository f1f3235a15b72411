//! Network outputs to classified instances.
//!
//! The chain is: boundary energy from the HoVer maps, markers from the
//! confident foreground minus high-energy pixels, watershed flooding of
//! the energy from the markers inside the foreground, and per-instance
//! class voting from the NC probabilities.

mod energy;
mod watershed;

use serde::{Deserialize, Serialize};

pub use energy::{hover_energy, EnergyMap};
pub use watershed::watershed;

use crate::error::{Error, Result};
use crate::hover::{HoverMaps, NpTarget};
use crate::instance::{canonicalize, check_shape, neighbors4, ClassMap, InstanceMap};

/// Tolerance on the per-pixel NC distribution sum.
pub const NC_SUM_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PostprocessParams {
    pub np_threshold: f32,
    pub marker_threshold: f32,
    pub min_instance_area: usize,
}

impl Default for PostprocessParams {
    fn default() -> Self {
        PostprocessParams {
            np_threshold: 0.5,
            marker_threshold: 0.4,
            min_instance_area: 10,
        }
    }
}

impl PostprocessParams {
    pub fn validate(&self) -> Result<()> {
        for (name, t) in [
            ("np_threshold", self.np_threshold),
            ("marker_threshold", self.marker_threshold),
        ] {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::InvalidParameter(format!(
                    "{name} must lie in (0, 1), got {t}"
                )));
            }
        }
        if self.min_instance_area == 0 {
            return Err(Error::InvalidParameter(
                "min_instance_area must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per-pixel class distribution over background + N classes, pixel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct NcProbabilities {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl NcProbabilities {
    /// `data[(r * width + c) * channels + k]` is the probability of channel `k`
    /// (0 = background) at pixel `(r, c)`.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels < 2 {
            return Err(Error::InvalidParameter(format!(
                "NC probabilities need background plus at least one class, got {channels} channels"
            )));
        }
        if data.len() != height * width * channels {
            return Err(Error::LengthMismatch {
                expected: height * width * channels,
                actual: data.len(),
            });
        }
        for (p, px) in data.chunks_exact(channels).enumerate() {
            if px.iter().any(|&x| !(x >= 0.0)) {
                return Err(Error::InvalidParameter(format!(
                    "negative or NaN NC probability at pixel ({}, {})",
                    p / width,
                    p % width
                )));
            }
            let sum: f64 = px.iter().map(|&x| x as f64).sum();
            if (sum - 1.0).abs() > NC_SUM_TOLERANCE {
                return Err(Error::InvalidParameter(format!(
                    "NC probabilities at pixel ({}, {}) sum to {sum}",
                    p / width,
                    p % width
                )));
            }
        }
        Ok(NcProbabilities {
            height,
            width,
            channels,
            data,
        })
    }

    /// One-hot distribution from a class map (channel = class id).
    pub fn one_hot(classes: &ClassMap, channels: usize) -> Self {
        let mut data = vec![0f32; classes.as_slice().len() * channels];
        for (p, &k) in classes.as_slice().iter().enumerate() {
            data[p * channels + (k as usize).min(channels - 1)] = 1.0;
        }
        NcProbabilities {
            height: classes.height(),
            width: classes.width(),
            channels,
            data,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn pixel(&self, index: usize) -> &[f32] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }
}

/// The three network heads for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMaps {
    np_prob: Vec<f32>,
    hover: HoverMaps,
    nc_prob: NcProbabilities,
}

impl ProbabilityMaps {
    pub fn new(np_prob: Vec<f32>, hover: HoverMaps, nc_prob: NcProbabilities) -> Result<Self> {
        let (h, w) = hover.shape();
        if np_prob.len() != h * w {
            return Err(Error::LengthMismatch {
                expected: h * w,
                actual: np_prob.len(),
            });
        }
        check_shape((h, w), nc_prob.shape())?;
        if let Some(p) = np_prob.iter().position(|&x| !(0.0..=1.0).contains(&x)) {
            return Err(Error::InvalidParameter(format!(
                "NP probability {} at pixel ({}, {}) outside [0, 1]",
                np_prob[p],
                p / w,
                p % w
            )));
        }
        Ok(ProbabilityMaps {
            np_prob,
            hover,
            nc_prob,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.hover.shape()
    }

    pub fn np_prob(&self) -> &[f32] {
        &self.np_prob
    }

    pub fn hover(&self) -> &HoverMaps {
        &self.hover
    }

    pub fn nc_prob(&self) -> &NcProbabilities {
        &self.nc_prob
    }
}

fn threshold_mask(np_prob: &[f32], shape: (usize, usize), t: f32) -> NpTarget {
    NpTarget::new(
        shape.0,
        shape.1,
        np_prob.iter().map(|&p| u8::from(p > t)).collect(),
    )
    .expect("mask has the map's shape")
}

/// Connected components of `{np > np_threshold} \ {energy > marker_threshold}`
/// with at least `min_instance_area` pixels, canonically numbered.
pub fn extract_markers(
    np_prob: &[f32],
    energy: &EnergyMap,
    params: &PostprocessParams,
) -> Result<InstanceMap> {
    let (h, w) = energy.shape();
    if np_prob.len() != h * w {
        return Err(Error::LengthMismatch {
            expected: h * w,
            actual: np_prob.len(),
        });
    }
    let seeds: Vec<u32> = np_prob
        .iter()
        .zip(energy.as_slice())
        .map(|(&p, &e)| u32::from(p > params.np_threshold && !(e > params.marker_threshold)))
        .collect();
    let components = canonicalize(&InstanceMap::new(h, w, seeds)?);
    Ok(remove_small(&components, params.min_instance_area))
}

/// Drop labels with fewer than `min_area` pixels and renumber.
fn remove_small(map: &InstanceMap, min_area: usize) -> InstanceMap {
    let areas: Vec<usize> = map.pixels_by_label().iter().map(Vec::len).collect();
    let kept = map
        .as_slice()
        .iter()
        .map(|&l| {
            if l > 0 && areas[l as usize - 1] >= min_area {
                l
            } else {
                0
            }
        })
        .collect();
    canonicalize(&InstanceMap::new(map.height(), map.width(), kept).expect("same shape"))
}

/// Restrict `mask` to its 4-connected components that contain a marker.
fn mask_reachable_from(mask: &NpTarget, markers: &InstanceMap) -> NpTarget {
    let (h, w) = mask.shape();
    let mut keep = vec![0u8; h * w];
    let mut stack: Vec<usize> = Vec::new();
    for (i, &l) in markers.as_slice().iter().enumerate() {
        if l > 0 && mask.is_set(i) && keep[i] == 0 {
            keep[i] = 1;
            stack.push(i);
            while let Some(p) = stack.pop() {
                for q in neighbors4(p, h, w) {
                    if mask.is_set(q) && keep[q] == 0 {
                        keep[q] = 1;
                        stack.push(q);
                    }
                }
            }
        }
    }
    NpTarget::new(h, w, keep).expect("same shape")
}

/// Class per instance: argmax over classes 1..N of summed NC probability,
/// ties to the lowest class id. Returns `(label, class_id)` sorted by label.
pub fn classify_instances(map: &InstanceMap, nc_prob: &NcProbabilities) -> Result<Vec<(u32, u8)>> {
    check_shape(map.shape(), nc_prob.shape())?;
    let channels = nc_prob.channels();
    let mut out = Vec::new();
    for (idx, pixels) in map.pixels_by_label().iter().enumerate() {
        if pixels.is_empty() {
            continue;
        }
        let mut sums = vec![0f64; channels];
        for &p in pixels {
            for (s, &x) in sums.iter_mut().zip(nc_prob.pixel(p)) {
                *s += x as f64;
            }
        }
        let mut best = 1usize;
        for k in 2..channels {
            if sums[k] > sums[best] {
                best = k;
            }
        }
        out.push((idx as u32 + 1, best as u8));
    }
    Ok(out)
}

/// Full post-processing chain: energy, markers, watershed, classification.
///
/// The watershed mask is the thresholded NP map restricted to components
/// holding at least one marker, so every output pixel belongs to exactly one
/// instance and every instance contains a marker of at least
/// `min_instance_area` pixels.
pub fn postprocess(pred: &ProbabilityMaps, params: &PostprocessParams) -> Result<(InstanceMap, ClassMap)> {
    params.validate()?;
    let shape = pred.shape();
    let energy = hover_energy(pred.hover());
    let markers = extract_markers(pred.np_prob(), &energy, params)?;
    let mask = threshold_mask(pred.np_prob(), shape, params.np_threshold);
    let mask = mask_reachable_from(&mask, &markers);
    let flooded = watershed(&energy, &markers, &mask)?;
    let instances = canonicalize(&flooded);
    let classes = classify_instances(&instances, pred.nc_prob())?;
    let class_of: Vec<u8> = classes.iter().map(|&(_, k)| k).collect();
    let class_map = ClassMap::from_instance_classes(&instances, &class_of);
    Ok((instances, class_map))
}
