//! Label-image types shared by every stage of the pipeline.
//!
//! An [`InstanceMap`] assigns each pixel a nucleus id (0 = background) and a
//! [`ClassMap`] assigns each pixel a class id (0 = background, 1..=6 nuclear
//! classes). Both are stored row-major.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Integer label image, 0 = background.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct InstanceMap {
    height: usize,
    width: usize,
    labels: Vec<u32>,
}

impl InstanceMap {
    pub fn new(height: usize, width: usize, labels: Vec<u32>) -> Result<Self> {
        if labels.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                actual: labels.len(),
            });
        }
        Ok(InstanceMap {
            height,
            width,
            labels,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        InstanceMap {
            height,
            width,
            labels: vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> u32) -> Self {
        let mut labels = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                labels.push(f(r, c));
            }
        }
        InstanceMap {
            height,
            width,
            labels,
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

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.width + col]
    }

    pub fn as_slice(&self) -> &[u32] {
        &self.labels
    }

    pub fn into_vec(self) -> Vec<u32> {
        self.labels
    }

    /// Largest label present (0 for an empty map).
    pub fn max_label(&self) -> u32 {
        self.labels.iter().copied().max().unwrap_or(0)
    }

    pub fn foreground_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l > 0).count()
    }

    /// Pixel indices of every label, indexed by `label - 1`.
    ///
    /// Labels absent from the map yield empty vectors.
    pub fn pixels_by_label(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.max_label() as usize];
        for (i, &l) in self.labels.iter().enumerate() {
            if l > 0 {
                out[l as usize - 1].push(i);
            }
        }
        out
    }

    /// True if labels are exactly 1..=K, each 4-connected, numbered in
    /// row-major first-pixel order.
    pub fn is_canonical(&self) -> bool {
        canonicalize(self) == *self
    }
}

/// Per-pixel semantic class image, 0 = background.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ClassMap {
    height: usize,
    width: usize,
    classes: Vec<u8>,
}

impl ClassMap {
    pub fn new(height: usize, width: usize, classes: Vec<u8>) -> Result<Self> {
        if classes.len() != height * width {
            return Err(Error::LengthMismatch {
                expected: height * width,
                actual: classes.len(),
            });
        }
        Ok(ClassMap {
            height,
            width,
            classes,
        })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        ClassMap {
            height,
            width,
            classes: vec![0; height * width],
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

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.classes[row * self.width + col]
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.classes
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.classes
    }

    /// Paint every pixel of each instance with its class.
    ///
    /// `classes[i]` is the class of label `i + 1`.
    pub fn from_instance_classes(map: &InstanceMap, classes: &[u8]) -> Self {
        let data = map
            .as_slice()
            .iter()
            .map(|&l| if l == 0 { 0 } else { classes[l as usize - 1] })
            .collect();
        ClassMap {
            height: map.height(),
            width: map.width(),
            classes: data,
        }
    }
}

/// Inclusive bounding box `(r0, c0)..=(r1, c1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub r0: usize,
    pub c0: usize,
    pub r1: usize,
    pub c1: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub label: u32,
    pub class_id: u8,
    /// (row, col) mean of pixel coordinates.
    pub centroid: (f64, f64),
    pub bbox: BBox,
    pub area: usize,
}

/// Split every label into its 4-connected components and renumber them
/// 1..=K in row-major order of each component's first pixel.
pub fn canonicalize(map: &InstanceMap) -> InstanceMap {
    let (h, w) = map.shape();
    let src = map.as_slice();
    let mut out = vec![0u32; h * w];
    let mut next = 0u32;
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        let label = src[start];
        if label == 0 || out[start] != 0 {
            continue;
        }
        next += 1;
        out[start] = next;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            for j in neighbors4(i, h, w) {
                if src[j] == label && out[j] == 0 {
                    out[j] = next;
                    queue.push_back(j);
                }
            }
        }
    }
    InstanceMap {
        height: h,
        width: w,
        labels: out,
    }
}

/// 4-neighbours of flat index `i` on an `h x w` grid.
pub(crate) fn neighbors4(i: usize, h: usize, w: usize) -> impl Iterator<Item = usize> {
    let (r, c) = (i / w, i % w);
    let up = (r > 0).then(|| i - w);
    let down = (r + 1 < h).then(|| i + w);
    let left = (c > 0).then(|| i - 1);
    let right = (c + 1 < w).then(|| i + 1);
    [up, left, right, down].into_iter().flatten()
}

/// One record per label present in `map`, sorted by label.
///
/// The class of an instance is the majority class over its pixels, ties
/// going to the lowest class id.
pub fn extract_instances(map: &InstanceMap, classes: &ClassMap) -> Result<Vec<InstanceRecord>> {
    check_shape(map.shape(), classes.shape())?;
    let w = map.width();
    let mut records = Vec::new();
    for (idx, pixels) in map.pixels_by_label().iter().enumerate() {
        if pixels.is_empty() {
            continue;
        }
        let label = idx as u32 + 1;
        let mut hist = [0usize; 256];
        let (mut sr, mut sc) = (0f64, 0f64);
        let mut bbox = BBox {
            r0: usize::MAX,
            c0: usize::MAX,
            r1: 0,
            c1: 0,
        };
        for &i in pixels {
            let (r, c) = (i / w, i % w);
            let class = classes.as_slice()[i];
            if class == 0 {
                return Err(Error::Inconsistent {
                    label,
                    row: r,
                    col: c,
                });
            }
            hist[class as usize] += 1;
            sr += r as f64;
            sc += c as f64;
            bbox.r0 = bbox.r0.min(r);
            bbox.c0 = bbox.c0.min(c);
            bbox.r1 = bbox.r1.max(r);
            bbox.c1 = bbox.c1.max(c);
        }
        // max_by_key keeps the last maximum, so scan in reverse to favour low ids.
        let class_id = (1..256usize)
            .rev()
            .max_by_key(|&k| hist[k])
            .expect("non-empty range") as u8;
        let n = pixels.len() as f64;
        records.push(InstanceRecord {
            label,
            class_id,
            centroid: (sr / n, sc / n),
            bbox,
            area: pixels.len(),
        });
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    /// Background pixel carrying a nonzero class.
    ClassOnBackground,
    /// Instance pixel with class 0.
    UnclassifiedInstance,
}

/// A pixel breaking the `class > 0 <=> label > 0` pairing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub row: usize,
    pub col: usize,
    pub kind: ViolationKind,
}

/// Every pixel violating paired consistency, in row-major order.
pub fn validate_pair(map: &InstanceMap, classes: &ClassMap) -> Result<Vec<Violation>> {
    check_shape(map.shape(), classes.shape())?;
    let w = map.width();
    Ok(map
        .as_slice()
        .iter()
        .zip(classes.as_slice())
        .enumerate()
        .filter_map(|(i, (&l, &c))| {
            let kind = match (l > 0, c > 0) {
                (false, true) => ViolationKind::ClassOnBackground,
                (true, false) => ViolationKind::UnclassifiedInstance,
                _ => return None,
            };
            Some(Violation {
                row: i / w,
                col: i % w,
                kind,
            })
        })
        .collect())
}

/// Render violations as JSON lines.
pub fn violations_to_jsonl(violations: &[Violation]) -> String {
    let mut out = String::new();
    for v in violations {
        out.push_str(&serde_json::to_string(v).expect("violation serializes"));
        out.push('\n');
    }
    out
}

pub(crate) fn check_shape(expected: (usize, usize), actual: (usize, usize)) -> Result<()> {
    if expected != actual {
        return Err(Error::ShapeMismatch { expected, actual });
    }
    Ok(())
}
