//! Pseudo ground-truth masks from per-instance geometric jitter.
//!
//! Every instance is moved by an integer offset in
//! `[-max_translation, max_translation]` on each axis and rotated about its
//! centroid by an angle in `[-max_rotation, max_rotation]` degrees, keeping
//! its class. Rotation uses inverse mapping with nearest-neighbour lookup.
//!
//! Randomness comes from ChaCha8 streams: one stream per dataset item, and
//! within an item one stream per instance label, so the draws for an
//! instance do not depend on how many instances precede it.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instance::{canonicalize, extract_instances, neighbors4, ClassMap, InstanceMap};
use crate::metrics::LabelledImage;

/// Identifies the random stream layout; bump when draws change.
pub const RNG_VERSION: &str = "chacha8-stream-per-instance-v1";

/// Placement attempts per instance under [`CollisionPolicy::RejectRetry`].
pub const MAX_ATTEMPTS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CollisionPolicy {
    /// Resample an instance's transform when it would overlap another
    /// instance, leave the canvas entirely or break into pieces; after
    /// [`MAX_ATTEMPTS`] failures the instance stays where it was.
    #[default]
    RejectRetry,
    /// Accept the first draw; overlapping pixels stay with the instance
    /// placed first. Instances can lose pixels or vanish.
    KeepEarlier,
}

impl std::str::FromStr for CollisionPolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "reject-retry" => Ok(CollisionPolicy::RejectRetry),
            "keep-earlier" => Ok(CollisionPolicy::KeepEarlier),
            other => Err(Error::InvalidParameter(format!(
                "unknown collision policy {other:?} (expected reject-retry or keep-earlier)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JitterParams {
    /// Pixels, inclusive bound on |dx| and |dy|.
    pub max_translation: u32,
    /// Degrees, inclusive bound on |angle|.
    pub max_rotation: f64,
    pub seed: u64,
    pub collision_policy: CollisionPolicy,
}

impl Default for JitterParams {
    fn default() -> Self {
        JitterParams {
            max_translation: 3,
            max_rotation: 3.0,
            seed: 42,
            collision_policy: CollisionPolicy::RejectRetry,
        }
    }
}

impl JitterParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.max_rotation >= 0.0 && self.max_rotation.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "max_rotation must be a finite non-negative angle, got {}",
                self.max_rotation
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Transform {
    dx: i64,
    dy: i64,
    angle_deg: f64,
}

impl Transform {
    fn draw(rng: &mut ChaCha8Rng, params: &JitterParams) -> Self {
        let t = params.max_translation as i64;
        let dx = rng.random_range(-t..=t);
        let dy = rng.random_range(-t..=t);
        let r = params.max_rotation;
        let angle_deg = if r > 0.0 { rng.random_range(-r..=r) } else { 0.0 };
        Transform { dx, dy, angle_deg }
    }
}

/// Rasterize `pixels` (flat indices on an `h x w` canvas) under `t`,
/// dropping anything that leaves the canvas.
fn apply_transform(pixels: &[usize], h: usize, w: usize, t: Transform) -> Vec<usize> {
    let (h_i, w_i) = (h as i64, w as i64);
    let in_canvas = |r: i64, c: i64| r >= 0 && r < h_i && c >= 0 && c < w_i;
    if t.angle_deg == 0.0 {
        return pixels
            .iter()
            .filter_map(|&i| {
                let (r, c) = ((i / w) as i64 + t.dy, (i % w) as i64 + t.dx);
                in_canvas(r, c).then(|| (r * w_i + c) as usize)
            })
            .collect();
    }

    let n = pixels.len() as f64;
    let (mut r0, mut c0, mut r1, mut c1) = (i64::MAX, i64::MAX, i64::MIN, i64::MIN);
    let (mut sr, mut sc) = (0f64, 0f64);
    for &i in pixels {
        let (r, c) = ((i / w) as i64, (i % w) as i64);
        r0 = r0.min(r);
        c0 = c0.min(c);
        r1 = r1.max(r);
        c1 = c1.max(c);
        sr += r as f64;
        sc += c as f64;
    }
    let (cr, cc) = (sr / n, sc / n);
    let bw = (c1 - c0 + 1) as usize;
    let mut member = vec![false; (r1 - r0 + 1) as usize * bw];
    for &i in pixels {
        let (r, c) = ((i / w) as i64, (i % w) as i64);
        member[(r - r0) as usize * bw + (c - c0) as usize] = true;
    }
    let radius = pixels
        .iter()
        .map(|&i| {
            let (dr, dc) = ((i / w) as f64 - cr, (i % w) as f64 - cc);
            (dr * dr + dc * dc).sqrt()
        })
        .fold(0f64, f64::max)
        .ceil() as i64
        + 1;

    let (sin, cos) = t.angle_deg.to_radians().sin_cos();
    let (tr, tc) = (cr.round() as i64 + t.dy, cc.round() as i64 + t.dx);
    let mut out = Vec::new();
    for r in tr - radius..=tr + radius {
        for c in tc - radius..=tc + radius {
            if !in_canvas(r, c) {
                continue;
            }
            // inverse map: undo translation, then rotate by -angle about the centroid
            let y = (r - t.dy) as f64 - cr;
            let x = (c - t.dx) as f64 - cc;
            let src_r = (cr + cos * y + sin * x).round() as i64;
            let src_c = (cc - sin * y + cos * x).round() as i64;
            if src_r < r0 || src_r > r1 || src_c < c0 || src_c > c1 {
                continue;
            }
            if member[(src_r - r0) as usize * bw + (src_c - c0) as usize] {
                out.push((r * w_i + c) as usize);
            }
        }
    }
    out
}

fn is_connected(pixels: &[usize], h: usize, w: usize) -> bool {
    let Some(&start) = pixels.first() else {
        return false;
    };
    let set: std::collections::HashSet<usize> = pixels.iter().copied().collect();
    let mut seen = std::collections::HashSet::from([start]);
    let mut stack = vec![start];
    while let Some(i) = stack.pop() {
        for j in neighbors4(i, h, w) {
            if set.contains(&j) && seen.insert(j) {
                stack.push(j);
            }
        }
    }
    seen.len() == set.len()
}

fn instance_stream(seed: u64, label: u32) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(label as u64);
    rng
}

/// Seed for dataset item `index`, drawn from stream `index` of the base seed.
pub fn item_seed(seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.next_u64()
}

/// Jitter every instance of a canonical, paired-consistent mask pair.
///
/// Instances are placed in label order. Under reject-retry a placement may
/// not touch pixels already taken by placed instances nor the original
/// pixels of instances still waiting, which keeps the identity fallback
/// always collision-free.
pub fn jitter_instances(
    map: &InstanceMap,
    classes: &ClassMap,
    params: &JitterParams,
) -> Result<(InstanceMap, ClassMap)> {
    params.validate()?;
    let (h, w) = map.shape();
    let records = extract_instances(map, classes)?;
    let by_label = map.pixels_by_label();
    let orig = map.as_slice();
    let mut out = vec![0u32; h * w];
    let mut placed = vec![false; by_label.len() + 1];
    let mut class_of = vec![0u8; by_label.len()];

    for rec in &records {
        let label = rec.label;
        class_of[label as usize - 1] = rec.class_id;
        let pixels = &by_label[label as usize - 1];
        let mut rng = instance_stream(params.seed, label);
        let chosen = match params.collision_policy {
            CollisionPolicy::KeepEarlier => {
                let t = Transform::draw(&mut rng, params);
                apply_transform(pixels, h, w, t)
                    .into_iter()
                    .filter(|&i| out[i] == 0)
                    .collect()
            }
            CollisionPolicy::RejectRetry => {
                let free = |i: usize| {
                    out[i] == 0 && (orig[i] == 0 || orig[i] == label || placed[orig[i] as usize])
                };
                (0..MAX_ATTEMPTS)
                    .map(|_| apply_transform(pixels, h, w, Transform::draw(&mut rng, params)))
                    .find(|cand| cand.iter().all(|&i| free(i)) && is_connected(cand, h, w))
                    .unwrap_or_else(|| pixels.clone())
            }
        };
        for i in chosen {
            out[i] = label;
        }
        placed[label as usize] = true;
    }

    let jittered = InstanceMap::new(h, w, out)?;
    let class_map = ClassMap::from_instance_classes(&jittered, &class_of);
    Ok((canonicalize(&jittered), class_map))
}

/// `count` jittered pairs, item `i` built from source `i % len` with seed
/// [`item_seed`]`(params.seed, i)`.
pub fn generate_pseudo_dataset(
    sources: &[LabelledImage],
    count: usize,
    params: &JitterParams,
) -> Result<Vec<LabelledImage>> {
    if sources.is_empty() {
        return Err(Error::EmptySource);
    }
    params.validate()?;
    (0..count)
        .into_par_iter()
        .map(|i| {
            let src = &sources[i % sources.len()];
            let item_params = JitterParams {
                seed: item_seed(params.seed, i as u64),
                ..*params
            };
            let (instances, classes) = jitter_instances(&src.instances, &src.classes, &item_params)?;
            Ok(LabelledImage { instances, classes })
        })
        .collect()
}
