//! Generators and brute-force oracles shared by the integration tests.
//!
//! The oracles deliberately avoid the library's own helpers: they scan
//! pixels directly and favour obviousness over speed.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use nuclei_core::instance::{ClassMap, InstanceMap};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random rectangles and discs with labels from 1..=max_label drawn in
/// order, later shapes overwriting earlier ones. Labels can repeat, vanish
/// or end up split; nothing is canonical.
pub fn random_label_map(rng: &mut ChaCha8Rng, h: usize, w: usize, max_label: u32) -> InstanceMap {
    let mut labels = vec![0u32; h * w];
    let n_shapes = rng.random_range(0..=max_label as usize);
    for _ in 0..n_shapes {
        let label = rng.random_range(1..=max_label);
        let r0 = rng.random_range(0..h);
        let c0 = rng.random_range(0..w);
        let rh = rng.random_range(1..=(h / 3).max(1));
        let rw = rng.random_range(1..=(w / 3).max(1));
        let disc = rng.random_bool(0.5);
        for r in r0.saturating_sub(rh)..(r0 + rh).min(h) {
            for c in c0.saturating_sub(rw)..(c0 + rw).min(w) {
                let (dr, dc) = (r as f64 - r0 as f64, c as f64 - c0 as f64);
                if !disc || (dr / rh as f64).powi(2) + (dc / rw as f64).powi(2) <= 1.0 {
                    labels[r * w + c] = label;
                }
            }
        }
    }
    InstanceMap::new(h, w, labels).unwrap()
}

/// A prediction derived from `gt`: relabelled, shifted, with pixel noise,
/// and with some labels dropped or merged, so that both matches and
/// misses occur.
pub fn perturbed_prediction(rng: &mut ChaCha8Rng, gt: &InstanceMap, max_label: u32) -> InstanceMap {
    let (h, w) = gt.shape();
    let mut perm: Vec<u32> = (1..=max_label).collect();
    for i in (1..perm.len()).rev() {
        let j = rng.random_range(0..=i);
        perm.swap(i, j);
    }
    let drop = rng.random_range(1..=max_label);
    let merge = (rng.random_range(1..=max_label), rng.random_range(1..=max_label));
    let dr = rng.random_range(-2i64..=2);
    let dc = rng.random_range(-2i64..=2);
    let noise = rng.random_range(0.0..0.2);
    let mut out = vec![0u32; h * w];
    for r in 0..h {
        for c in 0..w {
            let (sr, sc) = (r as i64 - dr, c as i64 - dc);
            let mut l = if sr >= 0 && sc >= 0 && (sr as usize) < h && (sc as usize) < w {
                gt.get(sr as usize, sc as usize)
            } else {
                0
            };
            if l == drop {
                l = 0;
            }
            if l == merge.0 {
                l = merge.1;
            }
            if l > 0 {
                l = perm[l as usize - 1];
            }
            if rng.random_bool(noise) {
                l = rng.random_range(0..=max_label);
            }
            out[r * w + c] = l;
        }
    }
    InstanceMap::new(h, w, out).unwrap()
}

/// Exactly rounded sum of floats (Shewchuk's partials).
pub fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    // partials are non-overlapping and increasing; summing from the top
    // with round-half-even correction gives the correctly rounded result
    let mut hi = 0.0;
    if let Some(mut n) = partials.len().checked_sub(1) {
        hi = partials[n];
        let mut lo = 0.0;
        while n > 0 {
            n -= 1;
            let x = hi;
            let y = partials[n];
            hi = x + y;
            let yr = hi - x;
            lo = y - yr;
            if lo != 0.0 {
                break;
            }
        }
        if n > 0 && ((lo < 0.0 && partials[n - 1] < 0.0) || (lo > 0.0 && partials[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
    }
    hi
}

#[derive(Debug, Clone, PartialEq)]
pub struct BruteMatch {
    /// (pred, gt, intersection, union), sorted.
    pub pairs: Vec<(u32, u32, u64, u64)>,
    pub fp: Vec<u32>,
    pub fn_: Vec<u32>,
    pub dq: f64,
    pub sq: f64,
    pub pq: f64,
}

/// All-pairs IoU matching by rescanning the whole image for each pair.
pub fn brute_force_pq(pred: &InstanceMap, gt: &InstanceMap) -> BruteMatch {
    let p_labels: BTreeSet<u32> = pred.as_slice().iter().copied().filter(|&l| l > 0).collect();
    let g_labels: BTreeSet<u32> = gt.as_slice().iter().copied().filter(|&l| l > 0).collect();
    let mut pairs = Vec::new();
    for &p in &p_labels {
        for &g in &g_labels {
            let mut inter = 0u64;
            let mut union = 0u64;
            for (&a, &b) in pred.as_slice().iter().zip(gt.as_slice()) {
                let (ia, ib) = (a == p, b == g);
                inter += u64::from(ia && ib);
                union += u64::from(ia || ib);
            }
            if inter as f64 / union as f64 > 0.5 {
                pairs.push((p, g, inter, union));
            }
        }
    }
    let fp: Vec<u32> = p_labels.iter().copied().filter(|p| !pairs.iter().any(|x| x.0 == *p)).collect();
    let fn_: Vec<u32> = g_labels.iter().copied().filter(|g| !pairs.iter().any(|x| x.1 == *g)).collect();
    let tp = pairs.len() as f64;
    let (dq, sq) = if pairs.is_empty() && fp.is_empty() && fn_.is_empty() {
        (1.0, 1.0)
    } else {
        let dq = tp / (tp + 0.5 * fp.len() as f64 + 0.5 * fn_.len() as f64);
        let sq = if pairs.is_empty() {
            0.0
        } else {
            exact_sum(pairs.iter().map(|&(_, _, i, u)| i as f64 / u as f64)) / tp
        };
        (dq, sq)
    };
    BruteMatch {
        pq: dq * sq,
        pairs,
        fp,
        fn_,
        dq,
        sq,
    }
}

/// Components of equal nonzero labels by BFS over 4-neighbours, as sets of
/// flat indices, in no particular order.
pub fn flood_fill_partition(map: &InstanceMap) -> BTreeSet<BTreeSet<usize>> {
    let (h, w) = map.shape();
    let mut seen = vec![false; h * w];
    let mut parts = BTreeSet::new();
    for start in 0..h * w {
        let l = map.as_slice()[start];
        if l == 0 || seen[start] {
            continue;
        }
        let mut comp = BTreeSet::new();
        let mut q = VecDeque::from([start]);
        seen[start] = true;
        while let Some(i) = q.pop_front() {
            comp.insert(i);
            let (r, c) = (i / w, i % w);
            let mut nb = Vec::new();
            if r > 0 {
                nb.push(i - w);
            }
            if r + 1 < h {
                nb.push(i + w);
            }
            if c > 0 {
                nb.push(i - 1);
            }
            if c + 1 < w {
                nb.push(i + 1);
            }
            for j in nb {
                if !seen[j] && map.as_slice()[j] == l {
                    seen[j] = true;
                    q.push_back(j);
                }
            }
        }
        parts.insert(comp);
    }
    parts
}

/// Partition of a label image as sets of pixels, one per nonzero label.
pub fn label_partition(map: &InstanceMap) -> BTreeSet<BTreeSet<usize>> {
    let mut by: BTreeMap<u32, BTreeSet<usize>> = BTreeMap::new();
    for (i, &l) in map.as_slice().iter().enumerate() {
        if l > 0 {
            by.entry(l).or_default().insert(i);
        }
    }
    by.into_values().collect()
}

/// A class map consistent with `map`: every pixel of label `l` gets
/// `class_of(l)`.
pub fn classes_for(map: &InstanceMap, class_of: impl Fn(u32) -> u8) -> ClassMap {
    let data = map.as_slice().iter().map(|&l| if l == 0 { 0 } else { class_of(l) }).collect();
    ClassMap::new(map.height(), map.width(), data).unwrap()
}

pub fn random_shape(rng: &mut ChaCha8Rng, max: usize) -> (usize, usize) {
    (rng.random_range(1..=max), rng.random_range(1..=max))
}
