//! Seeded synthetic scenes and oracle network outputs.
//!
//! Scenes are rasterized ellipses with random classes. Oracle predictions
//! are what a perfect network would emit for a ground truth: the NP target
//! as probability, the exact HoVer maps and one-hot class distributions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::classes::N_CLASSES;
use crate::hover::{compute_hover_maps, compute_np_target};
use crate::instance::{canonicalize, neighbors4, ClassMap, InstanceMap};
use crate::metrics::LabelledImage;
use crate::postprocess::{NcProbabilities, ProbabilityMaps};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneParams {
    pub height: usize,
    pub width: usize,
    pub min_instances: usize,
    pub max_instances: usize,
    /// Semi-axis range in pixels.
    pub min_radius: f64,
    pub max_radius: f64,
}

impl Default for SceneParams {
    fn default() -> Self {
        SceneParams {
            height: 96,
            width: 96,
            min_instances: 5,
            max_instances: 30,
            min_radius: 3.0,
            max_radius: 7.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    row: f64,
    col: f64,
    a: f64,
    b: f64,
    theta: f64,
}

impl Ellipse {
    fn draw(rng: &mut ChaCha8Rng, h: usize, w: usize, rmin: f64, rmax: f64) -> Self {
        let a = rng.random_range(rmin..=rmax);
        let b = rng.random_range(rmin..=rmax);
        let margin = a.max(b) + 1.0;
        Ellipse {
            row: rng.random_range(margin..(h as f64 - margin).max(margin + 1e-9)),
            col: rng.random_range(margin..(w as f64 - margin).max(margin + 1e-9)),
            a,
            b,
            theta: rng.random_range(0.0..std::f64::consts::PI),
        }
    }

    /// Normalized radius of pixel centre (r, c); inside when ≤ 1.
    fn rho(&self, r: usize, c: usize) -> f64 {
        let (dr, dc) = (r as f64 - self.row, c as f64 - self.col);
        let (s, co) = self.theta.sin_cos();
        let u = dc * co + dr * s;
        let v = -dc * s + dr * co;
        ((u / self.a).powi(2) + (v / self.b).powi(2)).sqrt()
    }

    fn pixels(&self, h: usize, w: usize) -> Vec<usize> {
        let reach = self.a.max(self.b).ceil() as isize + 1;
        let (r0, c0) = (self.row.round() as isize, self.col.round() as isize);
        let mut out = Vec::new();
        for r in (r0 - reach).max(0)..=(r0 + reach).min(h as isize - 1) {
            for c in (c0 - reach).max(0)..=(c0 + reach).min(w as isize - 1) {
                if self.rho(r as usize, c as usize) <= 1.0 {
                    out.push(r as usize * w + c as usize);
                }
            }
        }
        out
    }
}

fn is_single_component(pixels: &[usize], h: usize, w: usize) -> bool {
    let mut m = vec![0u32; h * w];
    for &i in pixels {
        m[i] = 1;
    }
    canonicalize(&InstanceMap::new(h, w, m).expect("shape")).max_label() == 1
}

fn random_class(rng: &mut ChaCha8Rng) -> u8 {
    rng.random_range(1..=N_CLASSES as u8)
}

/// A scene of non-touching ellipses; no two instances share even a
/// diagonal neighbour. The instance count is drawn from the configured
/// range and may fall short only if the canvas is too crowded.
pub fn blob_scene(seed: u64, params: &SceneParams) -> LabelledImage {
    let (h, w) = (params.height, params.width);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = rng.random_range(params.min_instances..=params.max_instances);
    // occupied pixels dilated by one in the 8-neighbourhood
    let mut blocked = vec![false; h * w];
    let mut labels = vec![0u32; h * w];
    let mut classes = Vec::new();
    let mut attempts = 0;
    while classes.len() < target && attempts < 100 * target {
        attempts += 1;
        let e = Ellipse::draw(&mut rng, h, w, params.min_radius, params.max_radius);
        let px = e.pixels(h, w);
        if px.len() < 10 || px.iter().any(|&i| blocked[i]) || !is_single_component(&px, h, w) {
            continue;
        }
        let label = classes.len() as u32 + 1;
        for &i in &px {
            labels[i] = label;
            let (r, c) = ((i / w) as isize, (i % w) as isize);
            for dr in -1..=1 {
                for dc in -1..=1 {
                    let (rr, cc) = (r + dr, c + dc);
                    if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                        blocked[rr as usize * w + cc as usize] = true;
                    }
                }
            }
        }
        classes.push(random_class(&mut rng));
    }
    let raw = InstanceMap::new(h, w, labels).expect("shape");
    let class_map = ClassMap::from_instance_classes(&raw, &classes);
    let instances = canonicalize(&raw);
    LabelledImage::new(instances, class_map).expect("same shape")
}

/// Two overlapping ellipses split along their weighted bisector, giving
/// two instances that share a seam. Both get the same class, so only the
/// HoVer maps can separate them.
pub fn touching_pair(seed: u64) -> LabelledImage {
    let (h, w) = (40usize, 40usize);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let r1 = rng.random_range(4.0..7.0);
        let r2 = rng.random_range(4.0..7.0);
        let overlap = rng.random_range(1.0..3.0);
        let phi = rng.random_range(0.0..std::f64::consts::TAU);
        let d = r1 + r2 - overlap;
        let (cr, cc) = (20.0 + rng.random_range(-1.0..1.0), 20.0 + rng.random_range(-1.0..1.0));
        let disks = [
            Ellipse { row: cr - 0.5 * d * phi.sin(), col: cc - 0.5 * d * phi.cos(), a: r1, b: r1, theta: 0.0 },
            Ellipse { row: cr + 0.5 * d * phi.sin(), col: cc + 0.5 * d * phi.cos(), a: r2, b: r2, theta: 0.0 },
        ];
        let labels = InstanceMap::from_fn(h, w, |r, c| {
            let (p, q) = (disks[0].rho(r, c), disks[1].rho(r, c));
            match (p <= 1.0, q <= 1.0) {
                (false, false) => 0,
                (true, false) => 1,
                (false, true) => 2,
                (true, true) => 1 + u32::from(q < p),
            }
        });
        let m = canonicalize(&labels);
        if m.max_label() != 2 || !touches(&m) {
            continue;
        }
        let class = random_class(&mut rng);
        let classes = ClassMap::from_instance_classes(&m, &[class, class]);
        return LabelledImage::new(m, classes).expect("same shape");
    }
}

fn touches(m: &InstanceMap) -> bool {
    let (h, w) = m.shape();
    let s = m.as_slice();
    (0..h * w).any(|i| s[i] > 0 && neighbors4(i, h, w).any(|j| s[j] > 0 && s[j] != s[i]))
}

/// Outputs of a perfect network for `gt`, with background plus six class
/// channels.
pub fn oracle_prediction(gt: &LabelledImage) -> ProbabilityMaps {
    let np = compute_np_target(&gt.instances)
        .as_slice()
        .iter()
        .map(|&x| x as f32)
        .collect();
    ProbabilityMaps::new(
        np,
        compute_hover_maps(&gt.instances),
        NcProbabilities::one_hot(&gt.classes, N_CLASSES + 1),
    )
    .expect("shapes agree")
}

/// Stain concentrations for a scene: nuclei mostly hematoxylin, the rest
/// eosin-stained stroma, values drawn per pixel.
pub fn stain_concentrations(seed: u64, gt: &InstanceMap) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    gt.as_slice()
        .iter()
        .map(|&l| {
            if l > 0 {
                [rng.random_range(0.6..1.2), rng.random_range(0.0..0.2)]
            } else if rng.random_bool(0.15) {
                [0.0, 0.0]
            } else {
                [rng.random_range(0.0..0.15), rng.random_range(0.2..0.7)]
            }
        })
        .collect()
}
