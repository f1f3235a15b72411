mod common;

use nuclei_core::hover::{compute_hover_maps, HoverMaps, NpTarget};
use nuclei_core::instance::{canonicalize, InstanceMap};
use nuclei_core::postprocess::{classify_instances, hover_energy, watershed, EnergyMap, NcProbabilities};
use rand::Rng;

#[test]
fn watershed_partitions_the_reachable_mask() {
    let mut rng = common::rng(21);
    for _ in 0..100 {
        let (h, w) = common::random_shape(&mut rng, 24);
        let fg = common::random_label_map(&mut rng, h, w, 4);
        let mask = NpTarget::new(h, w, fg.as_slice().iter().map(|&l| u8::from(l > 0)).collect()).unwrap();
        let energy = EnergyMap::new(h, w, (0..h * w).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap();
        // markers: a few single pixels inside the mask
        let mut seeds = vec![0u32; h * w];
        let mut next = 0;
        for i in 0..h * w {
            if mask.is_set(i) && rng.random_bool(0.05) {
                next += 1;
                seeds[i] = next;
            }
        }
        let markers = InstanceMap::new(h, w, seeds).unwrap();
        let out = watershed(&energy, &markers, &mask).unwrap();

        // oracle: mask components containing a marker
        let mask_map = InstanceMap::new(h, w, mask.as_slice().iter().map(|&x| x as u32).collect()).unwrap();
        let comps = canonicalize(&mask_map);
        let mut has_marker = vec![false; comps.max_label() as usize + 1];
        for (i, &l) in markers.as_slice().iter().enumerate() {
            if l > 0 {
                has_marker[comps.as_slice()[i] as usize] = true;
            }
        }
        for i in 0..h * w {
            let reachable = mask.is_set(i) && has_marker[comps.as_slice()[i] as usize];
            assert_eq!(out.as_slice()[i] > 0, reachable, "pixel {i}");
            if markers.as_slice()[i] > 0 {
                assert_eq!(out.as_slice()[i], markers.as_slice()[i]);
            }
        }
        // every flooded region is one connected piece holding its marker
        assert_eq!(canonicalize(&out).max_label(), next);
    }
}

#[test]
fn one_marker_covering_mask_is_unchanged() {
    let mask = NpTarget::new(2, 3, vec![1, 1, 0, 1, 1, 1]).unwrap();
    let markers = InstanceMap::new(2, 3, vec![1, 1, 0, 1, 1, 1]).unwrap();
    let energy = EnergyMap::new(2, 3, vec![0.5; 6]).unwrap();
    assert_eq!(watershed(&energy, &markers, &mask).unwrap(), markers);
}

#[test]
fn classify_matches_summation_oracle() {
    let mut rng = common::rng(22);
    for _ in 0..100 {
        let (h, w) = common::random_shape(&mut rng, 20);
        let m = canonicalize(&common::random_label_map(&mut rng, h, w, 8));
        let channels = 7;
        let mut data = Vec::new();
        for _ in 0..h * w {
            let row: Vec<f32> = (0..channels).map(|_| rng.random_range(0.0..1.0f32)).collect();
            let s: f32 = row.iter().sum();
            data.extend(row.iter().map(|x| x / s));
        }
        let nc = NcProbabilities::new(h, w, channels, data.clone()).unwrap();
        let got = classify_instances(&m, &nc).unwrap();
        let mut expected = Vec::new();
        for label in 1..=m.max_label() {
            let mut sums = [0f64; 7];
            for i in 0..h * w {
                if m.as_slice()[i] == label {
                    for k in 0..channels {
                        sums[k] += data[i * channels + k] as f64;
                    }
                }
            }
            let best = (1..channels).fold(1, |b, k| if sums[k] > sums[b] { k } else { b });
            expected.push((label, best as u8));
        }
        assert_eq!(got, expected);
    }
}

#[test]
fn zero_hover_has_zero_energy() {
    let e = hover_energy(&HoverMaps::zeros(7, 9));
    assert!(e.as_slice().iter().all(|&x| x == 0.0));
}

#[test]
fn smooth_instance_interior_is_below_junction() {
    let junction = HoverMaps::new(2, 6, [-1., 0., 1., -1., 0., 1.].repeat(2), vec![0.0; 12]).unwrap();
    let peak = hover_energy(&junction).get(0, 2);
    assert_eq!(peak, 1.0);
    let disk = InstanceMap::from_fn(21, 21, |r, c| {
        let (dr, dc) = (r as f64 - 10.0, c as f64 - 10.0);
        u32::from(dr * dr + dc * dc <= 64.0)
    });
    let e = hover_energy(&compute_hover_maps(&disk));
    for r in 1..20 {
        for c in 1..20 {
            let interior = (-1i64..=1).all(|dr| {
                (-1i64..=1).all(|dc| disk.get((r as i64 + dr) as usize, (c as i64 + dc) as usize) == 1)
            });
            if interior {
                assert!(e.get(r, c) < peak, "({r},{c}) = {}", e.get(r, c));
            }
        }
    }
}
