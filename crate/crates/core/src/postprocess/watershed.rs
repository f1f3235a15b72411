//! Marker-controlled watershed (Meyer flooding) restricted to a mask.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use crate::error::{Error, Result};
use crate::hover::NpTarget;
use crate::instance::{check_shape, neighbors4, InstanceMap};

use super::energy::EnergyMap;

/// Queue key: lower energy first, then earlier insertion.
#[derive(Debug, Clone, Copy)]
struct Entry {
    energy: f32,
    seq: u64,
    index: usize,
}

impl PartialEq for Entry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Entry {}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        self.energy
            .total_cmp(&other.energy)
            .then(self.seq.cmp(&other.seq))
    }
}

/// Flood `energy` from `markers`, assigning mask pixels to the label of the
/// first queued neighbour that reaches them.
///
/// Marker pixels keep their label. Mask pixels not connected to any marker
/// stay 0. Ties in energy are broken by queue insertion order, and marker
/// pixels are queued in row-major order, so the result is fully determined
/// by the inputs.
pub fn watershed(energy: &EnergyMap, markers: &InstanceMap, mask: &NpTarget) -> Result<InstanceMap> {
    let (h, w) = markers.shape();
    check_shape((h, w), energy.shape())?;
    check_shape((h, w), mask.shape())?;
    let e = energy.as_slice();

    let mut out = markers.as_slice().to_vec();
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    for (i, &l) in out.iter().enumerate() {
        if l == 0 {
            continue;
        }
        if !mask.is_set(i) {
            return Err(Error::MarkerOutsideMask {
                row: i / w,
                col: i % w,
            });
        }
        heap.push(Reverse(Entry {
            energy: e[i],
            seq,
            index: i,
        }));
        seq += 1;
    }

    while let Some(Reverse(Entry { index, .. })) = heap.pop() {
        let label = out[index];
        for j in neighbors4(index, h, w) {
            if out[j] == 0 && mask.is_set(j) {
                out[j] = label;
                heap.push(Reverse(Entry {
                    energy: e[j],
                    seq,
                    index: j,
                }));
                seq += 1;
            }
        }
    }
    InstanceMap::new(h, w, out)
}
