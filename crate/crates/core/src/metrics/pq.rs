use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::instance::{check_shape, InstanceMap};

/// A matched (prediction, ground truth) pair with IoU > 0.5.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchedPair {
    pub pred: u32,
    pub gt: u32,
    pub intersection: u64,
    pub union: u64,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MatchResult {
    /// Sorted by prediction label.
    pub tp_pairs: Vec<MatchedPair>,
    pub fp_labels: Vec<u32>,
    pub fn_labels: Vec<u32>,
}

/// Match instances by IoU > 0.5.
///
/// Above one half, a prediction can overlap at most one ground-truth
/// instance that well (and vice versa), so the matching is unique without
/// any assignment step. The threshold test runs on integer pixel counts.
pub fn match_instances(pred: &InstanceMap, gt: &InstanceMap) -> Result<MatchResult> {
    check_shape(gt.shape(), pred.shape())?;
    let mut pred_area = vec![0u64; pred.max_label() as usize + 1];
    let mut gt_area = vec![0u64; gt.max_label() as usize + 1];
    let mut inter: BTreeMap<(u32, u32), u64> = BTreeMap::new();
    for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
        pred_area[p as usize] += 1;
        gt_area[g as usize] += 1;
        if p > 0 && g > 0 {
            *inter.entry((p, g)).or_default() += 1;
        }
    }

    let mut result = MatchResult::default();
    let mut pred_matched = vec![false; pred_area.len()];
    let mut gt_matched = vec![false; gt_area.len()];
    for (&(p, g), &i) in &inter {
        let union = pred_area[p as usize] + gt_area[g as usize] - i;
        if 2 * i > union {
            pred_matched[p as usize] = true;
            gt_matched[g as usize] = true;
            result.tp_pairs.push(MatchedPair {
                pred: p,
                gt: g,
                intersection: i,
                union,
                iou: i as f64 / union as f64,
            });
        }
    }
    result.fp_labels = (1..pred_area.len())
        .filter(|&l| pred_area[l] > 0 && !pred_matched[l])
        .map(|l| l as u32)
        .collect();
    result.fn_labels = (1..gt_area.len())
        .filter(|&l| gt_area[l] > 0 && !gt_matched[l])
        .map(|l| l as u32)
        .collect();
    Ok(result)
}

/// Detection quality, segmentation quality and their product.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PqStats {
    pub dq: f64,
    pub sq: f64,
    pub pq: f64,
    /// No TP, FP or FN at all; `pq` is then reported as 1.0.
    pub empty: bool,
}

/// f64 values in [0.5, 1] are integer multiples of 2^-53, so matched IoUs
/// accumulate exactly in fixed point at that scale.
const IOU_SCALE: f64 = 9_007_199_254_740_992.0;

/// Mergeable PQ statistics. Merging is exact, so any reduction order over
/// images gives bit-identical results.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PqAccumulator {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    iou_sum_fixed: u128,
}

impl PqAccumulator {
    pub fn add(&mut self, m: &MatchResult) {
        self.tp += m.tp_pairs.len() as u64;
        self.fp += m.fp_labels.len() as u64;
        self.fn_ += m.fn_labels.len() as u64;
        for pair in &m.tp_pairs {
            self.iou_sum_fixed += (pair.iou * IOU_SCALE) as u128;
        }
    }

    pub fn merge(mut self, other: PqAccumulator) -> PqAccumulator {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.iou_sum_fixed += other.iou_sum_fixed;
        self
    }

    pub fn iou_sum(&self) -> f64 {
        self.iou_sum_fixed as f64 / IOU_SCALE
    }

    pub fn finish(&self) -> PqStats {
        if self.tp + self.fp + self.fn_ == 0 {
            return PqStats {
                dq: 1.0,
                sq: 1.0,
                pq: 1.0,
                empty: true,
            };
        }
        let tp = self.tp as f64;
        let dq = tp / (tp + 0.5 * self.fp as f64 + 0.5 * self.fn_ as f64);
        let sq = if self.tp == 0 { 0.0 } else { self.iou_sum() / tp };
        PqStats {
            dq,
            sq,
            pq: dq * sq,
            empty: false,
        }
    }
}

pub fn pq(m: &MatchResult) -> PqStats {
    let mut acc = PqAccumulator::default();
    acc.add(m);
    acc.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_maps_match_perfectly() {
        let m = InstanceMap::new(2, 4, vec![1, 1, 0, 2, 3, 0, 0, 2]).unwrap();
        let r = match_instances(&m, &m).unwrap();
        assert_eq!(r.tp_pairs.len(), 3);
        assert!(r.tp_pairs.iter().all(|p| p.iou == 1.0 && p.pred == p.gt));
        assert!(r.fp_labels.is_empty() && r.fn_labels.is_empty());
        let s = pq(&r);
        assert_eq!((s.dq, s.sq, s.pq, s.empty), (1.0, 1.0, 1.0, false));
    }

    #[test]
    fn empty_prediction_all_false_negatives() {
        let gt = InstanceMap::new(1, 4, vec![1, 0, 2, 2]).unwrap();
        let r = match_instances(&InstanceMap::zeros(1, 4), &gt).unwrap();
        assert_eq!((r.tp_pairs.len(), r.fp_labels.len(), r.fn_labels.len()), (0, 0, 2));
        assert_eq!(pq(&r).pq, 0.0);
    }

    #[test]
    fn formula_example() {
        let m = MatchResult {
            tp_pairs: vec![MatchedPair {
                pred: 1,
                gt: 1,
                intersection: 4,
                union: 5,
                iou: 0.8,
            }],
            fp_labels: vec![2],
            fn_labels: vec![2],
        };
        let s = pq(&m);
        assert_eq!(s.dq, 0.5);
        assert_eq!(s.sq, 0.8);
        assert_eq!(s.pq, 0.4);
    }

    #[test]
    fn exactly_half_is_not_a_match() {
        let pred = InstanceMap::new(1, 4, vec![1, 1, 0, 0]).unwrap();
        let gt = InstanceMap::new(1, 4, vec![0, 1, 1, 0]).unwrap();
        // iou = 1/3
        let r = match_instances(&pred, &gt).unwrap();
        assert!(r.tp_pairs.is_empty());
        let pred = InstanceMap::new(1, 4, vec![1, 1, 0, 0]).unwrap();
        let gt = InstanceMap::new(1, 4, vec![1, 1, 1, 1]).unwrap();
        // iou = 2/4
        assert!(match_instances(&pred, &gt).unwrap().tp_pairs.is_empty());
    }

    #[test]
    fn empty_everything_is_neutral() {
        let s = pq(&MatchResult::default());
        assert!(s.empty);
        assert_eq!(s.pq, 1.0);
    }

    #[test]
    fn fixed_point_is_exact_for_matched_ious() {
        for (i, u) in [(3u64, 5u64), (7, 9), (1, 1), (1000, 1999), (65535, 65536)] {
            let iou = i as f64 / u as f64;
            let fixed = (iou * IOU_SCALE) as u128;
            assert_eq!(fixed as f64 / IOU_SCALE, iou);
        }
    }

    #[test]
    fn shape_mismatch() {
        assert!(match_instances(&InstanceMap::zeros(2, 2), &InstanceMap::zeros(2, 3)).is_err());
    }
}
