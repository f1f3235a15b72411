use serde::{Deserialize, Serialize};

use crate::classes::{PerClass, N_CLASSES};
use crate::error::{Error, Result};

/// Per-image instance counts in report column order (pla, neu, epi, lym, eos, con).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CountsRow(pub [u64; N_CLASSES]);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct R2Report {
    /// Mean of the finite per-class values.
    pub overall: f64,
    #[serde(flatten)]
    pub per_class: PerClass<f64>,
    /// Classes whose ground-truth counts are constant across images.
    pub constant_classes: Vec<String>,
}

/// Coefficient of determination per class over images, and their mean.
///
/// A class with constant ground truth has no variance to explain: it scores
/// 1 when every residual is zero and `-inf` otherwise, and is listed in
/// `constant_classes`. Non-finite values are left out of `overall`.
pub fn r_squared(pred: &[CountsRow], gt: &[CountsRow]) -> Result<R2Report> {
    if pred.len() != gt.len() {
        return Err(Error::LengthMismatch {
            expected: gt.len(),
            actual: pred.len(),
        });
    }
    let n = gt.len() as f64;
    let mut values = [0f64; N_CLASSES];
    let mut constant = Vec::new();
    for k in 0..N_CLASSES {
        let mean = gt.iter().map(|row| row.0[k] as f64).sum::<f64>() / n.max(1.0);
        let mut ss_res = 0f64;
        let mut ss_tot = 0f64;
        for (p, g) in pred.iter().zip(gt) {
            let (p, g) = (p.0[k] as f64, g.0[k] as f64);
            ss_res += (g - p) * (g - p);
            ss_tot += (g - mean) * (g - mean);
        }
        values[k] = if ss_tot > 0.0 {
            1.0 - ss_res / ss_tot
        } else {
            constant.push(crate::NucleusClass::REPORT_ORDER[k].abbrev().to_string());
            if ss_res == 0.0 {
                1.0
            } else {
                f64::NEG_INFINITY
            }
        };
    }
    let finite: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    let overall = if finite.is_empty() {
        f64::NEG_INFINITY
    } else {
        finite.iter().sum::<f64>() / finite.len() as f64
    };
    Ok(R2Report {
        overall,
        per_class: PerClass::from_report_array(values),
        constant_classes: constant,
    })
}
