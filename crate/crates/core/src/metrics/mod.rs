//! Instance segmentation and counting metrics.
//!
//! Per-class PQ uses "+" aggregation: TP/FP/FN counts and matched IoU sums
//! are pooled over all images before the PQ division, and mPQ+ is the
//! unweighted mean over the six classes. Counting quality is r² over
//! per-image class counts derived from the same instance outputs.

mod pq;
mod r2;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use pq::{match_instances, pq, MatchResult, MatchedPair, PqAccumulator, PqStats};
pub use r2::{r_squared, CountsRow, R2Report};

use crate::classes::{NucleusClass, PerClass, N_CLASSES};
use crate::error::Result;
use crate::instance::{extract_instances, ClassMap, InstanceMap, InstanceRecord};

/// An instance map with its class map.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledImage {
    pub instances: InstanceMap,
    pub classes: ClassMap,
}

impl LabelledImage {
    pub fn new(instances: InstanceMap, classes: ClassMap) -> Result<Self> {
        crate::instance::check_shape(instances.shape(), classes.shape())?;
        Ok(LabelledImage { instances, classes })
    }
}

/// Keep only instances whose class is `class_id`.
fn restrict_to_class(map: &InstanceMap, records: &[InstanceRecord], class_id: u8) -> InstanceMap {
    let mut keep = vec![false; map.max_label() as usize + 1];
    for r in records {
        keep[r.label as usize] = r.class_id == class_id;
    }
    let labels = map
        .as_slice()
        .iter()
        .map(|&l| if keep[l as usize] { l } else { 0 })
        .collect();
    InstanceMap::new(map.height(), map.width(), labels).expect("same shape")
}

/// Per-class accumulators for one (prediction, ground truth) image pair,
/// indexed in report order.
pub fn image_class_stats(pred: &LabelledImage, gt: &LabelledImage) -> Result<[PqAccumulator; N_CLASSES]> {
    let pred_rec = extract_instances(&pred.instances, &pred.classes)?;
    let gt_rec = extract_instances(&gt.instances, &gt.classes)?;
    let mut out = [PqAccumulator::default(); N_CLASSES];
    for class in NucleusClass::REPORT_ORDER {
        let p = restrict_to_class(&pred.instances, &pred_rec, class.id());
        let g = restrict_to_class(&gt.instances, &gt_rec, class.id());
        out[class.report_index()].add(&match_instances(&p, &g)?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PqReport {
    pub mpq_plus: f64,
    #[serde(flatten)]
    pub per_class: PerClass<f64>,
    /// Classes with no TP, FP or FN in the whole dataset (scored 1.0).
    pub empty_classes: Vec<String>,
}

impl PqReport {
    pub fn from_accumulators(acc: &[PqAccumulator; N_CLASSES]) -> Self {
        let stats: Vec<PqStats> = acc.iter().map(PqAccumulator::finish).collect();
        let values: [f64; N_CLASSES] = std::array::from_fn(|k| stats[k].pq);
        let empty_classes = NucleusClass::REPORT_ORDER
            .iter()
            .zip(&stats)
            .filter(|(_, s)| s.empty)
            .map(|(c, _)| c.abbrev().to_string())
            .collect();
        PqReport {
            mpq_plus: values.iter().sum::<f64>() / N_CLASSES as f64,
            per_class: PerClass::from_report_array(values),
            empty_classes,
        }
    }
}

fn merge_all(items: impl IntoIterator<Item = [PqAccumulator; N_CLASSES]>) -> [PqAccumulator; N_CLASSES] {
    items.into_iter().fold([PqAccumulator::default(); N_CLASSES], |mut a, b| {
        for k in 0..N_CLASSES {
            a[k] = a[k].merge(b[k]);
        }
        a
    })
}

/// Dataset-level multi-class PQ.
pub fn mpq_plus(pairs: &[(LabelledImage, LabelledImage)]) -> Result<PqReport> {
    let per_image = pairs
        .par_iter()
        .map(|(p, g)| image_class_stats(p, g))
        .collect::<Result<Vec<_>>>()?;
    Ok(PqReport::from_accumulators(&merge_all(per_image)))
}

/// Number of instances of each class, in report order.
pub fn counts_from(map: &InstanceMap, classes: &ClassMap) -> Result<CountsRow> {
    let mut row = [0u64; N_CLASSES];
    for r in extract_instances(map, classes)? {
        if let Some(c) = NucleusClass::from_id(r.class_id) {
            row[c.report_index()] += 1;
        }
    }
    Ok(CountsRow(row))
}

/// Full evaluation report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n_images: usize,
    pub pq: PqReport,
    pub r2: R2Report,
}

/// PQ and r² for a dataset of (prediction, ground truth) pairs.
///
/// Per-image work runs on the current rayon pool; results are combined in
/// image order (r²) or with exact merges (PQ), so the report does not
/// depend on the number of threads.
pub fn evaluate(pairs: &[(LabelledImage, LabelledImage)]) -> Result<MetricsReport> {
    let per_image = pairs
        .par_iter()
        .map(|(p, g)| {
            Ok((
                image_class_stats(p, g)?,
                counts_from(&p.instances, &p.classes)?,
                counts_from(&g.instances, &g.classes)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let acc = merge_all(per_image.iter().map(|x| x.0));
    let pred_counts: Vec<CountsRow> = per_image.iter().map(|x| x.1).collect();
    let gt_counts: Vec<CountsRow> = per_image.iter().map(|x| x.2).collect();
    Ok(MetricsReport {
        n_images: pairs.len(),
        pq: PqReport::from_accumulators(&acc),
        r2: r_squared(&pred_counts, &gt_counts)?,
    })
}

fn fmt_value(x: f64) -> String {
    if x.is_finite() {
        format!("{x}")
    } else if x < 0.0 {
        "-inf".into()
    } else {
        "nan".into()
    }
}

/// Two-row CSV: `pq` (overall = mPQ+) and `r2` (overall = mean r²).
pub fn report_to_csv(report: &MetricsReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["metric", "overall"];
    header.extend(NucleusClass::REPORT_ORDER.iter().map(|c| c.abbrev()));
    w.write_record(&header).expect("in-memory write");
    let rows = [
        ("pq", report.pq.mpq_plus, report.pq.per_class.to_report_array()),
        ("r2", report.r2.overall, report.r2.per_class.to_report_array()),
    ];
    for (name, overall, values) in rows {
        let mut rec = vec![name.to_string(), fmt_value(overall)];
        rec.extend(values.iter().map(|&v| fmt_value(v)));
        w.write_record(&rec).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("flush")).expect("ascii")
}
