//! Cost-sensitive classification.
//!
//! `m[j][k]` is the cost of predicting class `j` for a pixel whose true class
//! is `k`. The default loss is the expected misclassification cost under the
//! predicted distribution, which is linear in the probabilities; a
//! cost-weighted cross-entropy is available behind the same trait.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-class sample counts.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts(Vec<u64>);

impl ClassCounts {
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        if counts.iter().all(|&n| n == 0) {
            return Err(Error::InvalidParameter(
                "class counts need at least one positive entry".into(),
            ));
        }
        Ok(ClassCounts(counts))
    }

    pub fn as_slice(&self) -> &[u64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// How off-diagonal costs are derived from class counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostRule {
    /// `m[j][k] = n_max / n[k]` for `j != k`.
    #[default]
    MaxRatio,
    /// Every off-diagonal cost is 1.
    Uniform,
}

impl std::str::FromStr for CostRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max-ratio" => Ok(CostRule::MaxRatio),
            "uniform" => Ok(CostRule::Uniform),
            other => Err(Error::InvalidParameter(format!(
                "unknown cost rule {other:?} (expected max-ratio or uniform)"
            ))),
        }
    }
}

/// Square misclassification cost table with a zero diagonal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostMatrix {
    n: usize,
    /// Row-major: `m[j * n + k]`.
    m: Vec<f64>,
}

impl CostMatrix {
    /// Validate and wrap a row-major `n x n` table.
    pub fn new(n: usize, m: Vec<f64>) -> Result<Self> {
        if m.len() != n * n {
            return Err(Error::LengthMismatch {
                expected: n * n,
                actual: m.len(),
            });
        }
        for j in 0..n {
            if m[j * n + j] != 0.0 {
                return Err(Error::InvalidParameter(format!(
                    "cost matrix diagonal entry ({j}, {j}) is {}",
                    m[j * n + j]
                )));
            }
        }
        if let Some(x) = m.iter().find(|&&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidParameter(format!("invalid cost entry {x}")));
        }
        Ok(CostMatrix { n, m })
    }

    pub fn from_counts(counts: &ClassCounts, rule: CostRule) -> Result<Self> {
        let n = counts.len();
        if let Some(index) = counts.as_slice().iter().position(|&c| c == 0) {
            return Err(Error::ZeroCount { index });
        }
        let n_max = *counts.as_slice().iter().max().expect("non-empty") as f64;
        let mut m = vec![0f64; n * n];
        for j in 0..n {
            for k in 0..n {
                if j != k {
                    m[j * n + k] = match rule {
                        CostRule::MaxRatio => n_max / counts.as_slice()[k] as f64,
                        CostRule::Uniform => 1.0,
                    };
                }
            }
        }
        Ok(CostMatrix { n, m })
    }

    pub fn n_classes(&self) -> usize {
        self.n
    }

    /// Cost of predicting `predicted` when the truth is `truth`.
    pub fn get(&self, predicted: usize, truth: usize) -> f64 {
        self.m[predicted * self.n + truth]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.m
    }

    /// Prepend a background class 0 whose off-diagonal row and column hold
    /// `cost`; the nuclear block is unchanged.
    pub fn with_background(&self, cost: f64) -> Result<Self> {
        let n = self.n + 1;
        let mut m = vec![0f64; n * n];
        for j in 0..n {
            for k in 0..n {
                m[j * n + k] = match (j, k) {
                    (0, 0) => 0.0,
                    (0, _) | (_, 0) => cost,
                    _ => self.get(j - 1, k - 1),
                };
            }
        }
        CostMatrix::new(n, m)
    }

    pub fn scaled(&self, s: f64) -> Self {
        CostMatrix {
            n: self.n,
            m: self.m.iter().map(|x| x * s).collect(),
        }
    }

    /// CSV with one row per predicted class and one column per true class.
    pub fn to_csv(&self, names: &[&str]) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["predicted\\true".to_string()];
        header.extend((0..self.n).map(|k| name_or_index(names, k)));
        w.write_record(&header).expect("in-memory write");
        for j in 0..self.n {
            let mut rec = vec![name_or_index(names, j)];
            rec.extend((0..self.n).map(|k| format!("{}", self.get(j, k))));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("ascii")
    }
}

fn name_or_index(names: &[&str], i: usize) -> String {
    names.get(i).map_or_else(|| i.to_string(), |s| s.to_string())
}

/// Batch of per-pixel class distributions, `pixels x n_classes`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassProbs {
    n_classes: usize,
    data: Vec<f64>,
}

impl ClassProbs {
    pub fn new(n_classes: usize, data: Vec<f64>) -> Result<Self> {
        if n_classes == 0 || data.len() % n_classes != 0 {
            return Err(Error::InvalidParameter(format!(
                "{} values do not form rows of {n_classes} classes",
                data.len()
            )));
        }
        Ok(ClassProbs { n_classes, data })
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn n_pixels(&self) -> usize {
        self.data.len() / self.n_classes
    }

    pub fn row(&self, p: usize) -> &[f64] {
        &self.data[p * self.n_classes..(p + 1) * self.n_classes]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }
}

fn check_inputs(probs: &ClassProbs, truth: &[usize], n: usize) -> Result<()> {
    if probs.n_classes() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            actual: probs.n_classes(),
        });
    }
    if truth.len() != probs.n_pixels() {
        return Err(Error::LengthMismatch {
            expected: probs.n_pixels(),
            actual: truth.len(),
        });
    }
    if let Some(&class_id) = truth.iter().find(|&&t| t >= n) {
        return Err(Error::InvalidClass {
            class_id,
            n_classes: n,
        });
    }
    Ok(())
}

/// A classification loss with an analytic gradient w.r.t. the probabilities.
pub trait CostSensitiveLoss {
    fn n_classes(&self) -> usize;

    /// Mean loss over pixels.
    fn loss(&self, probs: &ClassProbs, truth: &[usize]) -> Result<f64>;

    /// `d loss / d probs`, same layout as `probs`.
    fn gradient(&self, probs: &ClassProbs, truth: &[usize]) -> Result<Vec<f64>>;
}

/// Expected misclassification cost: mean over pixels of `sum_j m[j][y] * p[j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedCost(pub CostMatrix);

impl CostSensitiveLoss for ExpectedCost {
    fn n_classes(&self) -> usize {
        self.0.n_classes()
    }

    fn loss(&self, probs: &ClassProbs, truth: &[usize]) -> Result<f64> {
        cost_sensitive_loss(probs, truth, &self.0)
    }

    fn gradient(&self, probs: &ClassProbs, truth: &[usize]) -> Result<Vec<f64>> {
        loss_gradient(probs, truth, &self.0)
    }
}

/// Class-weighted cross-entropy: mean over pixels of `-w[y] * ln p[y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedCrossEntropy {
    pub weights: Vec<f64>,
}

impl WeightedCrossEntropy {
    /// Weight of class `k` = the largest cost of misclassifying a true `k`.
    ///
    /// Under [`CostRule::MaxRatio`] this is `n_max / n[k]`.
    pub fn from_matrix(m: &CostMatrix) -> Self {
        let n = m.n_classes();
        let weights = (0..n)
            .map(|k| (0..n).map(|j| m.get(j, k)).fold(0.0, f64::max))
            .collect();
        WeightedCrossEntropy { weights }
    }
}

impl CostSensitiveLoss for WeightedCrossEntropy {
    fn n_classes(&self) -> usize {
        self.weights.len()
    }

    fn loss(&self, probs: &ClassProbs, truth: &[usize]) -> Result<f64> {
        check_inputs(probs, truth, self.n_classes())?;
        let p_count = probs.n_pixels();
        if p_count == 0 {
            return Ok(0.0);
        }
        let total: f64 = truth
            .iter()
            .enumerate()
            .map(|(p, &y)| -self.weights[y] * probs.row(p)[y].ln())
            .sum();
        Ok(total / p_count as f64)
    }

    fn gradient(&self, probs: &ClassProbs, truth: &[usize]) -> Result<Vec<f64>> {
        check_inputs(probs, truth, self.n_classes())?;
        let n = self.n_classes();
        let scale = 1.0 / probs.n_pixels().max(1) as f64;
        let mut g = vec![0f64; probs.as_slice().len()];
        for (p, &y) in truth.iter().enumerate() {
            g[p * n + y] = -self.weights[y] * scale / probs.row(p)[y];
        }
        Ok(g)
    }
}

/// Mean over pixels of the expected misclassification cost.
pub fn cost_sensitive_loss(probs: &ClassProbs, truth: &[usize], m: &CostMatrix) -> Result<f64> {
    check_inputs(probs, truth, m.n_classes())?;
    let p_count = probs.n_pixels();
    if p_count == 0 {
        return Ok(0.0);
    }
    let total: f64 = truth
        .iter()
        .enumerate()
        .map(|(p, &y)| {
            probs
                .row(p)
                .iter()
                .enumerate()
                .map(|(j, &q)| m.get(j, y) * q)
                .sum::<f64>()
        })
        .sum();
    Ok(total / p_count as f64)
}

/// Gradient of [`cost_sensitive_loss`]: `m[j][y(p)] / P` at `(p, j)`.
pub fn loss_gradient(probs: &ClassProbs, truth: &[usize], m: &CostMatrix) -> Result<Vec<f64>> {
    check_inputs(probs, truth, m.n_classes())?;
    let n = m.n_classes();
    let scale = 1.0 / probs.n_pixels().max(1) as f64;
    let mut g = vec![0f64; probs.as_slice().len()];
    for (p, &y) in truth.iter().enumerate() {
        for j in 0..n {
            g[p * n + j] = m.get(j, y) * scale;
        }
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn swap2() -> CostMatrix {
        CostMatrix::new(2, vec![0.0, 1.0, 1.0, 0.0]).unwrap()
    }

    #[test]
    fn equal_counts_give_unit_costs() {
        let m = CostMatrix::from_counts(&ClassCounts::new(vec![10, 10]).unwrap(), CostRule::MaxRatio).unwrap();
        assert_eq!(m, swap2());
    }

    #[test]
    fn ratio_rule_columns() {
        let m = CostMatrix::from_counts(&ClassCounts::new(vec![1, 2, 4]).unwrap(), CostRule::MaxRatio).unwrap();
        assert_eq!(m.as_slice(), &[0.0, 2.0, 1.0, 4.0, 0.0, 1.0, 4.0, 2.0, 0.0]);
    }

    #[test]
    fn zero_count_is_error() {
        let c = ClassCounts::new(vec![3, 0, 1]).unwrap();
        assert!(matches!(
            CostMatrix::from_counts(&c, CostRule::MaxRatio),
            Err(Error::ZeroCount { index: 1 })
        ));
        assert!(ClassCounts::new(vec![0, 0]).is_err());
    }

    #[test]
    fn matrix_rejects_nonzero_diagonal() {
        assert!(CostMatrix::new(2, vec![1.0, 1.0, 1.0, 0.0]).is_err());
        assert!(CostMatrix::new(2, vec![0.0, -1.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn background_extension() {
        let m = swap2().with_background(1.0).unwrap();
        assert_eq!(m.n_classes(), 3);
        assert_eq!(m.as_slice(), &[0.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 0.0]);
    }

    #[test]
    fn one_hot_correct_is_zero() {
        let probs = ClassProbs::new(2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        assert_eq!(cost_sensitive_loss(&probs, &[0, 1], &swap2()).unwrap(), 0.0);
    }

    #[test]
    fn single_pixel_expansion() {
        let probs = ClassProbs::new(2, vec![0.7, 0.3]).unwrap();
        assert_relative_eq!(cost_sensitive_loss(&probs, &[0], &swap2()).unwrap(), 0.3);
        assert_eq!(loss_gradient(&probs, &[0], &swap2()).unwrap(), vec![0.0, 1.0]);
    }

    #[test]
    fn zero_matrix_zero_gradient() {
        let probs = ClassProbs::new(3, vec![0.2, 0.3, 0.5]).unwrap();
        let z = CostMatrix::new(3, vec![0.0; 9]).unwrap();
        assert!(loss_gradient(&probs, &[2], &z).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn invalid_inputs() {
        let probs = ClassProbs::new(2, vec![0.5, 0.5]).unwrap();
        assert!(matches!(
            cost_sensitive_loss(&probs, &[2], &swap2()),
            Err(Error::InvalidClass { class_id: 2, .. })
        ));
        assert!(cost_sensitive_loss(&probs, &[0, 1], &swap2()).is_err());
        let probs3 = ClassProbs::new(3, vec![0.2, 0.3, 0.5]).unwrap();
        assert!(loss_gradient(&probs3, &[0], &swap2()).is_err());
    }

    #[test]
    fn weighted_cross_entropy() {
        let m = CostMatrix::from_counts(&ClassCounts::new(vec![1, 4]).unwrap(), CostRule::MaxRatio).unwrap();
        let ce = WeightedCrossEntropy::from_matrix(&m);
        assert_eq!(ce.weights, vec![4.0, 1.0]);
        let probs = ClassProbs::new(2, vec![0.5, 0.5, 0.25, 0.75]).unwrap();
        let l = ce.loss(&probs, &[0, 1]).unwrap();
        assert_relative_eq!(l, (-4.0 * 0.5f64.ln() - 0.75f64.ln()) / 2.0);
        let g = ce.gradient(&probs, &[0, 1]).unwrap();
        assert_relative_eq!(g[0], -4.0 / 0.5 / 2.0);
        assert_eq!(g[1], 0.0);
        assert_relative_eq!(g[3], -1.0 / 0.75 / 2.0);
    }

    #[test]
    fn csv_output() {
        let s = swap2().to_csv(&["a", "b"]);
        assert_eq!(s, "predicted\\true,a,b\na,0,1\nb,1,0\n");
    }
}
