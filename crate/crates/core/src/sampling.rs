//! Condition sampling, label normalization and the uniform-label batch
//! sampler used for both estimator and discriminator training.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::losses::RangeCondition;
use crate::netcore::Matrix;

/// Minimum window width in normalized label units.
pub const MIN_RANGE_WIDTH: f64 = 0.05;

/// Per-label affine map from raw label values onto `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelNormalizer {
    pub raw_min: Vec<f64>,
    pub raw_max: Vec<f64>,
}

impl LabelNormalizer {
    pub fn new(raw_min: Vec<f64>, raw_max: Vec<f64>) -> Result<Self> {
        if raw_min.len() != raw_max.len() {
            return Err(Error::config("normalizer bound lengths differ"));
        }
        for (k, (lo, hi)) in raw_min.iter().zip(&raw_max).enumerate() {
            if !(lo < hi) {
                return Err(Error::config(format!(
                    "label {k} has a degenerate range [{lo}, {hi}]"
                )));
            }
        }
        Ok(LabelNormalizer { raw_min, raw_max })
    }

    /// Fits min/max bounds over rows of raw labels.
    pub fn fit<R: AsRef<[f64]>>(raw: &[R]) -> Result<Self> {
        let l = raw
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| Error::config("cannot fit a normalizer on no data"))?;
        let mut lo = vec![f64::INFINITY; l];
        let mut hi = vec![f64::NEG_INFINITY; l];
        for r in raw {
            for (k, &v) in r.as_ref().iter().enumerate() {
                lo[k] = lo[k].min(v);
                hi[k] = hi[k].max(v);
            }
        }
        Self::new(lo, hi)
    }

    pub fn n_labels(&self) -> usize {
        self.raw_min.len()
    }

    /// `(raw − min) / (max − min)`, not clipped.
    pub fn normalize(&self, raw: &[f64]) -> Vec<f64> {
        raw.iter()
            .zip(self.raw_min.iter().zip(&self.raw_max))
            .map(|(v, (lo, hi))| (v - lo) / (hi - lo))
            .collect()
    }

    pub fn denormalize(&self, norm: &[f64]) -> Vec<f64> {
        norm.iter()
            .zip(self.raw_min.iter().zip(&self.raw_max))
            .map(|(v, (lo, hi))| lo + v * (hi - lo))
            .collect()
    }
}

/// Normalizes every row of a raw label batch.
pub fn normalize_labels(raw: &Matrix, normalizer: &LabelNormalizer) -> Result<Matrix> {
    if raw.cols() != normalizer.n_labels() {
        return Err(Error::config("label width does not match the normalizer"));
    }
    let data = raw.iter_rows().flat_map(|r| normalizer.normalize(r)).collect();
    Matrix::from_vec(raw.rows(), raw.cols(), data)
}

/// Draws one training condition per label:
/// `lb ~ U(0, 0.95)`, `ub ~ U(lb + 0.05, 1)`.
pub fn sample_condition<R: Rng + ?Sized>(rng: &mut R, n_labels: usize) -> RangeCondition {
    let bounds = (0..n_labels)
        .map(|_| {
            let lb = rng.random_range(0.0..=1.0 - MIN_RANGE_WIDTH);
            let ub = rng.random_range(lb + MIN_RANGE_WIDTH..=1.0);
            (lb, ub)
        })
        .collect();
    RangeCondition { bounds }
}

/// Nearest-label lookup: one `(label, row)` list per label column, sorted by
/// label then row index.
#[derive(Debug, Clone)]
pub struct UniformLabelSampler {
    sorted: Vec<Vec<(f64, usize)>>,
}

impl UniformLabelSampler {
    pub fn new(labels: &Matrix) -> Result<Self> {
        if labels.rows() == 0 {
            return Err(Error::usage("cannot sample from an empty dataset"));
        }
        let sorted = (0..labels.cols())
            .map(|j| {
                let mut v: Vec<(f64, usize)> = labels.column(j).into_iter().zip(0..).collect();
                v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                v
            })
            .collect();
        Ok(UniformLabelSampler { sorted })
    }

    pub fn n_labels(&self) -> usize {
        self.sorted.len()
    }

    /// Position range in the sorted list of the run of equal labels nearest
    /// to `u`. Between two distinct labels at equal distance the run holding
    /// the lower row index wins.
    fn nearest_run(&self, u: f64, label: usize) -> (usize, usize) {
        let s = &self.sorted[label];
        let run = |v: f64| (s.partition_point(|&(w, _)| w < v), s.partition_point(|&(w, _)| w <= v));
        let p = s.partition_point(|&(v, _)| v < u);
        let below = (p > 0).then(|| run(s[p - 1].0));
        let above = (p < s.len()).then(|| run(s[p].0));
        match (below, above) {
            (Some(b), Some(a)) => {
                let (db, da) = (u - s[b.0].0, s[a.0].0 - u);
                if db < da || (db == da && s[b.0].1 < s[a.0].1) {
                    b
                } else {
                    a
                }
            }
            (Some(b), None) => b,
            (None, Some(a)) => a,
            (None, None) => unreachable!("sampler is never empty"),
        }
    }

    /// Row whose label `label` is nearest to `u`; ties go to the lower row index.
    pub fn nearest(&self, u: f64, label: usize) -> usize {
        self.sorted[label][self.nearest_run(u, label).0].1
    }

    /// `batch_size` row indices, each nearest to a fresh `u ~ U(0, 1)`. Rows
    /// sharing the nearest label value exactly are drawn uniformly among
    /// themselves, so duplicated labels do not collapse onto one row.
    pub fn sample_batch<R: Rng + ?Sized>(&self, batch_size: usize, label: usize, rng: &mut R) -> Vec<usize> {
        (0..batch_size)
            .map(|_| {
                let (lo, hi) = self.nearest_run(rng.random::<f64>(), label);
                let k = if hi - lo > 1 { rng.random_range(lo..hi) } else { lo };
                self.sorted[label][k].1
            })
            .collect()
    }
}

/// One-shot form of [`UniformLabelSampler::sample_batch`].
pub fn uniform_label_batch<R: Rng + ?Sized>(
    labels: &Matrix,
    batch_size: usize,
    label_index: usize,
    rng: &mut R,
) -> Result<Vec<usize>> {
    if label_index >= labels.cols() {
        return Err(Error::config(format!("label index {label_index} out of range")));
    }
    Ok(UniformLabelSampler::new(labels)?.sample_batch(batch_size, label_index, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn condition_bounds_hold() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut min_width = f64::INFINITY;
        let mut lb_sum = 0.0;
        let n = 100_000;
        for _ in 0..n {
            let c = sample_condition(&mut rng, 1);
            let (lb, ub) = c.bounds[0];
            assert!((0.0..=0.95).contains(&lb));
            assert!(ub >= lb + MIN_RANGE_WIDTH && ub <= 1.0);
            min_width = min_width.min(ub - lb);
            lb_sum += lb;
        }
        assert!(min_width >= MIN_RANGE_WIDTH);
        assert!((lb_sum / n as f64 - 0.475).abs() < 0.01);
    }

    #[test]
    fn normalizer_endpoints_and_roundtrip() {
        let n = LabelNormalizer::new(vec![0.5, 0.1], vec![2.5, 0.3]).unwrap();
        assert_eq!(n.normalize(&[0.5, 0.1]), vec![0.0, 0.0]);
        let mid = n.normalize(&[1.5, 0.2]);
        assert!((mid[0] - 0.5).abs() < 1e-15 && (mid[1] - 0.5).abs() < 1e-12);
        // Out-of-sample values are not clipped.
        assert!(n.normalize(&[3.0, 0.0])[0] > 1.0);
        assert!(LabelNormalizer::new(vec![1.0], vec![1.0]).is_err());
    }

    proptest! {
        #[test]
        fn normalize_roundtrip(a in -5.0f64..5.0, b in -5.0f64..5.0) {
            let n = LabelNormalizer::new(vec![0.37, 0.01], vec![2.9, 0.6]).unwrap();
            let back = n.denormalize(&n.normalize(&[a, b]));
            prop_assert!((back[0] - a).abs() < 1e-12 && (back[1] - b).abs() < 1e-12);
        }
    }

    #[test]
    fn nearest_label_and_ties() {
        let labels = Matrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let s = UniformLabelSampler::new(&labels).unwrap();
        assert_eq!(s.nearest(0.4, 0), 0);
        assert_eq!(s.nearest(0.6, 0), 1);
        assert_eq!(s.nearest(0.5, 0), 0);

        let labels = Matrix::from_rows(&[[0.7], [0.2], [0.2], [0.6], [0.7]]).unwrap();
        let s = UniformLabelSampler::new(&labels).unwrap();
        assert_eq!(s.nearest(0.1, 0), 1);
        assert_eq!(s.nearest(0.25, 0), 1);
        assert_eq!(s.nearest(0.9, 0), 0);
        assert_eq!(s.nearest(0.62, 0), 3);
        // 0.2 is shared by rows 1 and 2; both get drawn.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut picks = s.sample_batch(200, 0, &mut rng);
        picks.retain(|&i| i == 1 || i == 2);
        picks.sort();
        picks.dedup();
        assert_eq!(picks, vec![1, 2]);
    }

    #[test]
    fn flattens_a_peaked_label_distribution() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let normal = rand_distr::Normal::new(0.5, 0.15).unwrap();
        let labels: Vec<f64> = (0..10_000)
            .map(|_| rng.sample::<f64, _>(normal).clamp(0.0, 1.0))
            .collect();
        let m = Matrix::from_vec(labels.len(), 1, labels.clone()).unwrap();
        let hist = |vals: &mut dyn Iterator<Item = f64>| {
            let mut c = [0usize; 10];
            for v in vals {
                c[((v * 10.0) as usize).min(9)] += 1;
            }
            c
        };
        let ratio = |c: [usize; 10]| *c.iter().max().unwrap() as f64 / (*c.iter().min().unwrap()).max(1) as f64;
        let raw: Vec<f64> = (0..10_000).map(|_| labels[rng.random_range(0..labels.len())]).collect();
        let idx = uniform_label_batch(&m, 10_000, 0, &mut rng).unwrap();
        let raw_ratio = ratio(hist(&mut raw.into_iter()));
        let uni_ratio = ratio(hist(&mut idx.iter().map(|&i| labels[i])));
        assert!(uni_ratio * 3.0 <= raw_ratio, "raw {raw_ratio}, uniform {uni_ratio}");
        assert!(idx.iter().all(|&i| i < labels.len()));
    }
}
