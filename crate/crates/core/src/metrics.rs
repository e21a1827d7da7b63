//! Evaluation: condition satisfaction, quadratic entropy, condition sweeps
//! across the label space, dataset baselines and histograms.

use std::fmt::Write as _;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{exact_evaluate, Dataset, DesignParams, LabelSet};
use crate::error::{Error, Result};
use crate::losses::RangeCondition;
use crate::models::{Estimator, Generator, InferenceStats};
use crate::netcore::Matrix;
use crate::sampling::LabelNormalizer;
use crate::trainer::{train_rangegan, TrainConfig};

/// Fraction of rows meeting every constraint (`(y − ub)(y − lb) ≤ 0`).
pub fn satisfaction(labels: &Matrix, cond: &RangeCondition) -> f64 {
    if labels.rows() == 0 {
        return 0.0;
    }
    let hits = labels.iter_rows().filter(|r| cond.is_satisfied(r)).count();
    hits as f64 / labels.rows() as f64
}

/// Mean squared distance over all ordered pairs, `(1/N²) ΣᵢΣⱼ (yᵢ − yⱼ)²`,
/// computed as `2·(mean of squares − square of mean)`.
pub fn quadratic_entropy(labels: &[f64]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let n = labels.len() as f64;
    let mean = labels.iter().sum::<f64>() / n;
    // Centered second moment avoids cancellation for tightly clustered labels.
    let var = labels.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
    2.0 * var
}

/// Source of labels for generated designs.
#[derive(Debug, Clone, Copy)]
pub enum Labeler<'a> {
    Estimator(&'a Estimator),
    Exact(&'a LabelNormalizer),
}

impl Labeler<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            Labeler::Estimator(_) => "estimator",
            Labeler::Exact(_) => "exact",
        }
    }

    /// Normalized labels (`N × L`) of `designs` for the chosen label set.
    pub fn label(&self, designs: &Matrix, labels: LabelSet) -> Result<Matrix> {
        match self {
            Labeler::Estimator(e) => {
                if e.labels != labels {
                    return Err(Error::config(format!(
                        "estimator predicts {} but {labels} was requested",
                        e.labels
                    )));
                }
                e.predict(designs)
            }
            Labeler::Exact(norm) => exact_labels(designs, norm, labels),
        }
    }
}

/// Exact evaluator labels, normalized with the dataset bounds (not clipped).
pub fn exact_labels(designs: &Matrix, normalizer: &LabelNormalizer, labels: LabelSet) -> Result<Matrix> {
    let idx = labels.indices();
    let mut data = Vec::with_capacity(designs.rows() * idx.len());
    for row in designs.iter_rows() {
        let d = DesignParams::from_slice(row)?;
        let norm = normalizer.normalize(&exact_evaluate(&d).as_array());
        data.extend(idx.iter().map(|&i| norm[i]));
    }
    Matrix::from_vec(designs.rows(), idx.len(), data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub centers: Vec<f64>,
    pub condition: RangeCondition,
    pub range_size: f64,
    pub labeler: String,
    pub satisfaction: f64,
    /// Mean over constrained labels of the quadratic entropy of satisfying samples.
    pub quadratic_entropy: f64,
    pub n_samples: usize,
    pub n_satisfying: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub label_names: Vec<String>,
    pub seed: u64,
    pub rows: Vec<SweepRow>,
}

impl SweepReport {
    pub fn mean_satisfaction(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.satisfaction))
    }

    pub fn mean_entropy(&self) -> f64 {
        mean(self.rows.iter().map(|r| r.quadratic_entropy))
    }

    pub fn std_satisfaction(&self) -> f64 {
        let m = self.mean_satisfaction();
        mean(self.rows.iter().map(|r| (r.satisfaction - m).powi(2))).sqrt()
    }

    fn header(label_names: &[String]) -> Vec<String> {
        let mut h = Vec::new();
        if label_names.len() == 1 {
            h.extend(["center", "lb", "ub"].map(String::from));
        } else {
            for n in label_names {
                h.extend([format!("center_{n}"), format!("lb_{n}"), format!("ub_{n}")]);
            }
        }
        h.extend(
            ["range_size", "labeler", "satisfaction", "quadratic_entropy", "n_samples", "n_satisfying"]
                .map(String::from),
        );
        h
    }

    /// CSV with a leading `#` metadata line carrying the seed and label names.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# seed={} labels={}\n", self.seed, self.label_names.join("+"));
        out.push_str(&Self::header(&self.label_names).join(","));
        out.push('\n');
        for r in &self.rows {
            let mut fields = Vec::new();
            for (c, (lb, ub)) in r.centers.iter().zip(&r.condition.bounds) {
                fields.extend([c.to_string(), lb.to_string(), ub.to_string()]);
            }
            fields.extend([
                r.range_size.to_string(),
                r.labeler.clone(),
                r.satisfaction.to_string(),
                r.quadratic_entropy.to_string(),
                r.n_samples.to_string(),
                r.n_satisfying.to_string(),
            ]);
            let _ = writeln!(out, "{}", fields.join(","));
        }
        out
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let perr = |row: usize, message: String| Error::Parse {
            path: path.to_path_buf(),
            row,
            message,
        };
        let mut lines = text.lines();
        let meta = lines.next().ok_or_else(|| perr(0, "empty report".into()))?;
        let mut seed = None;
        let mut label_names = None;
        for tok in meta.trim_start_matches('#').split_whitespace() {
            if let Some(v) = tok.strip_prefix("seed=") {
                seed = v.parse::<u64>().ok();
            } else if let Some(v) = tok.strip_prefix("labels=") {
                label_names = Some(v.split('+').map(String::from).collect::<Vec<_>>());
            }
        }
        let (seed, label_names) = seed
            .zip(label_names)
            .ok_or_else(|| perr(0, "missing seed/labels metadata line".into()))?;
        let header = lines.next().ok_or_else(|| perr(0, "missing header".into()))?;
        let expected = Self::header(&label_names);
        if header.split(',').ne(expected.iter().map(String::as_str)) {
            return Err(perr(0, format!("unexpected header {header:?}")));
        }
        let l = label_names.len();
        let mut rows = Vec::new();
        for (k, line) in lines.enumerate() {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != expected.len() {
                return Err(perr(k + 1, format!("expected {} fields, found {}", expected.len(), f.len())));
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|e| perr(k + 1, format!("{}: {e}", expected[i])));
            let int = |i: usize| f[i].parse::<usize>().map_err(|e| perr(k + 1, format!("{}: {e}", expected[i])));
            let mut centers = Vec::with_capacity(l);
            let mut bounds = Vec::with_capacity(l);
            for j in 0..l {
                centers.push(num(3 * j)?);
                bounds.push((num(3 * j + 1)?, num(3 * j + 2)?));
            }
            let b = 3 * l;
            rows.push(SweepRow {
                centers,
                condition: RangeCondition { bounds },
                range_size: num(b)?,
                labeler: f[b + 1].to_string(),
                satisfaction: num(b + 2)?,
                quadratic_entropy: num(b + 3)?,
                n_samples: int(b + 4)?,
                n_satisfying: int(b + 5)?,
            });
        }
        Ok(SweepReport {
            label_names,
            seed,
            rows,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, path)
    }

    /// Concatenates reports over the same labels (e.g. a sweep and its baseline).
    pub fn merged(mut self, other: SweepReport) -> Result<Self> {
        if self.label_names != other.label_names {
            return Err(Error::config("cannot merge reports over different labels"));
        }
        self.rows.extend(other.rows);
        Ok(self)
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Evenly spaced window centers such that every `[c − r/2, c + r/2]` lies in `[0, 1]`.
pub fn sweep_centers(range_size: f64, n_conditions: usize) -> Vec<f64> {
    let lo = range_size / 2.0;
    let hi = 1.0 - range_size / 2.0;
    if n_conditions <= 1 {
        return vec![0.5];
    }
    (0..n_conditions)
        .map(|k| lo + (hi - lo) * k as f64 / (n_conditions - 1) as f64)
        .collect()
}

/// Conditions of a sweep. With several labels the centers form a full grid
/// with `n_conditions` points per label axis.
pub fn sweep_conditions(n_labels: usize, range_size: f64, n_conditions: usize) -> Result<Vec<(Vec<f64>, RangeCondition)>> {
    if !(range_size > 0.0 && range_size <= 1.0) {
        return Err(Error::usage(format!("range size must lie in (0, 1], got {range_size}")));
    }
    if n_conditions == 0 {
        return Err(Error::usage("need at least one condition"));
    }
    let centers = sweep_centers(range_size, n_conditions);
    let mut grid: Vec<Vec<f64>> = vec![vec![]];
    for _ in 0..n_labels {
        grid = grid
            .into_iter()
            .flat_map(|prefix| {
                centers.iter().map(move |&c| {
                    let mut p = prefix.clone();
                    p.push(c);
                    p
                })
            })
            .collect();
    }
    grid.into_iter()
        .map(|cs| {
            // Clamp away rounding so the bounds stay inside [0, 1].
            let bounds = cs
                .iter()
                .map(|&c| ((c - range_size / 2.0).max(0.0), (c + range_size / 2.0).min(1.0)))
                .collect();
            Ok((cs, RangeCondition::new(bounds)?))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepSettings {
    pub range_size: f64,
    pub n_conditions: usize,
    pub n_samples: usize,
    pub seed: u64,
    pub stats: InferenceStats,
}

impl SweepSettings {
    pub fn new(range_size: f64, n_conditions: usize, n_samples: usize, seed: u64) -> Self {
        SweepSettings {
            range_size,
            n_conditions,
            n_samples,
            seed,
            stats: InferenceStats::Batch,
        }
    }
}

fn row_entropy(labels: &Matrix, cond: &RangeCondition) -> (f64, usize) {
    let sat: Vec<&[f64]> = labels.iter_rows().filter(|r| cond.is_satisfied(r)).collect();
    let l = labels.cols();
    let e = mean((0..l).map(|j| quadratic_entropy(&sat.iter().map(|r| r[j]).collect::<Vec<_>>())));
    (e, sat.len())
}

/// Generates `n_samples` designs per condition and scores them. Conditions
/// run in parallel, each with its own random stream derived from the seed.
pub fn condition_sweep(g: &Generator, labeler: Labeler<'_>, s: &SweepSettings) -> Result<SweepReport> {
    if s.n_samples == 0 {
        return Err(Error::usage("need at least one sample per condition"));
    }
    let conds = sweep_conditions(g.labels.len(), s.range_size, s.n_conditions)?;
    let rows = conds
        .par_iter()
        .enumerate()
        .map(|(k, (centers, cond))| {
            let mut rng = ChaCha8Rng::seed_from_u64(s.seed);
            rng.set_stream(k as u64);
            let designs = g.sample(s.n_samples, cond, s.stats, &mut rng)?;
            let labels = labeler.label(&designs, g.labels)?;
            let (entropy, n_sat) = row_entropy(&labels, cond);
            Ok(SweepRow {
                centers: centers.clone(),
                condition: cond.clone(),
                range_size: s.range_size,
                labeler: labeler.name().to_string(),
                satisfaction: satisfaction(&labels, cond),
                quadratic_entropy: entropy,
                n_samples: s.n_samples,
                n_satisfying: n_sat,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepReport {
        label_names: g.labels.names().into_iter().map(String::from).collect(),
        seed: s.seed,
        rows,
    })
}

/// Probability that a design drawn at random from the dataset meets each
/// sweep condition.
pub fn data_baseline(ds: &Dataset, labels: LabelSet, range_size: f64, n_conditions: usize) -> Result<SweepReport> {
    let conds = sweep_conditions(labels.len(), range_size, n_conditions)?;
    let y = ds.normalized_labels(labels);
    let rows = conds
        .into_iter()
        .map(|(centers, cond)| {
            let (entropy, n_sat) = row_entropy(&y, &cond);
            SweepRow {
                centers,
                satisfaction: satisfaction(&y, &cond),
                condition: cond,
                range_size,
                labeler: "data".to_string(),
                quadratic_entropy: entropy,
                n_samples: y.rows(),
                n_satisfying: n_sat,
            }
        })
        .collect();
    Ok(SweepReport {
        label_names: labels.names().into_iter().map(String::from).collect(),
        seed: ds.meta.seed,
        rows,
    })
}

/// Counts of values in `bins` equal-width bins over `[0, 1]`; 1.0 falls in
/// the last bin and values outside the interval are ignored.
pub fn bin_counts(values: &[f64], bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    for &v in values {
        if let Some(b) = bin_index(v, bins) {
            counts[b] += 1;
        }
    }
    counts
}

pub fn bin_index(v: f64, bins: usize) -> Option<usize> {
    if !(0.0..=1.0).contains(&v) {
        return None;
    }
    Some(((v * bins as f64) as usize).min(bins - 1))
}

/// Largest over smallest bin count (infinite when a bin is empty).
pub fn max_min_ratio(counts: &[usize]) -> f64 {
    let max = counts.iter().copied().max().unwrap_or(0) as f64;
    let min = counts.iter().copied().min().unwrap_or(0) as f64;
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    /// Probability density per bin (integrates to the in-range fraction).
    pub densities: Vec<f64>,
}

pub fn label_histogram(values: &[f64], bins: usize, lo: f64, hi: f64) -> Result<Histogram> {
    if bins == 0 || !(lo < hi) {
        return Err(Error::usage("histogram needs bins > 0 and lo < hi"));
    }
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins).map(|k| lo + width * k as f64).collect();
    let mut counts = vec![0usize; bins];
    for &v in values {
        if v >= lo && v <= hi {
            counts[(((v - lo) / width) as usize).min(bins - 1)] += 1;
        }
    }
    let n = values.len().max(1) as f64;
    let densities = counts.iter().map(|&c| c as f64 / (n * width)).collect();
    Ok(Histogram {
        edges,
        counts,
        densities,
    })
}

impl Histogram {
    pub fn to_csv(&self, seed: u64) -> String {
        let mut out = format!("# seed={seed}\nbin_lo,bin_hi,count,density\n");
        for k in 0..self.counts.len() {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                self.edges[k],
                self.edges[k + 1],
                self.counts[k],
                self.densities[k]
            );
        }
        out
    }
}

/// Paired sweeps of generators trained with and without the uniformity loss.
#[derive(Debug, Clone)]
pub struct AblationReport {
    pub range_sizes: Vec<f64>,
    pub with_uniformity: Vec<SweepReport>,
    pub without_uniformity: Vec<SweepReport>,
}

impl AblationReport {
    /// `(mean entropy with, mean entropy without)` per range size.
    pub fn mean_entropies(&self) -> Vec<(f64, f64)> {
        self.with_uniformity
            .iter()
            .zip(&self.without_uniformity)
            .map(|(a, b)| (a.mean_entropy(), b.mean_entropy()))
            .collect()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("range_size,center,entropy_with,entropy_without,satisfaction_with,satisfaction_without\n");
        for (k, r) in self.range_sizes.iter().enumerate() {
            for (a, b) in self.with_uniformity[k].rows.iter().zip(&self.without_uniformity[k].rows) {
                let _ = writeln!(
                    out,
                    "{r},{},{},{},{},{}",
                    a.centers[0], a.quadratic_entropy, b.quadratic_entropy, a.satisfaction, b.satisfaction
                );
            }
        }
        out
    }
}

/// Trains two generators that differ only in the uniformity weight (the
/// configured λ2 versus 0) and sweeps both with the estimator as labeler.
pub fn uniformity_ablation(
    ds: &Dataset,
    estimator: &Estimator,
    cfg: &TrainConfig,
    range_sizes: &[f64],
    n_conditions: usize,
    n_samples: usize,
) -> Result<AblationReport> {
    let with = train_rangegan(ds, estimator, cfg)?;
    let mut off = cfg.clone();
    off.lambda2 = 0.0;
    let without = train_rangegan(ds, estimator, &off)?;
    uniformity_ablation_from(&with.generator, &without.generator, estimator, cfg, range_sizes, n_conditions, n_samples)
}

/// Sweeps an already trained pair of generators.
pub fn uniformity_ablation_from(
    with: &Generator,
    without: &Generator,
    estimator: &Estimator,
    cfg: &TrainConfig,
    range_sizes: &[f64],
    n_conditions: usize,
    n_samples: usize,
) -> Result<AblationReport> {
    let mut a = Vec::new();
    let mut b = Vec::new();
    for &r in range_sizes {
        let mut s = SweepSettings::new(r, n_conditions, n_samples, cfg.seed);
        s.stats = cfg.inference_stats;
        a.push(condition_sweep(with, Labeler::Estimator(estimator), &s)?);
        b.push(condition_sweep(without, Labeler::Estimator(estimator), &s)?);
    }
    Ok(AblationReport {
        range_sizes: range_sizes.to_vec(),
        with_uniformity: a,
        without_uniformity: b,
    })
}
