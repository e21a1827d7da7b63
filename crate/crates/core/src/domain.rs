//! Parametric planform domain.
//!
//! A design is six normalized numbers mapped affinely onto the physical
//! lengths of three axis-aligned rectangles in the unit square: fuselage,
//! main wing and tail plane. Labels are the aspect ratio (fuselage length over
//! wingspan) and the area ratio (union area over the unit square), both in
//! closed form.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::Matrix;
use crate::sampling::LabelNormalizer;

pub const DESIGN_DIM: usize = 6;
pub const N_LABELS: usize = 2;
pub const LABEL_NAMES: [&str; N_LABELS] = ["aspect", "area"];

/// Physical range of each design parameter, in unit-square lengths.
pub const PARAM_RANGES: [(f64, f64); DESIGN_DIM] = [
    (0.3, 1.0),   // fuselage length
    (0.02, 0.15), // fuselage width
    (0.3, 1.0),   // wingspan
    (0.05, 0.3),  // wing chord
    (0.2, 0.5),   // tail span
    (0.03, 0.15), // tail chord
];

/// Standard deviation of the truncated Gaussians used by [`generate_dataset`].
pub const DATASET_SIGMA: f64 = 0.15;
/// Rows above this percentile of either raw label are dropped.
pub const TRIM_PERCENTILE: f64 = 99.5;
pub const MIN_DATASET_SIZE: usize = 100;

/// Which labels a run conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSet {
    Aspect,
    Area,
    Both,
}

impl LabelSet {
    pub fn indices(self) -> &'static [usize] {
        match self {
            LabelSet::Aspect => &[0],
            LabelSet::Area => &[1],
            LabelSet::Both => &[0, 1],
        }
    }

    pub fn len(self) -> usize {
        self.indices().len()
    }

    pub fn is_empty(self) -> bool {
        false
    }

    pub fn names(self) -> Vec<&'static str> {
        self.indices().iter().map(|&i| LABEL_NAMES[i]).collect()
    }
}

impl std::str::FromStr for LabelSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "aspect" => Ok(LabelSet::Aspect),
            "area" => Ok(LabelSet::Area),
            "both" => Ok(LabelSet::Both),
            other => Err(Error::usage(format!("unknown label set {other:?} (aspect|area|both)"))),
        }
    }
}

impl std::fmt::Display for LabelSet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LabelSet::Aspect => "aspect",
            LabelSet::Area => "area",
            LabelSet::Both => "both",
        })
    }
}

/// A point of the normalized design space `[0, 1]^6`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DesignParams(pub [f64; DESIGN_DIM]);

impl DesignParams {
    pub fn new(values: [f64; DESIGN_DIM]) -> Result<Self> {
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::usage(format!("design parameters must lie in [0, 1]: {values:?}")));
        }
        Ok(DesignParams(values))
    }

    pub fn from_slice(values: &[f64]) -> Result<Self> {
        let arr: [f64; DESIGN_DIM] = values
            .try_into()
            .map_err(|_| Error::config(format!("expected {DESIGN_DIM} design values, got {}", values.len())))?;
        Self::new(arr)
    }

    pub fn physical(&self) -> Planform {
        let p = |k: usize| {
            let (lo, hi) = PARAM_RANGES[k];
            lo + self.0[k] * (hi - lo)
        };
        Planform {
            fuselage_length: p(0),
            fuselage_width: p(1),
            wingspan: p(2),
            wing_chord: p(3),
            tail_span: p(4),
            tail_chord: p(5),
        }
    }
}

/// Physical dimensions of a design.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Planform {
    pub fuselage_length: f64,
    pub fuselage_width: f64,
    pub wingspan: f64,
    pub wing_chord: f64,
    pub tail_span: f64,
    pub tail_chord: f64,
}

/// Axis-aligned rectangle `[x, x + width] × [y, y + height]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x: f64,
    pub y: f64,
    pub width: f64,
    pub height: f64,
}

impl Rect {
    pub fn contains(&self, px: f64, py: f64) -> bool {
        px >= self.x && px <= self.x + self.width && py >= self.y && py <= self.y + self.height
    }
}

impl Planform {
    /// Fuselage, wing and tail rectangles, centered in the unit square with the
    /// nose at the top. The wing sits a quarter of the way down the fuselage
    /// (moved forward if it would run into the tail); the tail is flush with
    /// the fuselage end.
    pub fn rectangles(&self) -> [Rect; 3] {
        let fl = self.fuselage_length;
        let top = 0.5 * (1.0 - fl);
        let centered = |width: f64, y: f64, height: f64| Rect {
            x: 0.5 - 0.5 * width,
            y,
            width,
            height,
        };
        let wing_offset = (0.25 * fl).min(fl - self.wing_chord - self.tail_chord).max(0.0);
        [
            centered(self.fuselage_width, top, fl),
            centered(self.wingspan, top + wing_offset, self.wing_chord),
            centered(self.tail_span, top + fl - self.tail_chord, self.tail_chord),
        ]
    }

    /// Exact union area of the three rectangles.
    pub fn area(&self) -> f64 {
        let Planform {
            fuselage_length: fl,
            fuselage_width: fw,
            wingspan: ws,
            wing_chord: wc,
            tail_span: ts,
            tail_chord: tc,
        } = *self;
        // Wing and tail lie within the fuselage's length and are wider than it,
        // so each adds its area outside the fuselage. They overlap each other
        // only when their chords together exceed the fuselage length.
        let overlap = (ts.min(ws) - fw) * (wc + tc - fl).max(0.0);
        fl * fw + wc * (ws - fw) + tc * (ts - fw) - overlap
    }
}

/// Raw (unnormalized) labels of a design.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelVector {
    pub aspect_ratio: f64,
    pub area_ratio: f64,
}

impl LabelVector {
    pub fn as_array(&self) -> [f64; N_LABELS] {
        [self.aspect_ratio, self.area_ratio]
    }
}

pub fn exact_evaluate(d: &DesignParams) -> LabelVector {
    let p = d.physical();
    LabelVector {
        aspect_ratio: p.fuselage_length / p.wingspan,
        area_ratio: p.area(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Augmented,
}

impl Provenance {
    fn as_str(self) -> &'static str {
        match self {
            Provenance::Original => "original",
            Provenance::Augmented => "augmented",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub design: DesignParams,
    pub labels: LabelVector,
    pub provenance: Provenance,
}

impl DatasetRow {
    pub fn evaluated(design: DesignParams, provenance: Provenance) -> Self {
        DatasetRow {
            labels: exact_evaluate(&design),
            design,
            provenance,
        }
    }
}

/// Companion metadata stored next to a dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub seed: u64,
    pub n_requested: usize,
    /// Raw-label cut points per label; rows above them were removed.
    pub percentile_cuts: [f64; N_LABELS],
    pub trim_percentile: f64,
    pub normalizer: LabelNormalizer,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub rows: Vec<DatasetRow>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Designs as an `N × 6` matrix.
    pub fn design_matrix(&self) -> Matrix {
        let data = self.rows.iter().flat_map(|r| r.design.0).collect();
        Matrix::from_vec(self.rows.len(), DESIGN_DIM, data).expect("row-major design matrix")
    }

    /// Normalized labels of the selected label set as an `N × L` matrix.
    pub fn normalized_labels(&self, labels: LabelSet) -> Matrix {
        let idx = labels.indices();
        let mut data = Vec::with_capacity(self.rows.len() * idx.len());
        for r in &self.rows {
            let norm = self.meta.normalizer.normalize(&r.labels.as_array());
            data.extend(idx.iter().map(|&i| norm[i]));
        }
        Matrix::from_vec(self.rows.len(), idx.len(), data).expect("row-major label matrix")
    }

    pub fn count(&self, provenance: Provenance) -> usize {
        self.rows.iter().filter(|r| r.provenance == provenance).count()
    }
}

/// Percentile with linear interpolation between order statistics.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Samples a biased, label-sparse dataset: every parameter is a Gaussian
/// centered mid-range with σ = 0.15, truncated to `[0, 1]`; rows whose raw
/// labels exceed the 99.5th percentile are then removed and the label
/// normalizer is fitted on what remains.
pub fn generate_dataset(n: usize, seed: u64) -> Result<Dataset> {
    if n < MIN_DATASET_SIZE {
        return Err(Error::usage(format!(
            "dataset size must be at least {MIN_DATASET_SIZE}, got {n}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.5, DATASET_SIGMA).expect("valid normal");
    let draw = |rng: &mut ChaCha8Rng| loop {
        let v: f64 = normal.sample(rng);
        if (0.0..=1.0).contains(&v) {
            break v;
        }
    };
    let rows: Vec<DatasetRow> = (0..n)
        .map(|_| {
            let mut p = [0.0; DESIGN_DIM];
            p.iter_mut().for_each(|v| *v = draw(&mut rng));
            DatasetRow::evaluated(DesignParams(p), Provenance::Original)
        })
        .collect();

    let cuts = [0, 1].map(|k| {
        let vals: Vec<f64> = rows.iter().map(|r| r.labels.as_array()[k]).collect();
        percentile(&vals, TRIM_PERCENTILE)
    });
    let rows: Vec<DatasetRow> = rows
        .into_iter()
        .filter(|r| {
            let l = r.labels.as_array();
            l[0] <= cuts[0] && l[1] <= cuts[1]
        })
        .collect();
    let raw: Vec<[f64; N_LABELS]> = rows.iter().map(|r| r.labels.as_array()).collect();
    let normalizer = LabelNormalizer::fit(&raw)?;
    Ok(Dataset {
        rows,
        meta: DatasetMeta {
            seed,
            n_requested: n,
            percentile_cuts: cuts,
            trim_percentile: TRIM_PERCENTILE,
            normalizer,
        },
    })
}

pub const DATASET_HEADER: [&str; 9] = [
    "d0",
    "d1",
    "d2",
    "d3",
    "d4",
    "d5",
    "aspect_ratio_raw",
    "area_ratio_raw",
    "provenance",
];

/// Location of the metadata document that accompanies a dataset file.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    let row = e.position().map_or(0, |p| p.line().saturating_sub(1) as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            path: path.to_path_buf(),
            row,
            message: format!("{other:?}"),
        },
    }
}

/// Writes the dataset as CSV plus a JSON metadata companion.
pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    w.write_record(DATASET_HEADER).map_err(|e| csv_err(path, e))?;
    for r in &ds.rows {
        let mut rec: Vec<String> = r.design.0.iter().map(f64::to_string).collect();
        rec.push(r.labels.aspect_ratio.to_string());
        rec.push(r.labels.area_ratio.to_string());
        rec.push(r.provenance.as_str().to_string());
        w.write_record(&rec).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let meta = serde_json::to_string_pretty(&ds.meta).map_err(|e| Error::config(e.to_string()))?;
    let mp = meta_path(path);
    std::fs::write(&mp, meta).map_err(|e| Error::io(&mp, e))
}

/// Reads a dataset written by [`save_dataset`], re-verifying every label
/// against the exact evaluator.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let mp = meta_path(path);
    let meta_text = std::fs::read_to_string(&mp).map_err(|e| Error::io(&mp, e))?;
    let meta: DatasetMeta = serde_json::from_str(&meta_text).map_err(|e| Error::Parse {
        path: mp.clone(),
        row: e.line(),
        message: e.to_string(),
    })?;
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .from_path(path)
        .map_err(|e| csv_err(path, e))?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().ne(DATASET_HEADER) {
        return Err(Error::Parse {
            path: path.to_path_buf(),
            row: 0,
            message: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()),
        });
    }
    let mut rows = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let row_no = k + 1;
        let perr = |message: String| Error::Parse {
            path: path.to_path_buf(),
            row: row_no,
            message,
        };
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != DATASET_HEADER.len() {
            return Err(perr(format!(
                "expected {} columns, found {}",
                DATASET_HEADER.len(),
                rec.len()
            )));
        }
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .trim()
                .parse::<f64>()
                .map_err(|e| perr(format!("column {}: {e}", DATASET_HEADER[i])))
        };
        let mut d = [0.0; DESIGN_DIM];
        for (i, v) in d.iter_mut().enumerate() {
            *v = num(i)?;
        }
        let design = DesignParams::new(d).map_err(|e| perr(e.to_string()))?;
        let labels = LabelVector {
            aspect_ratio: num(6)?,
            area_ratio: num(7)?,
        };
        let provenance = match rec[8].trim() {
            "original" => Provenance::Original,
            "augmented" => Provenance::Augmented,
            other => return Err(perr(format!("unknown provenance {other:?}"))),
        };
        let exact = exact_evaluate(&design);
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12 * b.abs().max(1.0);
        if !close(labels.aspect_ratio, exact.aspect_ratio) || !close(labels.area_ratio, exact.area_ratio) {
            return Err(perr(format!(
                "stored labels {labels:?} do not match the evaluator {exact:?}"
            )));
        }
        rows.push(DatasetRow {
            design,
            labels,
            provenance,
        });
    }
    Ok(Dataset { rows, meta })
}

/// Pixels per unit length in rendered sheets.
pub const RENDER_SCALE: f64 = 100.0;

/// SVG sheet with one silhouette per design, all drawn at the same scale so
/// relative sizes are truthful. Each design occupies a unit-square cell.
pub fn render_svg(designs: &[DesignParams], columns: usize) -> String {
    let columns = columns.max(1);
    let rows = designs.len().div_ceil(columns).max(1);
    let (w, h) = (columns as f64 * RENDER_SCALE, rows as f64 * RENDER_SCALE);
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    for (k, d) in designs.iter().enumerate() {
        let (cx, cy) = ((k % columns) as f64 * RENDER_SCALE, (k / columns) as f64 * RENDER_SCALE);
        let _ = writeln!(out, r#"  <g id="design{k}" transform="translate({cx} {cy})">"#);
        let _ = writeln!(
            out,
            r#"    <rect class="cell" x="0" y="0" width="{RENDER_SCALE}" height="{RENDER_SCALE}" fill="none" stroke="lightgray"/>"#
        );
        for (name, r) in ["fuselage", "wing", "tail"].iter().zip(d.physical().rectangles()) {
            let _ = writeln!(
                out,
                r#"    <rect class="{name}" x="{}" y="{}" width="{}" height="{}" fill="black"/>"#,
                r.x * RENDER_SCALE,
                r.y * RENDER_SCALE,
                r.width * RENDER_SCALE,
                r.height * RENDER_SCALE
            );
        }
        let _ = writeln!(out, "  </g>");
    }
    out.push_str("</svg>\n");
    out
}

/// Union area by Monte-Carlo point counting over the unit square.
pub fn monte_carlo_area<R: Rng + ?Sized>(d: &DesignParams, n_points: usize, rng: &mut R) -> f64 {
    let rects = d.physical().rectangles();
    let hits = (0..n_points)
        .filter(|_| {
            let (x, y): (f64, f64) = (rng.random(), rng.random());
            rects.iter().any(|r| r.contains(x, y))
        })
        .count();
    hits as f64 / n_points as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn design_from_physical(p: [f64; DESIGN_DIM]) -> DesignParams {
        let mut d = [0.0; DESIGN_DIM];
        for k in 0..DESIGN_DIM {
            let (lo, hi) = PARAM_RANGES[k];
            d[k] = (p[k] - lo) / (hi - lo);
        }
        DesignParams::new(d).unwrap()
    }

    #[test]
    fn aspect_ratio_of_equal_lengths() {
        let d = design_from_physical([0.8, 0.1, 0.8, 0.2, 0.3, 0.05]);
        assert!((exact_evaluate(&d).aspect_ratio - 1.0).abs() < 1e-12);
    }

    #[test]
    fn area_closed_form_example() {
        let d = design_from_physical([0.8, 0.1, 0.8, 0.2, 0.3, 0.05]);
        let area = exact_evaluate(&d).area_ratio;
        assert!((area - 0.23).abs() < 1e-12, "{area}");
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mc = monte_carlo_area(&d, 1_000_000, &mut rng);
        assert!((mc - 0.23).abs() < 1e-3, "{mc}");
    }

    #[test]
    fn area_matches_monte_carlo_rasterization() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut overlapping = 0;
        for _ in 0..100 {
            let d = DesignParams(std::array::from_fn(|_| rng.random()));
            let p = d.physical();
            if p.wing_chord + p.tail_chord > p.fuselage_length {
                overlapping += 1;
            }
            let mc = monte_carlo_area(&d, 1_000_000, &mut rng);
            let exact = exact_evaluate(&d).area_ratio;
            assert!((mc - exact).abs() < 2e-3, "{d:?}: mc {mc} vs {exact}");
        }
        assert!(overlapping > 0, "sample should include wing/tail overlap cases");
    }

    #[test]
    fn rectangles_fit_in_unit_square() {
        for corner in 0..64u32 {
            let d = DesignParams(std::array::from_fn(|k| f64::from((corner >> k) & 1)));
            for r in d.physical().rectangles() {
                assert!(r.x >= 0.0 && r.y >= 0.0 && r.x + r.width <= 1.0 + 1e-12 && r.y + r.height <= 1.0 + 1e-12);
            }
            let l = exact_evaluate(&d);
            assert!(l.aspect_ratio >= 0.3 - 1e-12 && l.aspect_ratio <= 10.0 / 3.0 + 1e-12);
            assert!(l.area_ratio > 0.0 && l.area_ratio < 1.0);
        }
    }

    proptest! {
        #[test]
        fn aspect_ratio_is_scale_free(fl in 0.3f64..0.5, ws in 0.3f64..0.5, rest in prop::array::uniform4(0.0f64..1.0)) {
            let a = design_from_physical([fl, 0.05, ws, 0.1, 0.3, 0.05]);
            let b = design_from_physical([2.0 * fl, 0.05, 2.0 * ws, 0.1, 0.3, 0.05]);
            let ra = exact_evaluate(&a).aspect_ratio;
            let rb = exact_evaluate(&b).aspect_ratio;
            prop_assert!((ra - rb).abs() < 1e-12);
            let _ = rest;
        }

        #[test]
        fn evaluator_total_and_bounded(d in prop::array::uniform6(0.0f64..=1.0)) {
            let l = exact_evaluate(&DesignParams(d));
            prop_assert!(l.aspect_ratio.is_finite() && l.area_ratio > 0.0 && l.area_ratio < 1.0);
            prop_assert_eq!(l, exact_evaluate(&DesignParams(d)));
        }
    }

    #[test]
    fn dataset_generation_is_reproducible_and_trimmed() {
        let a = generate_dataset(4000, 7).unwrap();
        let b = generate_dataset(4000, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.len() >= 3950, "{}", a.len());
        assert!(a.len() >= 3960, "at most 1% removed: {}", a.len());
        for r in &a.rows {
            let l = r.labels.as_array();
            assert!(l[0] <= a.meta.percentile_cuts[0] && l[1] <= a.meta.percentile_cuts[1]);
            assert_eq!(r.labels, exact_evaluate(&r.design));
        }
        let norm = a.normalized_labels(LabelSet::Both);
        assert!(norm.data().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn dataset_labels_are_sparse() {
        let ds = generate_dataset(4000, 7).unwrap();
        let norm = ds.normalized_labels(LabelSet::Both);
        for j in 0..2 {
            let mut counts = [0usize; 10];
            for v in norm.column(j) {
                counts[((v * 10.0) as usize).min(9)] += 1;
            }
            let max = *counts.iter().max().unwrap() as f64;
            let min = *counts.iter().min().unwrap() as f64;
            assert!(min == 0.0 || max / min >= 5.0, "label {j}: {counts:?}");
            // The densest bin holds the designs near the parameter midpoint.
            let mid = exact_evaluate(&DesignParams([0.5; 6])).as_array();
            let mid_norm = ds.meta.normalizer.normalize(&mid)[j];
            let mid_bin = ((mid_norm * 10.0) as usize).min(9);
            let best = counts.iter().enumerate().max_by_key(|(_, c)| **c).unwrap().0;
            assert!(best.abs_diff(mid_bin) <= 1, "label {j}: densest {best}, midpoint {mid_bin}");
        }
    }

    #[test]
    fn too_small_dataset_is_rejected() {
        assert!(matches!(generate_dataset(10, 1), Err(Error::Usage(_))));
    }

    #[test]
    fn save_load_roundtrip() {
        let mut ds = generate_dataset(300, 3).unwrap();
        ds.rows[5].provenance = Provenance::Augmented;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        save_dataset(&ds, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        assert_eq!(back, ds);
        assert_eq!(back.meta.percentile_cuts, ds.meta.percentile_cuts);
    }

    #[test]
    fn wrong_column_count_names_the_row() {
        let ds = generate_dataset(200, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        save_dataset(&ds, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
        lines[4] = lines[4].rsplit_once(',').unwrap().0.to_string();
        std::fs::write(&path, lines.join("\n")).unwrap();
        match load_dataset(&path) {
            Err(Error::Parse { row, .. }) => assert_eq!(row, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn tampered_label_is_rejected() {
        let ds = generate_dataset(200, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("data.csv");
        let mut bad = ds.clone();
        bad.rows[0].labels.area_ratio += 0.01;
        save_dataset(&bad, &path).unwrap();
        assert!(matches!(load_dataset(&path), Err(Error::Parse { row: 1, .. })));
    }

    #[test]
    fn render_uses_physical_dimensions() {
        let d = design_from_physical([0.8, 0.1, 0.8, 0.2, 0.3, 0.05]);
        let svg = render_svg(&[d], 1);
        let rect = |class: &str| -> (f64, f64) {
            let line = svg.lines().find(|l| l.contains(&format!(r#"class="{class}""#))).unwrap();
            let attr = |name: &str| -> f64 {
                let start = line.find(&format!(r#" {name}=""#)).unwrap() + name.len() + 3;
                let end = start + line[start..].find('"').unwrap();
                line[start..end].parse().unwrap()
            };
            (attr("width"), attr("height"))
        };
        let close = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).abs() < 1e-9 && (a.1 - b.1).abs() < 1e-9;
        assert!(close(rect("fuselage"), (10.0, 80.0)));
        assert!(close(rect("wing"), (80.0, 20.0)));
        assert!(close(rect("tail"), (30.0, 5.0)));
    }
}
