//! Training loops: estimator regression, Range-GAN, and label-aware
//! self-augmentation followed by retraining.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{Dataset, DatasetRow, DesignParams, LabelSet, Provenance};
use crate::error::{Error, Result};
use crate::losses::{condition_losses, gan_losses, generator_total_loss, sample_slices, LossWeights};
use crate::metrics::{bin_counts, bin_index, condition_sweep, sweep_conditions, Labeler, SweepReport, SweepSettings};
use crate::models::{Discriminator, Estimator, Generator, InferenceStats, ModelManifest, TrainedModels};
use crate::netcore::{adam_step, AdamConfig, AdamState, Matrix, Mode};
use crate::sampling::{sample_condition, UniformLabelSampler};

// Independent random streams per phase, all derived from one seed.
const STREAM_ESTIMATOR: u64 = 1;
const STREAM_GAN: u64 = 2;
const STREAM_AUGMENT: u64 = 1 << 32;

fn phase_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Every knob of a training run. Serialized as a flat `key = value` document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub labels: LabelSet,
    pub seed: u64,

    pub gan_steps: u64,
    pub batch_size: usize,
    pub gan_lr: f64,
    pub gan_lr_decay: f64,
    pub gan_lr_decay_steps: u64,

    pub estimator_steps: u64,
    pub estimator_batch_size: usize,
    pub estimator_lr: f64,
    pub estimator_lr_decay: f64,
    pub estimator_lr_decay_steps: u64,
    /// Fraction of the dataset held out to report estimator MAE.
    pub holdout_fraction: f64,

    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,

    pub phi: f64,
    pub lambda1: f64,
    pub lambda2: f64,
    pub uniformity_slices: usize,

    pub noise_dim: usize,
    pub generator_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub estimator_hidden: Vec<usize>,

    /// Normalization statistics used when sampling from the generator.
    pub inference_stats: InferenceStats,
    pub log_every: u64,

    pub sweep_conditions: usize,
    pub sweep_samples: usize,
    pub pool_size: usize,
    pub augment_bins: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            labels: LabelSet::Aspect,
            seed: 0,
            gan_steps: 10_000,
            batch_size: 32,
            gan_lr: 1e-3,
            gan_lr_decay: 0.5,
            gan_lr_decay_steps: 2_500,
            estimator_steps: 5_000,
            estimator_batch_size: 256,
            estimator_lr: 1e-4,
            estimator_lr_decay: 0.6,
            estimator_lr_decay_steps: 2_500,
            holdout_fraction: 0.1,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            phi: 20.0,
            lambda1: 2.0,
            lambda2: 1.0,
            uniformity_slices: 5,
            noise_dim: 16,
            generator_hidden: vec![64; 3],
            discriminator_hidden: vec![64; 3],
            estimator_hidden: vec![64; 4],
            inference_stats: InferenceStats::Batch,
            log_every: 100,
            sweep_conditions: 50,
            sweep_samples: 500,
            pool_size: 2_000,
            augment_bins: 10,
        }
    }
}

impl TrainConfig {
    pub fn weights(&self) -> LossWeights {
        LossWeights {
            phi: self.phi,
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            k: self.uniformity_slices,
        }
    }

    fn adam(&self, lr: f64, decay: f64, interval: u64) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            epsilon: self.adam_epsilon,
            ..AdamConfig::new(lr, decay, interval)
        }
    }

    pub fn gan_adam(&self) -> AdamConfig {
        self.adam(self.gan_lr, self.gan_lr_decay, self.gan_lr_decay_steps)
    }

    pub fn estimator_adam(&self) -> AdamConfig {
        self.adam(self.estimator_lr, self.estimator_lr_decay, self.estimator_lr_decay_steps)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("gan_steps", self.gan_steps as usize),
            ("batch_size", self.batch_size),
            ("estimator_steps", self.estimator_steps as usize),
            ("estimator_batch_size", self.estimator_batch_size),
            ("noise_dim", self.noise_dim),
            ("log_every", self.log_every as usize),
            ("sweep_conditions", self.sweep_conditions),
            ("sweep_samples", self.sweep_samples),
            ("augment_bins", self.augment_bins),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(format!("{name} must be positive")));
        }
        // Batch normalization needs at least two rows.
        if self.batch_size < 2 || self.estimator_batch_size < 2 {
            return Err(Error::config("batch sizes must be at least 2"));
        }
        for (name, widths) in [
            ("generator_hidden", &self.generator_hidden),
            ("discriminator_hidden", &self.discriminator_hidden),
            ("estimator_hidden", &self.estimator_hidden),
        ] {
            if widths.is_empty() || widths.contains(&0) {
                return Err(Error::config(format!("{name} needs at least one positive width")));
            }
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return Err(Error::config("holdout_fraction must lie in (0, 1)"));
        }
        self.weights().validate()?;
        self.gan_adam().validate()?;
        self.estimator_adam().validate()
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: TrainConfig = toml::from_str(text).map_err(|e| Error::config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(m) => Error::config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// Held-out accuracy of a trained estimator, in normalized label units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorReport {
    pub labels: LabelSet,
    pub mae: Vec<f64>,
    pub final_train_mse: f64,
    pub n_train: usize,
    pub n_holdout: usize,
}

/// Fits an estimator to `(x, y)` with mean squared error, drawing each batch
/// so that one label (cycling through the columns) is uniformly distributed.
/// Returns the estimator and the training MSE of the last batch.
pub fn fit_estimator(x: &Matrix, y: &Matrix, labels: LabelSet, cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<(Estimator, f64)> {
    if x.rows() != y.rows() || y.cols() != labels.len() {
        return Err(Error::config("estimator data shapes disagree"));
    }
    let mut est = Estimator::new(&cfg.estimator_hidden, labels, rng)?;
    let mut opt = AdamState::new(cfg.estimator_adam(), &est.net.param_slices());
    let sampler = UniformLabelSampler::new(y)?;
    let l = labels.len();
    let n = cfg.estimator_batch_size;
    let mut last = f64::NAN;
    for step in 0..cfg.estimator_steps {
        let idx = sampler.sample_batch(n, (step % l as u64) as usize, rng);
        let xb = x.select_rows(&idx);
        let yb = y.select_rows(&idx);
        let fwd = est.forward(&xb, Mode::Train)?;
        let scale = 1.0 / (n * l) as f64;
        let mut d_out = Matrix::zeros(n, l);
        let mut mse = 0.0;
        for (k, (p, t)) in fwd.output.data().iter().zip(yb.data()).enumerate() {
            mse += (p - t) * (p - t) * scale;
            d_out.data_mut()[k] = 2.0 * (p - t) * scale;
        }
        if !mse.is_finite() {
            return Err(Error::TrainingFault {
                step: step + 1,
                message: format!("estimator loss is {mse}"),
            });
        }
        let (grads, _) = est.net.backward(&fwd, &d_out);
        if !grads.is_finite() {
            return Err(Error::TrainingFault {
                step: step + 1,
                message: "estimator gradient is not finite".into(),
            });
        }
        adam_step(&mut est.net, &grads, &mut opt)?;
        est.net.commit_running_stats(&fwd);
        last = mse;
    }
    Ok((est, last))
}

/// Mean absolute error per label column.
pub fn mean_absolute_error(pred: &Matrix, truth: &Matrix) -> Vec<f64> {
    let n = pred.rows().max(1) as f64;
    (0..pred.cols())
        .map(|j| pred.column(j).iter().zip(truth.column(j)).map(|(p, t)| (p - t).abs()).sum::<f64>() / n)
        .collect()
}

/// Trains an estimator on a random split of `ds` and reports held-out MAE.
pub fn train_estimator(ds: &Dataset, cfg: &TrainConfig) -> Result<(Estimator, EstimatorReport)> {
    cfg.validate()?;
    let mut rng = phase_rng(cfg.seed, STREAM_ESTIMATOR);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    order.shuffle(&mut rng);
    let n_holdout = ((ds.len() as f64 * cfg.holdout_fraction).round() as usize).clamp(1, ds.len() - 1);
    let (held, train) = order.split_at(n_holdout);
    let x = ds.design_matrix();
    let y = ds.normalized_labels(cfg.labels);
    let (est, final_train_mse) = fit_estimator(&x.select_rows(train), &y.select_rows(train), cfg.labels, cfg, &mut rng)?;
    let pred = est.predict(&x.select_rows(held))?;
    let report = EstimatorReport {
        labels: cfg.labels,
        mae: mean_absolute_error(&pred, &y.select_rows(held)),
        final_train_mse,
        n_train: train.len(),
        n_holdout,
    };
    Ok((est, report))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: u64,
    pub d_loss: f64,
    pub g_adv: f64,
    pub range_loss: f64,
    pub uniformity_loss: f64,
    pub g_total: f64,
    pub lr: f64,
    pub d_real_mean: f64,
    pub d_fake_mean: f64,
    /// Fraction of the step's generated batch meeting its condition, per the estimator.
    pub batch_satisfaction: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainingLog {
    pub seed: u64,
    pub rows: Vec<LogRow>,
}

impl TrainingLog {
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).map_err(|e| Error::config(e.to_string()))?;
        }
        let body = w.into_inner().map_err(|e| Error::config(e.to_string()))?;
        Ok(format!("# seed={}\n{}", self.seed, String::from_utf8_lossy(&body)))
    }

    pub fn from_csv(text: &str, path: &Path) -> Result<Self> {
        let seed = text
            .lines()
            .next()
            .and_then(|l| l.strip_prefix("# seed="))
            .and_then(|s| s.trim().parse().ok())
            .ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                row: 0,
                message: "missing seed line".into(),
            })?;
        let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(text.as_bytes());
        let rows = rdr
            .deserialize()
            .enumerate()
            .map(|(k, r)| {
                r.map_err(|e| Error::Parse {
                    path: path.to_path_buf(),
                    row: k + 1,
                    message: e.to_string(),
                })
            })
            .collect::<Result<Vec<LogRow>>>()?;
        Ok(TrainingLog { seed, rows })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_csv(&text, path)
    }
}

#[derive(Debug, Clone)]
pub struct GanRun {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub log: TrainingLog,
    pub generator_opt: AdamState,
    pub discriminator_opt: AdamState,
}

fn fault(step: u64, what: &str, parts: &[(&str, f64)]) -> Error {
    let breakdown: Vec<String> = parts.iter().map(|(k, v)| format!("{k}={v}")).collect();
    Error::TrainingFault {
        step,
        message: format!("{what}; {}", breakdown.join(" ")),
    }
}

/// Adversarial training guided by a frozen estimator. Each step samples one
/// condition shared by the whole batch, updates the discriminator on a
/// label-uniform real batch versus generated designs, then updates the
/// generator on the adversarial, range and uniformity terms.
pub fn train_rangegan(ds: &Dataset, est: &Estimator, cfg: &TrainConfig) -> Result<GanRun> {
    cfg.validate()?;
    if est.labels != cfg.labels {
        return Err(Error::config(format!(
            "estimator predicts {} but the run conditions on {}",
            est.labels, cfg.labels
        )));
    }
    let mut rng = phase_rng(cfg.seed, STREAM_GAN);
    let mut g = Generator::new(cfg.noise_dim, &cfg.generator_hidden, cfg.labels, &mut rng)?;
    let mut d = Discriminator::new(&cfg.discriminator_hidden, &mut rng)?;
    let mut g_opt = AdamState::new(cfg.gan_adam(), &g.net.param_slices());
    let mut d_opt = AdamState::new(cfg.gan_adam(), &d.net.param_slices());
    let weights = cfg.weights();
    let designs = ds.design_matrix();
    let labels = ds.normalized_labels(cfg.labels);
    let sampler = UniformLabelSampler::new(&labels)?;
    let l = cfg.labels.len();
    let n = cfg.batch_size;
    let column = |v: &[f64]| Matrix::from_vec(v.len(), 1, v.to_vec()).expect("column vector");
    let mut log = TrainingLog {
        seed: cfg.seed,
        rows: Vec::new(),
    };

    for step in 1..=cfg.gan_steps {
        let cond = sample_condition(&mut rng, l);
        let idx = sampler.sample_batch(n, ((step - 1) % l as u64) as usize, &mut rng);
        let real = designs.select_rows(&idx);
        let z = g.sample_noise(n, &mut rng);
        let g_fwd = g.forward(&z, &cond, Mode::Train)?;
        let fake = &g_fwd.output;

        let real_fwd = d.forward(&real)?;
        let fake_fwd = d.forward(fake)?;
        let gl = gan_losses(real_fwd.output.data(), fake_fwd.output.data());
        if !gl.discriminator.is_finite() {
            return Err(fault(step, "non-finite discriminator loss", &[("d_loss", gl.discriminator)]));
        }
        let (mut d_grads, _) = d.net.backward(&real_fwd, &column(&gl.d_real_grad));
        let (fake_grads, _) = d.net.backward(&fake_fwd, &column(&gl.d_fake_grad));
        d_grads.add_assign(&fake_grads);
        if !d_grads.is_finite() {
            return Err(fault(step, "non-finite discriminator gradient", &[("d_loss", gl.discriminator)]));
        }
        adam_step(&mut d.net, &d_grads, &mut d_opt)?;

        // Generator pass against the updated discriminator.
        let adv_fwd = d.forward(fake)?;
        let adv = gan_losses(&[], adv_fwd.output.data());
        let (_, dx_adv) = d.net.backward(&adv_fwd, &column(&adv.g_fake_grad));
        let e_fwd = est.forward(fake, Mode::Eval)?;
        let slices: Vec<Vec<f64>> = cond
            .bounds
            .iter()
            .map(|&(lb, ub)| sample_slices(&mut rng, lb, ub, weights.k))
            .collect();
        let cl = condition_losses(&e_fwd.output, &cond, &weights, &slices)?;
        let (_, dx_cond) = est.net.backward(&e_fwd, &cl.grad);
        let mut dx = dx_adv;
        dx.add_assign(&dx_cond);
        let total = generator_total_loss(adv.generator_adv, cl.range, cl.uniformity, &weights);
        let parts = [
            ("d_loss", gl.discriminator),
            ("g_adv", adv.generator_adv),
            ("range", cl.range),
            ("uniformity", cl.uniformity),
        ];
        if !total.is_finite() {
            return Err(fault(step, "non-finite generator loss", &parts));
        }
        let (g_grads, _) = g.net.backward(&g_fwd, &dx);
        if !g_grads.is_finite() {
            return Err(fault(step, "non-finite generator gradient", &parts));
        }
        let lr = adam_step(&mut g.net, &g_grads, &mut g_opt)?;
        g.net.commit_running_stats(&g_fwd);

        if step % cfg.log_every == 0 || step == cfg.gan_steps {
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            log.rows.push(LogRow {
                step,
                d_loss: gl.discriminator,
                g_adv: adv.generator_adv,
                range_loss: cl.range,
                uniformity_loss: cl.uniformity,
                g_total: total,
                lr,
                d_real_mean: mean(real_fwd.output.data()),
                d_fake_mean: mean(fake_fwd.output.data()),
                batch_satisfaction: cl.n_satisfying as f64 / n as f64,
            });
        }
    }
    Ok(GanRun {
        generator: g,
        discriminator: d,
        log,
        generator_opt: g_opt,
        discriminator_opt: d_opt,
    })
}

/// Bundles a finished run with the metadata needed to reload it.
pub fn bundle(run: &GanRun, est: &Estimator, ds: &Dataset, cfg: &TrainConfig) -> Result<TrainedModels> {
    let l = cfg.labels.len();
    Ok(TrainedModels {
        generator: run.generator.clone(),
        discriminator: run.discriminator.clone(),
        estimator: est.clone(),
        manifest: ModelManifest {
            networks: vec!["generator".into(), "discriminator".into(), "estimator".into()],
            noise_dim: cfg.noise_dim,
            cond_dim: 2 * l,
            n_labels: l,
            labels: cfg.labels,
            normalizer: ds.meta.normalizer.clone(),
            seed: cfg.seed,
            config: cfg.to_toml()?,
        },
        optimizers: Some((run.generator_opt.clone(), run.discriminator_opt.clone())),
    })
}

/// Indices of pool entries chosen to even out `counts`. Each entry in
/// `pool_bins` is taken, in order, if its bin is still below the largest
/// count; filling stops once every bin matches or the pool runs out.
pub fn fill_deficits(counts: &[usize], pool_bins: &[Option<usize>]) -> Vec<usize> {
    let target = counts.iter().copied().max().unwrap_or(0);
    let mut counts = counts.to_vec();
    let mut deficit: usize = counts.iter().map(|c| target - c).sum();
    let mut chosen = Vec::new();
    for (k, b) in pool_bins.iter().enumerate() {
        if deficit == 0 {
            break;
        }
        if let Some(b) = *b {
            if counts[b] < target {
                counts[b] += 1;
                deficit -= 1;
                chosen.push(k);
            }
        }
    }
    chosen
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentSummary {
    pub pool_size: usize,
    pub added: usize,
    /// Bin counts per constrained label, before and after.
    pub bins_before: Vec<Vec<usize>>,
    pub bins_after: Vec<Vec<usize>>,
}

fn label_bins(ds: &Dataset, labels: LabelSet, bins: usize) -> Vec<Vec<usize>> {
    let y = ds.normalized_labels(labels);
    (0..labels.len()).map(|j| bin_counts(&y.column(j), bins)).collect()
}

/// Generates a pool of designs spread over 0.1-wide conditions across the
/// label space, evaluates them exactly and adds rows to under-populated
/// label bins (one label at a time).
pub fn self_augment(
    g: &Generator,
    ds: &Dataset,
    n_pool: usize,
    bins: usize,
    stats: InferenceStats,
    seed: u64,
) -> Result<(Dataset, AugmentSummary)> {
    if bins == 0 {
        return Err(Error::usage("need at least one bin"));
    }
    let labels = g.labels;
    let bins_before = label_bins(ds, labels, bins);
    let conds = sweep_conditions(labels.len(), 0.1, 20)?;
    let per = n_pool / conds.len();
    let extra = n_pool % conds.len();
    let pool: Vec<DatasetRow> = conds
        .par_iter()
        .enumerate()
        .map(|(k, (_, cond))| {
            let count = per + usize::from(k < extra);
            if count == 0 {
                return Ok(Vec::new());
            }
            // One stream per pool condition keeps the pool independent of thread scheduling.
            let mut rng = phase_rng(seed, STREAM_AUGMENT + k as u64);
            let x = g.sample(count, cond, stats, &mut rng)?;
            x.iter_rows()
                .map(|r| Ok(DatasetRow::evaluated(DesignParams::from_slice(r)?, Provenance::Augmented)))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();

    let mut out = ds.clone();
    let mut used = vec![false; pool.len()];
    let norm = &ds.meta.normalizer;
    for (j, &label) in labels.indices().iter().enumerate() {
        let counts = &label_bins(&out, labels, bins)[j];
        let avail: Vec<usize> = (0..pool.len()).filter(|&k| !used[k]).collect();
        let pool_bins: Vec<Option<usize>> = avail
            .iter()
            .map(|&k| bin_index(norm.normalize(&pool[k].labels.as_array())[label], bins))
            .collect();
        for c in fill_deficits(counts, &pool_bins) {
            used[avail[c]] = true;
            out.rows.push(pool[avail[c]].clone());
        }
    }
    let summary = AugmentSummary {
        pool_size: pool.len(),
        added: out.len() - ds.len(),
        bins_before,
        bins_after: label_bins(&out, labels, bins),
    };
    Ok((out, summary))
}

#[derive(Debug, Clone)]
pub struct AugmentationOutcome {
    pub dataset: Dataset,
    pub summary: AugmentSummary,
    pub estimator: Estimator,
    pub estimator_report: EstimatorReport,
    pub run: GanRun,
    /// Exact-labeler sweeps at range 0.1 of the base and retrained generators.
    pub before: SweepReport,
    pub after: SweepReport,
}

/// One self-augmentation round: augment with the base generator, retrain the
/// estimator and Range-GAN from fresh initialization on the augmented data,
/// and compare exact satisfaction before and after.
pub fn augmentation_round(ds: &Dataset, base: &Generator, cfg: &TrainConfig) -> Result<AugmentationOutcome> {
    cfg.validate()?;
    if base.labels != cfg.labels {
        return Err(Error::config("base generator labels differ from the configuration"));
    }
    let (dataset, summary) = self_augment(base, ds, cfg.pool_size, cfg.augment_bins, cfg.inference_stats, cfg.seed)?;
    let (estimator, estimator_report) = train_estimator(&dataset, cfg)?;
    let run = train_rangegan(&dataset, &estimator, cfg)?;
    let settings = SweepSettings {
        stats: cfg.inference_stats,
        ..SweepSettings::new(0.1, cfg.sweep_conditions, cfg.sweep_samples, cfg.seed)
    };
    let labeler = Labeler::Exact(&ds.meta.normalizer);
    let before = condition_sweep(base, labeler, &settings)?;
    let after = condition_sweep(&run.generator, labeler, &settings)?;
    Ok(AugmentationOutcome {
        dataset,
        summary,
        estimator,
        estimator_report,
        run,
        before,
        after,
    })
}
