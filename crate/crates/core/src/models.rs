//! The three networks: a generator modulated by conditional batch norm, an
//! unconditional discriminator and a residual label estimator.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

pub use crate::domain::LabelSet;
use crate::domain::DESIGN_DIM;
use crate::error::{Error, Result};
use crate::losses::RangeCondition;
use crate::netcore::{Activation, AdamState, BlockSpec, Checkpoint, Forward, Matrix, Mode, Network, NormKind};
use crate::sampling::LabelNormalizer;

/// Which normalization statistics the generator uses when sampling.
///
/// `Batch` recomputes statistics over the generated batch (all samples share
/// one condition, exactly as in training); `Running` uses the stored moving
/// averages and makes every sample independent of its batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InferenceStats {
    Batch,
    Running,
}

impl InferenceStats {
    pub fn mode(self) -> Mode {
        match self {
            InferenceStats::Batch => Mode::Train,
            InferenceStats::Running => Mode::Eval,
        }
    }
}

/// Maps `(noise, condition)` to a design in `(0, 1)^6`. The condition enters
/// only through conditional batch norm after every hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub net: Network,
    pub noise_dim: usize,
    pub labels: LabelSet,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(noise_dim: usize, hidden: &[usize], labels: LabelSet, rng: &mut R) -> Result<Self> {
        let mut specs: Vec<BlockSpec> = hidden
            .iter()
            .map(|&w| BlockSpec::hidden(w, NormKind::Conditional))
            .collect();
        specs.push(BlockSpec::output(DESIGN_DIM, Activation::Sigmoid, 1.0));
        let net = Network::build(noise_dim, 2 * labels.len(), &specs, rng)?;
        Ok(Generator { net, noise_dim, labels })
    }

    pub fn cond_dim(&self) -> usize {
        2 * self.labels.len()
    }

    pub fn sample_noise<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Matrix {
        let data = (0..n * self.noise_dim).map(|_| rng.sample(StandardNormal)).collect();
        Matrix::from_vec(n, self.noise_dim, data).expect("noise shape")
    }

    fn check_condition(&self, cond: &RangeCondition) -> Result<()> {
        if cond.n_labels() != self.labels.len() {
            return Err(Error::usage(format!(
                "generator conditions on {} label(s), got {}",
                self.labels.len(),
                cond.n_labels()
            )));
        }
        // Re-validate in case the bounds were built without the constructor.
        RangeCondition::new(cond.bounds.clone()).map(|_| ())
    }

    pub fn forward(&self, z: &Matrix, cond: &RangeCondition, mode: Mode) -> Result<Forward> {
        self.check_condition(cond)?;
        self.net.forward(z, Some(&cond.encode()), mode)
    }

    pub fn generate(&self, z: &Matrix, cond: &RangeCondition, stats: InferenceStats) -> Result<Matrix> {
        Ok(self.forward(z, cond, stats.mode())?.output)
    }

    /// Draws `n` fresh noise vectors and generates designs for `cond`.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        n: usize,
        cond: &RangeCondition,
        stats: InferenceStats,
        rng: &mut R,
    ) -> Result<Matrix> {
        // Batch statistics are undefined for a single sample; pad and trim.
        let padded = if stats == InferenceStats::Batch { n.max(2) } else { n };
        let z = self.sample_noise(padded, rng);
        let out = self.generate(&z, cond, stats)?;
        Ok(if padded == n { out } else { out.select_rows(&(0..n).collect::<Vec<_>>()) })
    }
}

/// Unconditional real/fake classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    pub net: Network,
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(hidden: &[usize], rng: &mut R) -> Result<Self> {
        let mut specs: Vec<BlockSpec> = hidden
            .iter()
            .map(|&w| BlockSpec::hidden(w, NormKind::None))
            .collect();
        // Small output weights keep the initial logits near zero.
        specs.push(BlockSpec::output(1, Activation::Sigmoid, 0.1));
        Ok(Discriminator {
            net: Network::build(DESIGN_DIM, 0, &specs, rng)?,
        })
    }

    pub fn forward(&self, x: &Matrix) -> Result<Forward> {
        self.net.forward(x, None, Mode::Eval)
    }

    pub fn probabilities(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.output.into_data())
    }
}

/// Label regressor. Every hidden block after the first adds the previous
/// block's pre-normalization output to its own before normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimator {
    pub net: Network,
    pub labels: LabelSet,
}

impl Estimator {
    pub fn new<R: Rng + ?Sized>(hidden: &[usize], labels: LabelSet, rng: &mut R) -> Result<Self> {
        let mut specs: Vec<BlockSpec> = hidden
            .iter()
            .enumerate()
            .map(|(k, &w)| BlockSpec::hidden(w, NormKind::Batch).with_residual(k > 0 && hidden[k - 1] == w))
            .collect();
        specs.push(BlockSpec::output(labels.len(), Activation::Identity, 0.1));
        Ok(Estimator {
            net: Network::build(DESIGN_DIM, 0, &specs, rng)?,
            labels,
        })
    }

    pub fn forward(&self, x: &Matrix, mode: Mode) -> Result<Forward> {
        self.net.forward(x, None, mode)
    }

    /// Normalized label predictions (`N × L`) using running statistics.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.net.predict(x, None, Mode::Eval)
    }

    /// Copy with every skip connection removed.
    pub fn without_residuals(&self) -> Self {
        let mut e = self.clone();
        e.net.blocks.iter_mut().for_each(|b| b.residual = false);
        e
    }
}

/// Everything needed to rebuild and interpret a trained model set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub networks: Vec<String>,
    pub noise_dim: usize,
    pub cond_dim: usize,
    pub n_labels: usize,
    pub labels: LabelSet,
    pub normalizer: LabelNormalizer,
    pub seed: u64,
    /// Training configuration, stored as the flat config document.
    pub config: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedModels {
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub estimator: Estimator,
    pub manifest: ModelManifest,
    pub optimizers: Option<(AdamState, AdamState)>,
}

pub const GENERATOR: &str = "generator";
pub const DISCRIMINATOR: &str = "discriminator";
pub const ESTIMATOR: &str = "estimator";

impl TrainedModels {
    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ckpt = Checkpoint::default();
        let (g_opt, d_opt) = match &self.optimizers {
            Some((g, d)) => (Some(g.clone()), Some(d.clone())),
            None => (None, None),
        };
        ckpt.insert(GENERATOR, self.generator.net.clone(), g_opt);
        ckpt.insert(DISCRIMINATOR, self.discriminator.net.clone(), d_opt);
        ckpt.insert(ESTIMATOR, self.estimator.net.clone(), None);
        ckpt.manifest = Some(serde_json::to_value(&self.manifest).map_err(|e| Error::config(e.to_string()))?);
        Ok(ckpt)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let manifest: ModelManifest = serde_json::from_value(
            ckpt.manifest
                .clone()
                .ok_or_else(|| Error::config("checkpoint has no model manifest"))?,
        )
        .map_err(|e| Error::config(format!("bad model manifest: {e}")))?;
        let g = ckpt.get(GENERATOR)?;
        let d = ckpt.get(DISCRIMINATOR)?;
        let e = ckpt.get(ESTIMATOR)?;
        let l = manifest.labels.len();
        if manifest.n_labels != l || manifest.cond_dim != 2 * l {
            return Err(Error::config("manifest label counts are inconsistent"));
        }
        if g.network.input_dim() != manifest.noise_dim
            || g.network.cond_dim() != Some(manifest.cond_dim)
            || g.network.output_dim() != DESIGN_DIM
        {
            return Err(Error::config("generator shape does not match the manifest"));
        }
        if d.network.input_dim() != DESIGN_DIM || d.network.output_dim() != 1 {
            return Err(Error::config("discriminator shape does not match the design space"));
        }
        if e.network.input_dim() != DESIGN_DIM || e.network.output_dim() != l {
            return Err(Error::config("estimator shape does not match the manifest"));
        }
        let optimizers = match (&g.optimizer, &d.optimizer) {
            (Some(a), Some(b)) => Some((a.clone(), b.clone())),
            _ => None,
        };
        Ok(TrainedModels {
            generator: Generator {
                net: g.network.clone(),
                noise_dim: manifest.noise_dim,
                labels: manifest.labels,
            },
            discriminator: Discriminator {
                net: d.network.clone(),
            },
            estimator: Estimator {
                net: e.network.clone(),
                labels: manifest.labels,
            },
            manifest,
            optimizers,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(12)
    }

    #[test]
    fn generator_shape_and_range() {
        let mut r = rng();
        let g = Generator::new(16, &[64, 64, 64], LabelSet::Aspect, &mut r).unwrap();
        let cond = RangeCondition::single(0.2, 0.4).unwrap();
        for stats in [InferenceStats::Batch, InferenceStats::Running] {
            let x = g.sample(32, &cond, stats, &mut r).unwrap();
            assert_eq!((x.rows(), x.cols()), (32, 6));
            assert!(x.data().iter().all(|v| *v > 0.0 && *v < 1.0));
        }
    }

    #[test]
    fn generator_is_deterministic_in_eval_mode() {
        let mut r = rng();
        let g = Generator::new(16, &[32, 32], LabelSet::Both, &mut r).unwrap();
        let cond = RangeCondition::new(vec![(0.1, 0.3), (0.6, 0.8)]).unwrap();
        let z = g.sample_noise(8, &mut r);
        let a = g.generate(&z, &cond, InferenceStats::Running).unwrap();
        let b = g.generate(&z, &cond, InferenceStats::Running).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn generator_rejects_bad_conditions() {
        let mut r = rng();
        let g = Generator::new(16, &[32], LabelSet::Aspect, &mut r).unwrap();
        let z = g.sample_noise(4, &mut r);
        let two = RangeCondition::new(vec![(0.1, 0.3), (0.6, 0.8)]).unwrap();
        assert!(matches!(g.forward(&z, &two, Mode::Eval), Err(Error::Usage(_))));
        let inverted = RangeCondition {
            bounds: vec![(0.7, 0.2)],
        };
        assert!(matches!(g.forward(&z, &inverted, Mode::Eval), Err(Error::Usage(_))));
        let outside = RangeCondition {
            bounds: vec![(0.2, 1.3)],
        };
        assert!(matches!(g.forward(&z, &outside, Mode::Eval), Err(Error::Usage(_))));
    }

    #[test]
    fn discriminator_starts_near_half_and_is_per_sample() {
        let mut r = rng();
        let d = Discriminator::new(&[64, 64, 64], &mut r).unwrap();
        let x = Matrix::from_vec(20, 6, (0..120).map(|_| r.random()).collect()).unwrap();
        let p = d.probabilities(&x).unwrap();
        assert!(p.iter().all(|v| (v - 0.5).abs() < 0.1), "{p:?}");
        for i in 0..20 {
            let single = d.probabilities(&x.select_rows(&[i])).unwrap();
            assert_eq!(single[0], p[i]);
        }
        let same = x.select_rows(&[3, 3, 3]);
        let ps = d.probabilities(&same).unwrap();
        assert!(ps[0] == ps[1] && ps[1] == ps[2]);
    }

    #[test]
    fn estimator_wiring() {
        let mut r = rng();
        let mut e = Estimator::new(&[64, 64, 64, 64], LabelSet::Both, &mut r).unwrap();
        let residual: Vec<bool> = e.net.blocks.iter().map(|b| b.residual).collect();
        assert_eq!(residual, vec![false, true, true, true, false]);
        let x = Matrix::from_vec(10, 6, (0..60).map(|_| r.random()).collect()).unwrap();
        let with = e.predict(&x).unwrap();
        let without = e.without_residuals().predict(&x).unwrap();
        assert_ne!(with, without);

        let last = e.net.blocks.last_mut().unwrap();
        last.params.weight.data_mut().fill(0.0);
        last.params.bias.fill(0.0);
        assert!(e.predict(&x).unwrap().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn eval_mode_permutation_equivariance() {
        let mut r = rng();
        let e = Estimator::new(&[16, 16], LabelSet::Aspect, &mut r).unwrap();
        let g = Generator::new(8, &[16, 16], LabelSet::Aspect, &mut r).unwrap();
        let x = Matrix::from_vec(6, 6, (0..36).map(|_| r.random()).collect()).unwrap();
        let perm = [4, 2, 0, 5, 1, 3];
        let px = x.select_rows(&perm);
        assert_eq!(e.predict(&x).unwrap().select_rows(&perm), e.predict(&px).unwrap());
        let cond = RangeCondition::single(0.3, 0.5).unwrap();
        let z = g.sample_noise(6, &mut r);
        let out = g.generate(&z, &cond, InferenceStats::Running).unwrap();
        let pout = g.generate(&z.select_rows(&perm), &cond, InferenceStats::Running).unwrap();
        assert_eq!(out.select_rows(&perm), pout);
    }

    #[test]
    fn checkpoint_roundtrip() {
        let mut r = rng();
        let labels = LabelSet::Both;
        let generator = Generator::new(16, &[8, 8], labels, &mut r).unwrap();
        let models = TrainedModels {
            discriminator: Discriminator::new(&[8], &mut r).unwrap(),
            estimator: Estimator::new(&[8, 8], labels, &mut r).unwrap(),
            manifest: ModelManifest {
                networks: vec![GENERATOR.into(), DISCRIMINATOR.into(), ESTIMATOR.into()],
                noise_dim: 16,
                cond_dim: 4,
                n_labels: 2,
                labels,
                normalizer: LabelNormalizer::new(vec![0.4, 0.05], vec![2.1, 0.3]).unwrap(),
                seed: 5,
                config: "seed = 5\n".into(),
            },
            optimizers: None,
            generator,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        models.save(&p).unwrap();
        assert_eq!(TrainedModels::load(&p).unwrap(), models);

        let mut bad = models.clone();
        bad.manifest.noise_dim = 3;
        bad.save(&p).unwrap();
        assert!(matches!(TrainedModels::load(&p), Err(Error::Config(_))));
    }
}
