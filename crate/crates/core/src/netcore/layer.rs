//! Dense layer primitives: affine maps, activations and (conditional) batch
//! normalization, each with a hand-written backward pass.

use serde::{Deserialize, Serialize};

use super::matrix::{axpy, gemm, Matrix};
use crate::error::{Error, Result};

pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;
pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_3;

/// Added to the batch variance before taking the square root.
pub const BN_EPSILON: f64 = 1e-5;
/// Weight of the old value in the running-statistic moving average.
pub const BN_MOMENTUM: f64 = 0.9;

/// Whether normalization uses batch statistics or stored running statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Selu,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Selu => selu(x),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the pre-activation `x` and output `y`.
    #[inline]
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Selu => {
                if x > 0.0 {
                    SELU_LAMBDA
                } else {
                    // y = λα(eˣ − 1)  ⇒  dy/dx = y + λα
                    y + SELU_LAMBDA * SELU_ALPHA
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

#[inline]
pub fn selu(x: f64) -> f64 {
    if x > 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp_m1()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log σ(x)` without overflow for large |x|.
#[inline]
pub fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

/// Batch-norm parameters. With `cond_gamma`/`cond_beta` present the scale and
/// shift become affine functions of a condition vector:
/// `γ(c) = gamma + cond_gamma · c`, `β(c) = beta + cond_beta · c`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormParams {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub cond_gamma: Option<Matrix>,
    pub cond_beta: Option<Matrix>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl NormParams {
    pub fn plain(features: usize) -> Self {
        NormParams {
            gamma: vec![1.0; features],
            beta: vec![0.0; features],
            cond_gamma: None,
            cond_beta: None,
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
        }
    }

    /// Conditional variant; the condition maps start at zero so the layer
    /// initially behaves as plain batch norm with γ = 1, β = 0.
    pub fn conditional(features: usize, cond_dim: usize) -> Self {
        NormParams {
            cond_gamma: Some(Matrix::zeros(features, cond_dim)),
            cond_beta: Some(Matrix::zeros(features, cond_dim)),
            ..NormParams::plain(features)
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    pub fn cond_dim(&self) -> Option<usize> {
        self.cond_gamma.as_ref().map(Matrix::cols)
    }

    /// Effective per-feature scale and shift for a given condition.
    pub fn scale_shift(&self, cond: Option<&[f64]>) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut gamma = self.gamma.clone();
        let mut beta = self.beta.clone();
        match (&self.cond_gamma, &self.cond_beta) {
            (Some(wg), Some(wb)) => {
                let c = cond.ok_or_else(|| Error::usage("conditional batch norm needs a condition"))?;
                if c.len() != wg.cols() {
                    return Err(Error::config(format!(
                        "condition length {} does not match conditional batch norm width {}",
                        c.len(),
                        wg.cols()
                    )));
                }
                for (g, d) in gamma.iter_mut().zip(wg.mul_vec(c)) {
                    *g += d;
                }
                for (b, d) in beta.iter_mut().zip(wb.mul_vec(c)) {
                    *b += d;
                }
            }
            (None, None) => {}
            _ => return Err(Error::config("conditional scale and shift maps must both be present")),
        }
        Ok((gamma, beta))
    }

    fn check_shapes(&self) -> Result<()> {
        let d = self.features();
        let ok = self.beta.len() == d
            && self.running_mean.len() == d
            && self.running_var.len() == d
            && self.cond_gamma.as_ref().is_none_or(|m| m.rows() == d)
            && self.cond_beta.as_ref().is_none_or(|m| m.rows() == d)
            && self.cond_gamma.as_ref().map(Matrix::cols) == self.cond_beta.as_ref().map(Matrix::cols);
        if !ok {
            return Err(Error::config("inconsistent batch norm parameter shapes"));
        }
        if self.running_var.iter().any(|v| *v < 0.0) {
            return Err(Error::config("negative running variance"));
        }
        Ok(())
    }
}

/// One dense layer: `weight` is `out × in`, optional normalization after the
/// affine map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub norm: Option<NormParams>,
}

impl LayerParams {
    pub fn new(weight: Matrix, bias: Vec<f64>, norm: Option<NormParams>) -> Result<Self> {
        let layer = LayerParams { weight, bias, norm };
        layer.check_shapes()?;
        Ok(layer)
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }

    pub fn check_shapes(&self) -> Result<()> {
        if self.bias.len() != self.out_dim() {
            return Err(Error::config(format!(
                "bias length {} does not match layer output {}",
                self.bias.len(),
                self.out_dim()
            )));
        }
        if let Some(norm) = &self.norm {
            if norm.features() != self.out_dim() {
                return Err(Error::config("batch norm width does not match layer output"));
            }
            norm.check_shapes()?;
        }
        if !self.weight.is_finite() || self.bias.iter().any(|b| !b.is_finite()) {
            return Err(Error::config("non-finite layer parameters"));
        }
        Ok(())
    }
}

/// `x · Wᵀ + b` for a batch `x` of shape `N × in`.
pub fn linear_forward(x: &Matrix, layer: &LayerParams) -> Result<Matrix> {
    if x.cols() != layer.in_dim() {
        return Err(Error::config(format!(
            "input has {} columns, layer expects {}",
            x.cols(),
            layer.in_dim()
        )));
    }
    let mut y = Matrix::zeros(x.rows(), layer.out_dim());
    for i in 0..x.rows() {
        y.row_mut(i).copy_from_slice(&layer.bias);
    }
    gemm(1.0, x, false, &layer.weight, true, 1.0, &mut y);
    Ok(y)
}

pub struct LinearGrads {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub input: Matrix,
}

pub fn linear_backward(x: &Matrix, layer: &LayerParams, d_out: &Matrix) -> LinearGrads {
    let mut d_w = Matrix::zeros(layer.out_dim(), layer.in_dim());
    let mut d_b = vec![0.0; layer.out_dim()];
    let mut d_x = Matrix::zeros(x.rows(), x.cols());
    for gi in d_out.iter_rows() {
        axpy(1.0, gi, &mut d_b);
    }
    gemm(1.0, d_out, true, x, false, 0.0, &mut d_w);
    gemm(1.0, d_out, false, &layer.weight, false, 0.0, &mut d_x);
    LinearGrads {
        weight: d_w,
        bias: d_b,
        input: d_x,
    }
}

/// Intermediate values of a normalization forward pass.
#[derive(Debug, Clone)]
pub struct NormCache {
    pub mode: Mode,
    pub xhat: Matrix,
    pub inv_std: Vec<f64>,
    pub gamma: Vec<f64>,
    pub batch_mean: Vec<f64>,
    pub batch_var: Vec<f64>,
}

/// Normalizes `h` per feature, then applies the (possibly condition-dependent)
/// scale and shift. Running statistics are not touched; see
/// [`update_running_stats`].
pub fn norm_forward(
    h: &Matrix,
    cond: Option<&[f64]>,
    norm: &NormParams,
    mode: Mode,
) -> Result<(Matrix, NormCache)> {
    let (n, d) = (h.rows(), h.cols());
    if d != norm.features() {
        return Err(Error::config("batch norm width does not match input"));
    }
    let (gamma, beta) = norm.scale_shift(cond)?;
    let (mean, var) = match mode {
        Mode::Train => {
            if n < 2 {
                return Err(Error::usage(format!(
                    "batch statistics need at least 2 samples, got {n}"
                )));
            }
            batch_moments(h)
        }
        Mode::Eval => (norm.running_mean.clone(), norm.running_var.clone()),
    };
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
    let mut xhat = Matrix::zeros(n, d);
    let mut out = Matrix::zeros(n, d);
    for i in 0..n {
        let hi = h.row(i);
        let xi = xhat.row_mut(i);
        for j in 0..d {
            xi[j] = (hi[j] - mean[j]) * inv_std[j];
        }
        let oi = out.row_mut(i);
        for j in 0..d {
            oi[j] = gamma[j] * xhat[(i, j)] + beta[j];
        }
    }
    Ok((
        out,
        NormCache {
            mode,
            xhat,
            inv_std,
            gamma,
            batch_mean: mean,
            batch_var: var,
        },
    ))
}

fn batch_moments(h: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let n = h.rows() as f64;
    let d = h.cols();
    let mut mean = vec![0.0; d];
    for r in h.iter_rows() {
        axpy(1.0, r, &mut mean);
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; d];
    for r in h.iter_rows() {
        for j in 0..d {
            let c = r[j] - mean[j];
            var[j] += c * c;
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}

/// Folds the batch statistics of a training pass into the running averages.
pub fn update_running_stats(norm: &mut NormParams, cache: &NormCache) {
    if cache.mode != Mode::Train {
        return;
    }
    for j in 0..norm.features() {
        norm.running_mean[j] = BN_MOMENTUM * norm.running_mean[j] + (1.0 - BN_MOMENTUM) * cache.batch_mean[j];
        norm.running_var[j] = BN_MOMENTUM * norm.running_var[j] + (1.0 - BN_MOMENTUM) * cache.batch_var[j];
    }
}

pub struct NormGrads {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub cond_gamma: Option<Matrix>,
    pub cond_beta: Option<Matrix>,
    pub input: Matrix,
}

pub fn norm_backward(
    d_out: &Matrix,
    cond: Option<&[f64]>,
    norm: &NormParams,
    cache: &NormCache,
) -> NormGrads {
    let (n, d) = (d_out.rows(), d_out.cols());
    let mut d_gamma = vec![0.0; d];
    let mut d_beta = vec![0.0; d];
    for i in 0..n {
        let gi = d_out.row(i);
        let xi = cache.xhat.row(i);
        for j in 0..d {
            d_gamma[j] += gi[j] * xi[j];
            d_beta[j] += gi[j];
        }
    }
    let outer = |m: &Option<Matrix>, g: &[f64]| {
        m.as_ref().map(|m| {
            let c = cond.expect("conditional batch norm ran without a condition");
            let mut out = Matrix::zeros(m.rows(), m.cols());
            for (j, gj) in g.iter().enumerate() {
                axpy(*gj, c, out.row_mut(j));
            }
            out
        })
    };
    let d_cond_gamma = outer(&norm.cond_gamma, &d_gamma);
    let d_cond_beta = outer(&norm.cond_beta, &d_beta);

    let mut d_in = Matrix::zeros(n, d);
    match cache.mode {
        Mode::Eval => {
            for i in 0..n {
                let gi = d_out.row(i);
                let di = d_in.row_mut(i);
                for j in 0..d {
                    di[j] = gi[j] * cache.gamma[j] * cache.inv_std[j];
                }
            }
        }
        Mode::Train => {
            // dx = (1/N)·inv_std·(N·dx̂ − Σdx̂ − x̂·Σ(dx̂·x̂)) with dx̂ = dy·γ
            let nf = n as f64;
            let mut sum_dxhat = vec![0.0; d];
            let mut sum_dxhat_xhat = vec![0.0; d];
            for j in 0..d {
                sum_dxhat[j] = d_beta[j] * cache.gamma[j];
                sum_dxhat_xhat[j] = d_gamma[j] * cache.gamma[j];
            }
            for i in 0..n {
                let gi = d_out.row(i);
                let xi = cache.xhat.row(i);
                let di = d_in.row_mut(i);
                for j in 0..d {
                    let dxhat = gi[j] * cache.gamma[j];
                    di[j] = cache.inv_std[j] / nf
                        * (nf * dxhat - sum_dxhat[j] - xi[j] * sum_dxhat_xhat[j]);
                }
            }
        }
    }
    NormGrads {
        gamma: d_gamma,
        beta: d_beta,
        cond_gamma: d_cond_gamma,
        cond_beta: d_cond_beta,
        input: d_in,
    }
}

/// Conditional batch normalization of `h` with the layer's norm parameters.
/// In training mode the running statistics are updated afterwards.
pub fn cond_batchnorm_forward(
    h: &Matrix,
    cond: &[f64],
    layer: &mut LayerParams,
    mode: Mode,
) -> Result<Matrix> {
    let norm = layer
        .norm
        .as_mut()
        .ok_or_else(|| Error::config("layer has no batch norm parameters"))?;
    let (out, cache) = norm_forward(h, Some(cond), norm, mode)?;
    update_running_stats(norm, &cache);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_vec(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
    }

    #[test]
    fn linear_identity_and_bias() {
        let layer = LayerParams::new(Matrix::identity(2), vec![0.0, 0.0], None).unwrap();
        let x = Matrix::from_rows(&[[1.0, 0.0], [0.0, 1.0]]).unwrap();
        assert_eq!(linear_forward(&x, &layer).unwrap(), x);

        let layer = LayerParams::new(
            Matrix::from_rows(&[[0.3, -2.0], [5.0, 1.5]]).unwrap(),
            vec![3.0, -1.0],
            None,
        )
        .unwrap();
        let z = Matrix::zeros(1, 2);
        assert_eq!(linear_forward(&z, &layer).unwrap().data(), &[3.0, -1.0]);
    }

    #[test]
    fn linear_matches_triple_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_matrix(&mut rng, 7, 5);
        let w = random_matrix(&mut rng, 4, 5);
        let b: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let layer = LayerParams::new(w.clone(), b.clone(), None).unwrap();
        let y = linear_forward(&x, &layer).unwrap();
        for i in 0..7 {
            for o in 0..4 {
                let mut acc = b[o];
                for k in 0..5 {
                    acc += w[(o, k)] * x[(i, k)];
                }
                assert!((y[(i, o)] - acc).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_shape_mismatch() {
        let layer = LayerParams::new(Matrix::zeros(2, 3), vec![0.0; 2], None).unwrap();
        assert!(matches!(
            linear_forward(&Matrix::zeros(1, 2), &layer),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn selu_values() {
        assert_eq!(selu(0.0), 0.0);
        assert!((selu(1.0) - 1.05070098).abs() < 1e-8);
        let expected = 1.05070098 * 1.67326324 * ((-1.0f64).exp() - 1.0);
        assert!((selu(-1.0) - expected).abs() < 1e-7);
        assert!((selu(-1.0) + 1.11133).abs() < 1e-5);
    }

    #[test]
    fn selu_continuous_and_monotone() {
        assert!((selu(1e-12) - selu(-1e-12)).abs() < 1e-11);
        let mut prev = selu(-20.0);
        for k in 1..=4000 {
            let x = -20.0 + k as f64 * 0.01;
            let y = selu(x);
            assert!(y >= prev);
            prev = y;
        }
    }

    #[test]
    fn zero_condition_maps_give_plain_batch_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h = random_matrix(&mut rng, 16, 3);
        let cond = [0.2, 0.7];
        let mut layer = LayerParams::new(
            Matrix::zeros(3, 3),
            vec![0.0; 3],
            Some(NormParams::conditional(3, 2)),
        )
        .unwrap();
        let out = cond_batchnorm_forward(&h, &cond, &mut layer, Mode::Train).unwrap();
        let plain = NormParams::plain(3);
        let (expected, _) = norm_forward(&h, None, &plain, Mode::Train).unwrap();
        for (a, b) in out.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn constant_column_normalizes_to_zero() {
        let h = Matrix::from_rows(&[[2.0, 1.0], [2.0, -1.0], [2.0, 0.5]]).unwrap();
        let (out, _) = norm_forward(&h, None, &NormParams::plain(2), Mode::Train).unwrap();
        for i in 0..3 {
            assert_eq!(out[(i, 0)], 0.0);
        }
    }

    #[test]
    fn output_statistics_follow_condition() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = random_matrix(&mut rng, 64, 4);
        let mut norm = NormParams::conditional(4, 2);
        norm.cond_gamma = Some(random_matrix(&mut rng, 4, 2));
        norm.cond_beta = Some(random_matrix(&mut rng, 4, 2));
        let cond = [0.3, 0.6];
        let (gamma, beta) = norm.scale_shift(Some(&cond)).unwrap();
        let (out, _) = norm_forward(&h, Some(&cond), &norm, Mode::Train).unwrap();
        for j in 0..4 {
            let col = out.column(j);
            let mean = col.iter().sum::<f64>() / 64.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
            // The epsilon in the denominator shrinks the std by a factor sqrt(var/(var+eps)).
            let (_, hv) = {
                let c = h.column(j);
                let m = c.iter().sum::<f64>() / 64.0;
                (m, c.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 64.0)
            };
            let shrink = (hv / (hv + BN_EPSILON)).sqrt();
            assert!((mean - beta[j]).abs() < 1e-6);
            assert!((var.sqrt() - gamma[j].abs() * shrink).abs() < 1e-6);
            assert!((var.sqrt() - gamma[j].abs()).abs() < 1e-4);
        }
    }

    #[test]
    fn train_mode_needs_two_samples() {
        let h = Matrix::zeros(1, 3);
        assert!(matches!(
            norm_forward(&h, None, &NormParams::plain(3), Mode::Train),
            Err(Error::Usage(_))
        ));
        assert!(norm_forward(&h, None, &NormParams::plain(3), Mode::Eval).is_ok());
    }

    #[test]
    fn running_stats_move_towards_batch() {
        let h = Matrix::from_rows(&[[1.0], [3.0]]).unwrap();
        let mut layer = LayerParams::new(Matrix::zeros(1, 1), vec![0.0], Some(NormParams::plain(1))).unwrap();
        let mut norm = layer.norm.take().unwrap();
        let (_, cache) = norm_forward(&h, None, &norm, Mode::Train).unwrap();
        update_running_stats(&mut norm, &cache);
        assert!((norm.running_mean[0] - 0.2).abs() < 1e-15);
        assert!((norm.running_var[0] - (0.9 + 0.1)).abs() < 1e-15);
    }

    #[test]
    fn eval_mode_has_no_batch_coupling() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let h = random_matrix(&mut rng, 8, 3);
        let mut norm = NormParams::conditional(3, 2);
        norm.cond_gamma = Some(random_matrix(&mut rng, 3, 2));
        norm.running_mean = vec![0.1, -0.2, 0.3];
        norm.running_var = vec![0.5, 2.0, 1.5];
        let cond = [0.1, 0.9];
        let (batch, _) = norm_forward(&h, Some(&cond), &norm, Mode::Eval).unwrap();
        for i in 0..8 {
            let single = h.select_rows(&[i]);
            let (one, _) = norm_forward(&single, Some(&cond), &norm, Mode::Eval).unwrap();
            assert_eq!(one.row(0), batch.row(i));
        }
    }
}
