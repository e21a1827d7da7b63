//! Sequential stack of dense blocks with optional pre-normalization residual
//! connections.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::layer::{
    linear_backward, linear_forward, norm_backward, norm_forward, update_running_stats, Activation,
    LayerParams, Mode, NormCache, NormParams,
};
use super::matrix::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    None,
    Batch,
    Conditional,
}

/// A layer with its activation. When `residual` is set, the previous block's
/// pre-normalization output is added to this block's affine output before
/// normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub params: LayerParams,
    pub activation: Activation,
    pub residual: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub blocks: Vec<Block>,
}

/// Layout used by [`Network::build`].
#[derive(Debug, Clone)]
pub struct BlockSpec {
    pub out_dim: usize,
    pub norm: NormKind,
    pub activation: Activation,
    pub residual: bool,
    /// Standard deviation multiplier on the LeCun-normal weight init.
    pub init_scale: f64,
}

impl BlockSpec {
    pub fn hidden(out_dim: usize, norm: NormKind) -> Self {
        BlockSpec {
            out_dim,
            norm,
            activation: Activation::Selu,
            residual: false,
            init_scale: 1.0,
        }
    }

    pub fn output(out_dim: usize, activation: Activation, init_scale: f64) -> Self {
        BlockSpec {
            out_dim,
            norm: NormKind::None,
            activation,
            residual: false,
            init_scale,
        }
    }

    pub fn with_residual(mut self, residual: bool) -> Self {
        self.residual = residual;
        self
    }
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    pub output: Matrix,
    cond: Option<Vec<f64>>,
    blocks: Vec<BlockCache>,
}

#[derive(Debug, Clone)]
struct BlockCache {
    input: Matrix,
    norm: Option<NormCache>,
    pre_activation: Matrix,
    output: Matrix,
}

/// Gradients aligned with [`Network::param_slices`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients(pub Vec<Vec<f64>>);

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Gradients(net.param_slices().iter().map(|s| vec![0.0; s.len()]).collect())
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.0.concat()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }
}

impl Network {
    /// Builds a randomly initialized network. Weights are LeCun normal
    /// (σ = init_scale / √fan_in), biases zero.
    pub fn build<R: Rng + ?Sized>(
        input_dim: usize,
        cond_dim: usize,
        specs: &[BlockSpec],
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || specs.is_empty() {
            return Err(Error::config("network needs a positive input width and at least one block"));
        }
        let mut blocks = Vec::with_capacity(specs.len());
        let mut fan_in = input_dim;
        let mut prev_out: Option<usize> = None;
        for (k, spec) in specs.iter().enumerate() {
            if spec.out_dim == 0 {
                return Err(Error::config(format!("block {k} has zero width")));
            }
            if spec.residual && prev_out != Some(spec.out_dim) {
                return Err(Error::config(format!(
                    "residual block {k} needs a preceding block of the same width"
                )));
            }
            let normal = Normal::new(0.0, spec.init_scale / (fan_in as f64).sqrt())
                .map_err(|e| Error::config(e.to_string()))?;
            let weight = Matrix::from_vec(
                spec.out_dim,
                fan_in,
                (0..spec.out_dim * fan_in).map(|_| normal.sample(rng)).collect(),
            )?;
            let norm = match spec.norm {
                NormKind::None => None,
                NormKind::Batch => Some(NormParams::plain(spec.out_dim)),
                NormKind::Conditional => {
                    if cond_dim == 0 {
                        return Err(Error::config("conditional batch norm needs a positive condition width"));
                    }
                    Some(NormParams::conditional(spec.out_dim, cond_dim))
                }
            };
            blocks.push(Block {
                name: format!("layer{k}"),
                params: LayerParams::new(weight, vec![0.0; spec.out_dim], norm)?,
                activation: spec.activation,
                residual: spec.residual,
            });
            prev_out = Some(spec.out_dim);
            fan_in = spec.out_dim;
        }
        Ok(Network { blocks })
    }

    pub fn input_dim(&self) -> usize {
        self.blocks[0].params.in_dim()
    }

    pub fn output_dim(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.params.out_dim())
    }

    /// Width of the condition vector expected by conditional norm layers.
    pub fn cond_dim(&self) -> Option<usize> {
        self.blocks
            .iter()
            .find_map(|b| b.params.norm.as_ref().and_then(NormParams::cond_dim))
    }

    pub fn validate(&self) -> Result<()> {
        if self.blocks.is_empty() {
            return Err(Error::config("empty network"));
        }
        for (k, pair) in self.blocks.windows(2).enumerate() {
            if pair[0].params.out_dim() != pair[1].params.in_dim() {
                return Err(Error::config(format!("block {} input does not match block {k} output", k + 1)));
            }
        }
        for (k, b) in self.blocks.iter().enumerate() {
            b.params.check_shapes()?;
            if b.residual && (k == 0 || self.blocks[k - 1].params.out_dim() != b.params.out_dim()) {
                return Err(Error::config(format!("residual block {k} has no matching predecessor")));
            }
        }
        Ok(())
    }

    pub fn forward(&self, x: &Matrix, cond: Option<&[f64]>, mode: Mode) -> Result<Forward> {
        if !x.is_finite() {
            return Err(Error::usage("non-finite network input"));
        }
        let mut caches: Vec<BlockCache> = Vec::with_capacity(self.blocks.len());
        let mut current = x.clone();
        let mut prev_pre_norm: Option<Matrix> = None;
        for block in &self.blocks {
            let mut z = linear_forward(&current, &block.params)?;
            if block.residual {
                let prev = prev_pre_norm
                    .as_ref()
                    .ok_or_else(|| Error::config("residual block without predecessor"))?;
                z.add_assign(prev);
            }
            let (normed, norm_cache) = match &block.params.norm {
                Some(norm) => {
                    let (y, c) = norm_forward(&z, cond, norm, mode)?;
                    (y, Some(c))
                }
                None => (z.clone(), None),
            };
            let mut out = normed.clone();
            out.data_mut()
                .iter_mut()
                .for_each(|v| *v = block.activation.apply(*v));
            let input = std::mem::replace(&mut current, out.clone());
            caches.push(BlockCache {
                input,
                norm: norm_cache,
                pre_activation: normed,
                output: out,
            });
            prev_pre_norm = Some(z);
        }
        Ok(Forward {
            output: current,
            cond: cond.map(<[f64]>::to_vec),
            blocks: caches,
        })
    }

    /// Forward pass that returns only the output.
    pub fn predict(&self, x: &Matrix, cond: Option<&[f64]>, mode: Mode) -> Result<Matrix> {
        Ok(self.forward(x, cond, mode)?.output)
    }

    /// Moves running statistics toward the batch statistics recorded in `fwd`.
    pub fn commit_running_stats(&mut self, fwd: &Forward) {
        for (block, cache) in self.blocks.iter_mut().zip(&fwd.blocks) {
            if let (Some(norm), Some(c)) = (block.params.norm.as_mut(), cache.norm.as_ref()) {
                update_running_stats(norm, c);
            }
        }
    }

    /// Backpropagates `d_out` (gradient of the loss w.r.t. the network output)
    /// and returns parameter gradients plus the gradient w.r.t. the input.
    pub fn backward(&self, fwd: &Forward, d_out: &Matrix) -> (Gradients, Matrix) {
        let cond = fwd.cond.as_deref();
        let mut grads: Vec<Vec<Vec<f64>>> = Vec::with_capacity(self.blocks.len());
        let mut d_act = d_out.clone();
        // Gradient reaching a block's pre-norm output through the next block's skip.
        let mut skip: Option<Matrix> = None;
        for (block, cache) in self.blocks.iter().zip(&fwd.blocks).rev() {
            let mut d_pre = d_act;
            for ((g, x), y) in d_pre
                .data_mut()
                .iter_mut()
                .zip(cache.pre_activation.data())
                .zip(cache.output.data())
            {
                *g *= block.activation.derivative(*x, *y);
            }
            let mut block_grads = Vec::with_capacity(6);
            let mut d_z = match (&block.params.norm, &cache.norm) {
                (Some(norm), Some(nc)) => {
                    let ng = norm_backward(&d_pre, cond, norm, nc);
                    block_grads.push(ng.gamma);
                    block_grads.push(ng.beta);
                    if let (Some(g), Some(b)) = (ng.cond_gamma, ng.cond_beta) {
                        block_grads.push(g.into_data());
                        block_grads.push(b.into_data());
                    }
                    ng.input
                }
                _ => d_pre,
            };
            if let Some(s) = skip.take() {
                d_z.add_assign(&s);
            }
            if block.residual {
                skip = Some(d_z.clone());
            }
            let lg = linear_backward(&cache.input, &block.params, &d_z);
            let mut ordered = vec![lg.weight.into_data(), lg.bias];
            ordered.extend(block_grads);
            grads.push(ordered);
            d_act = lg.input;
        }
        grads.reverse();
        (Gradients(grads.into_iter().flatten().collect()), d_act)
    }

    /// Trainable parameters in a fixed order: per block weight, bias, then
    /// (if normalized) gamma, beta and the two condition maps.
    pub fn param_slices(&self) -> Vec<&[f64]> {
        let mut out = Vec::new();
        for b in &self.blocks {
            out.push(b.params.weight.data());
            out.push(&b.params.bias[..]);
            if let Some(n) = &b.params.norm {
                out.push(&n.gamma[..]);
                out.push(&n.beta[..]);
                if let (Some(g), Some(bb)) = (&n.cond_gamma, &n.cond_beta) {
                    out.push(g.data());
                    out.push(bb.data());
                }
            }
        }
        out
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = Vec::new();
        for b in &mut self.blocks {
            out.push(b.params.weight.data_mut());
            out.push(&mut b.params.bias[..]);
            if let Some(n) = &mut b.params.norm {
                out.push(&mut n.gamma[..]);
                out.push(&mut n.beta[..]);
                if let (Some(g), Some(bb)) = (&mut n.cond_gamma, &mut n.cond_beta) {
                    out.push(g.data_mut());
                    out.push(bb.data_mut());
                }
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.param_slices().iter().map(|s| s.len()).sum()
    }

    pub fn flat_params(&self) -> Vec<f64> {
        self.param_slices().concat()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let mut offset = 0;
        for s in self.param_slices_mut() {
            let n = s.len();
            s.copy_from_slice(&flat[offset..offset + n]);
            offset += n;
        }
        assert_eq!(offset, flat.len(), "flat parameter length mismatch");
    }
}
