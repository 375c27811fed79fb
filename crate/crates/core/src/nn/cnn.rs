//! Convolutional frame encoder: conv3×3 → BN → ReLU blocks, frequency
//! pooling after the first blocks, and a mean over frequency at the end.
//! The time axis is never pooled.

use rand::Rng;

use super::layers::{BatchNormCache, Conv2dCache, PoolCache};
use super::{shape_err, BatchNorm2d, Conv2d, FreqMaxPool, Gradients, Layer, Mode, ModelParams, NnError, Relu, Tensor};

#[derive(Debug, Clone)]
pub struct CnnBlock {
    pub conv: Conv2d,
    pub bn: BatchNorm2d,
    pub pool: bool,
}

#[derive(Debug, Clone)]
pub struct CnnBlockCache {
    conv: Conv2dCache,
    bn: BatchNormCache,
    relu: Tensor,
    pool: Option<PoolCache>,
}

impl CnnBlock {
    pub fn new(prefix: &str, in_channels: usize, out_channels: usize, pool: bool) -> Self {
        Self {
            conv: Conv2d::new(format!("{prefix}.conv"), in_channels, out_channels, 3).without_bias(),
            bn: BatchNorm2d::new(format!("{prefix}.bn"), out_channels),
            pool,
        }
    }

    pub fn init<R: Rng>(&self, params: &mut ModelParams, rng: &mut R) -> Result<(), NnError> {
        self.conv.init(params, rng)?;
        self.bn.init(params)
    }

    pub fn forward(
        &self,
        params: &ModelParams,
        x: &Tensor,
        mode: Mode,
    ) -> Result<(Tensor, CnnBlockCache), NnError> {
        let (y, conv) = self.conv.forward(params, x, mode)?;
        let (y, bn) = self.bn.forward(params, &y, mode)?;
        let (y, relu) = Relu.forward(params, &y, mode)?;
        let (y, pool) = if self.pool {
            let (p, c) = FreqMaxPool.forward(params, &y, mode)?;
            (p, Some(c))
        } else {
            (y, None)
        };
        Ok((y, CnnBlockCache { conv, bn, relu, pool }))
    }

    pub fn backward(
        &self,
        params: &ModelParams,
        cache: &CnnBlockCache,
        grad: &Tensor,
        grads: &mut Gradients,
    ) -> Result<Tensor, NnError> {
        let g = match &cache.pool {
            Some(pc) => FreqMaxPool.backward(params, pc, grad, grads)?,
            None => grad.clone(),
        };
        let g = Relu.backward(params, &cache.relu, &g, grads)?;
        let g = self.bn.backward(params, &cache.bn, &g, grads)?;
        self.conv.backward(params, &cache.conv, &g, grads)
    }
}

/// Stack of [`CnnBlock`]s mapping `[B, 1, T, F]` to frame embeddings `[B, T, C]`.
#[derive(Debug, Clone)]
pub struct CnnEncoder {
    pub blocks: Vec<CnnBlock>,
}

#[derive(Debug, Clone)]
pub struct CnnCache {
    blocks: Vec<CnnBlockCache>,
    /// Shape of the last block output `[B, C, T, F']`.
    out_shape: Vec<usize>,
}

impl CnnEncoder {
    /// `n_blocks` blocks of width `channels`; the first `pooled_blocks` halve
    /// the frequency axis.
    pub fn new(prefix: &str, channels: usize, n_blocks: usize, pooled_blocks: usize) -> Self {
        let blocks = (0..n_blocks)
            .map(|i| {
                let cin = if i == 0 { 1 } else { channels };
                CnnBlock::new(&format!("{prefix}.{i}"), cin, channels, i < pooled_blocks)
            })
            .collect();
        Self { blocks }
    }

    pub fn channels(&self) -> usize {
        self.blocks.last().map_or(0, |b| b.conv.out_channels)
    }

    pub fn init<R: Rng>(&self, params: &mut ModelParams, rng: &mut R) -> Result<(), NnError> {
        self.blocks.iter().try_for_each(|b| b.init(params, rng))
    }

    /// Runs the first `depth` blocks and averages over frequency.
    pub fn forward_depth(
        &self,
        params: &ModelParams,
        x: &Tensor,
        mode: Mode,
        depth: usize,
    ) -> Result<(Tensor, CnnCache), NnError> {
        if x.rank() != 4 || x.dim(1) != 1 {
            return Err(shape_err("cnn", "[batch, 1, time, freq]", x.shape()));
        }
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(depth);
        for block in &self.blocks[..depth.min(self.blocks.len())] {
            let (y, c) = block.forward(params, &h, mode)?;
            caches.push(c);
            h = y;
        }
        let (b, c, t, f) = (h.dim(0), h.dim(1), h.dim(2), h.dim(3));
        let hd = h.data();
        let mut emb = vec![0.0; b * t * c];
        for bi in 0..b {
            for ci in 0..c {
                for ti in 0..t {
                    let row = &hd[((bi * c + ci) * t + ti) * f..((bi * c + ci) * t + ti + 1) * f];
                    emb[(bi * t + ti) * c + ci] = row.iter().sum::<f64>() / f as f64;
                }
            }
        }
        Ok((
            Tensor::new(vec![b, t, c], emb)?,
            CnnCache {
                blocks: caches,
                out_shape: h.shape().to_vec(),
            },
        ))
    }

    pub fn forward(&self, params: &ModelParams, x: &Tensor, mode: Mode) -> Result<(Tensor, CnnCache), NnError> {
        self.forward_depth(params, x, mode, self.blocks.len())
    }

    pub fn backward(
        &self,
        params: &ModelParams,
        cache: &CnnCache,
        grad_emb: &Tensor,
        grads: &mut Gradients,
    ) -> Result<Tensor, NnError> {
        let (b, c, t, f) = match *cache.out_shape.as_slice() {
            [b, c, t, f] => (b, c, t, f),
            _ => unreachable!(),
        };
        if grad_emb.shape() != [b, t, c] {
            return Err(shape_err("cnn", format!("grad [{b}, {t}, {c}]"), grad_emb.shape()));
        }
        let ge = grad_emb.data();
        let mut g = vec![0.0; b * c * t * f];
        for bi in 0..b {
            for ci in 0..c {
                for ti in 0..t {
                    let v = ge[(bi * t + ti) * c + ci] / f as f64;
                    g[((bi * c + ci) * t + ti) * f..((bi * c + ci) * t + ti + 1) * f].fill(v);
                }
            }
        }
        let mut g = Tensor::new(cache.out_shape.clone(), g)?;
        for (block, bc) in self.blocks.iter().zip(&cache.blocks).rev() {
            g = block.backward(params, bc, &g, grads)?;
        }
        Ok(g)
    }

    /// New BN running statistics implied by a training-mode pass.
    pub fn running_updates(&self, params: &ModelParams, cache: &CnnCache) -> Result<Vec<(String, Tensor)>, NnError> {
        let mut out = Vec::new();
        for (block, bc) in self.blocks.iter().zip(&cache.blocks) {
            out.extend(block.bn.running_update(params, &bc.bn)?);
        }
        Ok(out)
    }

    /// Names of BN running-statistic buffers (not trained by gradient).
    pub fn buffer_names(&self) -> Vec<String> {
        self.blocks
            .iter()
            .flat_map(|b| [b.bn.key("running_mean"), b.bn.key("running_var")])
            .collect()
    }
}
