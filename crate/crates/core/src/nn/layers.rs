//! Layers with forward and analytic backward passes.
//!
//! Image-like tensors are `[batch, channels, time, freq]`.

use rand::Rng;

use super::{kaiming_uniform, shape_err, Gradients, ModelParams, NnError, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub trait Layer {
    type Cache;

    fn forward(
        &self,
        params: &ModelParams,
        input: &Tensor,
        mode: Mode,
    ) -> Result<(Tensor, Self::Cache), NnError>;

    /// Returns the gradient w.r.t. the input and accumulates parameter
    /// gradients into `grads`.
    fn backward(
        &self,
        params: &ModelParams,
        cache: &Self::Cache,
        grad_out: &Tensor,
        grads: &mut Gradients,
    ) -> Result<Tensor, NnError>;
}

fn dims4(layer: &str, t: &Tensor) -> Result<(usize, usize, usize, usize), NnError> {
    match *t.shape() {
        [b, c, h, w] => Ok((b, c, h, w)),
        _ => Err(shape_err(layer, "[batch, channels, time, freq]", t.shape())),
    }
}

/// 2-D cross-correlation with an odd square kernel, stride 1 and "same" zero padding.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub name: String,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub bias: bool,
}

#[derive(Debug, Clone)]
pub struct Conv2dCache {
    input: Tensor,
}

impl Conv2d {
    pub fn new(name: impl Into<String>, in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        assert!(kernel % 2 == 1, "kernel size must be odd");
        Self {
            name: name.into(),
            in_channels,
            out_channels,
            kernel,
            bias: true,
        }
    }

    /// Drops the bias, e.g. when a batch norm follows and would cancel it.
    pub fn without_bias(mut self) -> Self {
        self.bias = false;
        self
    }

    pub fn weight_key(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_key(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init<R: Rng>(&self, params: &mut ModelParams, rng: &mut R) -> Result<(), NnError> {
        let k = self.kernel;
        let fan_in = self.in_channels * k * k;
        params.register(
            self.weight_key(),
            kaiming_uniform(&[self.out_channels, self.in_channels, k, k], fan_in, rng),
        )?;
        if self.bias {
            params.register(self.bias_key(), Tensor::zeros(&[self.out_channels]))?;
        }
        Ok(())
    }

    /// Valid output index range along an axis of length `len` for offset `d`.
    fn valid(len: usize, d: isize) -> (usize, usize) {
        let lo = (-d).max(0) as usize;
        let hi = (len as isize - d.max(0)).max(0) as usize;
        (lo.min(hi), hi)
    }
}

impl Layer for Conv2d {
    type Cache = Conv2dCache;

    fn forward(
        &self,
        params: &ModelParams,
        input: &Tensor,
        _mode: Mode,
    ) -> Result<(Tensor, Conv2dCache), NnError> {
        let (b, cin, h, w) = dims4(&self.name, input)?;
        if cin != self.in_channels {
            return Err(shape_err(
                &self.name,
                format!("{} input channels", self.in_channels),
                input.shape(),
            ));
        }
        let weight = params.get(&self.weight_key())?.data();
        let bias = if self.bias { Some(params.get(&self.bias_key())?.data()) } else { None };
        let (cout, k) = (self.out_channels, self.kernel);
        let pad = (k / 2) as isize;
        let plane = h * w;
        let x = input.data();
        let mut out = vec![0.0; b * cout * plane];
        for bi in 0..b {
            for co in 0..cout {
                let o = &mut out[(bi * cout + co) * plane..(bi * cout + co + 1) * plane];
                o.fill(bias.map_or(0.0, |b| b[co]));
                for ci in 0..cin {
                    let xp = &x[(bi * cin + ci) * plane..(bi * cin + ci + 1) * plane];
                    for kh in 0..k {
                        let dh = kh as isize - pad;
                        let (h_lo, h_hi) = Self::valid(h, dh);
                        for kw in 0..k {
                            let dw = kw as isize - pad;
                            let (w_lo, w_hi) = Self::valid(w, dw);
                            let wv = weight[((co * cin + ci) * k + kh) * k + kw];
                            if wv == 0.0 {
                                continue;
                            }
                            for r in h_lo..h_hi {
                                let src_r = (r as isize + dh) as usize;
                                let dst = &mut o[r * w + w_lo..r * w + w_hi];
                                let s0 = (w_lo as isize + dw) as usize;
                                let src = &xp[src_r * w + s0..src_r * w + s0 + (w_hi - w_lo)];
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d += wv * s;
                                }
                            }
                        }
                    }
                }
            }
        }
        Ok((
            Tensor::new(vec![b, cout, h, w], out)?,
            Conv2dCache {
                input: input.clone(),
            },
        ))
    }

    fn backward(
        &self,
        params: &ModelParams,
        cache: &Conv2dCache,
        grad_out: &Tensor,
        grads: &mut Gradients,
    ) -> Result<Tensor, NnError> {
        let (b, cin, h, w) = dims4(&self.name, &cache.input)?;
        let (cout, k) = (self.out_channels, self.kernel);
        if grad_out.shape() != [b, cout, h, w] {
            return Err(shape_err(
                &self.name,
                format!("grad {:?}", [b, cout, h, w]),
                grad_out.shape(),
            ));
        }
        let weight = params.get(&self.weight_key())?.data();
        let pad = (k / 2) as isize;
        let plane = h * w;
        let x = cache.input.data();
        let g = grad_out.data();
        let mut gx = vec![0.0; x.len()];
        let mut gw = vec![0.0; cout * cin * k * k];
        let mut gb = vec![0.0; cout];
        for bi in 0..b {
            for co in 0..cout {
                let gp = &g[(bi * cout + co) * plane..(bi * cout + co + 1) * plane];
                gb[co] += gp.iter().sum::<f64>();
                for ci in 0..cin {
                    let xoff = (bi * cin + ci) * plane;
                    for kh in 0..k {
                        let dh = kh as isize - pad;
                        let (h_lo, h_hi) = Self::valid(h, dh);
                        for kw in 0..k {
                            let dw = kw as isize - pad;
                            let (w_lo, w_hi) = Self::valid(w, dw);
                            let widx = ((co * cin + ci) * k + kh) * k + kw;
                            let wv = weight[widx];
                            let mut acc = 0.0;
                            for r in h_lo..h_hi {
                                let src_r = (r as isize + dh) as usize;
                                let s0 = xoff + src_r * w + (w_lo as isize + dw) as usize;
                                let n = w_hi - w_lo;
                                let grow = &gp[r * w + w_lo..r * w + w_hi];
                                let xrow = &x[s0..s0 + n];
                                acc += grow.iter().zip(xrow).map(|(a, b)| a * b).sum::<f64>();
                                if wv != 0.0 {
                                    for (d, gv) in gx[s0..s0 + n].iter_mut().zip(grow) {
                                        *d += wv * gv;
                                    }
                                }
                            }
                            gw[widx] += acc;
                        }
                    }
                }
            }
        }
        grads.accumulate_slice(&self.weight_key(), &[cout, cin, k, k], &gw)?;
        if self.bias {
            grads.accumulate_slice(&self.bias_key(), &[cout], &gb)?;
        }
        Tensor::new(vec![b, cin, h, w], gx)
    }
}

/// Per-channel batch normalisation over (batch, time, freq).
#[derive(Debug, Clone)]
pub struct BatchNorm2d {
    pub name: String,
    pub channels: usize,
    pub eps: f64,
    pub momentum: f64,
}

#[derive(Debug, Clone)]
pub struct BatchNormCache {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    batch_mean: Vec<f64>,
    batch_var_unbiased: Vec<f64>,
    shape: Vec<usize>,
    mode: Mode,
}

impl BatchNorm2d {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self {
            name: name.into(),
            channels,
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn key(&self, field: &str) -> String {
        format!("{}.{field}", self.name)
    }

    pub fn init(&self, params: &mut ModelParams) -> Result<(), NnError> {
        let c = self.channels;
        params.register(self.key("gamma"), Tensor::full(&[c], 1.0))?;
        params.register(self.key("beta"), Tensor::zeros(&[c]))?;
        params.register(self.key("running_mean"), Tensor::zeros(&[c]))?;
        params.register(self.key("running_var"), Tensor::full(&[c], 1.0))
    }

    /// Running-statistics values after a training-mode forward pass.
    pub fn running_update(
        &self,
        params: &ModelParams,
        cache: &BatchNormCache,
    ) -> Result<Vec<(String, Tensor)>, NnError> {
        if cache.mode != Mode::Train {
            return Ok(Vec::new());
        }
        let m = self.momentum;
        let blend = |key: String, batch: &[f64]| -> Result<(String, Tensor), NnError> {
            let old = params.get(&key)?.data();
            let data = old
                .iter()
                .zip(batch)
                .map(|(o, b)| (1.0 - m) * o + m * b)
                .collect();
            Ok((key, Tensor::new(vec![self.channels], data)?))
        };
        Ok(vec![
            blend(self.key("running_mean"), &cache.batch_mean)?,
            blend(self.key("running_var"), &cache.batch_var_unbiased)?,
        ])
    }
}

impl Layer for BatchNorm2d {
    type Cache = BatchNormCache;

    fn forward(
        &self,
        params: &ModelParams,
        input: &Tensor,
        mode: Mode,
    ) -> Result<(Tensor, BatchNormCache), NnError> {
        let (b, c, h, w) = dims4(&self.name, input)?;
        if c != self.channels {
            return Err(shape_err(&self.name, format!("{} channels", self.channels), input.shape()));
        }
        let gamma = params.get(&self.key("gamma"))?.data();
        let beta = params.get(&self.key("beta"))?.data();
        let plane = h * w;
        let count = (b * plane) as f64;
        let x = input.data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        match mode {
            Mode::Train => {
                for ch in 0..c {
                    let mut s = 0.0;
                    for bi in 0..b {
                        s += x[(bi * c + ch) * plane..(bi * c + ch + 1) * plane].iter().sum::<f64>();
                    }
                    mean[ch] = s / count;
                    let mut v = 0.0;
                    for bi in 0..b {
                        v += x[(bi * c + ch) * plane..(bi * c + ch + 1) * plane]
                            .iter()
                            .map(|t| (t - mean[ch]).powi(2))
                            .sum::<f64>();
                    }
                    var[ch] = v / count;
                }
            }
            Mode::Eval => {
                mean.copy_from_slice(params.get(&self.key("running_mean"))?.data());
                var.copy_from_slice(params.get(&self.key("running_var"))?.data());
            }
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + self.eps).sqrt()).collect();
        let mut xhat = vec![0.0; x.len()];
        let mut out = vec![0.0; x.len()];
        for bi in 0..b {
            for ch in 0..c {
                let r = (bi * c + ch) * plane..(bi * c + ch + 1) * plane;
                for ((xh, o), &xv) in xhat[r.clone()].iter_mut().zip(&mut out[r.clone()]).zip(&x[r]) {
                    *xh = (xv - mean[ch]) * inv_std[ch];
                    *o = gamma[ch] * *xh + beta[ch];
                }
            }
        }
        let unbiased = if count > 1.0 { count / (count - 1.0) } else { 1.0 };
        Ok((
            Tensor::new(input.shape().to_vec(), out)?,
            BatchNormCache {
                xhat,
                inv_std,
                batch_var_unbiased: var.iter().map(|v| v * unbiased).collect(),
                batch_mean: mean,
                shape: input.shape().to_vec(),
                mode,
            },
        ))
    }

    fn backward(
        &self,
        params: &ModelParams,
        cache: &BatchNormCache,
        grad_out: &Tensor,
        grads: &mut Gradients,
    ) -> Result<Tensor, NnError> {
        if grad_out.shape() != cache.shape.as_slice() {
            return Err(shape_err(&self.name, format!("grad {:?}", cache.shape), grad_out.shape()));
        }
        let (b, c, h, w) = (cache.shape[0], cache.shape[1], cache.shape[2], cache.shape[3]);
        let gamma = params.get(&self.key("gamma"))?.data();
        let plane = h * w;
        let count = (b * plane) as f64;
        let g = grad_out.data();
        let mut dgamma = vec![0.0; c];
        let mut dbeta = vec![0.0; c];
        for bi in 0..b {
            for ch in 0..c {
                let r = (bi * c + ch) * plane..(bi * c + ch + 1) * plane;
                for (gv, xh) in g[r.clone()].iter().zip(&cache.xhat[r]) {
                    dgamma[ch] += gv * xh;
                    dbeta[ch] += gv;
                }
            }
        }
        let mut gx = vec![0.0; g.len()];
        for bi in 0..b {
            for ch in 0..c {
                let r = (bi * c + ch) * plane..(bi * c + ch + 1) * plane;
                let scale = gamma[ch] * cache.inv_std[ch];
                for ((d, gv), xh) in gx[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&cache.xhat[r]) {
                    *d = match cache.mode {
                        Mode::Train => scale * (gv - dbeta[ch] / count - xh * dgamma[ch] / count),
                        Mode::Eval => scale * gv,
                    };
                }
            }
        }
        grads.accumulate_slice(&self.key("gamma"), &[c], &dgamma)?;
        grads.accumulate_slice(&self.key("beta"), &[c], &dbeta)?;
        Tensor::new(cache.shape.clone(), gx)
    }
}

#[derive(Debug, Clone, Default)]
pub struct Relu;

impl Layer for Relu {
    type Cache = Tensor;

    fn forward(&self, _: &ModelParams, input: &Tensor, _: Mode) -> Result<(Tensor, Tensor), NnError> {
        let out = input.data().iter().map(|&v| v.max(0.0)).collect();
        Ok((Tensor::new(input.shape().to_vec(), out)?, input.clone()))
    }

    fn backward(
        &self,
        _: &ModelParams,
        input: &Tensor,
        grad_out: &Tensor,
        _: &mut Gradients,
    ) -> Result<Tensor, NnError> {
        if grad_out.shape() != input.shape() {
            return Err(shape_err("relu", format!("{:?}", input.shape()), grad_out.shape()));
        }
        let g = input
            .data()
            .iter()
            .zip(grad_out.data())
            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
            .collect();
        Tensor::new(input.shape().to_vec(), g)
    }
}

/// Max pooling by two along the frequency (last) axis; the time axis is untouched.
#[derive(Debug, Clone, Default)]
pub struct FreqMaxPool;

#[derive(Debug, Clone)]
pub struct PoolCache {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

impl Layer for FreqMaxPool {
    type Cache = PoolCache;

    fn forward(&self, _: &ModelParams, input: &Tensor, _: Mode) -> Result<(Tensor, PoolCache), NnError> {
        let (b, c, h, w) = dims4("freq_pool", input)?;
        if w < 2 {
            return Err(shape_err("freq_pool", "freq axis >= 2", input.shape()));
        }
        let wo = w / 2;
        let x = input.data();
        let mut out = Vec::with_capacity(b * c * h * wo);
        let mut argmax = Vec::with_capacity(b * c * h * wo);
        for row in 0..b * c * h {
            for j in 0..wo {
                let i0 = row * w + 2 * j;
                let i = if x[i0 + 1] > x[i0] { i0 + 1 } else { i0 };
                out.push(x[i]);
                argmax.push(i);
            }
        }
        Ok((
            Tensor::new(vec![b, c, h, wo], out)?,
            PoolCache {
                input_shape: input.shape().to_vec(),
                argmax,
            },
        ))
    }

    fn backward(
        &self,
        _: &ModelParams,
        cache: &PoolCache,
        grad_out: &Tensor,
        _: &mut Gradients,
    ) -> Result<Tensor, NnError> {
        if grad_out.numel() != cache.argmax.len() {
            return Err(shape_err("freq_pool", "pooled shape", grad_out.shape()));
        }
        let mut gx = Tensor::zeros(&cache.input_shape);
        let d = gx.data_mut();
        for (&i, &g) in cache.argmax.iter().zip(grad_out.data()) {
            d[i] += g;
        }
        Ok(gx)
    }
}

/// `y = x W + b` over the last axis; `W` is `[in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
    pub bias: bool,
}

impl Linear {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize, bias: bool) -> Self {
        Self {
            name: name.into(),
            in_dim,
            out_dim,
            bias,
        }
    }

    pub fn weight_key(&self) -> String {
        format!("{}.weight", self.name)
    }

    pub fn bias_key(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init<R: Rng>(&self, params: &mut ModelParams, rng: &mut R) -> Result<(), NnError> {
        params.register(
            self.weight_key(),
            kaiming_uniform(&[self.in_dim, self.out_dim], self.in_dim, rng),
        )?;
        if self.bias {
            params.register(self.bias_key(), Tensor::zeros(&[self.out_dim]))?;
        }
        Ok(())
    }

    /// Forward on a raw `rows × in_dim` slice.
    pub fn apply(&self, params: &ModelParams, x: &[f64], rows: usize) -> Result<Vec<f64>, NnError> {
        let w = params.get(&self.weight_key())?;
        if w.shape() != [self.in_dim, self.out_dim] {
            return Err(shape_err(&self.name, "weight [in, out]", w.shape()));
        }
        let mut y = super::ops::matmul(x, w.data(), rows, self.in_dim, self.out_dim);
        if self.bias {
            let b = params.get(&self.bias_key())?.data();
            for row in y.chunks_exact_mut(self.out_dim) {
                for (v, bv) in row.iter_mut().zip(b) {
                    *v += bv;
                }
            }
        }
        Ok(y)
    }

    /// Backward on raw slices; returns the input gradient.
    pub fn apply_backward(
        &self,
        params: &ModelParams,
        x: &[f64],
        g: &[f64],
        rows: usize,
        grads: &mut Gradients,
    ) -> Result<Vec<f64>, NnError> {
        let w = params.get(&self.weight_key())?.data();
        let mut gw = vec![0.0; self.in_dim * self.out_dim];
        super::ops::matmul_tn_acc(&mut gw, x, g, rows, self.in_dim, self.out_dim);
        grads.accumulate_slice(&self.weight_key(), &[self.in_dim, self.out_dim], &gw)?;
        if self.bias {
            let mut gb = vec![0.0; self.out_dim];
            for row in g.chunks_exact(self.out_dim) {
                for (a, b) in gb.iter_mut().zip(row) {
                    *a += b;
                }
            }
            grads.accumulate_slice(&self.bias_key(), &[self.out_dim], &gb)?;
        }
        Ok(super::ops::matmul_nt(g, w, rows, self.in_dim, self.out_dim))
    }

    fn rows(&self, input: &Tensor) -> Result<usize, NnError> {
        match input.shape().last() {
            Some(&k) if k == self.in_dim => Ok(input.numel() / k),
            _ => Err(shape_err(&self.name, format!("[.., {}]", self.in_dim), input.shape())),
        }
    }
}

impl Layer for Linear {
    type Cache = Tensor;

    fn forward(&self, params: &ModelParams, input: &Tensor, _: Mode) -> Result<(Tensor, Tensor), NnError> {
        let rows = self.rows(input)?;
        let y = self.apply(params, input.data(), rows)?;
        let mut shape = input.shape().to_vec();
        *shape.last_mut().unwrap() = self.out_dim;
        Ok((Tensor::new(shape, y)?, input.clone()))
    }

    fn backward(
        &self,
        params: &ModelParams,
        input: &Tensor,
        grad_out: &Tensor,
        grads: &mut Gradients,
    ) -> Result<Tensor, NnError> {
        let rows = self.rows(input)?;
        if grad_out.numel() != rows * self.out_dim {
            return Err(shape_err(&self.name, format!("[{rows}, {}]", self.out_dim), grad_out.shape()));
        }
        let gx = self.apply_backward(params, input.data(), grad_out.data(), rows, grads)?;
        Tensor::new(input.shape().to_vec(), gx)
    }
}

/// Softmax over the last axis.
#[derive(Debug, Clone, Default)]
pub struct Softmax;

impl Layer for Softmax {
    type Cache = Tensor;

    fn forward(&self, _: &ModelParams, input: &Tensor, _: Mode) -> Result<(Tensor, Tensor), NnError> {
        let c = *input
            .shape()
            .last()
            .ok_or_else(|| shape_err("softmax", "rank >= 1", input.shape()))?;
        let y = Tensor::new(input.shape().to_vec(), super::softmax_rows(input.data(), c))?;
        Ok((y.clone(), y))
    }

    fn backward(
        &self,
        _: &ModelParams,
        y: &Tensor,
        grad_out: &Tensor,
        _: &mut Gradients,
    ) -> Result<Tensor, NnError> {
        if grad_out.shape() != y.shape() {
            return Err(shape_err("softmax", format!("{:?}", y.shape()), grad_out.shape()));
        }
        let c = *y.shape().last().unwrap();
        let mut gx = vec![0.0; y.numel()];
        for ((yr, gr), dr) in y
            .data()
            .chunks_exact(c)
            .zip(grad_out.data().chunks_exact(c))
            .zip(gx.chunks_exact_mut(c))
        {
            let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
            for ((d, yv), gv) in dr.iter_mut().zip(yr).zip(gr) {
                *d = yv * (gv - dot);
            }
        }
        Tensor::new(y.shape().to_vec(), gx)
    }
}
