//! The NetMamba block and encoder stack.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::conv1d::{causal_conv1d, causal_conv1d_backward};
use super::norm::{rms_norm, rms_norm_backward};
use super::scan::{ssm_scan, ssm_scan_backward, ScanCache, ScanDims};
use super::{MambaConfig, MambaError};
use crate::nn::ops::{silu, silu_grad, sigmoid, softplus, softplus_inv};
use crate::nn::{kaiming_uniform, Gradients, Linear, ModelParams, Tensor};

/// One pre-norm residual block:
/// `X + W_out( scan(SiLU(conv(W_x n))) ⊙ SiLU(W_z n) )`, `n = RMSNorm(X)`.
#[derive(Debug, Clone)]
pub struct MambaBlock {
    pub prefix: String,
    pub cfg: MambaConfig,
    in_x: Linear,
    in_z: Linear,
    to_b: Linear,
    to_c: Linear,
    to_dt: Linear,
    out: Linear,
}

#[derive(Debug, Clone)]
struct SeqCache {
    x: Vec<f64>,
    normed: Vec<f64>,
    inv_rms: Vec<f64>,
    xp: Vec<f64>,
    conv: Vec<f64>,
    xc: Vec<f64>,
    z: Vec<f64>,
    dt_pre: Vec<f64>,
    delta: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    scan: ScanCache,
    y: Vec<f64>,
    gated: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct MambaBlockCache {
    seqs: Vec<SeqCache>,
    len: usize,
}

impl MambaBlock {
    pub fn new(prefix: impl Into<String>, cfg: MambaConfig) -> Self {
        let prefix = prefix.into();
        let (d, e, n) = (cfg.d_model, cfg.d_inner, cfg.d_state);
        let lin = |name: &str, i, o, bias| Linear::new(format!("{prefix}.{name}"), i, o, bias);
        Self {
            in_x: lin("in_x", d, e, false),
            in_z: lin("in_z", d, e, false),
            to_b: lin("x_b", e, n, false),
            to_c: lin("x_c", e, n, false),
            to_dt: lin("dt", e, e, true),
            out: lin("out", e, d, false),
            prefix,
            cfg,
        }
    }

    pub fn key(&self, field: &str) -> String {
        format!("{}.{field}", self.prefix)
    }

    pub fn init<R: Rng>(&self, params: &mut ModelParams, rng: &mut R) -> Result<(), MambaError> {
        let MambaConfig { d_model: d, d_inner: e, d_state: n, conv_width: k, .. } = self.cfg;
        params.register(self.key("norm.weight"), Tensor::full(&[d], 1.0))?;
        for lin in [&self.in_x, &self.in_z, &self.to_b, &self.to_c, &self.to_dt, &self.out] {
            lin.init(params, rng)?;
        }
        // Small step-size projection so Δ starts near its bias.
        params.get_mut(&self.to_dt.weight_key())?.scale(0.1);
        let (lo, hi) = (self.cfg.dt_min.ln(), self.cfg.dt_max.ln());
        let log_dt = Uniform::new(lo, hi).map_err(|e| MambaError::Config(e.to_string()))?;
        let dt_bias: Vec<f64> = (0..e).map(|_| softplus_inv(log_dt.sample(rng).exp())).collect();
        params.set(&self.to_dt.bias_key(), Tensor::new(vec![e], dt_bias)?)?;
        params.register(self.key("conv.weight"), kaiming_uniform(&[e, k], k, rng))?;
        params.register(self.key("conv.bias"), Tensor::zeros(&[e]))?;
        let a_log: Vec<f64> = (0..e).flat_map(|_| (1..=n).map(|s| (s as f64).ln())).collect();
        params.register(self.key("A_log"), Tensor::new(vec![e, n], a_log)?)?;
        Ok(())
    }

    /// Names of every parameter the block owns.
    pub fn param_names(&self) -> Vec<String> {
        let mut v = vec![
            self.key("norm.weight"),
            self.key("conv.weight"),
            self.key("conv.bias"),
            self.key("A_log"),
            self.to_dt.bias_key(),
        ];
        for lin in [&self.in_x, &self.in_z, &self.to_b, &self.to_c, &self.to_dt, &self.out] {
            v.push(lin.weight_key());
        }
        v
    }

    fn a_matrix(&self, params: &ModelParams) -> Result<Vec<f64>, MambaError> {
        Ok(params.get(&self.key("A_log"))?.data().iter().map(|v| -v.exp()).collect())
    }

    fn forward_seq(&self, params: &ModelParams, x: &[f64], len: usize, a: &[f64]) -> Result<(Vec<f64>, SeqCache), MambaError> {
        let MambaConfig { d_inner: e, d_state: n, .. } = self.cfg;
        let norm = rms_norm(x, params.get(&self.key("norm.weight"))?.data(), self.cfg.norm_eps);
        let xp = self.in_x.apply(params, &norm.y, len)?;
        let z = self.in_z.apply(params, &norm.y, len)?;
        let conv = causal_conv1d(
            &xp,
            params.get(&self.key("conv.weight"))?.data(),
            params.get(&self.key("conv.bias"))?.data(),
            len,
            e,
        );
        let xc: Vec<f64> = conv.iter().map(|&v| silu(v)).collect();
        let b = self.to_b.apply(params, &xc, len)?;
        let c = self.to_c.apply(params, &xc, len)?;
        let dt_pre = self.to_dt.apply(params, &xc, len)?;
        // Clamp away from zero so that Δ stays strictly positive in f64.
        let delta: Vec<f64> = dt_pre.iter().map(|&v| softplus(v).max(f64::MIN_POSITIVE)).collect();
        let dims = ScanDims { len, channels: e, states: n };
        let (y, scan) = ssm_scan(&xc, &delta, a, &b, &c, dims, self.cfg.b_discretization)?;
        let gated: Vec<f64> = y.iter().zip(&z).map(|(&yv, &zv)| yv * silu(zv)).collect();
        let proj = self.out.apply(params, &gated, len)?;
        let out: Vec<f64> = x.iter().zip(&proj).map(|(a, b)| a + b).collect();
        Ok((
            out,
            SeqCache {
                x: x.to_vec(),
                normed: norm.y,
                inv_rms: norm.inv_rms,
                xp,
                conv,
                xc,
                z,
                dt_pre,
                delta,
                b,
                c,
                scan,
                y,
                gated,
            },
        ))
    }

    fn backward_seq(
        &self,
        params: &ModelParams,
        sc: &SeqCache,
        dout: &[f64],
        len: usize,
        a: &[f64],
        grads: &mut Gradients,
    ) -> Result<Vec<f64>, MambaError> {
        let MambaConfig { d_model: d, d_inner: e, d_state: n, conv_width: k, .. } = self.cfg;
        let dgated = self.out.apply_backward(params, &sc.gated, dout, len, grads)?;
        let mut dy = vec![0.0; len * e];
        let mut dz = vec![0.0; len * e];
        for i in 0..len * e {
            dy[i] = dgated[i] * silu(sc.z[i]);
            dz[i] = dgated[i] * sc.y[i] * silu_grad(sc.z[i]);
        }
        let sg = ssm_scan_backward(&sc.xc, &sc.delta, a, &sc.b, &sc.c, &sc.scan, &dy)?;
        let da_log: Vec<f64> = sg.a.iter().zip(a).map(|(g, av)| g * av).collect();
        grads.accumulate_slice(&self.key("A_log"), &[e, n], &da_log)?;
        let ddt: Vec<f64> = sg.delta.iter().zip(&sc.dt_pre).map(|(g, &p)| g * sigmoid(p)).collect();
        let mut dxc = sg.x;
        for (lin, g) in [(&self.to_dt, &ddt), (&self.to_b, &sg.b), (&self.to_c, &sg.c)] {
            let part = lin.apply_backward(params, &sc.xc, g, len, grads)?;
            dxc.iter_mut().zip(&part).for_each(|(a, b)| *a += b);
        }
        let dconv: Vec<f64> = dxc.iter().zip(&sc.conv).map(|(g, &v)| g * silu_grad(v)).collect();
        let (dxp, dw, db) = causal_conv1d_backward(&sc.xp, params.get(&self.key("conv.weight"))?.data(), &dconv, len, e);
        grads.accumulate_slice(&self.key("conv.weight"), &[e, k], &dw)?;
        grads.accumulate_slice(&self.key("conv.bias"), &[e], &db)?;
        let mut dnormed = self.in_x.apply_backward(params, &sc.normed, &dxp, len, grads)?;
        let part = self.in_z.apply_backward(params, &sc.normed, &dz, len, grads)?;
        dnormed.iter_mut().zip(&part).for_each(|(a, b)| *a += b);
        let gain = params.get(&self.key("norm.weight"))?.data();
        let (dx_norm, dgain) = rms_norm_backward(&sc.x, gain, &sc.inv_rms, &dnormed);
        grads.accumulate_slice(&self.key("norm.weight"), &[d], &dgain)?;
        Ok(dout.iter().zip(&dx_norm).map(|(a, b)| a + b).collect())
    }

    /// Input and output are `[batch, len, d_model]`.
    pub fn forward(&self, params: &ModelParams, x: &Tensor) -> Result<(Tensor, MambaBlockCache), MambaError> {
        let (batch, len) = self.check_input(x)?;
        let a = self.a_matrix(params)?;
        let d = self.cfg.d_model;
        let mut out = Vec::with_capacity(x.numel());
        let mut seqs = Vec::with_capacity(batch);
        for seq in x.data().chunks_exact(len * d) {
            let (o, c) = self.forward_seq(params, seq, len, &a)?;
            out.extend(o);
            seqs.push(c);
        }
        Ok((Tensor::new(x.shape().to_vec(), out)?, MambaBlockCache { seqs, len }))
    }

    pub fn backward(
        &self,
        params: &ModelParams,
        cache: &MambaBlockCache,
        grad: &Tensor,
        grads: &mut Gradients,
    ) -> Result<Tensor, MambaError> {
        let (batch, len) = self.check_input(grad)?;
        if batch != cache.seqs.len() || len != cache.len {
            return Err(MambaError::Dim {
                what: "gradient batch",
                expected: cache.seqs.len() * cache.len,
                got: batch * len,
            });
        }
        let a = self.a_matrix(params)?;
        let d = self.cfg.d_model;
        let mut dx = Vec::with_capacity(grad.numel());
        for (g, sc) in grad.data().chunks_exact(len * d).zip(&cache.seqs) {
            dx.extend(self.backward_seq(params, sc, g, len, &a, grads)?);
        }
        Ok(Tensor::new(grad.shape().to_vec(), dx)?)
    }

    fn check_input(&self, x: &Tensor) -> Result<(usize, usize), MambaError> {
        match *x.shape() {
            [b, l, d] if d == self.cfg.d_model && l > 0 => Ok((b, l)),
            _ => Err(MambaError::Nn(crate::nn::NnError::Shape {
                layer: self.prefix.clone(),
                expected: format!("[batch, len, {}]", self.cfg.d_model),
                got: x.shape().to_vec(),
            })),
        }
    }
}

/// `n_blocks` unidirectional blocks followed by a final RMS norm.
#[derive(Debug, Clone)]
pub struct MambaEncoder {
    pub prefix: String,
    pub blocks: Vec<MambaBlock>,
    pub cfg: MambaConfig,
}

#[derive(Debug, Clone)]
pub struct MambaEncoderCache {
    blocks: Vec<MambaBlockCache>,
    pre_norm: Tensor,
    inv_rms: Vec<f64>,
}

impl MambaEncoder {
    pub fn new(prefix: impl Into<String>, cfg: MambaConfig) -> Result<Self, MambaError> {
        cfg.validate()?;
        let prefix = prefix.into();
        let blocks = (0..cfg.n_blocks)
            .map(|i| MambaBlock::new(format!("{prefix}.{i}"), cfg))
            .collect();
        Ok(Self { prefix, blocks, cfg })
    }

    fn norm_key(&self) -> String {
        format!("{}.norm_f.weight", self.prefix)
    }

    pub fn init<R: Rng>(&self, params: &mut ModelParams, rng: &mut R) -> Result<(), MambaError> {
        for b in &self.blocks {
            b.init(params, rng)?;
        }
        params.register(self.norm_key(), Tensor::full(&[self.cfg.d_model], 1.0))?;
        Ok(())
    }

    pub fn forward(&self, params: &ModelParams, x: &Tensor) -> Result<(Tensor, MambaEncoderCache), MambaError> {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for b in &self.blocks {
            let (o, c) = b.forward(params, &h)?;
            caches.push(c);
            h = o;
        }
        let norm = rms_norm(h.data(), params.get(&self.norm_key())?.data(), self.cfg.norm_eps);
        Ok((
            Tensor::new(h.shape().to_vec(), norm.y)?,
            MambaEncoderCache {
                blocks: caches,
                pre_norm: h,
                inv_rms: norm.inv_rms,
            },
        ))
    }

    pub fn backward(
        &self,
        params: &ModelParams,
        cache: &MambaEncoderCache,
        grad: &Tensor,
        grads: &mut Gradients,
    ) -> Result<Tensor, MambaError> {
        if grad.shape() != cache.pre_norm.shape() {
            return Err(MambaError::Dim {
                what: "encoder gradient",
                expected: cache.pre_norm.numel(),
                got: grad.numel(),
            });
        }
        let gain = params.get(&self.norm_key())?.data();
        let (dx, dg) = rms_norm_backward(cache.pre_norm.data(), gain, &cache.inv_rms, grad.data());
        grads.accumulate_slice(&self.norm_key(), &[self.cfg.d_model], &dg)?;
        let mut g = Tensor::new(grad.shape().to_vec(), dx)?;
        for (b, c) in self.blocks.iter().zip(&cache.blocks).rev() {
            g = b.backward(params, c, &g, grads)?;
        }
        Ok(g)
    }
}
