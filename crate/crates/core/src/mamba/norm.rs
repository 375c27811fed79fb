//! RMS normalisation over the last axis with a learned gain.

pub struct RmsOut {
    pub y: Vec<f64>,
    /// `1/sqrt(mean(x²) + eps)` per row.
    pub inv_rms: Vec<f64>,
}

pub fn rms_norm(x: &[f64], gain: &[f64], eps: f64) -> RmsOut {
    let d = gain.len();
    let rows = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut inv_rms = Vec::with_capacity(rows);
    for (xr, yr) in x.chunks_exact(d).zip(y.chunks_exact_mut(d)) {
        let ms = xr.iter().map(|v| v * v).sum::<f64>() / d as f64;
        let r = 1.0 / (ms + eps).sqrt();
        for ((o, &v), &g) in yr.iter_mut().zip(xr).zip(gain) {
            *o = g * v * r;
        }
        inv_rms.push(r);
    }
    RmsOut { y, inv_rms }
}

/// Returns `(dx, dgain)`.
pub fn rms_norm_backward(x: &[f64], gain: &[f64], inv_rms: &[f64], dy: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let d = gain.len();
    let mut dx = vec![0.0; x.len()];
    let mut dg = vec![0.0; d];
    for (((xr, dyr), dxr), &r) in x
        .chunks_exact(d)
        .zip(dy.chunks_exact(d))
        .zip(dx.chunks_exact_mut(d))
        .zip(inv_rms)
    {
        let mut dot = 0.0;
        for i in 0..d {
            dg[i] += dyr[i] * xr[i] * r;
            dot += gain[i] * dyr[i] * xr[i];
        }
        let k = dot * r * r * r / d as f64;
        for i in 0..d {
            dxr[i] = r * gain[i] * dyr[i] - k * xr[i];
        }
    }
    (dx, dg)
}
