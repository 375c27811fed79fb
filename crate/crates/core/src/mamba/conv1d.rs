//! Depthwise causal 1-D convolution over time.

/// `out[t, e] = bias[e] + Σ_k w[e, k] · x[t − (K−1) + k, e]`, with zeros
/// before the start of the sequence. `x` is `L×E`, `w` is `E×K`.
pub fn causal_conv1d(x: &[f64], w: &[f64], bias: &[f64], len: usize, channels: usize) -> Vec<f64> {
    let k = w.len() / channels;
    let mut out = vec![0.0; len * channels];
    for t in 0..len {
        for e in 0..channels {
            let mut acc = bias[e];
            for j in 0..k {
                let back = k - 1 - j;
                if t >= back {
                    acc += w[e * k + j] * x[(t - back) * channels + e];
                }
            }
            out[t * channels + e] = acc;
        }
    }
    out
}

/// Returns `(dx, dw, dbias)`.
pub fn causal_conv1d_backward(
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    len: usize,
    channels: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let k = w.len() / channels;
    let mut dx = vec![0.0; len * channels];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; channels];
    for t in 0..len {
        for e in 0..channels {
            let g = dout[t * channels + e];
            db[e] += g;
            for j in 0..k {
                let back = k - 1 - j;
                if t >= back {
                    let src = (t - back) * channels + e;
                    dw[e * k + j] += g * x[src];
                    dx[src] += g * w[e * k + j];
                }
            }
        }
    }
    (dx, dw, db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use rand::Rng;

    #[test]
    fn last_tap_kernel_is_identity() {
        let x: Vec<f64> = (0..10).map(|v| v as f64 * 0.3 - 1.0).collect();
        assert_eq!(causal_conv1d(&x, &[0.0, 0.0, 0.0, 1.0], &[0.0], 10, 1), x);
    }

    #[test]
    fn impulse_response_is_reversed_kernel() {
        let mut x = vec![0.0; 7];
        x[0] = 1.0;
        let out = causal_conv1d(&x, &[2.0, 3.0, 5.0, 7.0], &[0.0], 7, 1);
        assert_eq!(out, vec![7.0, 5.0, 3.0, 2.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn future_changes_do_not_affect_the_past() {
        let mut r = rng_from_seed(1);
        let (len, e) = (20, 3);
        let x: Vec<f64> = (0..len * e).map(|_| r.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..e * 4).map(|_| r.random_range(-1.0..1.0)).collect();
        let base = causal_conv1d(&x, &w, &[0.1, 0.2, 0.3], len, e);
        let mut x2 = x.clone();
        x2[10 * e + 1] += 5.0;
        let moved = causal_conv1d(&x2, &w, &[0.1, 0.2, 0.3], len, e);
        assert_eq!(&base[..10 * e], &moved[..10 * e]);
        assert_ne!(base[10 * e + 1], moved[10 * e + 1]);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut r = rng_from_seed(2);
        let (len, e) = (9, 2);
        let x: Vec<f64> = (0..len * e).map(|_| r.random_range(-1.0..1.0)).collect();
        let w: Vec<f64> = (0..e * 4).map(|_| r.random_range(-1.0..1.0)).collect();
        let b = vec![0.3, -0.2];
        let probe: Vec<f64> = (0..len * e).map(|_| r.random_range(-1.0..1.0)).collect();
        let loss = |x: &[f64], w: &[f64], b: &[f64]| -> f64 {
            causal_conv1d(x, w, b, len, e).iter().zip(&probe).map(|(a, p)| a * p).sum()
        };
        let (dx, dw, db) = causal_conv1d_backward(&x, &w, &probe, len, e);
        let h = 1e-6;
        for i in 0..x.len() {
            let (mut p, mut m) = (x.clone(), x.clone());
            p[i] += h;
            m[i] -= h;
            assert!(((loss(&p, &w, &b) - loss(&m, &w, &b)) / (2.0 * h) - dx[i]).abs() < 1e-8);
        }
        for i in 0..w.len() {
            let (mut p, mut m) = (w.clone(), w.clone());
            p[i] += h;
            m[i] -= h;
            assert!(((loss(&x, &p, &b) - loss(&x, &m, &b)) / (2.0 * h) - dw[i]).abs() < 1e-8);
        }
        for i in 0..2 {
            let (mut p, mut m) = (b.clone(), b.clone());
            p[i] += h;
            m[i] -= h;
            assert!(((loss(&x, &w, &p) - loss(&x, &w, &m)) / (2.0 * h) - db[i]).abs() < 1e-8);
        }
    }
}
