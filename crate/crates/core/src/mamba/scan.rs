//! Discretisation and the diagonal selective scan.
//!
//! Shapes (row-major): `x`, `delta`, `y` are `L×E`; `a` is `E×N`; `b`, `c`
//! are `L×N` (shared across channels); states are `E×N` per step.

use super::MambaError;

/// How the input matrix is discretised. The state matrix always uses
/// `Ā = exp(Δ·A)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BDiscretization {
    /// `B̄ = Δ·B`
    #[default]
    Euler,
    /// `B̄ = (exp(Δ·A) − 1)/A · B`
    ExactZoh,
}

impl BDiscretization {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Euler => "euler",
            Self::ExactZoh => "zoh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "euler" => Some(Self::Euler),
            "zoh" => Some(Self::ExactZoh),
            _ => None,
        }
    }
}

/// `φ(Δ, a) = (exp(Δa) − 1)/a` with its partial derivatives `(φ, ∂φ/∂Δ, ∂φ/∂a)`.
fn zoh_phi(delta: f64, a: f64) -> (f64, f64, f64) {
    let z = delta * a;
    let e = z.exp();
    if z.abs() < 1e-4 {
        let phi = delta * (1.0 + z / 2.0 + z * z / 6.0);
        let dphi_da = delta * delta * (0.5 + z / 3.0 + z * z / 8.0);
        (phi, e, dphi_da)
    } else {
        let em1 = z.exp_m1();
        (em1 / a, e, (z * e - em1) / (a * a))
    }
}

/// Discretises one time step: returns `(Ā, B̄)`, both `E×N`.
pub fn discretize(
    a: &[f64],
    b: &[f64],
    delta: &[f64],
    mode: BDiscretization,
) -> Result<(Vec<f64>, Vec<f64>), MambaError> {
    let (e, n) = (delta.len(), b.len());
    if a.len() != e * n {
        return Err(MambaError::Dim {
            what: "A",
            expected: e * n,
            got: a.len(),
        });
    }
    let mut abar = vec![0.0; e * n];
    let mut bbar = vec![0.0; e * n];
    for (ch, &d) in delta.iter().enumerate() {
        if !(d > 0.0) {
            return Err(MambaError::NonPositiveStep { index: ch, value: d });
        }
        for s in 0..n {
            let av = a[ch * n + s];
            abar[ch * n + s] = (d * av).exp();
            bbar[ch * n + s] = match mode {
                BDiscretization::Euler => d * b[s],
                BDiscretization::ExactZoh => zoh_phi(d, av).0 * b[s],
            };
        }
    }
    Ok((abar, bbar))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScanDims {
    pub len: usize,
    pub channels: usize,
    pub states: usize,
}

#[derive(Debug, Clone)]
pub struct ScanCache {
    dims: ScanDims,
    mode: BDiscretization,
    /// States `h_t`, `L×E×N`.
    states: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ScanGrads {
    pub x: Vec<f64>,
    pub delta: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

fn check_len(what: &'static str, v: &[f64], expected: usize) -> Result<(), MambaError> {
    if v.len() == expected {
        Ok(())
    } else {
        Err(MambaError::Dim {
            what,
            expected,
            got: v.len(),
        })
    }
}

/// Sequential scan from `h₀ = 0`: `h_t = Ā_t ⊙ h_{t−1} + B̄_t x_t`, `y_t = ⟨C_t, h_t⟩`.
pub fn ssm_scan(
    x: &[f64],
    delta: &[f64],
    a: &[f64],
    b: &[f64],
    c: &[f64],
    dims: ScanDims,
    mode: BDiscretization,
) -> Result<(Vec<f64>, ScanCache), MambaError> {
    let ScanDims { len, channels: e, states: n } = dims;
    check_len("x", x, len * e)?;
    check_len("delta", delta, len * e)?;
    check_len("A", a, e * n)?;
    check_len("B", b, len * n)?;
    check_len("C", c, len * n)?;
    if let Some(i) = delta.iter().position(|d| !(*d > 0.0)) {
        return Err(MambaError::NonPositiveStep { index: i, value: delta[i] });
    }
    let mut states = vec![0.0; len * e * n];
    let mut y = vec![0.0; len * e];
    let mut h = vec![0.0; e * n];
    for t in 0..len {
        let bt = &b[t * n..(t + 1) * n];
        let ct = &c[t * n..(t + 1) * n];
        for ch in 0..e {
            let d = delta[t * e + ch];
            let xv = x[t * e + ch];
            let hr = &mut h[ch * n..(ch + 1) * n];
            let ar = &a[ch * n..(ch + 1) * n];
            let mut acc = 0.0;
            for s in 0..n {
                let abar = (d * ar[s]).exp();
                let bbar = match mode {
                    BDiscretization::Euler => d * bt[s],
                    BDiscretization::ExactZoh => zoh_phi(d, ar[s]).0 * bt[s],
                };
                hr[s] = abar * hr[s] + bbar * xv;
                acc += ct[s] * hr[s];
            }
            y[t * e + ch] = acc;
        }
        states[t * e * n..(t + 1) * e * n].copy_from_slice(&h);
    }
    Ok((y, ScanCache { dims, mode, states }))
}

/// Backpropagation through the recurrence.
pub fn ssm_scan_backward(
    x: &[f64],
    delta: &[f64],
    a: &[f64],
    b: &[f64],
    c: &[f64],
    cache: &ScanCache,
    dy: &[f64],
) -> Result<ScanGrads, MambaError> {
    let ScanDims { len, channels: e, states: n } = cache.dims;
    check_len("dy", dy, len * e)?;
    let mut g = ScanGrads {
        x: vec![0.0; len * e],
        delta: vec![0.0; len * e],
        a: vec![0.0; e * n],
        b: vec![0.0; len * n],
        c: vec![0.0; len * n],
    };
    // dh carries ∂L/∂h_t; `carry` holds Ā_{t+1} ⊙ dh_{t+1}.
    let mut carry = vec![0.0; e * n];
    for t in (0..len).rev() {
        let bt = &b[t * n..(t + 1) * n];
        let ct = &c[t * n..(t + 1) * n];
        let ht = &cache.states[t * e * n..(t + 1) * e * n];
        for ch in 0..e {
            let d = delta[t * e + ch];
            let xv = x[t * e + ch];
            let dyv = dy[t * e + ch];
            let ar = &a[ch * n..(ch + 1) * n];
            let mut dx = 0.0;
            let mut dd = 0.0;
            for s in 0..n {
                let k = ch * n + s;
                g.c[t * n + s] += dyv * ht[k];
                let dh = ct[s] * dyv + carry[k];
                let hprev = if t > 0 { cache.states[(t - 1) * e * n + k] } else { 0.0 };
                let abar = (d * ar[s]).exp();
                // Ā = exp(Δa)
                let dabar = dh * hprev;
                dd += dabar * abar * ar[s];
                g.a[k] += dabar * abar * d;
                // B̄ x
                let dbbar = dh * xv;
                match cache.mode {
                    BDiscretization::Euler => {
                        dx += dh * d * bt[s];
                        dd += dbbar * bt[s];
                        g.b[t * n + s] += dbbar * d;
                    }
                    BDiscretization::ExactZoh => {
                        let (phi, dphi_dd, dphi_da) = zoh_phi(d, ar[s]);
                        dx += dh * phi * bt[s];
                        dd += dbbar * bt[s] * dphi_dd;
                        g.a[k] += dbbar * bt[s] * dphi_da;
                        g.b[t * n + s] += dbbar * phi;
                    }
                }
                carry[k] = abar * dh;
            }
            g.x[t * e + ch] = dx;
            g.delta[t * e + ch] = dd;
        }
    }
    Ok(g)
}
