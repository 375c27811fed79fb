//! Central finite-difference gradient checker.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Gradients, ModelParams, NnError, Tensor};
use crate::seed;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub step: f64,
    pub samples_per_tensor: usize,
    pub seed: u64,
    pub tolerance: f64,
    /// Denominator floor for the relative error, so that two near-zero
    /// gradients do not produce a huge ratio.
    pub abs_floor: f64,
    /// Parameter names to leave out (e.g. running statistics).
    pub skip: Vec<String>,
    /// Discard coordinates whose one-sided differences disagree by more than
    /// the tolerance (relative), i.e. where the step straddles a ReLU or
    /// max-pool kink, and draw a replacement coordinate instead. Needed for
    /// large ReLU networks where some of the many units always cross zero
    /// within one step.
    pub skip_kinks: bool,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            samples_per_tensor: 32,
            seed: 0,
            tolerance: 1e-4,
            abs_floor: 1e-6,
            skip: Vec::new(),
            skip_kinks: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TensorCheck {
    pub name: String,
    pub samples: usize,
    /// Coordinates discarded as kinks.
    pub kinks: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub checks: Vec<TensorCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max)
    }

    /// Tensors whose error exceeds the tolerance.
    pub fn failures(&self) -> Vec<&TensorCheck> {
        self.checks
            .iter()
            .filter(|c| !(c.max_rel_error < self.tolerance) || (c.samples == 0 && c.kinks > 0))
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.failures().is_empty()
    }
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for c in &self.checks {
            let flag = if c.max_rel_error < self.tolerance { "ok" } else { "FAIL" };
            writeln!(
                f,
                "{flag:4} {:40} rel {:.3e} abs {:.3e} (n={}, kinks={}, worst @{})",
                c.name, c.max_rel_error, c.max_abs_error, c.samples, c.kinks, c.worst_index
            )?;
        }
        Ok(())
    }
}

/// Compares `analytic` against central differences of `loss` on sampled
/// coordinates of every parameter tensor. Parameters absent from `analytic`
/// are taken to have zero gradient.
pub fn grad_check<F>(
    params: &ModelParams,
    analytic: &Gradients,
    loss: F,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport, NnError>
where
    F: Fn(&ModelParams) -> Result<f64, NnError>,
{
    let base = loss(params)?;
    if !base.is_finite() {
        return Err(NnError::NonFinite("forward value at the unperturbed point".into()));
    }
    let mut work = params.clone();
    let mut checks = Vec::new();
    let names: Vec<String> = params
        .names()
        .filter(|n| !cfg.skip.iter().any(|s| s == *n))
        .cloned()
        .collect();
    for (ti, name) in names.iter().enumerate() {
        let numel = params.get(name)?.numel();
        if let Some(g) = analytic.get(name) {
            if g.numel() != numel {
                return Err(NnError::ParamShape {
                    name: name.clone(),
                    expected: params.get(name)?.shape().to_vec(),
                    found: g.shape().to_vec(),
                });
            }
        }
        let mut rng = seed::stream(cfg.seed, "grad_check", ti as u64);
        let want = cfg.samples_per_tensor.min(numel);
        let budget = if cfg.skip_kinks { (4 * want).min(numel) } else { want };
        // Random order; the first `want` smooth coordinates are used.
        let order = sample(&mut rng, numel, budget).into_vec();
        let mut check = TensorCheck {
            name: name.clone(),
            samples: 0,
            kinks: 0,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst_index: order.first().copied().unwrap_or(0),
        };
        for &i in &order {
            if check.samples == want {
                break;
            }
            let orig = params.get(name)?.data()[i];
            work.get_mut(name)?.data_mut()[i] = orig + cfg.step;
            let lp = loss(&work)?;
            work.get_mut(name)?.data_mut()[i] = orig - cfg.step;
            let lm = loss(&work)?;
            work.get_mut(name)?.data_mut()[i] = orig;
            if !lp.is_finite() || !lm.is_finite() {
                return Err(NnError::NonFinite(format!("forward value perturbing {name}[{i}]")));
            }
            let numeric = (lp - lm) / (2.0 * cfg.step);
            let a = analytic.get(name).map_or(0.0, |g| g.data()[i]);
            let denom = a.abs().max(numeric.abs()).max(cfg.abs_floor);
            if cfg.skip_kinks {
                let fwd = (lp - base) / cfg.step;
                let bwd = (base - lm) / cfg.step;
                if (fwd - bwd).abs() / denom > cfg.tolerance {
                    check.kinks += 1;
                    continue;
                }
            }
            check.samples += 1;
            let abs = (a - numeric).abs();
            let rel = abs / denom;
            if rel > check.max_rel_error || rel.is_nan() {
                check.max_rel_error = rel;
                check.worst_index = i;
            }
            check.max_abs_error = check.max_abs_error.max(abs);
        }
        checks.push(check);
    }
    Ok(GradCheckReport {
        tolerance: cfg.tolerance,
        checks,
    })
}

/// Gaussian projection tensor scaled by `1/sqrt(numel)`, used to turn a
/// tensor output into a scalar loss `Σ out ⊙ probe` of order one.
pub fn random_probe<R: Rng>(shape: &[usize], rng: &mut R) -> Tensor {
    let n: usize = shape.iter().product();
    let scale = 1.0 / (n.max(1) as f64).sqrt();
    let data = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * scale
        })
        .collect();
    Tensor::new(shape.to_vec(), data).expect("probe shape")
}
