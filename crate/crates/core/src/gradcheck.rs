//! Central finite-difference checks of analytic gradients on sampled
//! scalar parameters.

use candle_core::{DType, Tensor};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hdn::{hdn_total_loss, Hdn, HdnLossWeights};
use crate::nn::{scalar, NamedVars, TensorBatch};
use crate::restoration::{restoration_total_loss, Restoration, RestorationLossWeights};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub step: f64,
    pub rel_tol: f64,
    /// Lower bound on the relative-error denominator, so that two gradients
    /// that are both essentially zero compare as equal.
    pub floor: f64,
    pub samples_per_network: usize,
    pub seed: u64,
}

impl GradCheckConfig {
    pub fn f64_default() -> Self {
        Self {
            step: 1e-5,
            rel_tol: 1e-4,
            floor: 1e-6,
            samples_per_network: 10,
            seed: 0,
        }
    }

    pub fn f32_default() -> Self {
        Self {
            step: 1e-3,
            rel_tol: 5e-2,
            floor: 1e-3,
            ..Self::f64_default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub network: String,
    pub parameter: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub checks: Vec<ParamCheck>,
}

impl GradCheckReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &ParamCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }

    pub fn count_for(&self, network: &str) -> usize {
        self.checks.iter().filter(|c| c.network == network).count()
    }

    pub fn max_rel_error(&self) -> f64 {
        self.checks.iter().map(|c| c.rel_error).fold(0.0, f64::max)
    }
}

fn values(t: &Tensor) -> Result<Vec<f64>> {
    Ok(t.to_dtype(DType::F64)?.flatten_all()?.to_vec1::<f64>()?)
}

fn set_values(var: &candle_core::Var, v: Vec<f64>) -> Result<()> {
    let t = Tensor::from_vec(v, var.dims(), var.device())?.to_dtype(var.dtype())?;
    Ok(var.set(&t)?)
}

/// Compares `d loss / d p` from backprop against `(L(p+h) − L(p−h)) / 2h`
/// for `samples_per_network` distinct scalars drawn from each group.
pub fn check_gradients(
    loss: impl Fn() -> Result<Tensor>,
    groups: &[(&str, NamedVars)],
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    let grads = loss()?.backward()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = GradCheckReport::default();
    for (network, vars) in groups {
        let sizes: Vec<usize> = vars.iter().map(|(_, v)| v.elem_count()).collect();
        let total: usize = sizes.iter().sum();
        if total < cfg.samples_per_network {
            return Err(Error::InvalidParam(format!("{network} has only {total} parameters")));
        }
        let mut picks = sample(&mut rng, total, cfg.samples_per_network).into_vec();
        picks.sort_unstable();
        for flat in picks {
            let (mut vi, mut idx) = (0, flat);
            while idx >= sizes[vi] {
                idx -= sizes[vi];
                vi += 1;
            }
            let (name, var) = &vars[vi];
            let analytic = match grads.get(var.as_tensor()) {
                Some(g) => values(g)?[idx],
                None => 0.0,
            };
            let original = values(var.as_tensor())?;
            let eval = |delta: f64| -> Result<f64> {
                let mut v = original.clone();
                v[idx] += delta;
                set_values(var, v)?;
                scalar(&loss()?)
            };
            let plus = eval(cfg.step)?;
            let minus = eval(-cfg.step)?;
            set_values(var, original)?;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let rel_error = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(cfg.floor);
            report.checks.push(ParamCheck {
                network: network.to_string(),
                parameter: name.clone(),
                index: idx,
                analytic,
                numeric,
                rel_error,
                passed: rel_error <= cfg.rel_tol,
            });
        }
    }
    Ok(report)
}

/// Checks the weighted disentanglement objective for E_hf, E_h, D and D_adv.
pub fn check_hdn_gradients(
    hdn: &Hdn,
    batch: &TensorBatch,
    weights: &HdnLossWeights,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    check_gradients(|| Ok(hdn_total_loss(batch, hdn, weights)?.total), &hdn.network_vars(), cfg)
}

/// Checks the weighted restoration objective for G_C, G_U, D_C and D_U.
pub fn check_restoration_gradients(
    hdn: &Hdn,
    restoration: &Restoration,
    batch: &TensorBatch,
    weights: &RestorationLossWeights,
    cfg: &GradCheckConfig,
) -> Result<GradCheckReport> {
    check_gradients(
        || Ok(restoration_total_loss(batch, hdn, restoration, weights)?.total),
        &restoration.network_vars(),
        cfg,
    )
}

/// Replaces every all-zero parameter tensor with small Gaussian noise. The
/// zero-initialised output layer of G_C would otherwise make every gradient
/// upstream of it vanish and the check trivially pass.
pub fn perturb_zero_parameters(vars: &NamedVars, scale: f64, seed: u64) -> Result<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut changed = 0;
    for (name, var) in vars {
        if name.ends_with(".bias") {
            continue;
        }
        let v = values(var.as_tensor())?;
        if v.iter().all(|x| *x == 0.0) {
            set_values(var, v.iter().map(|_| scale * (rng.random::<f64>() * 2.0 - 1.0)).collect())?;
            changed += 1;
        }
    }
    Ok(changed)
}
