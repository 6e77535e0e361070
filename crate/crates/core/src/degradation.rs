//! Closed-form passivity-index degradation under sampling and quantization,
//! the largest sampling period preserving strict passivity, and a
//! deterministic search over the free parameters of the bounds.

use crate::abstraction::AbstractionParams;
use crate::error::{Error, Result};
use crate::systems::StorageRegularity;

/// Free parameters of the degradation and composition bounds. Any positive
/// choice is valid; the bounds are exact formulas in these.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FreeParams {
    pub lambda1: f64,
    pub lambda2: f64,
    pub lambda3: f64,
    pub lambda4: f64,
    pub lambda5: f64,
    pub ell1: f64,
    pub ell2: f64,
}

impl Default for FreeParams {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            lambda3: 1.0,
            lambda4: 1.0,
            lambda5: 1.0,
            ell1: 1.0,
            ell2: 1.0,
        }
    }
}

impl FreeParams {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in self.entries() {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::InvalidParam(format!(
                    "free parameter {name} must be positive and finite, got {v}"
                )));
            }
        }
        Ok(())
    }

    fn entries(&self) -> [(&'static str, f64); 7] {
        [
            ("lambda1", self.lambda1),
            ("lambda2", self.lambda2),
            ("lambda3", self.lambda3),
            ("lambda4", self.lambda4),
            ("lambda5", self.lambda5),
            ("ell1", self.ell1),
            ("ell2", self.ell2),
        ]
    }

    fn with_entry(&self, idx: usize, v: f64) -> Self {
        let mut out = *self;
        match idx {
            0 => out.lambda1 = v,
            1 => out.lambda2 = v,
            2 => out.lambda3 = v,
            3 => out.lambda4 = v,
            4 => out.lambda5 = v,
            5 => out.ell1 = v,
            _ => out.ell2 = v,
        }
        out
    }
}

/// Passivity indices of the exactly sampled system, with the per-step supply
/// scaled by the period: the sampled storage satisfies
/// `V(x[k+1]) - V(x[k]) <= tau (u'y - nu' u'u - rho' y'y)`.
#[derive(Debug, Clone, Copy)]
pub struct DegradedIndices {
    pub nu: f64,
    pub rho: f64,
    pub tau: f64,
}

impl DegradedIndices {
    /// The same indices folded into per-step supply coefficients
    /// `(tau nu', tau rho')`, for monitors that do not carry the period.
    pub fn per_step(&self) -> (f64, f64) {
        (self.tau * self.nu, self.tau * self.rho)
    }
}

/// Quasi-passivity data of the symbolic (sampled and quantized)
/// implementation: indices plus the constant generation rate `alpha`.
#[derive(Debug, Clone, Copy)]
pub struct QuantizedDegradedIndices {
    pub nu: f64,
    pub rho: f64,
    pub alpha: f64,
    pub tau: f64,
}

/// Index degradation caused by exact sampling alone.
///
/// `gamma` is a certified input-to-output-rate gain of the continuous system
/// and `lambda1 > 0` is free; smaller results are never unsound, so any
/// conservative `gamma` is acceptable.
pub fn degrade_sampled(
    nu: f64,
    rho: f64,
    gamma: f64,
    tau: f64,
    lambda1: f64,
) -> Result<DegradedIndices> {
    if !(lambda1 > 0.0) || !lambda1.is_finite() {
        return Err(Error::InvalidParam(format!(
            "lambda1 must be positive, got {lambda1}"
        )));
    }
    if !(tau >= 0.0) || !tau.is_finite() {
        return Err(Error::InvalidParam(format!(
            "period must be nonnegative, got {tau}"
        )));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidParam(format!(
            "gain must be positive, got {gamma}"
        )));
    }
    if !nu.is_finite() || !rho.is_finite() {
        return Err(Error::NonFinite("passivity indices".into()));
    }
    let gt = gamma * tau;
    let nu_p = nu - gt * (1.0 + lambda1 * rho.abs()) - gt * gt * rho.abs();
    let rho_p = rho - gt * rho.abs() / lambda1;
    Ok(DegradedIndices {
        nu: nu_p,
        rho: rho_p,
        tau,
    })
}

/// Index degradation caused by sampling plus input quantization at pitch
/// `mu`, with storage-regularity constants supplying the generation rate.
///
/// `m` is the input dimension; `reg.valid_radius` must equal the abstraction
/// precision because the `2 L eps^theta` term is only valid for state pairs
/// within that distance. `mu = 0` is accepted (it reduces to the pure
/// sampling case), so only `tau`, `mu`, `epsilon` of `params` are read here.
pub fn degrade_symbolic(
    nu: f64,
    rho: f64,
    gamma: f64,
    params: &AbstractionParams,
    m: usize,
    reg: &StorageRegularity,
    fp: &FreeParams,
) -> Result<QuantizedDegradedIndices> {
    fp.validate()?;
    if !(params.tau >= 0.0) || !params.tau.is_finite() {
        return Err(Error::InvalidParam(format!(
            "period must be nonnegative, got {}",
            params.tau
        )));
    }
    if !(params.mu >= 0.0) || !params.mu.is_finite() {
        return Err(Error::InvalidParam(format!(
            "input pitch must be nonnegative, got {}",
            params.mu
        )));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidParam(format!(
            "gain must be positive, got {gamma}"
        )));
    }
    if m == 0 {
        return Err(Error::InvalidParam("input dimension must be positive".into()));
    }
    if (params.epsilon - reg.valid_radius).abs() > 1e-12 {
        return Err(Error::InvalidParam(format!(
            "precision {} does not match the regularity radius {}",
            params.epsilon, reg.valid_radius
        )));
    }
    let tau = params.tau;
    let mu = params.mu;
    let sqrt_m = (m as f64).sqrt();
    let gt = gamma * tau;
    let abs_rho = rho.abs();

    let nu_q = nu
        - gt
        - fp.lambda2 * sqrt_m * mu / 4.0
        - abs_rho * gt * (gt + sqrt_m * mu * fp.lambda3 + fp.lambda4);
    let rho_q = rho - abs_rho * (gt / fp.lambda4 + sqrt_m * mu * fp.lambda5);
    let alpha = tau * sqrt_m * mu / (4.0 * fp.lambda2)
        + tau
            * mu
            * abs_rho
            * (gt * sqrt_m / (4.0 * fp.lambda3)
                + sqrt_m / (4.0 * fp.lambda5)
                + m as f64 * mu / 4.0)
        + 2.0 * reg.l * reg.valid_radius.powf(reg.theta);
    Ok(QuantizedDegradedIndices {
        nu: nu_q,
        rho: rho_q,
        alpha,
        tau,
    })
}

/// Largest sampling period below which some `lambda1 > 0` keeps both sampled
/// indices strictly positive. Requires strict passivity surplus on both
/// channels.
pub fn tau_max(nu: f64, rho: f64, gamma: f64) -> Result<f64> {
    if !(nu > 0.0) || !(rho > 0.0) {
        return Err(Error::InvalidParam(format!(
            "strict passivity surplus required on both channels, got nu = {nu}, rho = {rho}"
        )));
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidParam(format!(
            "gain must be positive, got {gamma}"
        )));
    }
    Ok(2.0 * nu / (gamma * ((8.0 * nu * rho + 1.0).sqrt() + 1.0)))
}

/// Open interval of `lambda1` values for which both sampled indices are
/// strictly positive, or `None` when the interval is empty. The interval is
/// nonempty exactly for periods below [`tau_max`].
pub fn positive_lambda1_interval(nu: f64, rho: f64, gamma: f64, tau: f64) -> Option<(f64, f64)> {
    if !(nu > 0.0) || !(rho > 0.0) || !(gamma > 0.0) || !(tau > 0.0) {
        return None;
    }
    let gt = gamma * tau;
    let upper = (nu - gt - gt * gt * rho) / (gt * rho);
    if upper > gt {
        Some((gt, upper))
    } else {
        None
    }
}

/// Uniform bounds applied to every free parameter during search.
#[derive(Debug, Clone, Copy)]
pub struct ParamBounds {
    pub lo: f64,
    pub hi: f64,
}

impl ParamBounds {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(lo > 0.0) || !(hi >= lo) || !hi.is_finite() {
            return Err(Error::InvalidParam(format!(
                "bounds must satisfy 0 < lo <= hi, got [{lo}, {hi}]"
            )));
        }
        Ok(Self { lo, hi })
    }
}

/// Deterministic coordinate descent over log-spaced grids, maximizing
/// `objective`. `budget` counts objective evaluations; the returned
/// parameters are never worse than the all-ones default (clamped into the
/// bounds). Non-finite objective values are treated as unacceptable.
pub fn optimize_free_params<F: Fn(&FreeParams) -> f64>(
    objective: F,
    bounds: &ParamBounds,
    budget: usize,
) -> (FreeParams, f64) {
    let clamp = |v: f64| v.clamp(bounds.lo, bounds.hi);
    let d = FreeParams::default();
    let mut current = FreeParams {
        lambda1: clamp(d.lambda1),
        lambda2: clamp(d.lambda2),
        lambda3: clamp(d.lambda3),
        lambda4: clamp(d.lambda4),
        lambda5: clamp(d.lambda5),
        ell1: clamp(d.ell1),
        ell2: clamp(d.ell2),
    };
    let mut best = objective(&current);
    if !best.is_finite() {
        best = f64::NEG_INFINITY;
    }
    let mut remaining = budget.saturating_sub(1);

    let grid_size = 16;
    let log_lo = bounds.lo.ln();
    let log_hi = bounds.hi.ln();
    let grid: Vec<f64> = (0..grid_size)
        .map(|i| {
            if grid_size == 1 {
                bounds.lo
            } else {
                (log_lo + (log_hi - log_lo) * i as f64 / (grid_size - 1) as f64).exp()
            }
        })
        .collect();

    'outer: loop {
        let mut improved = false;
        for coord in 0..7 {
            for &candidate in &grid {
                if remaining == 0 {
                    break 'outer;
                }
                remaining -= 1;
                let trial = current.with_entry(coord, candidate);
                let value = objective(&trial);
                if value.is_finite() && value > best {
                    best = value;
                    current = trial;
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
    (current, best)
}
