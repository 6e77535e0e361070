//! Feedback interconnection of a continuous plant with a sampled symbolic
//! controller: index composition across the loop, the feasible closed-loop
//! index region, the loop simulator, the per-step dissipation monitor, and
//! ultimate-boundedness certificates.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::abstraction::{AbstractionParams, SymbolicModel};
use crate::analysis::DetectabilityCertificate;
use crate::degradation::{degrade_sampled, degrade_symbolic, FreeParams};
use crate::error::{Error, Result};
use crate::linalg;
use crate::systems::{
    rk4_step, zoh_discretize, DenseSample, DynamicsProvider, LinearSystem, QuadraticStorage,
    StorageRegularity, SupplyRate,
};

/// Discrete-time external reference signal.
#[derive(Debug, Clone)]
pub enum SignalGenerator {
    Zero,
    Constant(DVector<f64>),
    /// Explicit samples; steps beyond the end read as zero.
    Samples(Vec<DVector<f64>>),
}

impl SignalGenerator {
    pub fn value(&self, k: usize, dim: usize) -> DVector<f64> {
        match self {
            SignalGenerator::Zero => DVector::zeros(dim),
            SignalGenerator::Constant(v) => v.clone(),
            SignalGenerator::Samples(s) => {
                s.get(k).cloned().unwrap_or_else(|| DVector::zeros(dim))
            }
        }
    }
}

/// How the controller side of the loop is realized.
pub enum ControllerRealization {
    /// Lattice controller: inputs quantized, outputs on the lattice,
    /// successor through the symbolic model.
    Symbolic {
        model: Arc<SymbolicModel>,
        x0: Vec<i64>,
    },
    /// Exactly sampled controller without quantization, for comparison runs.
    DirectZoh {
        system: LinearSystem,
        x0: DVector<f64>,
    },
}

/// Full description of one closed-loop run.
pub struct FeedbackConfig {
    pub plant: Arc<dyn DynamicsProvider + Send + Sync>,
    pub controller: ControllerRealization,
    pub tau: f64,
    pub w1: SignalGenerator,
    pub w2: SignalGenerator,
    pub horizon: usize,
    pub x1_initial: DVector<f64>,
    /// Dense plant samples per sampling interval.
    pub substeps: usize,
}

impl FeedbackConfig {
    /// Validates dimensions, the period, and the algebraic-loop hazard: the
    /// plant output must not feed through from its input, because the step
    /// ordering computes the plant output before the plant input exists.
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::InvalidParam(format!(
                "period must be positive, got {}",
                self.tau
            )));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidParam("horizon must be at least 1".into()));
        }
        if self.substeps == 0 {
            return Err(Error::InvalidParam("substeps must be at least 1".into()));
        }
        if self.x1_initial.len() != self.plant.state_dim() {
            return Err(Error::Dimension(format!(
                "plant initial state has length {}, state dimension is {}",
                self.x1_initial.len(),
                self.plant.state_dim()
            )));
        }
        if !self.x1_initial.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("plant initial state".into()));
        }
        self.check_plant_feedthrough()?;
        let m = self.plant.input_dim();
        match &self.controller {
            ControllerRealization::Symbolic { model, x0 } => {
                if (model.params().tau - self.tau).abs() > 1e-12 {
                    return Err(Error::InvalidParam(format!(
                        "symbolic model period {} differs from loop period {}",
                        model.params().tau,
                        self.tau
                    )));
                }
                if model.input_dim() != m {
                    return Err(Error::Dimension(
                        "controller input dimension differs from plant output".into(),
                    ));
                }
                if x0.len() != model.state_dim() {
                    return Err(Error::Dimension(
                        "controller initial lattice state has wrong length".into(),
                    ));
                }
            }
            ControllerRealization::DirectZoh { system, x0 } => {
                if system.io_dim() != m {
                    return Err(Error::Dimension(
                        "controller input dimension differs from plant output".into(),
                    ));
                }
                if x0.len() != system.state_dim() {
                    return Err(Error::Dimension(
                        "controller initial state has wrong length".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn check_plant_feedthrough(&self) -> Result<()> {
        if let Some(lin) = self.plant.as_linear() {
            if lin.has_feedthrough() {
                return Err(Error::AlgebraicLoop(
                    "plant feeds its input through to its output".into(),
                ));
            }
            return Ok(());
        }
        // probe the output map at fixed points; feedthrough would make the
        // loop ill-posed under the fixed step ordering
        let n = self.plant.state_dim();
        let m = self.plant.input_dim();
        let probes_x = [DVector::zeros(n), DVector::from_element(n, 0.73)];
        for x in &probes_x {
            let base = self.plant.output(x, &DVector::zeros(m));
            for i in 0..m {
                let mut u = DVector::zeros(m);
                u[i] = 1.0;
                if ((&self.plant.output(x, &u)) - &base).amax() > 1e-12 {
                    return Err(Error::AlgebraicLoop(
                        "plant output responds to its input at a sampling instant".into(),
                    ));
                }
                u[i] = -0.37;
                if ((&self.plant.output(x, &u)) - &base).amax() > 1e-12 {
                    return Err(Error::AlgebraicLoop(
                        "plant output responds to its input at a sampling instant".into(),
                    ));
                }
            }
        }
        Ok(())
    }
}

/// One sampled step of the interconnection.
#[derive(Debug, Clone)]
pub struct ClosedLoopStep {
    pub k: usize,
    pub t: f64,
    pub x1: DVector<f64>,
    pub u1: DVector<f64>,
    pub y1: DVector<f64>,
    /// Controller state embedding (lattice point for symbolic runs).
    pub xc: DVector<f64>,
    pub xc_indices: Option<Vec<i64>>,
    pub u2: DVector<f64>,
    pub u2_quantized: DVector<f64>,
    pub y2: DVector<f64>,
    pub w1: DVector<f64>,
    pub w2: DVector<f64>,
}

/// Paired plant/controller trajectory with dense plant samples.
pub struct ClosedLoopTrace {
    pub tau: f64,
    /// `horizon + 1` entries; entry `k` holds the signals applied on
    /// `[k tau, (k+1) tau)`, the final entry records the terminal sample.
    pub steps: Vec<ClosedLoopStep>,
    pub dense: Vec<DenseSample>,
}

impl ClosedLoopTrace {
    pub fn horizon(&self) -> usize {
        self.steps.len() - 1
    }
}

/// Runs the loop: sample the plant output, close it through the references,
/// quantize the controller input, emit the lattice controller output, hold
/// the plant input over the interval, then advance both sides.
pub fn simulate_closed_loop(cfg: &FeedbackConfig) -> Result<ClosedLoopTrace> {
    cfg.validate()?;
    let m = cfg.plant.input_dim();
    let tau = cfg.tau;
    let h = tau / cfg.substeps as f64;
    // exact sub-interval hold map for linear plants
    let plant_hold = match cfg.plant.as_linear() {
        Some(lin) => Some(zoh_discretize(lin, h)?),
        None => None,
    };
    let ctrl_hold = match &cfg.controller {
        ControllerRealization::DirectZoh { system, .. } => Some(zoh_discretize(system, tau)?),
        ControllerRealization::Symbolic { .. } => None,
    };

    let mut x1 = cfg.x1_initial.clone();
    let mut sym_state: Option<Vec<i64>> = None;
    let mut direct_state: Option<DVector<f64>> = None;
    match &cfg.controller {
        ControllerRealization::Symbolic { x0, .. } => sym_state = Some(x0.clone()),
        ControllerRealization::DirectZoh { x0, .. } => direct_state = Some(x0.clone()),
    }

    let mut steps = Vec::with_capacity(cfg.horizon + 1);
    let mut dense = Vec::new();
    for k in 0..=cfg.horizon {
        let t = k as f64 * tau;
        let w1 = cfg.w1.value(k, m);
        let w2 = cfg.w2.value(k, m);
        if w1.len() != m || w2.len() != m {
            return Err(Error::Dimension("reference signal dimension mismatch".into()));
        }
        // plant output first; the plant is feedthrough-free so a zero input
        // placeholder is exact
        let y1 = cfg.plant.output(&x1, &DVector::zeros(m));
        let u2 = &w2 + &y1;
        let (u2_quantized, y2, xc, xc_indices) = match &cfg.controller {
            ControllerRealization::Symbolic { model, .. } => {
                let state = sym_state.as_ref().expect("symbolic state initialized");
                let (u_idx, u_point) = model.io_quantizer().quantize(&u2)?;
                let y_idx = model.output(state, &u_idx)?;
                let y2 = model.io_quantizer().point(&y_idx);
                let xc = model.state_point(state);
                (u_point, y2, xc, Some((state.clone(), u_idx)))
            }
            ControllerRealization::DirectZoh { system, .. } => {
                let state = direct_state.as_ref().expect("direct state initialized");
                let y2 = system.output(state, &u2);
                (u2.clone(), y2, state.clone(), None)
            }
        };
        let u1 = &w1 - &y2;
        steps.push(ClosedLoopStep {
            k,
            t,
            x1: x1.clone(),
            u1: u1.clone(),
            y1: y1.clone(),
            xc,
            xc_indices: xc_indices.as_ref().map(|(s, _)| s.clone()),
            u2,
            u2_quantized: u2_quantized.clone(),
            y2,
            w1,
            w2,
        });
        if k == cfg.horizon {
            break;
        }

        // advance the plant with dense recording
        for j in 0..cfg.substeps {
            let tj = t + j as f64 * h;
            dense.push(DenseSample {
                step: k,
                t: tj,
                x: x1.clone(),
                y: cfg.plant.output(&x1, &u1),
            });
            x1 = match &plant_hold {
                Some(d) => d.a() * &x1 + d.b() * &u1,
                None => rk4_step(cfg.plant.as_ref(), &x1, &u1, h),
            };
            if !x1.iter().all(|v| v.is_finite()) {
                return Err(Error::Divergence { step: k });
            }
        }

        // advance the controller
        match &cfg.controller {
            ControllerRealization::Symbolic { model, .. } => {
                let (state, u_idx) = xc_indices.expect("symbolic indices recorded");
                sym_state = Some(model.successor(&state, &u_idx)?);
            }
            ControllerRealization::DirectZoh { .. } => {
                let d = ctrl_hold.as_ref().expect("hold map built");
                let state = direct_state.take().expect("direct state initialized");
                let u = &steps.last().expect("step recorded").u2_quantized;
                direct_state = Some(d.a() * state + d.b() * u);
            }
        }
    }
    let last_t = cfg.horizon as f64 * tau;
    let last_u = steps.last().expect("at least one step").u1.clone();
    dense.push(DenseSample {
        step: cfg.horizon,
        t: last_t,
        x: x1.clone(),
        y: cfg.plant.output(&x1, &last_u),
    });
    Ok(ClosedLoopTrace { tau, steps, dense })
}

/// Indices describing both loop sides after sampling, quantization and the
/// interconnection corrections.
#[derive(Debug, Clone, Copy)]
pub struct ClosedLoopIndices {
    pub nu1_bar: f64,
    pub rho1_bar: f64,
    pub nu2_hat: f64,
    pub rho2_hat: f64,
    pub alpha_hat: f64,
    pub nu2_bar: f64,
    pub rho2_bar: f64,
    pub alpha2_bar: f64,
    pub tau: f64,
    pub input_dim: usize,
    pub free_params: FreeParams,
}

/// Continuous plant-side data entering the composition.
#[derive(Debug, Clone, Copy)]
pub struct PlantSideData {
    pub nu: f64,
    pub rho: f64,
    pub gamma: f64,
}

/// Continuous controller-side data entering the composition.
#[derive(Debug, Clone)]
pub struct ControllerSideData {
    pub nu: f64,
    pub rho: f64,
    pub gamma: f64,
    pub input_dim: usize,
    pub regularity: StorageRegularity,
}

/// Degrades both sides and applies the interconnection corrections: the
/// controller loses a factor on its input index, a constant on its output
/// index, and gains extra generation from quantizing the loop signal.
pub fn compose_indices(
    plant: &PlantSideData,
    controller: &ControllerSideData,
    params: &AbstractionParams,
    fp: &FreeParams,
) -> Result<ClosedLoopIndices> {
    fp.validate()?;
    let sampled = degrade_sampled(plant.nu, plant.rho, plant.gamma, params.tau, fp.lambda1)?;
    let q = degrade_symbolic(
        controller.nu,
        controller.rho,
        controller.gamma,
        params,
        controller.input_dim,
        &controller.regularity,
        fp,
    )?;
    let m = controller.input_dim as f64;
    let nu2_bar = q.nu * (1.0 - 1.0 / fp.ell2);
    let rho2_bar = q.rho - 1.0 / (4.0 * fp.ell1);
    let alpha2_bar = q.alpha
        + params.tau * (m * params.mu * params.mu / 4.0) * (fp.ell1 + q.nu * (fp.ell2 + 1.0));
    Ok(ClosedLoopIndices {
        nu1_bar: sampled.nu,
        rho1_bar: sampled.rho,
        nu2_hat: q.nu,
        rho2_hat: q.rho,
        alpha_hat: q.alpha,
        nu2_bar,
        rho2_bar,
        alpha2_bar,
        tau: params.tau,
        input_dim: controller.input_dim,
        free_params: *fp,
    })
}

/// A closed-loop index pair with the eigenvalue margins of the two
/// certificate blocks.
#[derive(Debug, Clone, Copy)]
pub struct FeasibleIndices {
    pub nu_c: f64,
    pub rho_c: f64,
    /// Smallest eigenvalues of the two 2x2 blocks; both must be nonnegative
    /// (within tolerance) for the pair to be certified.
    pub psd_margins: (f64, f64),
}

/// Smallest eigenvalues of the two certificate blocks at a proposed pair.
pub fn psd_margins(idx: &ClosedLoopIndices, nu_c: f64, rho_c: f64) -> (f64, f64) {
    let m1 = DMatrix::from_row_slice(
        2,
        2,
        &[
            idx.nu1_bar - nu_c,
            -idx.nu1_bar,
            -idx.nu1_bar,
            idx.rho2_bar + idx.nu1_bar - rho_c,
        ],
    );
    let m2 = DMatrix::from_row_slice(
        2,
        2,
        &[
            idx.nu2_bar - nu_c,
            idx.nu2_bar,
            idx.nu2_bar,
            idx.rho1_bar + idx.nu2_bar - rho_c,
        ],
    );
    (
        linalg::min_symmetric_eigenvalue(&m1),
        linalg::min_symmetric_eigenvalue(&m2),
    )
}

/// Largest admissible output index for a proposed input index, with the
/// certificate-block margins at that point.
///
/// The fractional bounds are exactly the determinant conditions of the two
/// blocks, so for `nu_c` strictly below both side indices the returned pair
/// is certified up to roundoff. Degenerate proposals equal to either side
/// index are rejected.
pub fn feasible_nu_rho(idx: &ClosedLoopIndices, nu_c: f64) -> Result<FeasibleIndices> {
    if !nu_c.is_finite() {
        return Err(Error::NonFinite("proposed input index".into()));
    }
    if nu_c == idx.nu1_bar || nu_c == idx.nu2_bar {
        return Err(Error::InvalidParam(format!(
            "input index {nu_c} coincides with a side index, the bound degenerates"
        )));
    }
    let rho_c = (idx.rho2_bar - nu_c * idx.nu1_bar / (idx.nu1_bar - nu_c))
        .min(idx.rho1_bar - nu_c * idx.nu2_bar / (idx.nu2_bar - nu_c));
    Ok(FeasibleIndices {
        nu_c,
        rho_c,
        psd_margins: psd_margins(idx, nu_c, rho_c),
    })
}

/// Sweeps the input index over a fixed grid strictly below both side
/// indices and returns the curve of largest admissible pairs.
pub fn feasible_region_sweep(idx: &ClosedLoopIndices) -> Vec<FeasibleIndices> {
    let min_side = idx.nu1_bar.min(idx.nu2_bar);
    let lo = -(2.0 * min_side).abs() - 1.0;
    let hi = min_side - 1e-6;
    let points = 200;
    (0..points)
        .map(|i| {
            let nu_c = lo + (hi - lo) * i as f64 / (points - 1) as f64;
            feasible_nu_rho(idx, nu_c).expect("grid avoids the degenerate points")
        })
        .collect()
}

/// Decay metrics of the unforced loop.
#[derive(Debug, Clone, Copy)]
pub struct DecayMargin {
    /// `min(nu2_bar + rho1_bar, nu1_bar + rho2_bar)`: positive means the
    /// output energy decays up to the generation offset.
    pub margin: f64,
    pub alpha2_bar: f64,
}

pub fn zero_input_decay_margin(idx: &ClosedLoopIndices) -> DecayMargin {
    DecayMargin {
        margin: (idx.nu2_bar + idx.rho1_bar).min(idx.nu1_bar + idx.rho2_bar),
        alpha2_bar: idx.alpha2_bar,
    }
}

/// Per-step dissipation residual series for a simulated loop.
#[derive(Debug, Clone)]
pub struct ResidualReport {
    pub worst: f64,
    pub series: Vec<f64>,
}

/// Checks the composed dissipation inequality along a trace: the aggregate
/// storage increment per period must not exceed the closed-loop supply plus
/// the generation rate. Nonpositive residuals everywhere is what the
/// composed certificate promises.
pub fn dissipation_residual_check(
    trace: &ClosedLoopTrace,
    idx: &ClosedLoopIndices,
    v1: &QuadraticStorage,
    v2: &QuadraticStorage,
    nu_c: f64,
    rho_c: f64,
) -> Result<ResidualReport> {
    let k_max = trace.horizon();
    if k_max == 0 {
        return Err(Error::InvalidParam("trace has no transitions".into()));
    }
    let mut series = Vec::with_capacity(k_max);
    let mut worst = f64::NEG_INFINITY;
    for k in 0..k_max {
        let s = &trace.steps[k];
        let s_next = &trace.steps[k + 1];
        if v1.dim() != s.x1.len() || v2.dim() != s.xc.len() {
            return Err(Error::Dimension("storage dimensions do not match the trace".into()));
        }
        let v_now = v1.evaluate(&s.x1) + v2.evaluate(&s.xc);
        let v_next = v1.evaluate(&s_next.x1) + v2.evaluate(&s_next.xc);
        let mut w = DVector::zeros(s.w1.len() + s.w2.len());
        w.rows_mut(0, s.w1.len()).copy_from(&s.w1);
        w.rows_mut(s.w1.len(), s.w2.len()).copy_from(&s.w2);
        let mut y = DVector::zeros(s.y1.len() + s.y2.len());
        y.rows_mut(0, s.y1.len()).copy_from(&s.y1);
        y.rows_mut(s.y1.len(), s.y2.len()).copy_from(&s.y2);
        let supply = w.dot(&y) - nu_c * w.dot(&w) - rho_c * y.dot(&y) + idx.alpha2_bar / idx.tau;
        let residual = (v_next - v_now) / idx.tau - supply;
        series.push(residual);
        worst = worst.max(residual);
    }
    Ok(ResidualReport { worst, series })
}

/// Ultimate-bound certificate data for a quasi-passive detectable sampled
/// system.
#[derive(Debug, Clone, Copy)]
pub struct UltimateBoundResult {
    pub b1: f64,
    pub b2: f64,
    /// Internal constant of the bound derivation.
    pub lambda: f64,
    pub r: f64,
    pub v: f64,
    pub d: f64,
    pub n0: usize,
    pub kappa: f64,
}

/// Computes the ultimate bound `d` on the state norm for a system whose
/// storage satisfies the quasi-passivity inequality with indices
/// `(supply.nu, supply.rho, supply.alpha)`, inputs bounded by `b1` and
/// initial states by `b2`.
pub fn ultimate_bound(
    supply: &SupplyRate,
    det: &DetectabilityCertificate,
    storage: &QuadraticStorage,
    b1: f64,
    b2: f64,
) -> Result<UltimateBoundResult> {
    if !(supply.nu > 0.0) || !(supply.rho > 0.0) || !(supply.alpha > 0.0) {
        return Err(Error::InvalidParam(format!(
            "strict quasi-passivity required: nu = {}, rho = {}, alpha = {}",
            supply.nu, supply.rho, supply.alpha
        )));
    }
    if !det.is_valid() {
        return Err(Error::CertificateInvalid(format!(
            "detectability constant must be positive, got {}",
            det.kappa
        )));
    }
    if !(b1 >= 0.0) || !(b2 >= 0.0) {
        return Err(Error::InvalidParam("signal bounds must be nonnegative".into()));
    }
    let lambda_min = storage.lambda_min();
    if lambda_min <= 0.0 {
        return Err(Error::NotPositiveSemidefinite {
            min_eigenvalue: lambda_min,
        });
    }
    let (nu, rho, alpha) = (supply.nu, supply.rho, supply.alpha);
    let lambda = 1.0 / (2.0 * rho) + 2.0 * nu;
    let window_gain = det.n0 as f64 * (b1 * b1 / (4.0 * rho) + alpha);
    let r = b2.max((window_gain * (4.0 * rho * nu + 1.0) / (4.0 * rho * rho * nu * det.kappa)).sqrt());
    let v = storage.lambda_max() * r * r;
    let d = ((v + window_gain) / lambda_min).sqrt();
    Ok(UltimateBoundResult {
        b1,
        b2,
        lambda,
        r,
        v,
        d,
        n0: det.n0,
        kappa: det.kappa,
    })
}

/// Ultimate bound for the pure output-decay regime: storage decays by
/// `rho_out |y|^2` per step up to the generation `alpha`, as arises for the
/// unforced loop with a positive decay margin. `rho_out` and `alpha` are
/// per-step quantities.
pub fn ultimate_bound_output_decay(
    rho_out: f64,
    alpha: f64,
    det: &DetectabilityCertificate,
    storage: &QuadraticStorage,
    b2: f64,
) -> Result<UltimateBoundResult> {
    if !(rho_out > 0.0) || !(alpha >= 0.0) {
        return Err(Error::InvalidParam(format!(
            "need a positive decay rate and nonnegative generation, got {rho_out}, {alpha}"
        )));
    }
    if !det.is_valid() {
        return Err(Error::CertificateInvalid(format!(
            "detectability constant must be positive, got {}",
            det.kappa
        )));
    }
    if !(b2 >= 0.0) {
        return Err(Error::InvalidParam("initial bound must be nonnegative".into()));
    }
    let lambda_min = storage.lambda_min();
    if lambda_min <= 0.0 {
        return Err(Error::NotPositiveSemidefinite {
            min_eigenvalue: lambda_min,
        });
    }
    let window_gain = det.n0 as f64 * alpha;
    let r = b2.max((window_gain / (rho_out * det.kappa)).sqrt());
    let v = storage.lambda_max() * r * r;
    let d = ((v + window_gain) / lambda_min).sqrt();
    Ok(UltimateBoundResult {
        b1: 0.0,
        b2,
        lambda: 0.0,
        r,
        v,
        d,
        n0: det.n0,
        kappa: det.kappa,
    })
}

/// Exact sampled model of the unquantized loop with input `(w1, w2)` and
/// output `(y1, y2)`, mainly for detectability of the interconnection.
/// Requires a strictly proper linear plant.
pub fn closed_loop_aggregate(
    plant: &LinearSystem,
    controller: &LinearSystem,
    tau: f64,
) -> Result<LinearSystem> {
    if plant.has_feedthrough() {
        return Err(Error::AlgebraicLoop(
            "plant feeds its input through to its output".into(),
        ));
    }
    if plant.io_dim() != controller.io_dim() {
        return Err(Error::Dimension("loop sides have different signal widths".into()));
    }
    let p = zoh_discretize(plant, tau)?;
    let c = zoh_discretize(controller, tau)?;
    let n1 = p.state_dim();
    let n2 = c.state_dim();
    let m = p.io_dim();
    let (c1, c2, d2) = (plant.c(), controller.c(), controller.d());

    let mut a = DMatrix::<f64>::zeros(n1 + n2, n1 + n2);
    a.view_mut((0, 0), (n1, n1))
        .copy_from(&(p.a() - p.b() * d2 * c1));
    a.view_mut((0, n1), (n1, n2)).copy_from(&(-(p.b() * c2)));
    a.view_mut((n1, 0), (n2, n1)).copy_from(&(c.b() * c1));
    a.view_mut((n1, n1), (n2, n2)).copy_from(c.a());

    let mut b = DMatrix::<f64>::zeros(n1 + n2, 2 * m);
    b.view_mut((0, 0), (n1, m)).copy_from(p.b());
    b.view_mut((0, m), (n1, m)).copy_from(&(-(p.b() * d2)));
    b.view_mut((n1, m), (n2, m)).copy_from(c.b());

    let mut cc = DMatrix::<f64>::zeros(2 * m, n1 + n2);
    cc.view_mut((0, 0), (m, n1)).copy_from(c1);
    cc.view_mut((m, 0), (m, n1)).copy_from(&(d2 * c1));
    cc.view_mut((m, n1), (m, n2)).copy_from(c2);

    let mut dd = DMatrix::<f64>::zeros(2 * m, 2 * m);
    dd.view_mut((m, m), (m, m)).copy_from(d2);

    LinearSystem::new(a, b, cc, dd)
}

/// Decay-margin objective over free parameters, for the deterministic
/// parameter search.
pub fn decay_margin_objective<'a>(
    plant: &'a PlantSideData,
    controller: &'a ControllerSideData,
    params: &'a AbstractionParams,
) -> impl Fn(&FreeParams) -> f64 + 'a {
    move |fp: &FreeParams| match compose_indices(plant, controller, params, fp) {
        Ok(idx) => zero_input_decay_margin(&idx).margin,
        Err(_) => f64::NEG_INFINITY,
    }
}
