//! The seven subcommands. Each one only orchestrates core operations and
//! report plumbing; no numerics live here.

use std::path::PathBuf;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde_json::json;

use passlab_core::abstraction::{
    build_truncated_ts, feasibility_check, solve_min_tau, empirical_bisim_trace_check,
};
use passlab_core::analysis::{
    build_delta_iss_certificate, compute_detectability, estimate_gain_gamma,
    spot_check_delta_iss, tangent_delta_iss_certificate, verify_passivity_indices,
    DeltaIssCertificate, FrequencyGrid, GainCertificate,
};
use passlab_core::closedloop::{
    closed_loop_aggregate, compose_indices, dissipation_residual_check, feasible_nu_rho,
    feasible_region_sweep, psd_margins, simulate_closed_loop, ultimate_bound,
    ultimate_bound_output_decay, zero_input_decay_margin, ClosedLoopIndices,
    ControllerRealization, ControllerSideData, FeasibleIndices, FeedbackConfig, PlantSideData,
    SignalGenerator,
};
use passlab_core::degradation::{degrade_sampled, degrade_symbolic, tau_max};
use passlab_core::systems::{LinearSystem, QuadraticStorage, SupplyRate};

use crate::report::{
    feasible_region_csv, trace_csv, transition_system_csv, write_atomic, Certificate, Report,
};
use crate::scenario::{Context, DeltaIssMode, SignalSpec};
use crate::CliError;

pub struct CommandOpts {
    pub out_dir: PathBuf,
    pub trials: usize,
    pub nu_c: Option<f64>,
    pub rho_c: Option<f64>,
}

struct ResolvedGain {
    used: f64,
    provided: Option<f64>,
    certificate: GainCertificate,
}

impl ResolvedGain {
    /// A provided reference gain must dominate the measured peak response.
    fn consistent(&self) -> bool {
        match self.provided {
            Some(g) => g >= self.certificate.gamma_peak,
            None => true,
        }
    }
}

fn resolve_gain(
    sys: &LinearSystem,
    provided: Option<f64>,
    safety: f64,
) -> Result<ResolvedGain, CliError> {
    let grid = FrequencyGrid {
        safety,
        ..FrequencyGrid::default()
    };
    let certificate = estimate_gain_gamma(sys, &grid)?;
    Ok(ResolvedGain {
        used: provided.unwrap_or(certificate.gamma),
        provided,
        certificate,
    })
}

fn delta_iss_cert(ctx: &Context) -> Result<(DeltaIssCertificate, &'static str), CliError> {
    match ctx.delta_iss.mode {
        DeltaIssMode::Lyapunov => Ok((build_delta_iss_certificate(&ctx.controller)?, "lyapunov")),
        DeltaIssMode::Tangent => Ok((
            tangent_delta_iss_certificate(&ctx.controller, ctx.params.tau)?,
            "tangent",
        )),
        DeltaIssMode::Explicit => {
            let (c, a, b) = match (ctx.delta_iss.c, ctx.delta_iss.a, ctx.delta_iss.b) {
                (Some(c), Some(a), Some(b)) => (c, a, b),
                _ => {
                    return Err(CliError::Input(
                        "delta_iss.mode = explicit requires c, a and b".into(),
                    ))
                }
            };
            Ok((DeltaIssCertificate::new(c, a, b)?, "explicit"))
        }
    }
}

fn composed_indices(ctx: &Context) -> Result<(ClosedLoopIndices, ResolvedGain, ResolvedGain), CliError> {
    let g1 = resolve_gain(&ctx.plant, ctx.gains.gamma1, ctx.tolerances.gain_safety)?;
    let g2 = resolve_gain(&ctx.controller, ctx.gains.gamma2, ctx.tolerances.gain_safety)?;
    let plant_side = PlantSideData {
        nu: ctx.indices.nu1,
        rho: ctx.indices.rho1,
        gamma: g1.used,
    };
    let ctrl_side = ControllerSideData {
        nu: ctx.indices.nu2,
        rho: ctx.indices.rho2,
        gamma: g2.used,
        input_dim: ctx.controller.io_dim(),
        regularity: ctx.regularity,
    };
    let idx = compose_indices(&plant_side, &ctrl_side, &ctx.params, &ctx.free_params)?;
    Ok((idx, g1, g2))
}

/// The closed-loop index pair to certify: a proposed input index (default:
/// strictly below both side indices) with the largest admissible output
/// index, or a forced pair when `--rho-c` is given.
fn choose_pair(
    idx: &ClosedLoopIndices,
    opts: &CommandOpts,
) -> Result<(FeasibleIndices, bool), CliError> {
    let nu_c = opts
        .nu_c
        .unwrap_or_else(|| idx.nu1_bar.min(idx.nu2_bar) - 1.0);
    match opts.rho_c {
        Some(rho_c) => Ok((
            FeasibleIndices {
                nu_c,
                rho_c,
                psd_margins: psd_margins(idx, nu_c, rho_c),
            },
            true,
        )),
        None => Ok((feasible_nu_rho(idx, nu_c)?, false)),
    }
}

fn gain_details(g: &ResolvedGain) -> serde_json::Value {
    json!({
        "used": g.used,
        "provided": g.provided,
        "estimated": g.certificate.gamma,
        "measured_peak": g.certificate.gamma_peak,
        "peak_omega": g.certificate.peak_omega,
    })
}

pub fn run_verify(ctx: &Context, opts: &CommandOpts, report: &mut Report) -> Result<(), CliError> {
    let tol = ctx.tolerances.tol_psd;
    let v = verify_passivity_indices(&ctx.plant, &ctx.v1, ctx.indices.nu1, ctx.indices.rho1, tol)?;
    report.push(Certificate::new(
        "plant_passivity",
        v.holds,
        Some(-v.max_eigenvalue),
        json!({"nu": ctx.indices.nu1, "rho": ctx.indices.rho1, "max_eigenvalue": v.max_eigenvalue}),
    ));
    let v = verify_passivity_indices(
        &ctx.controller,
        &ctx.v2,
        ctx.indices.nu2,
        ctx.indices.rho2,
        tol,
    )?;
    report.push(Certificate::new(
        "controller_passivity",
        v.holds,
        Some(-v.max_eigenvalue),
        json!({"nu": ctx.indices.nu2, "rho": ctx.indices.rho2, "max_eigenvalue": v.max_eigenvalue}),
    ));

    let g1 = resolve_gain(&ctx.plant, ctx.gains.gamma1, ctx.tolerances.gain_safety)?;
    report.push(Certificate::new(
        "plant_rate_gain",
        g1.consistent(),
        Some(g1.used - g1.certificate.gamma_peak),
        gain_details(&g1),
    ));
    let g2 = resolve_gain(&ctx.controller, ctx.gains.gamma2, ctx.tolerances.gain_safety)?;
    report.push(Certificate::new(
        "controller_rate_gain",
        g2.consistent(),
        Some(g2.used - g2.certificate.gamma_peak),
        gain_details(&g2),
    ));

    let (cert, mode) = delta_iss_cert(ctx)?;
    let worst = spot_check_delta_iss(&ctx.controller, &cert, opts.trials, ctx.seed)?;
    report.push(Certificate::new(
        "controller_delta_iss",
        worst >= -1e-9,
        Some(worst),
        json!({"mode": mode, "c": cert.c, "a": cert.a, "b": cert.b, "trials": opts.trials}),
    ));

    // invertible feedthrough lets a forced loop hide controller states from
    // the output, so the unforced constant is the operative certificate
    let aggregate = closed_loop_aggregate(&ctx.plant, &ctx.controller, ctx.params.tau)?;
    let det_auto = compute_detectability(&aggregate.autonomous(), ctx.bound.n0)?;
    let det_forced = compute_detectability(&aggregate, ctx.bound.n0)?;
    report.push(Certificate::new(
        "loop_detectability",
        det_auto.is_valid(),
        Some(det_auto.kappa),
        json!({
            "n0": det_auto.n0,
            "kappa_autonomous": det_auto.kappa,
            "kappa_forced": det_forced.kappa,
        }),
    ));
    Ok(())
}

pub fn run_abstract(ctx: &Context, opts: &CommandOpts, report: &mut Report) -> Result<(), CliError> {
    let (cert, mode) = delta_iss_cert(ctx)?;
    let feas = feasibility_check(&cert, &ctx.params)?;
    let min_tau = solve_min_tau(&cert, ctx.params.epsilon, ctx.params.mu, ctx.params.eta)?;
    report.push(Certificate::new(
        "abstraction_feasibility",
        feas.feasible,
        Some(feas.margin),
        json!({
            "mode": mode, "c": cert.c, "a": cert.a, "b": cert.b,
            "tau": ctx.params.tau, "min_tau": min_tau,
        }),
    ));

    let sm = ctx.symbolic_controller()?;
    let check = empirical_bisim_trace_check(
        &ctx.controller,
        &sm,
        ctx.params.epsilon,
        50,
        opts.trials,
        ctx.seed,
    )?;
    report.push(Certificate::new(
        "abstraction_trace_check",
        check.counterexample.is_none(),
        Some(ctx.params.epsilon - check.max_deviation),
        json!({"max_deviation": check.max_deviation, "horizon": 50, "trials": opts.trials}),
    ));

    if let (Some(state_box), Some(input_box)) = (&ctx.state_box, &ctx.input_box) {
        let ts = build_truncated_ts(&sm, state_box, input_box)?;
        let path = opts.out_dir.join("abstraction_ts.csv");
        write_atomic(&path, transition_system_csv(&ts).as_bytes())?;
        report.push(Certificate::new(
            "abstraction_build",
            true,
            None,
            json!({
                "states": ts.state_count(),
                "labels": ts.label_count(),
                "transitions": ts.transition_count(),
                "artifact": "abstraction_ts.csv",
            }),
        ));
    }
    Ok(())
}

pub fn run_degrade(ctx: &Context, _opts: &CommandOpts, report: &mut Report) -> Result<(), CliError> {
    let g1 = resolve_gain(&ctx.plant, ctx.gains.gamma1, ctx.tolerances.gain_safety)?;
    let g2 = resolve_gain(&ctx.controller, ctx.gains.gamma2, ctx.tolerances.gain_safety)?;
    let sampled = degrade_sampled(
        ctx.indices.nu1,
        ctx.indices.rho1,
        g1.used,
        ctx.params.tau,
        ctx.free_params.lambda1,
    )?;
    let period_margin = tau_max(ctx.indices.nu1, ctx.indices.rho1, g1.used)
        .ok()
        .map(|t| t - ctx.params.tau);
    report.push(Certificate::new(
        "plant_sampled_indices",
        true,
        period_margin,
        json!({
            "nu": sampled.nu, "rho": sampled.rho, "tau": ctx.params.tau,
            "gamma": gain_details(&g1),
        }),
    ));

    let q = degrade_symbolic(
        ctx.indices.nu2,
        ctx.indices.rho2,
        g2.used,
        &ctx.params,
        ctx.controller.io_dim(),
        &ctx.regularity,
        &ctx.free_params,
    )?;
    let period_margin = tau_max(ctx.indices.nu2, ctx.indices.rho2, g2.used)
        .ok()
        .map(|t| t - ctx.params.tau);
    report.push(Certificate::new(
        "controller_symbolic_indices",
        true,
        period_margin,
        json!({
            "nu": q.nu, "rho": q.rho, "alpha": q.alpha,
            "tau": ctx.params.tau, "mu": ctx.params.mu,
            "gamma": gain_details(&g2),
        }),
    ));
    Ok(())
}

pub fn run_closedloop(
    ctx: &Context,
    opts: &CommandOpts,
    report: &mut Report,
) -> Result<(), CliError> {
    let (idx, g1, g2) = composed_indices(ctx)?;
    report.push(Certificate::new(
        "closed_loop_composition",
        true,
        None,
        json!({
            "nu1_bar": idx.nu1_bar, "rho1_bar": idx.rho1_bar,
            "nu2_hat": idx.nu2_hat, "rho2_hat": idx.rho2_hat, "alpha_hat": idx.alpha_hat,
            "nu2_bar": idx.nu2_bar, "rho2_bar": idx.rho2_bar, "alpha2_bar": idx.alpha2_bar,
            "gamma1": gain_details(&g1), "gamma2": gain_details(&g2),
        }),
    ));

    let decay = zero_input_decay_margin(&idx);
    report.push(Certificate::new(
        "zero_input_decay",
        decay.margin > 0.0,
        Some(decay.margin),
        json!({"alpha2_bar": decay.alpha2_bar}),
    ));

    let (pair, forced) = choose_pair(&idx, opts)?;
    let min_margin = pair.psd_margins.0.min(pair.psd_margins.1);
    report.push(Certificate::new(
        "closed_loop_feasible_pair",
        min_margin >= -ctx.tolerances.tol_psd,
        Some(min_margin),
        json!({
            "nu_c": pair.nu_c, "rho_c": pair.rho_c, "forced": forced,
            "margin_block1": pair.psd_margins.0, "margin_block2": pair.psd_margins.1,
        }),
    ));

    let sweep = feasible_region_sweep(&idx);
    let path = opts.out_dir.join("feasible_region.csv");
    write_atomic(&path, feasible_region_csv(&sweep).as_bytes())?;
    Ok(())
}

fn build_feedback_config(ctx: &Context) -> Result<FeedbackConfig, CliError> {
    let model = ctx.symbolic_controller()?;
    let w1: SignalGenerator = SignalSpec::build(&ctx.simulation.w1);
    let w2: SignalGenerator = SignalSpec::build(&ctx.simulation.w2);
    Ok(FeedbackConfig {
        plant: Arc::new(ctx.plant.clone()),
        controller: ControllerRealization::Symbolic {
            model,
            x0: ctx.simulation.controller_initial_lattice.clone(),
        },
        tau: ctx.params.tau,
        w1,
        w2,
        horizon: ctx.simulation.horizon,
        x1_initial: DVector::from_vec(ctx.simulation.x1_initial.clone()),
        substeps: ctx.simulation.substeps,
    })
}

pub fn run_simulate(ctx: &Context, opts: &CommandOpts, report: &mut Report) -> Result<(), CliError> {
    let cfg = build_feedback_config(ctx)?;
    let trace = simulate_closed_loop(&cfg)?;
    let sup_x1 = trace.steps.iter().map(|s| s.x1.amax()).fold(0.0, f64::max);
    let sup_xc = trace.steps.iter().map(|s| s.xc.amax()).fold(0.0, f64::max);
    report.push(Certificate::new(
        "closed_loop_simulation",
        sup_x1.is_finite() && sup_xc.is_finite(),
        None,
        json!({
            "horizon": trace.horizon(), "tau": trace.tau,
            "sup_x1": sup_x1, "sup_xc": sup_xc,
            "final_x1": trace.steps.last().map(|s| s.x1.amax()),
            "artifact": "trace.csv",
        }),
    ));

    let (idx, _, _) = composed_indices(ctx)?;
    let (pair, forced) = choose_pair(&idx, opts)?;
    let residuals = dissipation_residual_check(&trace, &idx, &ctx.v1, &ctx.v2, pair.nu_c, pair.rho_c)?;
    report.push(Certificate::new(
        "dissipation_residual",
        residuals.worst <= ctx.tolerances.residual_tol,
        Some(-residuals.worst),
        json!({
            "nu_c": pair.nu_c, "rho_c": pair.rho_c, "forced": forced,
            "worst_residual": residuals.worst,
            "tolerance": ctx.tolerances.residual_tol,
        }),
    ));

    let path = opts.out_dir.join("trace.csv");
    write_atomic(
        &path,
        trace_csv(&trace, &ctx.v1, &ctx.v2, &residuals.series).as_bytes(),
    )?;
    Ok(())
}

pub fn run_bound(ctx: &Context, opts: &CommandOpts, report: &mut Report) -> Result<(), CliError> {
    let (idx, _, _) = composed_indices(ctx)?;
    let aggregate = closed_loop_aggregate(&ctx.plant, &ctx.controller, ctx.params.tau)?;
    let det_forced = compute_detectability(&aggregate, ctx.bound.n0)?;
    let det_auto = compute_detectability(&aggregate.autonomous(), ctx.bound.n0)?;
    let n1 = ctx.plant.state_dim();
    let n2 = ctx.controller.state_dim();
    let mut p = DMatrix::<f64>::zeros(n1 + n2, n1 + n2);
    p.view_mut((0, 0), (n1, n1)).copy_from(ctx.v1.p());
    p.view_mut((n1, n1), (n2, n2)).copy_from(ctx.v2.p());
    let storage = QuadraticStorage::new(p)?;
    let b2 = ctx
        .bound
        .b2
        .unwrap_or_else(|| ctx.initial_aggregate_state().norm());

    let (pair, _) = choose_pair(&idx, opts)?;
    let pair_ok = pair.psd_margins.0.min(pair.psd_margins.1) >= -ctx.tolerances.tol_psd;
    // the per-period inequality uses sqrt(tau)-scaled signals, so the
    // detectability constant scales by tau and the input bound by sqrt(tau)
    if pair_ok && pair.nu_c > 0.0 && pair.rho_c > 0.0 && idx.alpha2_bar > 0.0
        && det_forced.is_valid()
    {
        let scaled_det = passlab_core::analysis::DetectabilityCertificate {
            n0: det_forced.n0,
            kappa: ctx.params.tau * det_forced.kappa,
        };
        let supply = SupplyRate::new(pair.nu_c, pair.rho_c, idx.alpha2_bar)?;
        let b1 = ctx.params.tau.sqrt() * ctx.bound.b1;
        let result = ultimate_bound(&supply, &scaled_det, &storage, b1, b2)?;
        report.push(Certificate::new(
            "ultimate_bound",
            true,
            Some(pair.psd_margins.0.min(pair.psd_margins.1)),
            json!({
                "path": "input_output",
                "d": result.d, "r": result.r, "v": result.v,
                "nu_c": pair.nu_c, "rho_c": pair.rho_c, "alpha": idx.alpha2_bar,
                "n0": det_forced.n0, "kappa": det_forced.kappa,
                "b1": ctx.bound.b1, "b2": b2,
            }),
        ));
        return Ok(());
    }

    let decay = zero_input_decay_margin(&idx);
    let zero_refs = matches!(ctx.simulation.w1, SignalSpec::Zero)
        && matches!(ctx.simulation.w2, SignalSpec::Zero)
        && ctx.bound.b1 == 0.0;
    if decay.margin > 0.0 && zero_refs && det_auto.is_valid() {
        let result = ultimate_bound_output_decay(
            ctx.params.tau * decay.margin,
            idx.alpha2_bar,
            &det_auto,
            &storage,
            b2,
        )?;
        report.push(Certificate::new(
            "ultimate_bound",
            true,
            Some(decay.margin),
            json!({
                "path": "output_decay",
                "d": result.d, "r": result.r, "v": result.v,
                "decay_margin": decay.margin, "alpha": idx.alpha2_bar,
                "n0": det_auto.n0, "kappa": det_auto.kappa, "b2": b2,
            }),
        ));
        return Ok(());
    }

    report.push(Certificate::new(
        "ultimate_bound",
        false,
        Some(decay.margin),
        json!({
            "path": "none",
            "reason": if zero_refs {
                "no positive decay margin and no positive certified index pair"
            } else {
                "nonzero references need a positive certified index pair"
            },
            "decay_margin": decay.margin,
            "kappa_autonomous": det_auto.kappa,
            "kappa_forced": det_forced.kappa,
            "nu_c": pair.nu_c, "rho_c": pair.rho_c,
        }),
    ));
    Ok(())
}

pub fn run_report(ctx: &Context, opts: &CommandOpts, report: &mut Report) -> Result<(), CliError> {
    run_verify(ctx, opts, report)?;
    run_abstract(ctx, opts, report)?;
    run_degrade(ctx, opts, report)?;
    run_closedloop(ctx, opts, report)?;
    run_simulate(ctx, opts, report)?;
    run_bound(ctx, opts, report)?;
    Ok(())
}
