//! Drivers: certified decay/blowup classification, bisection shooting on the
//! family `e^lambda (Q(. - z) + varsigma Q(. + z))`, center tracking, and the
//! scaling curve.

use std::ops::ControlFlow;

use crate::error::{Error, Result};
use crate::evolution::{evolve, least_squares_slope, EvolveOptions, ExitReason, ScalarSample, StepOptions, Trajectory};
use crate::field::{self, GridSpec, State};
use crate::modulation::{decompose, fit_center, predicted_zdot, ModulationConfig, ModulationFrame, ReducedOdeReport, Reference};
use crate::profiles::{ground_state_action, ln_q, pinned_profile_action, PhysParams};
use crate::quadrature::integrate;

pub const DEFAULT_CERT_MARGIN: f64 = 2e-3;
pub const DEFAULT_T_MAX: f64 = 200.0;
pub const DEFAULT_BISECTION_TOL: f64 = 1e-10;
/// Frames with `||(eps, eta)||_H` above this are outside the tracking window.
pub const TRACK_WINDOW_RADIUS: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Decays,
    BlowsUp,
    Undetermined,
}

impl Classification {
    pub fn label(&self) -> &'static str {
        match self {
            Classification::Decays => "decays",
            Classification::BlowsUp => "blows_up",
            Classification::Undetermined => "undetermined",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Symmetry {
    Even,
    None,
}

impl Symmetry {
    pub fn label(&self) -> &'static str {
        match self {
            Symmetry::Even => "even",
            Symmetry::None => "none",
        }
    }
}

/// Ground-state level over all of `H^1`.
pub fn level_n(params: &PhysParams) -> Result<f64> {
    if params.gamma() >= 0.0 {
        pinned_profile_action(params)
    } else {
        ground_state_action(params.p())
    }
}

/// Ground-state level over even functions.
pub fn level_r(params: &PhysParams) -> Result<f64> {
    if params.gamma() > -2.0 {
        pinned_profile_action(params)
    } else {
        Ok(2.0 * ground_state_action(params.p())?)
    }
}

pub fn level_for(symmetry: Symmetry, params: &PhysParams) -> Result<f64> {
    match symmetry {
        Symmetry::Even => level_r(params),
        Symmetry::None => level_n(params),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Certificate {
    pub e_gamma: f64,
    pub k_gamma: f64,
    pub level_used: f64,
    pub symmetry: Symmetry,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySummary {
    pub exit: ExitReason,
    pub t_end: f64,
    pub sup_norm: f64,
    pub final_norm: f64,
    pub t_max: f64,
    /// Boundary monitor fired before any certificate.
    pub boundary_flag: bool,
    pub scalars: Vec<ScalarSample>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShotOutcome {
    pub classification: Classification,
    /// `NaN` when no certificate fired.
    pub certificate_time: f64,
    pub certificate: Option<Certificate>,
    pub summary: TrajectorySummary,
    /// State at the certificate time, kept for later confirmation runs.
    pub certified_state: Option<State>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassifyOptions {
    pub dt: f64,
    pub t_max: f64,
    pub symmetry: Symmetry,
    pub margin: f64,
    /// Steps between certificate checks.
    pub check_stride: usize,
    pub blowup_cap: f64,
}

impl ClassifyOptions {
    pub fn new(dt: f64, t_max: f64, symmetry: Symmetry) -> Self {
        Self {
            dt,
            t_max,
            symmetry,
            margin: DEFAULT_CERT_MARGIN,
            check_stride: 4,
            blowup_cap: crate::evolution::DEFAULT_BLOWUP_CAP,
        }
    }
}

fn is_even(u: &[f64]) -> bool {
    let scale = u.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
    u.iter().zip(u.iter().rev()).all(|(a, b)| (a - b).abs() <= 1e-12 * scale)
}

/// Evolves `state0` and stops at the first certificate: `E < level - margin`
/// with `K >= 0` (decay) or `K < 0` (blowup, then run on until the cap or a
/// non-finite value confirms it).
pub fn classify_trajectory(state0: &State, params: &PhysParams, grid: &GridSpec, opts: &ClassifyOptions) -> Result<ShotOutcome> {
    state0.check(grid)?;
    if opts.symmetry == Symmetry::Even && !(is_even(&state0.u) && is_even(&state0.v)) {
        return Err(Error::Precondition("even certificate requested for a non-even state".into()));
    }
    let level = level_for(opts.symmetry, params)?;
    let threshold = level - opts.margin;
    let mut ev = EvolveOptions::new(opts.dt, opts.t_max);
    ev.sample_stride = opts.check_stride.max(1);
    ev.snapshot_stride = 0;
    ev.step = StepOptions {
        blowup_cap: opts.blowup_cap,
        nonlinear: true,
    };

    let mut cert: Option<(f64, Certificate, State)> = None;
    let mut stopped_for_decay = false;
    let mut failure: Option<Error> = None;
    let traj = evolve(state0, params, grid, &ev, |state, info| {
        if cert.is_some() {
            return ControlFlow::Continue(());
        }
        let e = info.scalars.energy;
        if e < threshold {
            let k = match field::functional_k_gamma(&state.u, params, grid) {
                Ok(k) => k,
                Err(err) => {
                    failure = Some(err);
                    return ControlFlow::Break(());
                }
            };
            let c = Certificate {
                e_gamma: e,
                k_gamma: k,
                level_used: level,
                symmetry: opts.symmetry,
            };
            cert = Some((state.t, c, state.clone()));
            if k >= 0.0 {
                stopped_for_decay = true;
                return ControlFlow::Break(());
            }
        }
        ControlFlow::Continue(())
    })?;
    if let Some(err) = failure {
        return Err(err);
    }
    Ok(outcome_from(traj, cert, stopped_for_decay, opts.t_max))
}

fn outcome_from(traj: Trajectory, cert: Option<(f64, Certificate, State)>, stopped_for_decay: bool, t_max: f64) -> ShotOutcome {
    let final_norm = traj
        .scalars
        .last()
        .map(|s| (s.h1_norm * s.h1_norm + s.l2_v_norm * s.l2_v_norm).sqrt())
        .unwrap_or(f64::NAN);
    let blew_up = matches!(traj.exit, ExitReason::BlowupCap | ExitReason::NonFinite);
    let summary = TrajectorySummary {
        exit: traj.exit,
        t_end: traj.final_state.t,
        sup_norm: traj.sup_norm,
        final_norm,
        t_max,
        boundary_flag: traj.exit == ExitReason::BoundaryContamination && (cert.is_none() || !stopped_for_decay),
        scalars: traj.scalars,
    };
    let classification = match &cert {
        Some((_, c, _)) if c.k_gamma >= 0.0 && stopped_for_decay => Classification::Decays,
        Some((_, c, _)) if c.k_gamma < 0.0 && blew_up => Classification::BlowsUp,
        _ => Classification::Undetermined,
    };
    let (certificate_time, certificate, certified_state) = match cert {
        Some((t, c, s)) => (t, Some(c), Some(s)),
        None => (f64::NAN, None, None),
    };
    ShotOutcome {
        classification,
        certificate_time,
        certificate,
        summary,
        certified_state,
    }
}

/// Continues a decay-certified state for `extra` time units and returns the
/// final `H` norm.
pub fn confirm_decay(outcome: &ShotOutcome, params: &PhysParams, grid: &GridSpec, dt: f64, extra: f64) -> Result<f64> {
    let state = outcome
        .certified_state
        .as_ref()
        .filter(|_| outcome.classification == Classification::Decays)
        .ok_or_else(|| Error::Precondition("outcome carries no decay certificate".into()))?;
    let mut ev = EvolveOptions::new(dt, extra);
    ev.sample_stride = 40;
    ev.snapshot_stride = 0;
    let traj = evolve(state, params, grid, &ev, |_, _| ControlFlow::Continue(()))?;
    field::state_norm(&traj.final_state, grid)
}

fn check_family(lambda: f64, varsigma: u8, z: f64, grid: &GridSpec) -> Result<()> {
    if varsigma > 1 {
        return Err(Error::Parameter(format!("varsigma must be 0 or 1, got {varsigma}")));
    }
    if !(-1.0..=1.0).contains(&lambda) {
        return Err(Error::Parameter(format!("lambda must lie in [-1, 1], got {lambda}")));
    }
    if !(z.is_finite() && z >= 0.0) {
        return Err(Error::Parameter(format!("z must be >= 0, got {z}")));
    }
    if z + 10.0 >= grid.half_width() {
        return Err(Error::Grid(format!(
            "profile at z = {z} overlaps the boundary of [-{0}, {0}]",
            grid.half_width()
        )));
    }
    Ok(())
}

fn family_profile(x: f64, varsigma: u8, z: f64, p: f64) -> f64 {
    let mut q = ln_q(x - z, p).exp();
    if varsigma == 1 {
        q += ln_q(x + z, p).exp();
    }
    q
}

/// `(e^lambda (Q(. - z) + varsigma Q(. + z)), 0)`.
pub fn initial_family(lambda: f64, varsigma: u8, z: f64, grid: &GridSpec, params: &PhysParams) -> Result<State> {
    check_family(lambda, varsigma, z, grid)?;
    let p = params.p();
    let k = lambda.exp();
    let mut u = grid.sample(|x| k * family_profile(x, varsigma, z, p));
    if varsigma == 1 {
        // exact evenness: average with the mirror image
        let n = u.len();
        for j in 0..n / 2 {
            let m = 0.5 * (u[j] + u[n - 1 - j]);
            u[j] = m;
            u[n - 1 - j] = m;
        }
    }
    Ok(State::at_rest(u))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalingCurve {
    pub x_value: f64,
    pub x_prime: f64,
    pub x_double_prime: f64,
}

/// Norms of `Q_varsigma` entering the scaling curve: `||.||_{H^1}^2`,
/// `||.||_{p+1}^{p+1}`, and the trace `|Q_varsigma(0)|^2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FamilyNorms {
    pub h1_sq: f64,
    pub lp_power: f64,
    pub trace_sq: f64,
}

pub fn family_norms(varsigma: u8, z: f64, params: &PhysParams, grid: &GridSpec) -> Result<FamilyNorms> {
    check_family(0.0, varsigma, z, grid)?;
    let p = params.p();
    let b = 0.5 * (p - 1.0);
    let big_l = grid.half_width();
    let deriv = |x: f64| {
        let mut d = -ln_q(x - z, p).exp() * (b * (x - z)).tanh();
        if varsigma == 1 {
            d -= ln_q(x + z, p).exp() * (b * (x + z)).tanh();
        }
        d
    };
    let h1_sq = integrate(
        |x| {
            let q = family_profile(x, varsigma, z, p);
            let d = deriv(x);
            q * q + d * d
        },
        -big_l,
        big_l,
    );
    let lp_power = integrate(|x| family_profile(x, varsigma, z, p).powf(p + 1.0), -big_l, big_l);
    let q0 = family_profile(0.0, varsigma, z, p);
    Ok(FamilyNorms {
        h1_sq,
        lp_power,
        trace_sq: q0 * q0,
    })
}

/// `x(lambda) = J_gamma(e^lambda Q_varsigma)` and its first two derivatives.
pub fn scaling_curve(lambda: f64, varsigma: u8, z: f64, params: &PhysParams, grid: &GridSpec) -> Result<ScalingCurve> {
    check_family(lambda, varsigma, z, grid)?;
    let n = family_norms(varsigma, z, params, grid)?;
    Ok(scaling_curve_from(lambda, &n, params))
}

pub fn scaling_curve_from(lambda: f64, n: &FamilyNorms, params: &PhysParams) -> ScalingCurve {
    let p = params.p();
    let g = params.gamma();
    let e2 = (2.0 * lambda).exp();
    let ep = ((p + 1.0) * lambda).exp();
    ScalingCurve {
        x_value: 0.5 * e2 * n.h1_sq - ep * n.lp_power / (p + 1.0) - 0.5 * g * e2 * n.trace_sq,
        x_prime: e2 * n.h1_sq - ep * n.lp_power - g * e2 * n.trace_sq,
        x_double_prime: 2.0 * e2 * n.h1_sq - (p + 1.0) * ep * n.lp_power - 2.0 * g * e2 * n.trace_sq,
    }
}

/// Inputs of a bisection run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShootOptions {
    pub varsigma: u8,
    pub z: f64,
    /// Overall sign of the family.
    pub sign: i8,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub tol: f64,
    pub classify: ClassifyOptions,
    /// Safety cap on the number of bisection probes.
    pub max_probes: usize,
}

impl ShootOptions {
    pub fn new(varsigma: u8, z: f64, dt: f64) -> Self {
        let symmetry = if varsigma == 1 { Symmetry::Even } else { Symmetry::None };
        Self {
            varsigma,
            z,
            sign: 1,
            lambda_lo: -0.3,
            lambda_hi: 0.3,
            tol: DEFAULT_BISECTION_TOL,
            classify: ClassifyOptions::new(dt, DEFAULT_T_MAX, symmetry),
            max_probes: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Probe {
    pub lambda: f64,
    pub outcome: ShotOutcome,
    /// The probe was re-run with a doubled horizon.
    pub extended: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdResult {
    pub lambda_star: f64,
    pub bracket: (f64, f64),
    pub bracket_width: f64,
    /// Classification at the lower end of the final bracket.
    pub low_side: Classification,
    pub probes: Vec<Probe>,
    pub converged: bool,
    /// Every decaying probe lies below every blowing-up probe (or above, if
    /// the ends were swapped).
    pub monotone: bool,
}

impl ThresholdResult {
    pub fn probe_count(&self) -> usize {
        self.probes.len()
    }
}

fn run_probe(lambda: f64, opts: &ShootOptions, params: &PhysParams, grid: &GridSpec) -> Result<Probe> {
    let mut s = initial_family(lambda, opts.varsigma, opts.z, grid, params)?;
    if opts.sign < 0 {
        s = s.negated();
    }
    let outcome = classify_trajectory(&s, params, grid, &opts.classify)?;
    if outcome.classification != Classification::Undetermined || outcome.summary.boundary_flag {
        return Ok(Probe {
            lambda,
            outcome,
            extended: false,
        });
    }
    let mut longer = opts.classify;
    longer.t_max *= 2.0;
    Ok(Probe {
        lambda,
        outcome: classify_trajectory(&s, params, grid, &longer)?,
        extended: true,
    })
}

/// Bisection on `lambda` between a decaying and a blowing-up member.
pub fn bisect_threshold(params: &PhysParams, grid: &GridSpec, opts: &ShootOptions) -> Result<ThresholdResult> {
    if opts.varsigma == 0 && params.gamma() >= 0.0 {
        return Err(Error::Precondition("single-soliton shooting needs gamma < 0".into()));
    }
    if opts.varsigma == 1 && params.gamma() > -2.0 {
        return Err(Error::Precondition("even-pair shooting needs gamma <= -2".into()));
    }
    if opts.sign != 1 && opts.sign != -1 {
        return Err(Error::Parameter(format!("sign must be +1 or -1, got {}", opts.sign)));
    }
    if !(opts.lambda_lo < opts.lambda_hi) {
        return Err(Error::Bracket(format!("empty bracket [{}, {}]", opts.lambda_lo, opts.lambda_hi)));
    }
    if !(opts.tol > 0.0) {
        return Err(Error::Parameter(format!("tolerance must be > 0, got {}", opts.tol)));
    }
    let (lo, hi) = rayon::join(
        || run_probe(opts.lambda_lo, opts, params, grid),
        || run_probe(opts.lambda_hi, opts, params, grid),
    );
    let (lo, hi) = (lo?, hi?);
    let (c_lo, c_hi) = (lo.outcome.classification, hi.outcome.classification);
    let valid = matches!(
        (c_lo, c_hi),
        (Classification::Decays, Classification::BlowsUp) | (Classification::BlowsUp, Classification::Decays)
    );
    if !valid {
        return Err(Error::Bracket(format!(
            "endpoints classify as {} and {}; need one decaying and one blowing-up end",
            c_lo.label(),
            c_hi.label()
        )));
    }
    let mut a = opts.lambda_lo;
    let mut b = opts.lambda_hi;
    let mut probes = vec![lo, hi];
    let mut converged = true;
    while b - a > opts.tol {
        if probes.len() >= opts.max_probes {
            converged = false;
            break;
        }
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let probe = run_probe(m, opts, params, grid)?;
        let c = probe.outcome.classification;
        probes.push(probe);
        if c == c_lo {
            a = m;
        } else if c == c_hi {
            b = m;
        } else {
            converged = false;
            break;
        }
    }
    let monotone = {
        let decays = probes.iter().filter(|p| p.outcome.classification == Classification::Decays).map(|p| p.lambda);
        let blows = probes.iter().filter(|p| p.outcome.classification == Classification::BlowsUp).map(|p| p.lambda);
        if c_lo == Classification::Decays {
            decays.fold(f64::NEG_INFINITY, f64::max) < blows.fold(f64::INFINITY, f64::min)
        } else {
            blows.fold(f64::NEG_INFINITY, f64::max) < decays.fold(f64::INFINITY, f64::min)
        }
    };
    Ok(ThresholdResult {
        lambda_star: 0.5 * (a + b),
        bracket: (a, b),
        bracket_width: b - a,
        low_side: c_lo,
        probes,
        converged,
        monotone,
    })
}

/// Summary of a tracking run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrackReport {
    pub frames: Vec<ModulationFrame>,
    pub reports: Vec<ReducedOdeReport>,
    /// Index range `[start, end)` of the longest run of frames with
    /// `||(eps, eta)||_H <= 0.05`.
    pub window: (usize, usize),
    /// `sup (z - 1/2 log max(t, 1))` over the window.
    pub sup_half_log: f64,
    /// The maximum of `z - 1/2 log max(t, 1)` over the final half of the
    /// window does not exceed its value at the start of that half.
    pub half_log_nonincreasing: bool,
    /// Affine slope of `e^{2z}` against `t` over the window.
    pub e2z_slope: Option<f64>,
    /// Frames in the window where `e^{-2z} >= 10 ||(eps, eta)||_H^2`.
    pub dominated_frames: usize,
    /// Worst relative gap over the dominated frames.
    pub worst_dominated_gap: Option<f64>,
    /// `min (G + L a_+^2) / ||(eps, eta)||_H^2` over the window.
    pub sandwich_constant: Option<f64>,
    /// `max |a_+| / sqrt(G + e^{-2z})` over the window.
    pub unstable_ratio: Option<f64>,
    /// Fitting stopped at a frame that left the tube.
    pub ended_out_of_tube: bool,
    pub empty: bool,
}

impl TrackReport {
    pub fn window_frames(&self) -> &[ModulationFrame] {
        &self.frames[self.window.0..self.window.1]
    }
}

/// Fits `z` on each frame (warm-started from the previous one), decomposes,
/// and compares the measured `z'` with the reduced ODE.
pub fn track_center(states: &[State], r: Reference, z_guess: f64, params: &PhysParams, grid: &GridSpec, cfg: &ModulationConfig) -> Result<TrackReport> {
    let mut frames = Vec::new();
    let mut guess = z_guess;
    let mut ended_out_of_tube = false;
    for s in states {
        match fit_center(s, r, guess, params, grid, cfg) {
            Ok(z) => {
                frames.push(decompose(s, z, r, params, grid, cfg)?);
                guess = z;
            }
            Err(Error::OutOfTube { .. } | Error::NoConvergence { .. } | Error::Precondition(_)) => {
                ended_out_of_tube = true;
                break;
            }
            Err(e) => return Err(e),
        }
    }
    let mut reports = Vec::with_capacity(frames.len());
    for (i, f) in frames.iter().enumerate() {
        let measured = if frames.len() < 2 {
            f64::NAN
        } else if i == 0 {
            (frames[1].z - frames[0].z) / (frames[1].t - frames[0].t)
        } else if i + 1 == frames.len() {
            (frames[i].z - frames[i - 1].z) / (frames[i].t - frames[i - 1].t)
        } else {
            (frames[i + 1].z - frames[i - 1].z) / (frames[i + 1].t - frames[i - 1].t)
        };
        reports.push(predicted_zdot(f, params, grid)?.with_measured(measured));
    }

    // longest run inside the window radius
    let mut window = (0, 0);
    let mut start = None;
    for i in 0..=frames.len() {
        let inside = i < frames.len() && frames[i].eps_norm_h <= TRACK_WINDOW_RADIUS;
        match (inside, start) {
            (true, None) => start = Some(i),
            (false, Some(s0)) => {
                if i - s0 > window.1 - window.0 {
                    window = (s0, i);
                }
                start = None;
            }
            _ => {}
        }
    }
    let wf = &frames[window.0..window.1];
    let wr = &reports[window.0..window.1];
    let empty = wf.is_empty();
    let excess: Vec<f64> = wf.iter().map(|f| f.z - 0.5 * f.t.max(1.0).ln()).collect();
    let sup_half_log = excess.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let half_log_nonincreasing = if excess.len() >= 2 {
        let mid = excess.len() / 2;
        let tail_max = excess[mid..].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        tail_max <= excess[mid]
    } else {
        false
    };
    let e2z_slope = (wf.len() >= 2).then(|| least_squares_slope(&wf.iter().map(|f| (f.t, (2.0 * f.z).exp())).collect::<Vec<_>>()));
    let dominated: Vec<f64> = wf
        .iter()
        .zip(wr)
        .filter(|(f, r)| (-2.0 * f.z).exp() >= 10.0 * f.eps_norm_h * f.eps_norm_h && r.relative_gap.is_finite())
        .map(|(_, r)| r.relative_gap)
        .collect();
    let sandwich_constant = wf
        .iter()
        .filter(|f| f.eps_norm_h > 0.0)
        .map(|f| (f.script_g + cfg.l_weight * f.a_plus * f.a_plus) / (f.eps_norm_h * f.eps_norm_h))
        .reduce(f64::min);
    let unstable_ratio = wf
        .iter()
        .filter_map(|f| {
            let d = f.script_g + (-2.0 * f.z).exp();
            (d > 0.0).then(|| f.a_plus.abs() / d.sqrt())
        })
        .reduce(f64::max);
    Ok(TrackReport {
        dominated_frames: dominated.len(),
        worst_dominated_gap: dominated.into_iter().reduce(f64::max),
        frames,
        reports,
        window,
        sup_half_log: if empty { f64::NAN } else { sup_half_log },
        half_log_nonincreasing,
        e2z_slope,
        sandwich_constant,
        unstable_ratio,
        ended_out_of_tube,
        empty,
    })
}

/// Evolves `state0` storing a state every `frame_stride` steps, for use with
/// [`track_center`].
pub fn record_frames(state0: &State, params: &PhysParams, grid: &GridSpec, dt: f64, t_final: f64, frame_stride: usize) -> Result<Trajectory> {
    let mut ev = EvolveOptions::new(dt, t_final);
    ev.sample_stride = frame_stride.max(1);
    ev.snapshot_stride = 1;
    evolve(state0, params, grid, &ev, |_, _| ControlFlow::Continue(()))
}
