//! Spatial operator with the point interaction, the damped three-level time
//! stepper, trajectory recording, and residual checks for the linearized
//! operator around the soliton.

use std::io::Write;
use std::ops::ControlFlow;

use crate::error::{Error, Result};
use crate::field::{self, grad_sq_raw, trapz_sq, DissipationLedger, GridSpec, State};
use crate::output::CsvWriter;
use crate::profiles::{phi_unchecked, q_deriv_unchecked, q_unchecked, spectral_constants, PhysParams};

/// Default cap on `sup |u|` beyond which a run is declared blowing up.
pub const DEFAULT_BLOWUP_CAP: f64 = 1e3;

/// Energy in the outer tenth of the domain above which a run is flagged.
pub const BOUNDARY_ENERGY_THRESHOLD: f64 = 1e-6;

/// Discretization of `-d^2/dx^2 + 1 - gamma delta_0` with homogeneous
/// Dirichlet ends:
/// `(A u)_j = (2 u_j - u_{j-1} - u_{j+1}) / h^2 + u_j`, minus `(gamma / h) u_c`
/// at the center node.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteOperator {
    pub diag: Vec<f64>,
    pub off_diag: f64,
    pub delta_correction: f64,
    center: usize,
}

pub fn build_operator(grid: &GridSpec, params: &PhysParams) -> DiscreteOperator {
    let h = grid.h();
    let mut diag = vec![2.0 / (h * h) + 1.0; grid.n()];
    let delta_correction = params.gamma() / h;
    diag[grid.center()] -= delta_correction;
    DiscreteOperator {
        diag,
        off_diag: -1.0 / (h * h),
        delta_correction,
        center: grid.center(),
    }
}

impl DiscreteOperator {
    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn center(&self) -> usize {
        self.center
    }

    /// `out = A u`; boundary rows are zero. Neighbours are summed before
    /// scaling so the result is exactly reflection-symmetric.
    pub fn apply_into(&self, u: &[f64], out: &mut [f64]) {
        let n = u.len();
        out[0] = 0.0;
        out[n - 1] = 0.0;
        for j in 1..n - 1 {
            out[j] = self.diag[j] * u[j] + self.off_diag * (u[j - 1] + u[j + 1]);
        }
    }

    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; u.len()];
        self.apply_into(u, &mut out);
        out
    }
}

/// `|u|^{p-1} u`, with an integer fast path.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Nonlinearity {
    p: f64,
    int_power: Option<i32>,
}

impl Nonlinearity {
    pub(crate) fn new(p: f64) -> Self {
        let k = p - 1.0;
        let int_power = (k.fract() == 0.0 && k < 64.0).then_some(k as i32);
        Self { p, int_power }
    }

    #[inline]
    pub(crate) fn eval(&self, u: f64) -> f64 {
        match self.int_power {
            Some(k) => u.abs().powi(k) * u,
            None => u.abs().powf(self.p - 1.0) * u,
        }
    }
}

/// Options shared by [`step`] and [`evolve`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOptions {
    pub blowup_cap: f64,
    /// `false` evolves the linear damped equation (`f = 0`).
    pub nonlinear: bool,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self {
            blowup_cap: DEFAULT_BLOWUP_CAP,
            nonlinear: true,
        }
    }
}

/// Three-level scheme
/// `(u+ - 2u + u-)/dt^2 + alpha (u+ - u-)/dt = -A u + f(u)`
/// solved node-wise for `u+`. The reported velocity at level `n` is the
/// centered difference `(u^{n+1} - u^{n-1}) / (2 dt)`, so the stepper keeps
/// one level of lookahead.
#[derive(Debug, Clone)]
pub struct Stepper<'a> {
    op: &'a DiscreteOperator,
    alpha: f64,
    dt: f64,
    nonlinearity: Option<Nonlinearity>,
    cap: f64,
    prev: Vec<f64>,
    cur: Vec<f64>,
    next: Vec<f64>,
    scratch: Vec<f64>,
    t0: f64,
    steps: u64,
}

impl<'a> Stepper<'a> {
    /// Bootstraps the lookahead level by a second-order Taylor step using
    /// `u_tt(0)` from the equation. The backward level is chosen so that the
    /// centered velocity at the initial time equals the given `v`.
    pub fn new(state: &State, dt: f64, op: &'a DiscreteOperator, params: &PhysParams, opts: StepOptions) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Precondition(format!("time step must be > 0, got {dt}")));
        }
        if state.u.len() != op.len() || state.v.len() != op.len() {
            return Err(Error::LengthMismatch {
                expected: op.len(),
                got: state.u.len().min(state.v.len()),
            });
        }
        if state.u.iter().chain(&state.v).any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { t: state.t });
        }
        let n = op.len();
        let mut s = Self {
            op,
            alpha: params.alpha(),
            dt,
            nonlinearity: opts.nonlinear.then(|| Nonlinearity::new(params.p())),
            cap: opts.blowup_cap,
            prev: vec![0.0; n],
            cur: state.u.clone(),
            next: vec![0.0; n],
            scratch: vec![0.0; n],
            t0: state.t,
            steps: 0,
        };
        s.cur[0] = 0.0;
        s.cur[n - 1] = 0.0;
        s.force_into_scratch();
        let a = s.alpha;
        for j in 1..n - 1 {
            let acc = s.scratch[j] - 2.0 * a * state.v[j];
            let drift = 0.5 * dt * dt * acc;
            s.next[j] = s.cur[j] + dt * state.v[j] + drift;
            s.prev[j] = s.cur[j] - dt * state.v[j] + drift;
        }
        s.check_next()?;
        Ok(s)
    }

    /// `scratch = -A cur + f(cur)`.
    fn force_into_scratch(&mut self) {
        self.op.apply_into(&self.cur, &mut self.scratch);
        for (r, &u) in self.scratch.iter_mut().zip(&self.cur) {
            *r = -*r;
            if let Some(f) = &self.nonlinearity {
                *r += f.eval(u);
            }
        }
        let n = self.scratch.len();
        self.scratch[0] = 0.0;
        self.scratch[n - 1] = 0.0;
    }

    fn check_next(&self) -> Result<()> {
        let mut sup = 0.0f64;
        for &x in &self.next {
            if !x.is_finite() {
                return Err(Error::NonFinite { t: self.time() + self.dt });
            }
            sup = sup.max(x.abs());
        }
        if sup > self.cap {
            return Err(Error::CapExceeded { t: self.time() + self.dt, sup });
        }
        Ok(())
    }

    pub fn time(&self) -> f64 {
        self.t0 + self.steps as f64 * self.dt
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps_taken(&self) -> u64 {
        self.steps
    }

    pub fn u(&self) -> &[f64] {
        &self.cur
    }

    /// Centered velocity at the current level.
    pub fn velocity(&self) -> Vec<f64> {
        let inv = 0.5 / self.dt;
        self.next.iter().zip(&self.prev).map(|(a, b)| (a - b) * inv).collect()
    }

    pub fn state(&self) -> State {
        State {
            u: self.cur.clone(),
            v: self.velocity(),
            t: self.time(),
        }
    }

    /// The lookahead level with a one-sided velocity; used to report the
    /// state that tripped the blowup cap.
    pub fn lookahead_state(&self) -> State {
        State {
            u: self.next.clone(),
            v: self.next.iter().zip(&self.cur).map(|(a, b)| (a - b) / self.dt).collect(),
            t: self.time() + self.dt,
        }
    }

    /// Advances one level. On error the stepper is left at the last valid
    /// level.
    pub fn advance(&mut self) -> Result<()> {
        std::mem::swap(&mut self.prev, &mut self.cur);
        std::mem::swap(&mut self.cur, &mut self.next);
        // prev <- old cur, cur <- old next, next <- old prev (overwritten)
        self.steps += 1;
        self.force_into_scratch();
        let (a, dt) = (self.alpha, self.dt);
        let lo = 1.0 - a * dt;
        let inv = 1.0 / (1.0 + a * dt);
        let n = self.cur.len();
        self.next[0] = 0.0;
        self.next[n - 1] = 0.0;
        for j in 1..n - 1 {
            self.next[j] = (2.0 * self.cur[j] - lo * self.prev[j] + dt * dt * self.scratch[j]) * inv;
        }
        self.check_next()
    }
}

/// One step of the scheme from `(u, v)` at time `t` to time `t + dt`.
pub fn step(state: &State, dt: f64, op: &DiscreteOperator, params: &PhysParams, opts: StepOptions) -> Result<State> {
    let mut s = Stepper::new(state, dt, op, params, opts)?;
    s.advance()?;
    Ok(s.state())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitReason {
    Completed,
    BlowupCap,
    NonFinite,
    BoundaryContamination,
    /// An observer asked to stop.
    Stopped,
}

impl ExitReason {
    pub fn label(&self) -> &'static str {
        match self {
            ExitReason::Completed => "completed",
            ExitReason::BlowupCap => "blowup_cap",
            ExitReason::NonFinite => "non_finite",
            ExitReason::BoundaryContamination => "boundary_contamination",
            ExitReason::Stopped => "stopped",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolveOptions {
    pub dt: f64,
    pub t_final: f64,
    /// Steps between samples (ledger rows, observer calls).
    pub sample_stride: usize,
    /// Samples between stored states; 0 stores only the first and last.
    pub snapshot_stride: usize,
    pub step: StepOptions,
    /// `None` disables the boundary monitor.
    pub boundary_threshold: Option<f64>,
}

impl EvolveOptions {
    pub fn new(dt: f64, t_final: f64) -> Self {
        Self {
            dt,
            t_final,
            sample_stride: 1,
            snapshot_stride: 1,
            step: StepOptions::default(),
            boundary_threshold: Some(BOUNDARY_ENERGY_THRESHOLD),
        }
    }
}

/// One row of the per-run scalar series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarSample {
    pub t: f64,
    pub energy: f64,
    pub h1_norm: f64,
    pub l2_v_norm: f64,
    pub u_at_0: f64,
    pub damping_integral: f64,
}

/// What an observer sees at each sample.
#[derive(Debug, Clone, Copy)]
pub struct SampleInfo<'a> {
    pub scalars: &'a ScalarSample,
    /// `int_0^t ||u||_{L^2}^2 ds`.
    pub mass_time_integral: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub sample_times: Vec<f64>,
    pub scalars: Vec<ScalarSample>,
    pub states: Vec<State>,
    pub ledger: DissipationLedger,
    pub exit: ExitReason,
    /// `sup_t ||(u, v)||_H` over the samples.
    pub sup_norm: f64,
    pub mass_time_integral: f64,
    pub final_state: State,
}

impl Trajectory {
    pub fn write_scalars_csv<W: Write>(&self, w: W, comment: Option<&str>) -> Result<()> {
        let mut csv = CsvWriter::new(w, comment, &["t", "E_gamma", "H1_norm", "L2_v_norm", "u_at_0", "damping_integral"])?;
        for s in &self.scalars {
            csv.row(&[s.t, s.energy, s.h1_norm, s.l2_v_norm, s.u_at_0, s.damping_integral])?;
        }
        Ok(())
    }
}

fn outer_energy(state: &State, grid: &GridSpec) -> f64 {
    let n = grid.n();
    let h = grid.h();
    let k = n / 20; // outer 10% of the domain: 5% on each side
    let mut e = 0.0;
    for range in [0..k.max(1), n - k.max(1)..n] {
        let (a, b) = (range.start, range.end);
        let u = &state.u[a..b];
        let v = &state.v[a..b];
        let mut s = u.iter().chain(v).map(|x| x * x).sum::<f64>() * h;
        if b - a > 1 {
            s += grad_sq_raw(u, h);
        }
        e += 0.5 * s;
    }
    e
}

/// Runs the scheme to `t_final` or an early exit. Step failures become exit
/// reasons; only invalid inputs produce `Err`.
pub fn evolve<O>(state0: &State, params: &PhysParams, grid: &GridSpec, opts: &EvolveOptions, mut observer: O) -> Result<Trajectory>
where
    O: FnMut(&State, &SampleInfo<'_>) -> ControlFlow<()>,
{
    state0.check(grid)?;
    if !(opts.t_final.is_finite() && opts.t_final >= 0.0) {
        return Err(Error::Precondition(format!("final time must be >= 0, got {}", opts.t_final)));
    }
    let op = build_operator(grid, params);
    let mut stepper = Stepper::new(state0, opts.dt, &op, params, opts.step)?;
    let h = grid.h();
    let alpha = params.alpha();
    let total_steps = (opts.t_final / opts.dt).round() as u64;
    let stride = opts.sample_stride.max(1) as u64;

    let mut traj = Trajectory {
        sample_times: Vec::new(),
        scalars: Vec::new(),
        states: Vec::new(),
        ledger: DissipationLedger::default(),
        exit: ExitReason::Completed,
        sup_norm: 0.0,
        mass_time_integral: 0.0,
        final_state: state0.clone(),
    };

    let mut damping = 0.0;
    let mut mass_integral = 0.0;
    let mut state = stepper.state();
    state.v.clone_from(&state0.v);
    let mut prev_v2 = trapz_sq(&state.v, h);
    let mut prev_u2 = trapz_sq(&state.u, h);
    let mut sample_index = 0usize;

    let mut record = |state: &State, damping: f64, mass_integral: f64, traj: &mut Trajectory, force_store: bool| -> Result<ControlFlow<()>> {
        let energy = field::energy_e_gamma(state, params, grid)?;
        let h1 = (grad_sq_raw(&state.u, h) + trapz_sq(&state.u, h)).sqrt();
        let lv = trapz_sq(&state.v, h).sqrt();
        let sample = ScalarSample {
            t: state.t,
            energy,
            h1_norm: h1,
            l2_v_norm: lv,
            u_at_0: state.u[grid.center()],
            damping_integral: damping,
        };
        traj.sup_norm = traj.sup_norm.max((h1 * h1 + lv * lv).sqrt());
        traj.sample_times.push(state.t);
        traj.scalars.push(sample);
        traj.ledger.push(state.t, energy, damping);
        let store = force_store || (opts.snapshot_stride > 0 && sample_index.is_multiple_of(opts.snapshot_stride));
        if store {
            traj.states.push(state.clone());
        }
        sample_index += 1;
        let info = SampleInfo {
            scalars: &sample,
            mass_time_integral: mass_integral,
        };
        Ok(observer(state, &info))
    };

    let mut flow = record(&state, 0.0, 0.0, &mut traj, true)?;
    let mut k = 0u64;
    while flow.is_continue() && k < total_steps {
        match stepper.advance() {
            Ok(()) => {}
            Err(Error::CapExceeded { .. }) => {
                traj.exit = ExitReason::BlowupCap;
                let last = stepper.lookahead_state();
                traj.states.push(last.clone());
                traj.final_state = last;
                traj.mass_time_integral = mass_integral;
                return Ok(traj);
            }
            Err(Error::NonFinite { .. }) => {
                traj.exit = ExitReason::NonFinite;
                traj.final_state = state;
                traj.mass_time_integral = mass_integral;
                return Ok(traj);
            }
            Err(e) => return Err(e),
        }
        k += 1;
        state = stepper.state();
        let v2 = trapz_sq(&state.v, h);
        let u2 = trapz_sq(&state.u, h);
        damping += alpha * opts.dt * (prev_v2 + v2);
        mass_integral += 0.5 * opts.dt * (prev_u2 + u2);
        prev_v2 = v2;
        prev_u2 = u2;
        if k.is_multiple_of(stride) || k == total_steps {
            let last = k == total_steps;
            flow = record(&state, damping, mass_integral, &mut traj, last)?;
            if let Some(threshold) = opts.boundary_threshold {
                if outer_energy(&state, grid) > threshold {
                    traj.exit = ExitReason::BoundaryContamination;
                    break;
                }
            }
        }
    }
    if flow.is_break() {
        traj.exit = ExitReason::Stopped;
    }
    if traj.states.last().map(|s| s.t) != Some(state.t) {
        traj.states.push(state.clone());
    }
    traj.mass_time_integral = mass_integral;
    traj.final_state = state;
    Ok(traj)
}

/// Least-squares decay rate of the linear damped flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearDecayFit {
    /// Fitted rate `kappa` in `||(u,v)(t)||_H ~ e^{-kappa t}` on `[T/2, T]`.
    pub kappa: f64,
    pub initial_norm: f64,
    pub final_norm: f64,
}

pub fn fit_linear_decay_rate(params: &PhysParams, grid: &GridSpec, u0: &[f64], t_final: f64, dt: f64) -> Result<LinearDecayFit> {
    grid.check(u0)?;
    let state0 = State::at_rest(u0.to_vec());
    let initial_norm = field::state_norm(&state0, grid)?;
    if initial_norm == 0.0 {
        return Err(Error::Precondition("degenerate decay fit: zero initial data".into()));
    }
    let mut opts = EvolveOptions::new(dt, t_final);
    opts.step.nonlinear = false;
    opts.sample_stride = ((0.1 / dt).round() as usize).max(1);
    opts.snapshot_stride = 0;
    opts.boundary_threshold = None;
    let traj = evolve(&state0, params, grid, &opts, |_, _| ControlFlow::Continue(()))?;
    let pts: Vec<(f64, f64)> = traj
        .scalars
        .iter()
        .filter(|s| s.t >= 0.5 * t_final)
        .map(|s| (s.t, (s.h1_norm * s.h1_norm + s.l2_v_norm * s.l2_v_norm).sqrt()))
        .filter(|(_, n)| *n > 0.0 && n.is_finite())
        .map(|(t, n)| (t, n.ln()))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Precondition("degenerate decay fit: fewer than two usable samples".into()));
    }
    let slope = least_squares_slope(&pts);
    let last = traj.scalars.last().expect("at least one sample");
    Ok(LinearDecayFit {
        kappa: -slope,
        initial_norm,
        final_norm: (last.h1_norm.powi(2) + last.l2_v_norm.powi(2)).sqrt(),
    })
}

pub(crate) fn least_squares_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

/// Relative residuals of the discrete linearized operator around `Q(. - z)`
/// on its negative eigenfunction and on its kernel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearizedResiduals {
    pub eig_residual: f64,
    pub kernel_residual: f64,
}

pub fn linearized_residuals(z: f64, grid: &GridSpec, params: &PhysParams) -> Result<LinearizedResiduals> {
    if z.abs() + 10.0 >= grid.half_width() {
        return Err(Error::Precondition(format!(
            "profile at z = {z} overlaps the boundary of [-{0}, {0}]",
            grid.half_width()
        )));
    }
    let p = params.p();
    let free = params.with_gamma(0.0)?;
    let op = build_operator(grid, &free);
    let nu2 = spectral_constants(params).nu.powi(2);
    let potential = grid.sample(|x| p * q_unchecked(x - z, p).powf(p - 1.0));
    let phi = grid.sample(|x| phi_unchecked(x - z, p));
    let dq = grid.sample(|x| q_deriv_unchecked(x - z, p));
    let h = grid.h();
    let residual = |f: &[f64], shift: f64| {
        let mut r = op.apply(f);
        for j in 0..r.len() {
            r[j] += (shift - potential[j]) * f[j];
        }
        let n = r.len();
        r[0] = 0.0;
        r[n - 1] = 0.0;
        (trapz_sq(&r, h) / trapz_sq(f, h)).sqrt()
    };
    Ok(LinearizedResiduals {
        eig_residual: residual(&phi, nu2),
        kernel_residual: residual(&dq, 0.0),
    })
}
