//! Modulation analysis near one soliton (`sigma = 0`) or an even pair
//! (`sigma = 1`): the center is fixed by the orthogonality condition
//! `int (v + 2 alpha (u - sign (Q(. - z) + sigma Q(. + z)))) Q'(. - z) = 0`,
//! and the residual is projected on the unstable, stable, and damped
//! translation modes of the linearized flow.

use std::io::Write;

use crate::error::{Error, Result};
use crate::evolution::least_squares_slope;
use crate::field::{grad_sq_raw, trapz_dot, trapz_sq, GridSpec, State};
use crate::output::CsvWriter;
use crate::profiles::{ln_q, phi_norm_sq, phi_unchecked, q_deriv_norm_sq, spectral_constants, PhysParams};

pub const DEFAULT_TUBE_RADIUS: f64 = 0.3;
pub const DEFAULT_L_WEIGHT: f64 = 100.0;
pub const NEWTON_TOLERANCE: f64 = 1e-10;
pub const NEWTON_MAX_ITERATIONS: usize = 50;

/// Tunables of the decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModulationConfig {
    /// Shift `mu` of the weighted energy; must lie in `(0, 2 alpha)`.
    pub mu: f64,
    /// Weight on `a_-^2 + a_0^2` in the Lyapunov functional.
    pub l_weight: f64,
    pub tube_radius: f64,
}

impl ModulationConfig {
    /// `mu = 0.1 alpha`, `L = 100`, tube radius 0.3.
    pub fn for_params(params: &PhysParams) -> Self {
        Self {
            mu: 0.1 * params.alpha(),
            l_weight: DEFAULT_L_WEIGHT,
            tube_radius: DEFAULT_TUBE_RADIUS,
        }
    }
}

/// Which reference configuration is subtracted.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Reference {
    /// 0: single soliton at `z`; 1: even pair at `+-z`.
    pub sigma: u8,
    /// Overall sign, `+1` or `-1`.
    pub sign: i8,
}

impl Reference {
    pub fn new(sigma: u8, sign: i8) -> Result<Self> {
        if sigma > 1 {
            return Err(Error::Parameter(format!("sigma must be 0 or 1, got {sigma}")));
        }
        if sign != 1 && sign != -1 {
            return Err(Error::Parameter(format!("sign must be +1 or -1, got {sign}")));
        }
        Ok(Self { sigma, sign })
    }

    pub fn single() -> Self {
        Self { sigma: 0, sign: 1 }
    }

    pub fn even_pair() -> Self {
        Self { sigma: 1, sign: 1 }
    }

    fn sigma_f(&self) -> f64 {
        self.sigma as f64
    }

    fn sign_f(&self) -> f64 {
        self.sign as f64
    }
}

/// Profile samples around the right center `z`.
struct Shifted {
    q_plus: Vec<f64>,
    dq_plus: Vec<f64>,
    d2q_plus: Vec<f64>,
    q_minus: Vec<f64>,
    dq_minus: Vec<f64>,
}

fn shifted(grid: &GridSpec, p: f64, z: f64, sigma: bool) -> Shifted {
    let n = grid.n();
    let b = 0.5 * (p - 1.0);
    let mut s = Shifted {
        q_plus: vec![0.0; n],
        dq_plus: vec![0.0; n],
        d2q_plus: vec![0.0; n],
        q_minus: vec![0.0; n],
        dq_minus: vec![0.0; n],
    };
    for j in 0..n {
        let x = grid.x(j);
        let y = x - z;
        let lq = ln_q(y, p);
        let q = lq.exp();
        s.q_plus[j] = q;
        s.dq_plus[j] = -q * (b * y).tanh();
        s.d2q_plus[j] = q - (p * lq).exp();
        if sigma {
            let y = x + z;
            let q = ln_q(y, p).exp();
            s.q_minus[j] = q;
            s.dq_minus[j] = -q * (b * y).tanh();
        }
    }
    s
}

/// Value and derivative in `z` of the orthogonality functional.
fn orthogonality_with_derivative(state: &State, z: f64, r: Reference, params: &PhysParams, grid: &GridSpec) -> (f64, f64) {
    let s = shifted(grid, params.p(), z, r.sigma == 1);
    let (two_a, sg, sm) = (2.0 * params.alpha(), r.sign_f(), r.sigma_f());
    let n = grid.n();
    let mut integrand = vec![0.0; n];
    let mut deriv = vec![0.0; n];
    for j in 0..n {
        let w = state.v[j] + two_a * (state.u[j] - sg * (s.q_plus[j] + sm * s.q_minus[j]));
        integrand[j] = w * s.dq_plus[j];
        deriv[j] = two_a * sg * (s.dq_plus[j] - sm * s.dq_minus[j]) * s.dq_plus[j] - w * s.d2q_plus[j];
    }
    let h = grid.h();
    let ones = vec![1.0; n];
    (trapz_dot(&integrand, &ones, h), trapz_dot(&deriv, &ones, h))
}

/// The orthogonality functional `G(z)`; its root defines the center.
pub fn orthogonality(state: &State, z: f64, r: Reference, params: &PhysParams, grid: &GridSpec) -> Result<f64> {
    state.check(grid)?;
    Ok(orthogonality_with_derivative(state, z, r, params, grid).0)
}

/// Newton iteration for the modulated center.
pub fn fit_center(state: &State, r: Reference, z_guess: f64, params: &PhysParams, grid: &GridSpec, cfg: &ModulationConfig) -> Result<f64> {
    state.check(grid)?;
    if r.sigma == 1 && z_guess <= 2.0 {
        return Err(Error::Precondition(format!("pair fit needs z_guess > 2, got {z_guess}")));
    }
    let mut z = z_guess;
    let mut g = f64::INFINITY;
    let mut converged = false;
    for _ in 0..NEWTON_MAX_ITERATIONS {
        let (val, d) = orthogonality_with_derivative(state, z, r, params, grid);
        g = val;
        if g.abs() <= NEWTON_TOLERANCE {
            converged = true;
            break;
        }
        if d == 0.0 || !d.is_finite() {
            break;
        }
        let dz = (g / d).clamp(-0.25, 0.25);
        z -= dz;
    }
    if !converged {
        return Err(Error::NoConvergence {
            iterations: NEWTON_MAX_ITERATIONS,
            residual: g.abs(),
        });
    }
    if (z - z_guess).abs() > cfg.tube_radius {
        return Err(Error::OutOfTube {
            residual: (z - z_guess).abs(),
            radius: cfg.tube_radius,
        });
    }
    let res = residual_norm(state, z, r, params, grid);
    if res > cfg.tube_radius {
        return Err(Error::OutOfTube {
            residual: res,
            radius: cfg.tube_radius,
        });
    }
    Ok(z)
}

fn residual_eps(state: &State, z: f64, r: Reference, params: &PhysParams, grid: &GridSpec) -> Vec<f64> {
    let p = params.p();
    let (sg, sm) = (r.sign_f(), r.sigma_f());
    (0..grid.n())
        .map(|j| {
            let x = grid.x(j);
            let mut reference = ln_q(x - z, p).exp();
            if r.sigma == 1 {
                reference += sm * ln_q(x + z, p).exp();
            }
            state.u[j] - sg * reference
        })
        .collect()
}

/// `||(eps, eta)||_H` for the reference at `z`.
pub fn residual_norm(state: &State, z: f64, r: Reference, params: &PhysParams, grid: &GridSpec) -> f64 {
    let eps = residual_eps(state, z, r, params, grid);
    let h = grid.h();
    (grad_sq_raw(&eps, h) + trapz_sq(&eps, h) + trapz_sq(&state.v, h)).sqrt()
}

/// Decomposition of a state around the modulated reference.
#[derive(Debug, Clone, PartialEq)]
pub struct ModulationFrame {
    pub t: f64,
    pub sigma: u8,
    pub sign: i8,
    pub z: f64,
    pub eps: Vec<f64>,
    pub eta: Vec<f64>,
    /// `u(0)` of the full field.
    pub u_at_0: f64,
    pub a_plus: f64,
    pub a_minus: f64,
    pub a_zero: f64,
    pub script_e: f64,
    pub script_g: f64,
    pub eps_norm_h: f64,
    /// `int eps phi_+` and `int eta phi_+`.
    pub eps_phi: f64,
    pub eta_phi: f64,
}

impl ModulationFrame {
    pub fn reference(&self) -> Reference {
        Reference {
            sigma: self.sigma,
            sign: self.sign,
        }
    }

    pub fn eps_at_0(&self, grid: &GridSpec) -> f64 {
        self.eps[grid.center()]
    }
}

pub fn decompose(state: &State, z: f64, r: Reference, params: &PhysParams, grid: &GridSpec, cfg: &ModulationConfig) -> Result<ModulationFrame> {
    state.check(grid)?;
    let p = params.p();
    let h = grid.h();
    let sc = spectral_constants(params);
    let eps = residual_eps(state, z, r, params, grid);
    let eta = state.v.clone();
    let phi = grid.sample(|x| phi_unchecked(x - z, p));
    let b = 0.5 * (p - 1.0);
    let dq = grid.sample(|x| -ln_q(x - z, p).exp() * (b * (x - z)).tanh());
    let eps_phi = trapz_dot(&eps, &phi, h);
    let eta_phi = trapz_dot(&eta, &phi, h);
    let a_plus = eta_phi - sc.nu_minus * eps_phi;
    let a_minus = eta_phi - sc.nu_plus * eps_phi;
    let a_zero = trapz_dot(&eta, &dq, h);
    let u_at_0 = state.u[grid.center()];
    let script_e = weighted_energy(&eps, &eta, u_at_0, z, r, cfg.mu, params, grid);
    let eps_norm_h = (grad_sq_raw(&eps, h) + trapz_sq(&eps, h) + trapz_sq(&eta, h)).sqrt();
    Ok(ModulationFrame {
        t: state.t,
        sigma: r.sigma,
        sign: r.sign,
        z,
        eps,
        eta,
        u_at_0,
        a_plus,
        a_minus,
        a_zero,
        script_e,
        script_g: script_e + cfg.l_weight * (a_minus * a_minus + a_zero * a_zero),
        eps_norm_h,
        eps_phi,
        eta_phi,
    })
}

/// Weighted residual energy with shift `mu` and `rho = 2 alpha - mu`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn weighted_energy(eps: &[f64], eta: &[f64], u_at_0: f64, z: f64, r: Reference, mu: f64, params: &PhysParams, grid: &GridSpec) -> f64 {
    let p = params.p();
    let h = grid.h();
    let rho = 2.0 * params.alpha() - mu;
    let n = grid.n();
    let mut density = vec![0.0; n];
    for j in 0..n {
        let x = grid.x(j);
        let mut pot = p * ((p - 1.0) * ln_q(x - z, p)).exp();
        if r.sigma == 1 {
            pot += p * ((p - 1.0) * ln_q(x + z, p)).exp();
        }
        let e = eps[j];
        let w = eta[j] + mu * e;
        density[j] = (1.0 - rho * mu) * e * e + w * w - pot * e * e;
    }
    let ones = vec![1.0; n];
    0.5 * (grad_sq_raw(eps, h) + trapz_dot(&density, &ones, h)) - 0.5 * params.gamma() * u_at_0 * u_at_0
}

/// Weighted residual energy of a frame for an explicit `mu`.
pub fn script_e(frame: &ModulationFrame, mu: f64, params: &PhysParams, grid: &GridSpec) -> Result<f64> {
    if !(mu > 0.0 && mu < 2.0 * params.alpha()) {
        return Err(Error::Parameter(format!(
            "mu must lie in (0, 2 alpha) = (0, {}), got {mu}",
            2.0 * params.alpha()
        )));
    }
    grid.check(&frame.eps)?;
    grid.check(&frame.eta)?;
    Ok(weighted_energy(
        &frame.eps,
        &frame.eta,
        frame.u_at_0,
        frame.z,
        frame.reference(),
        mu,
        params,
        grid,
    ))
}

/// Measured vs predicted center velocity for one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedOdeReport {
    pub z_dot_measured: f64,
    pub z_dot_predicted: f64,
    /// `{-gamma (1 + sigma) - 2 sigma} c_Q^2 e^{-2z}`.
    pub leading_term: f64,
    /// `-gamma c_Q e^{-z} eps(0)`.
    pub trace_term: f64,
    pub relative_gap: f64,
}

impl ReducedOdeReport {
    pub fn with_measured(mut self, measured: f64) -> Self {
        self.z_dot_measured = measured;
        self.relative_gap = (measured - self.z_dot_predicted).abs() / self.z_dot_predicted.abs().max(1e-12);
        self
    }
}

/// Leading-order center velocity
/// `2 alpha ||Q'||^2 z' = {-gamma (1 + sigma) - 2 sigma} c_Q^2 e^{-2z} - gamma c_Q e^{-z} eps(0)`.
/// `eps(0)` is taken with the reference sign so that `u -> -u` leaves the
/// prediction unchanged.
pub fn predicted_zdot(frame: &ModulationFrame, params: &PhysParams, grid: &GridSpec) -> Result<ReducedOdeReport> {
    grid.check(&frame.eps)?;
    let p = params.p();
    let c_q = spectral_constants(params).c_q;
    let g = params.gamma();
    let sigma = frame.sigma as f64;
    let z = frame.z;
    let leading = (-g * (1.0 + sigma) - 2.0 * sigma) * c_q * c_q * (-2.0 * z).exp();
    let trace = -g * c_q * (-z).exp() * frame.sign as f64 * frame.eps_at_0(grid);
    let denom = 2.0 * params.alpha() * q_deriv_norm_sq(p)?;
    let predicted = (leading + trace) / denom;
    Ok(ReducedOdeReport {
        z_dot_measured: f64::NAN,
        z_dot_predicted: predicted,
        leading_term: leading,
        trace_term: trace,
        relative_gap: f64::NAN,
    })
}

/// Residuals of the eigenmode ODEs on one interval between frames.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DriftInterval {
    pub t_mid: f64,
    pub residual_plus: f64,
    pub residual_minus: f64,
    pub residual_zero: f64,
    /// `e^{-2z} + ||(eps, eta)||_H^2` at the midpoint.
    pub scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DriftReport {
    pub intervals: Vec<DriftInterval>,
    pub max_ratio_plus: f64,
    pub max_ratio_minus: f64,
    pub max_ratio_zero: f64,
    /// Log-linear fits of each amplitude; `None` if it changes sign or
    /// vanishes.
    pub fitted_rate_plus: Option<f64>,
    pub fitted_rate_minus: Option<f64>,
    pub fitted_rate_zero: Option<f64>,
    pub nu_plus: f64,
    pub nu_minus: f64,
}

fn log_rate(ts: &[f64], a: &[f64]) -> Option<f64> {
    let first = *a.first()?;
    if first == 0.0 || a.iter().any(|&x| x == 0.0 || x.signum() != first.signum()) || a.len() < 2 {
        return None;
    }
    let pts: Vec<(f64, f64)> = ts.iter().zip(a).map(|(&t, &x)| (t, x.abs().ln())).collect();
    Some(least_squares_slope(&pts))
}

/// Compares finite-difference derivatives of `a_+, a_-, a_0` with the rates
/// `nu_+, nu_-, -2 alpha`.
pub fn eigenmode_drift_check(frames: &[ModulationFrame], params: &PhysParams) -> Result<DriftReport> {
    if frames.len() < 2 {
        return Err(Error::Precondition("need at least two frames".into()));
    }
    let sc = spectral_constants(params);
    let stride = frames[1].t - frames[0].t;
    if !(stride > 0.0) {
        return Err(Error::Precondition("frame times must increase".into()));
    }
    if frames.windows(2).any(|w| ((w[1].t - w[0].t) - stride).abs() > 1e-9 * stride.max(1.0)) {
        return Err(Error::Precondition("frames must have a uniform stride".into()));
    }
    if sc.nu_plus.abs() * stride > 0.2 {
        return Err(Error::StrideTooCoarse { stride, rate: sc.nu_plus });
    }
    let two_a = 2.0 * params.alpha();
    let mut intervals = Vec::with_capacity(frames.len() - 1);
    for w in frames.windows(2) {
        let (f0, f1) = (&w[0], &w[1]);
        let mid = |a: f64, b: f64| 0.5 * (a + b);
        let z = mid(f0.z, f1.z);
        let en = mid(f0.eps_norm_h, f1.eps_norm_h);
        intervals.push(DriftInterval {
            t_mid: mid(f0.t, f1.t),
            residual_plus: ((f1.a_plus - f0.a_plus) / stride - sc.nu_plus * mid(f0.a_plus, f1.a_plus)).abs(),
            residual_minus: ((f1.a_minus - f0.a_minus) / stride - sc.nu_minus * mid(f0.a_minus, f1.a_minus)).abs(),
            residual_zero: ((f1.a_zero - f0.a_zero) / stride + two_a * mid(f0.a_zero, f1.a_zero)).abs(),
            scale: (-2.0 * z).exp() + en * en,
        });
    }
    let max_ratio = |f: fn(&DriftInterval) -> f64| intervals.iter().map(|i| f(i) / i.scale).fold(0.0, f64::max);
    let ts: Vec<f64> = frames.iter().map(|f| f.t).collect();
    let series = |f: fn(&ModulationFrame) -> f64| frames.iter().map(f).collect::<Vec<_>>();
    Ok(DriftReport {
        max_ratio_plus: max_ratio(|i| i.residual_plus),
        max_ratio_minus: max_ratio(|i| i.residual_minus),
        max_ratio_zero: max_ratio(|i| i.residual_zero),
        fitted_rate_plus: log_rate(&ts, &series(|f| f.a_plus)),
        fitted_rate_minus: log_rate(&ts, &series(|f| f.a_minus)),
        fitted_rate_zero: log_rate(&ts, &series(|f| f.a_zero)),
        nu_plus: sc.nu_plus,
        nu_minus: sc.nu_minus,
        intervals,
    })
}

/// `||phi||^2`, exposed for amplitude normalisation.
pub fn phi_mass(params: &PhysParams) -> Result<f64> {
    phi_norm_sq(params.p())
}

/// Frame-series CSV in the column order of the track output.
pub fn write_frames_csv<W: Write>(w: W, comment: Option<&str>, frames: &[ModulationFrame], reports: &[ReducedOdeReport]) -> Result<()> {
    let mut csv = CsvWriter::new(
        w,
        comment,
        &[
            "t",
            "z",
            "a_plus",
            "a_minus",
            "a_zero",
            "scriptE",
            "scriptG",
            "eps_normH",
            "zdot_measured",
            "zdot_predicted",
            "relative_gap",
        ],
    )?;
    for (f, r) in frames.iter().zip(reports) {
        csv.row(&[
            f.t,
            f.z,
            f.a_plus,
            f.a_minus,
            f.a_zero,
            f.script_e,
            f.script_g,
            f.eps_norm_h,
            r.z_dot_measured,
            r.z_dot_predicted,
            r.relative_gap,
        ])?;
    }
    Ok(())
}
