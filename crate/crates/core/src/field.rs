//! Uniform grid, field state, discrete norms, and the scalar functionals of
//! the damped equation.
//!
//! Conventions shared by every functional:
//! - integrals of point values use the trapezoid rule;
//! - the gradient term is the cell sum of squared forward differences, i.e.
//!   `<D^T D u, u>` for the same three-point stencil used by the evolution
//!   operator, so the discrete energy matches the discrete dynamics;
//! - the point interaction reads the exact nodal value at the center node.

use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::output::fmt_f64;
use crate::profiles::PhysParams;

/// Symmetric uniform grid on `[-L, L]` with an odd node count, so that the
/// middle node sits exactly at `x = 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    half_width: f64,
    n: usize,
    h: f64,
}

pub fn make_grid(half_width: f64, n: usize) -> Result<GridSpec> {
    if !(half_width.is_finite() && half_width > 0.0) {
        return Err(Error::Grid(format!("half width must be > 0, got {half_width}")));
    }
    if n < 3 {
        return Err(Error::Grid(format!("need at least 3 nodes, got {n}")));
    }
    if n.is_multiple_of(2) {
        return Err(Error::Grid(format!("node count must be odd so a node sits at x = 0, got {n}")));
    }
    Ok(GridSpec {
        half_width,
        n,
        h: 2.0 * half_width / (n - 1) as f64,
    })
}

impl GridSpec {
    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn center(&self) -> usize {
        (self.n - 1) / 2
    }

    /// Node coordinate; computed from the center so that `x(center) == 0`
    /// and `x(j) == -x(n - 1 - j)` hold exactly.
    #[inline]
    pub fn x(&self, j: usize) -> f64 {
        (j as f64 - self.center() as f64) * self.h
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.x(j)).collect()
    }

    /// Samples `f` at the nodes with zero Dirichlet values at both ends.
    pub fn sample<F: Fn(f64) -> f64>(&self, f: F) -> Vec<f64> {
        let mut u: Vec<f64> = (0..self.n).map(|j| f(self.x(j))).collect();
        u[0] = 0.0;
        u[self.n - 1] = 0.0;
        u
    }

    /// Same domain with half the spacing.
    pub fn refined(&self) -> GridSpec {
        GridSpec {
            half_width: self.half_width,
            n: 2 * self.n - 1,
            h: 0.5 * self.h,
        }
    }

    pub(crate) fn check(&self, u: &[f64]) -> Result<()> {
        if u.len() == self.n {
            Ok(())
        } else {
            Err(Error::LengthMismatch {
                expected: self.n,
                got: u.len(),
            })
        }
    }
}

/// Field samples `(u, du/dt)` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
    pub t: f64,
}

impl State {
    pub fn new(u: Vec<f64>, v: Vec<f64>, t: f64) -> Result<Self> {
        if u.len() != v.len() {
            return Err(Error::LengthMismatch {
                expected: u.len(),
                got: v.len(),
            });
        }
        Ok(Self { u, v, t })
    }

    pub fn at_rest(u: Vec<f64>) -> Self {
        let v = vec![0.0; u.len()];
        Self { u, v, t: 0.0 }
    }

    pub fn zeros(grid: &GridSpec) -> Self {
        Self::at_rest(vec![0.0; grid.n()])
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    /// `x -> -x` applied to both components.
    pub fn reflected(&self) -> State {
        State {
            u: self.u.iter().rev().copied().collect(),
            v: self.v.iter().rev().copied().collect(),
            t: self.t,
        }
    }

    pub fn negated(&self) -> State {
        State {
            u: self.u.iter().map(|x| -x).collect(),
            v: self.v.iter().map(|x| -x).collect(),
            t: self.t,
        }
    }

    pub fn sup_u(&self) -> f64 {
        self.u.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn check(&self, grid: &GridSpec) -> Result<()> {
        grid.check(&self.u)?;
        grid.check(&self.v)
    }
}

/// Energy samples and the accumulated damping integral
/// `2 alpha int ||du/dt||^2 dt` at the same times.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct DissipationLedger {
    pub times: Vec<f64>,
    pub energies: Vec<f64>,
    pub damping: Vec<f64>,
    pub damping_integral: f64,
}

impl DissipationLedger {
    pub fn push(&mut self, t: f64, energy: f64, damping_so_far: f64) {
        self.times.push(t);
        self.energies.push(energy);
        self.damping.push(damping_so_far);
        self.damping_integral = damping_so_far;
    }

    /// `max_k |E_k - E_0 + D_k| / max(1, |E_0|)`.
    pub fn identity_defect(&self) -> f64 {
        let Some(&e0) = self.energies.first() else {
            return 0.0;
        };
        let scale = e0.abs().max(1.0);
        self.energies
            .iter()
            .zip(&self.damping)
            .map(|(e, d)| (e - e0 + d).abs() / scale)
            .fold(0.0, f64::max)
    }

    /// Largest increase of the energy between consecutive samples, per unit
    /// time and relative to `max(1, |E_0|)`.
    pub fn worst_increase_rate(&self) -> f64 {
        let Some(&e0) = self.energies.first() else {
            return 0.0;
        };
        let scale = e0.abs().max(1.0);
        self.energies
            .windows(2)
            .zip(self.times.windows(2))
            .map(|(e, t)| ((e[1] - e[0]) / scale / (t[1] - t[0]).max(f64::MIN_POSITIVE)).max(0.0))
            .fold(0.0, f64::max)
    }
}

#[inline]
pub(crate) fn trapz_sq(u: &[f64], h: f64) -> f64 {
    let n = u.len();
    let interior: f64 = u[1..n - 1].iter().map(|x| x * x).sum();
    h * (interior + 0.5 * (u[0] * u[0] + u[n - 1] * u[n - 1]))
}

#[inline]
pub(crate) fn trapz_dot(a: &[f64], b: &[f64], h: f64) -> f64 {
    let n = a.len();
    let interior: f64 = a[1..n - 1].iter().zip(&b[1..n - 1]).map(|(x, y)| x * y).sum();
    h * (interior + 0.5 * (a[0] * b[0] + a[n - 1] * b[n - 1]))
}

#[inline]
pub(crate) fn trapz_pow(u: &[f64], q: f64, h: f64) -> f64 {
    let n = u.len();
    let interior: f64 = u[1..n - 1].iter().map(|x| x.abs().powf(q)).sum();
    h * (interior + 0.5 * (u[0].abs().powf(q) + u[n - 1].abs().powf(q)))
}

#[inline]
pub(crate) fn grad_sq_raw(u: &[f64], h: f64) -> f64 {
    u.windows(2).map(|w| (w[1] - w[0]) * (w[1] - w[0])).sum::<f64>() / h
}

pub fn norm_l2_sq(u: &[f64], grid: &GridSpec) -> Result<f64> {
    grid.check(u)?;
    Ok(trapz_sq(u, grid.h))
}

pub fn norm_l2(u: &[f64], grid: &GridSpec) -> Result<f64> {
    norm_l2_sq(u, grid).map(f64::sqrt)
}

/// `||u'||_{L^2}^2` through forward differences.
pub fn grad_sq(u: &[f64], grid: &GridSpec) -> Result<f64> {
    grid.check(u)?;
    Ok(grad_sq_raw(u, grid.h))
}

pub fn norm_h1_sq(u: &[f64], grid: &GridSpec) -> Result<f64> {
    grid.check(u)?;
    Ok(grad_sq_raw(u, grid.h) + trapz_sq(u, grid.h))
}

pub fn norm_h1(u: &[f64], grid: &GridSpec) -> Result<f64> {
    norm_h1_sq(u, grid).map(f64::sqrt)
}

/// `int |u|^q`.
pub fn lq_power(u: &[f64], q: f64, grid: &GridSpec) -> Result<f64> {
    grid.check(u)?;
    Ok(trapz_pow(u, q, grid.h))
}

pub fn norm_lq(u: &[f64], q: f64, grid: &GridSpec) -> Result<f64> {
    if !(q.is_finite() && q > 0.0) {
        return Err(Error::Parameter(format!("Lq exponent must be > 0, got {q}")));
    }
    lq_power(u, q, grid).map(|s| s.powf(1.0 / q))
}

/// `||(u, v)||_H^2 = ||u||_{H^1}^2 + ||v||_{L^2}^2`.
pub fn state_norm_sq(state: &State, grid: &GridSpec) -> Result<f64> {
    state.check(grid)?;
    Ok(grad_sq_raw(&state.u, grid.h) + trapz_sq(&state.u, grid.h) + trapz_sq(&state.v, grid.h))
}

pub fn state_norm(state: &State, grid: &GridSpec) -> Result<f64> {
    state_norm_sq(state, grid).map(f64::sqrt)
}

/// The quadratic part `||u||_{H^1}^2 - gamma u(0)^2`.
pub fn quadratic_form(u: &[f64], params: &PhysParams, grid: &GridSpec) -> Result<f64> {
    let h1 = norm_h1_sq(u, grid)?;
    let u0 = u[grid.center()];
    Ok(h1 - params.gamma() * u0 * u0)
}

pub fn energy_e_gamma(state: &State, params: &PhysParams, grid: &GridSpec) -> Result<f64> {
    state.check(grid)?;
    let quad = quadratic_form(&state.u, params, grid)?;
    let kinetic = trapz_sq(&state.v, grid.h);
    let p = params.p();
    Ok(0.5 * (quad + kinetic) - trapz_pow(&state.u, p + 1.0, grid.h) / (p + 1.0))
}

/// Nehari functional `K_gamma`.
pub fn functional_k_gamma(u: &[f64], params: &PhysParams, grid: &GridSpec) -> Result<f64> {
    let quad = quadratic_form(u, params, grid)?;
    Ok(quad - trapz_pow(u, params.p() + 1.0, grid.h))
}

/// Action `J_gamma`.
pub fn functional_j_gamma(u: &[f64], params: &PhysParams, grid: &GridSpec) -> Result<f64> {
    let quad = quadratic_form(u, params, grid)?;
    let p = params.p();
    Ok(0.5 * quad - trapz_pow(u, p + 1.0, grid.h) / (p + 1.0))
}

/// Virial-type functional `int u v + alpha ||u||_{L^2}^2`.
pub fn functional_p(state: &State, params: &PhysParams, grid: &GridSpec) -> Result<f64> {
    state.check(grid)?;
    Ok(trapz_dot(&state.u, &state.v, grid.h) + params.alpha() * trapz_sq(&state.u, grid.h))
}

/// Boundedness diagnostics: `M = ||u||^2/2 + alpha int_0^t ||u||^2` and
/// `W = ||(u, v)||_H^2 / 2 - gamma u(0)^2 / 2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MwDiagnostics {
    pub m_value: f64,
    pub w_value: f64,
}

/// `mass_time_integral` is `int_0^t ||u(s)||_{L^2}^2 ds`, accumulated by the
/// evolution loop.
pub fn diagnostics_mw(state: &State, params: &PhysParams, grid: &GridSpec, mass_time_integral: f64) -> Result<MwDiagnostics> {
    let norm_sq = state_norm_sq(state, grid)?;
    let u0 = state.u[grid.center()];
    Ok(MwDiagnostics {
        m_value: 0.5 * trapz_sq(&state.u, grid.h) + params.alpha() * mass_time_integral,
        w_value: 0.5 * norm_sq - 0.5 * params.gamma() * u0 * u0,
    })
}

/// Equivalence constant between `||u||_{H^1}^2 - gamma u(0)^2` and
/// `||u||_{H^1}^2` obtained from the trace bound `u(0)^2 <= ||u|| ||u'||
/// <= ||u||_{H^1}^2 / 2`.
pub fn trace_equivalence_constant(gamma: f64) -> f64 {
    if gamma >= 0.0 {
        1.0 / (1.0 - 0.5 * gamma)
    } else {
        1.0 - 0.5 * gamma
    }
}

/// Header metadata of a state snapshot file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SnapshotHeader {
    pub t: f64,
    pub p: f64,
    pub alpha: f64,
    pub gamma: f64,
    pub half_width: f64,
    pub n: usize,
}

/// Writes `# t=..,p=..,alpha=..,gamma=..,L=..,n=..` then `x,u,v` rows.
pub fn write_snapshot<W: Write>(mut w: W, state: &State, params: &PhysParams, grid: &GridSpec) -> Result<()> {
    state.check(grid)?;
    writeln!(
        w,
        "# t={},p={},alpha={},gamma={},L={},n={}",
        fmt_f64(state.t),
        fmt_f64(params.p()),
        fmt_f64(params.alpha()),
        fmt_f64(params.gamma()),
        fmt_f64(grid.half_width()),
        grid.n()
    )?;
    writeln!(w, "x,u,v")?;
    for j in 0..grid.n() {
        writeln!(w, "{},{},{}", fmt_f64(grid.x(j)), fmt_f64(state.u[j]), fmt_f64(state.v[j]))?;
    }
    Ok(())
}

pub fn read_snapshot<R: BufRead>(r: R) -> Result<(SnapshotHeader, State)> {
    let mut lines = r.lines().enumerate();
    let bad = |line: usize, msg: &str| Error::Config { line, msg: msg.to_string() };
    let (_, first) = lines.next().ok_or_else(|| bad(1, "empty snapshot"))?;
    let first = first?;
    let meta = first.strip_prefix('#').ok_or_else(|| bad(1, "missing metadata line"))?;
    let mut fields = std::collections::BTreeMap::new();
    for kv in meta.trim().split(',') {
        let (k, v) = kv.split_once('=').ok_or_else(|| bad(1, "malformed metadata"))?;
        fields.insert(k.trim().to_string(), v.trim().to_string());
    }
    let num = |k: &str| -> Result<f64> {
        fields
            .get(k)
            .and_then(|v| v.parse::<f64>().ok())
            .ok_or_else(|| bad(1, &format!("missing or invalid `{k}`")))
    };
    let header = SnapshotHeader {
        t: num("t")?,
        p: num("p")?,
        alpha: num("alpha")?,
        gamma: num("gamma")?,
        half_width: num("L")?,
        n: fields.get("n").and_then(|v| v.parse().ok()).ok_or_else(|| bad(1, "missing or invalid `n`"))?,
    };
    let (_, cols) = lines.next().ok_or_else(|| bad(2, "missing column header"))?;
    if cols?.trim() != "x,u,v" {
        return Err(bad(2, "expected column header `x,u,v`"));
    }
    let mut u = Vec::with_capacity(header.n);
    let mut v = Vec::with_capacity(header.n);
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| bad(i + 1, "non-numeric value"))?;
        if vals.len() != 3 {
            return Err(bad(i + 1, "expected 3 columns"));
        }
        u.push(vals[1]);
        v.push(vals[2]);
    }
    if u.len() != header.n {
        return Err(Error::LengthMismatch {
            expected: header.n,
            got: u.len(),
        });
    }
    Ok((header, State { u, v, t: header.t }))
}
