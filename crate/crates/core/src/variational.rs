//! Ground-state levels by Nehari-constrained minimization.
//!
//! The descent works on the scale-invariant reduction
//! `I(u) = J(e^{lambda(u)} u)`, where `e^{lambda(u)} u` is the Nehari
//! projection. `I` is homogeneous of degree zero, so its minimizing sequences
//! do not collapse onto the trivial critical point, and its gradient is
//! `e^lambda J'(e^lambda u)`. Steps use L-BFGS preconditioned by
//! `(-d^2/dx^2 + 1)^{-1}`.

use std::collections::VecDeque;
use std::io::Write;

use crate::error::{Error, Result};
use crate::evolution::build_operator;
use crate::experiments::{level_n, level_r, Symmetry};
use crate::field::{grad_sq_raw, trapz_dot, trapz_pow, trapz_sq, GridSpec};
use crate::output::CsvWriter;
use crate::profiles::PhysParams;

pub const DEFAULT_MAX_ITERS: usize = 5000;
pub const LEVEL_TOLERANCE: f64 = 1e-9;
const LBFGS_MEMORY: usize = 8;
/// `|x| <= 5` counts as near the origin.
const NEAR_ORIGIN: f64 = 5.0;
const ESCAPE_MASS_FRACTION: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceLevels {
    pub n_gamma: f64,
    pub r_gamma: f64,
}

pub fn reference_levels(params: &PhysParams) -> Result<ReferenceLevels> {
    Ok(ReferenceLevels {
        n_gamma: level_n(params)?,
        r_gamma: level_r(params)?,
    })
}

/// `(||u||_{H^1}^2 - gamma u(0)^2, ||u||_{p+1}^{p+1})`.
fn nehari_parts(u: &[f64], params: &PhysParams, grid: &GridSpec) -> (f64, f64) {
    let h = grid.h();
    let u0 = u[grid.center()];
    let a = grad_sq_raw(u, h) + trapz_sq(u, h) - params.gamma() * u0 * u0;
    (a, trapz_pow(u, params.p() + 1.0, h))
}

fn projection_exponent(u: &[f64], params: &PhysParams, grid: &GridSpec) -> Result<f64> {
    let (a, b) = nehari_parts(u, params, grid);
    if b == 0.0 {
        return Err(Error::ZeroInput);
    }
    if !(a > 0.0) {
        return Err(Error::Precondition(format!("quadratic part must be positive, got {a}")));
    }
    Ok((a / b).ln() / (params.p() - 1.0))
}

/// Rescales `u` onto the Nehari manifold `K_gamma = 0`.
pub fn nehari_project(u: &[f64], params: &PhysParams, grid: &GridSpec) -> Result<Vec<f64>> {
    grid.check(u)?;
    let k = projection_exponent(u, params, grid)?.exp();
    Ok(u.iter().map(|x| k * x).collect())
}

/// Level of the reduced functional: `(1/2 - 1/(p+1)) a^{(p+1)/(p-1)} / b^{2/(p-1)}`.
fn reduced_value(u: &[f64], params: &PhysParams, grid: &GridSpec) -> f64 {
    let p = params.p();
    let (a, b) = nehari_parts(u, params, grid);
    (0.5 - 1.0 / (p + 1.0)) * a.powf((p + 1.0) / (p - 1.0)) / b.powf(2.0 / (p - 1.0))
}

/// Tridiagonal solve of `(-D^2 + 1) y = r` with zero ends.
fn precondition(r: &[f64], h: f64) -> Vec<f64> {
    let n = r.len();
    let mut y = vec![0.0; n];
    if n < 3 {
        return y;
    }
    let off = -1.0 / (h * h);
    let diag = 2.0 / (h * h) + 1.0;
    let m = n - 2;
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    c[0] = off / diag;
    d[0] = r[1] / diag;
    for i in 1..m {
        let denom = diag - off * c[i - 1];
        c[i] = off / denom;
        d[i] = (r[i + 1] - off * d[i - 1]) / denom;
    }
    y[m] = d[m - 1];
    for i in (0..m - 1).rev() {
        y[i + 1] = d[i] - c[i] * y[i + 2];
    }
    y
}

struct Reduced<'a> {
    params: &'a PhysParams,
    grid: &'a GridSpec,
    op: crate::evolution::DiscreteOperator,
    even: bool,
}

impl Reduced<'_> {
    fn symmetrize(&self, u: &mut [f64]) {
        if self.even {
            let n = u.len();
            for j in 0..n / 2 {
                let m = 0.5 * (u[j] + u[n - 1 - j]);
                u[j] = m;
                u[n - 1 - j] = m;
            }
        }
    }

    fn gradient(&self, u: &[f64]) -> Result<Vec<f64>> {
        let k = projection_exponent(u, self.params, self.grid)?.exp();
        let w: Vec<f64> = u.iter().map(|x| k * x).collect();
        let mut g = self.op.apply(&w);
        let p = self.params.p();
        for (gj, wj) in g.iter_mut().zip(&w) {
            *gj = k * (*gj - wj.abs().powf(p - 1.0) * wj);
        }
        let n = g.len();
        g[0] = 0.0;
        g[n - 1] = 0.0;
        self.symmetrize(&mut g);
        Ok(g)
    }

    fn project(&self, u: &[f64]) -> Result<Vec<f64>> {
        let mut v = nehari_project(u, self.params, self.grid)?;
        self.symmetrize(&mut v);
        Ok(v)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EscapeDiagnostic {
    /// Growth of `int |x| u^2 / int u^2` since the first iterate.
    pub center_drift: f64,
    /// Fraction of `||u||_{L^2}^2` carried by `|x| <= 5`.
    pub mass_near_origin: f64,
}

fn escape_diagnostic(u: &[f64], grid: &GridSpec, initial_spread: f64) -> EscapeDiagnostic {
    let (spread, near) = spread_and_near(u, grid);
    EscapeDiagnostic {
        center_drift: spread - initial_spread,
        mass_near_origin: near,
    }
}

fn spread_and_near(u: &[f64], grid: &GridSpec) -> (f64, f64) {
    let h = grid.h();
    let x = grid.nodes();
    let w: Vec<f64> = u.iter().map(|v| v * v).collect();
    let total = trapz_dot(&w, &vec![1.0; w.len()], h);
    let abs_x: Vec<f64> = x.iter().map(|v| v.abs()).collect();
    let near: Vec<f64> = x.iter().map(|v| if v.abs() <= NEAR_ORIGIN { 1.0 } else { 0.0 }).collect();
    (trapz_dot(&w, &abs_x, h) / total, trapz_dot(&w, &near, h) / total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterRecord {
    pub iter: usize,
    pub j: f64,
    pub k_residual: f64,
    pub center_drift: f64,
    pub mass_near_origin: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MinimizationStatus {
    Converged,
    MaxIterations,
    /// `J` rose over ten consecutive accepted steps.
    Diverged,
}

impl MinimizationStatus {
    pub fn label(&self) -> &'static str {
        match self {
            MinimizationStatus::Converged => "converged",
            MinimizationStatus::MaxIterations => "max_iterations",
            MinimizationStatus::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinimizationReport {
    pub level_estimate: f64,
    pub reference_level: f64,
    pub symmetry: Symmetry,
    /// Final iterate (on the Nehari manifold).
    pub minimizer: Vec<f64>,
    pub escaped: bool,
    pub escape_diagnostic: EscapeDiagnostic,
    pub iterations: usize,
    pub status: MinimizationStatus,
    pub history: Vec<IterRecord>,
}

impl MinimizationReport {
    pub fn relative_gap(&self) -> f64 {
        (self.level_estimate - self.reference_level).abs() / self.reference_level.abs()
    }

    pub fn write_history_csv<W: Write>(&self, w: W, comment: Option<&str>) -> Result<()> {
        let mut csv = CsvWriter::new(w, comment, &["iter", "J", "K_residual", "center_drift", "mass_near_origin"])?;
        for r in &self.history {
            csv.row(&[r.iter as f64, r.j, r.k_residual, r.center_drift, r.mass_near_origin])?;
        }
        Ok(())
    }
}

/// Minimizes `J_gamma` on the Nehari manifold, over even functions when
/// `symmetry` is `Even`.
pub fn minimize_level(params: &PhysParams, grid: &GridSpec, symmetry: Symmetry, u_init: &[f64], max_iters: usize) -> Result<MinimizationReport> {
    grid.check(u_init)?;
    let even = symmetry == Symmetry::Even;
    if even {
        let scale = u_init.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
        if u_init.iter().zip(u_init.iter().rev()).any(|(a, b)| (a - b).abs() > 1e-12 * scale) {
            return Err(Error::Precondition("even minimization needs an even initial guess".into()));
        }
    }
    let levels = reference_levels(params)?;
    let reference_level = if even { levels.r_gamma } else { levels.n_gamma };
    let h = grid.h();
    let dot = |a: &[f64], b: &[f64]| -> f64 { h * a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() };

    let red = Reduced {
        params,
        grid,
        op: build_operator(grid, params),
        even,
    };
    let mut u = u_init.to_vec();
    let n = u.len();
    u[0] = 0.0;
    u[n - 1] = 0.0;
    let mut u = red.project(&u)?;
    let mut f = reduced_value(&u, params, grid);
    let mut g = red.gradient(&u)?;
    let (initial_spread, _) = spread_and_near(&u, grid);

    let mut history = Vec::new();
    let record = |iter: usize, u: &[f64], f: f64, history: &mut Vec<IterRecord>| {
        let (a, b) = nehari_parts(u, params, grid);
        let d = escape_diagnostic(u, grid, initial_spread);
        history.push(IterRecord {
            iter,
            j: f,
            k_residual: a - b,
            center_drift: d.center_drift,
            mass_near_origin: d.mass_near_origin,
        });
    };
    record(0, &u, f, &mut history);

    let mut mem: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::with_capacity(LBFGS_MEMORY);
    let mut status = MinimizationStatus::MaxIterations;
    let mut rises = 0usize;
    let mut iterations = 0usize;
    for it in 1..=max_iters {
        iterations = it;
        // two-loop recursion with the H^1 Riesz map as the base metric
        let mut q = g.clone();
        let mut alphas = Vec::with_capacity(mem.len());
        for (s, y, rho) in mem.iter().rev() {
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let mut r = precondition(&q, h);
        if let Some((s, y, _)) = mem.back() {
            let py = precondition(y, h);
            let scale = dot(s, y) / dot(y, &py);
            r.iter_mut().for_each(|v| *v *= scale);
        }
        for ((s, y, rho), a) in mem.iter().zip(alphas.iter().rev()) {
            let b = rho * dot(y, &r);
            r.iter_mut().zip(s).for_each(|(ri, si)| *ri += (a - b) * si);
        }
        let mut dir: Vec<f64> = r.iter().map(|v| -v).collect();
        let mut slope = dot(&g, &dir);
        if !(slope < 0.0) {
            mem.clear();
            dir = precondition(&g, h).iter().map(|v| -v).collect();
            slope = dot(&g, &dir);
        }
        red.symmetrize(&mut dir);

        let mut t = 1.0;
        let (un, fn_) = loop {
            let trial: Vec<f64> = u.iter().zip(&dir).map(|(a, d)| a + t * d).collect();
            let cand = red.project(&trial).ok();
            if let Some(c) = cand {
                let fc = reduced_value(&c, params, grid);
                if fc.is_finite() && (fc <= f + 1e-4 * t * slope || t < 1e-14) {
                    break (c, fc);
                }
            }
            t *= 0.5;
            if t < 1e-16 {
                break (u.clone(), f);
            }
        };
        let gn = red.gradient(&un)?;
        let s: Vec<f64> = un.iter().zip(&u).map(|(a, b)| a - b).collect();
        let y: Vec<f64> = gn.iter().zip(&g).map(|(a, b)| a - b).collect();
        let sy = dot(&s, &y);
        if sy > 1e-16 {
            if mem.len() == LBFGS_MEMORY {
                mem.pop_front();
            }
            mem.push_back((s, y, 1.0 / sy));
        }
        let df = f - fn_;
        rises = if fn_ > f { rises + 1 } else { 0 };
        u = un;
        f = fn_;
        g = gn;
        record(it, &u, f, &mut history);
        if rises >= 10 {
            status = MinimizationStatus::Diverged;
            break;
        }
        if df.abs() < LEVEL_TOLERANCE && it > 5 {
            status = MinimizationStatus::Converged;
            break;
        }
    }
    let diag = escape_diagnostic(&u, grid, initial_spread);
    let escaped = diag.center_drift > grid.half_width() / 3.0 || diag.mass_near_origin < ESCAPE_MASS_FRACTION;
    Ok(MinimizationReport {
        level_estimate: f,
        reference_level,
        symmetry,
        minimizer: u,
        escaped,
        escape_diagnostic: diag,
        iterations,
        status,
        history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{functional_j_gamma, functional_k_gamma, make_grid};
    use crate::profiles::{soliton_q, soliton_q_gamma};

    fn pp(gamma: f64) -> PhysParams {
        PhysParams::new(3.0, 1.0, gamma).unwrap()
    }

    fn q(x: f64) -> f64 {
        soliton_q(x, 3.0).unwrap()
    }

    #[test]
    fn projection_fixes_q_and_rescales_2q() {
        let g = make_grid(40.0, 1601).unwrap();
        let params = pp(0.0);
        let u = g.sample(q);
        let lam = projection_exponent(&u, &params, &g).unwrap();
        assert!(lam.abs() < 1e-3, "{lam}");
        let u2: Vec<f64> = u.iter().map(|x| 2.0 * x).collect();
        let lam2 = projection_exponent(&u2, &params, &g).unwrap();
        assert!((lam2 - lam - 0.5f64.ln()).abs() < 1e-14);
        let out = nehari_project(&u2, &params, &g).unwrap();
        assert!(functional_k_gamma(&out, &params, &g).unwrap().abs() <= 1e-10);
    }

    #[test]
    fn projection_is_idempotent_and_rejects_zero() {
        let g = make_grid(20.0, 401).unwrap();
        let params = pp(-1.0);
        let u = g.sample(|x| (-(x - 1.0) * (x - 1.0)).exp() * 3.7);
        let once = nehari_project(&u, &params, &g).unwrap();
        let twice = nehari_project(&once, &params, &g).unwrap();
        for (a, b) in once.iter().zip(&twice) {
            assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
        assert!(matches!(nehari_project(&vec![0.0; g.n()], &params, &g), Err(Error::ZeroInput)));
    }

    #[test]
    fn reduced_value_equals_j_on_manifold() {
        let g = make_grid(20.0, 401).unwrap();
        let params = pp(-1.0);
        let u = nehari_project(&g.sample(|x| (-x * x).exp()), &params, &g).unwrap();
        let j = functional_j_gamma(&u, &params, &g).unwrap();
        assert!((reduced_value(&u, &params, &g) - j).abs() < 1e-12);
    }

    #[test]
    fn reduced_gradient_matches_differences() {
        let g = make_grid(10.0, 101).unwrap();
        let params = pp(-1.0);
        let red = Reduced {
            params: &params,
            grid: &g,
            op: build_operator(&g, &params),
            even: false,
        };
        let u = g.sample(|x| (-(x - 0.5) * (x - 0.5)).exp() + 0.3 * (-(x + 2.0) * (x + 2.0)).exp());
        let gr = red.gradient(&u).unwrap();
        let h = g.h();
        for j in [20, 45, 50, 51, 70] {
            let e = 1e-6;
            let mut up = u.clone();
            let mut um = u.clone();
            up[j] += e;
            um[j] -= e;
            let fd = (reduced_value(&up, &params, &g) - reduced_value(&um, &params, &g)) / (2.0 * e);
            // trapezoid weight h at interior nodes
            assert!((fd - h * gr[j]).abs() < 1e-7, "node {j}: {fd} vs {}", h * gr[j]);
        }
    }

    #[test]
    fn preconditioner_inverts_operator() {
        let g = make_grid(5.0, 51).unwrap();
        let h = g.h();
        let r = g.sample(|x| x.sin() * (-x * x).exp());
        let y = precondition(&r, h);
        for j in 1..g.n() - 1 {
            let ay = (2.0 * y[j] - y[j - 1] - y[j + 1]) / (h * h) + y[j];
            assert!((ay - r[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn reference_levels_values() {
        let l = reference_levels(&pp(0.0)).unwrap();
        assert!((l.n_gamma - 4.0 / 3.0).abs() < 1e-9 && (l.r_gamma - 4.0 / 3.0).abs() < 1e-9);
        let l = reference_levels(&pp(-1.0)).unwrap();
        assert!((l.n_gamma - 4.0 / 3.0).abs() < 1e-9 && (l.r_gamma - 2.25).abs() < 1e-9);
        // gamma = 1, p = 3: J = 1/4 ||Q_g||_4^4 = 2 (2/3 - 1/2 + 1/24)
        let l = reference_levels(&pp(1.0)).unwrap();
        assert!((l.n_gamma - 2.0 * (2.0 / 3.0 - 0.5 + 1.0 / 24.0)).abs() < 1e-8);
        let mut prev = f64::NEG_INFINITY;
        for gamma in [-1.5, -1.0, 0.0, 1.0, 1.5] {
            let v = crate::profiles::pinned_profile_action(&pp(gamma)).unwrap();
            assert!(v < prev || prev == f64::NEG_INFINITY, "{gamma}: {v} vs {prev}");
            prev = v;
        }
    }

    #[test]
    fn even_minimization_reaches_pinned_level() {
        let g = make_grid(40.0, 1601).unwrap();
        let params = pp(-1.0);
        let u0 = g.sample(|x| soliton_q_gamma(x, &params).unwrap() + 0.05 * (-x * x).exp());
        let rep = minimize_level(&params, &g, Symmetry::Even, &u0, DEFAULT_MAX_ITERS).unwrap();
        assert_eq!(rep.status, MinimizationStatus::Converged);
        assert!(rep.relative_gap() < 1e-2, "{}", rep.level_estimate);
        assert!(!rep.escaped);
        assert!(rep.level_estimate >= rep.reference_level - 2e-3);
    }

    #[test]
    fn even_minimization_rejects_odd_guess() {
        let g = make_grid(10.0, 201).unwrap();
        let u0 = g.sample(|x| q(x - 1.0));
        assert!(minimize_level(&pp(-1.0), &g, Symmetry::Even, &u0, 10).is_err());
    }
}
