//! Acceptance suite. Prints one PASS/FAIL line per criterion at its pinned
//! tolerance, followed by indented diagnostics, and exits nonzero if any
//! criterion fails. Runs without the libtest harness so the lines are always
//! visible.

use std::fmt::Write as _;
use std::ops::ControlFlow;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use kgdelta::evolution::{evolve, fit_linear_decay_rate, linearized_residuals, EvolveOptions, ExitReason};
use kgdelta::experiments::{
    bisect_threshold, classify_trajectory, confirm_decay, initial_family, level_r, record_frames, track_center, Classification, ClassifyOptions, ShootOptions,
    Symmetry, ThresholdResult,
};
use kgdelta::modulation::{ModulationConfig, Reference};
use kgdelta::variational::{minimize_level, nehari_project, DEFAULT_MAX_ITERS};
use kgdelta::{field, make_grid, profiles, quadrature, GridSpec, PhysParams, State};

type Criterion = (&'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    summary: String,
    notes: Vec<String>,
}

impl Outcome {
    fn new(pass: bool, summary: impl Into<String>) -> Self {
        Self {
            pass,
            summary: summary.into(),
            notes: Vec::new(),
        }
    }

    fn note(mut self, s: impl Into<String>) -> Self {
        self.notes.push(s.into());
        self
    }
}

fn within(elapsed: Duration, secs: f64) -> bool {
    elapsed.as_secs_f64() < secs
}

fn pinned_state(params: &PhysParams, grid: &GridSpec) -> State {
    let mut u = grid.sample(|x| profiles::soliton_q_gamma(x, params).unwrap());
    let n = u.len();
    u[0] = 0.0;
    u[n - 1] = 0.0;
    State::at_rest(u)
}

fn quiet(dt: f64, t: f64) -> EvolveOptions {
    let mut o = EvolveOptions::new(dt, t);
    o.sample_stride = 4;
    o.snapshot_stride = 0;
    o
}

fn stationarity_deviation(n: usize, dt: f64) -> (f64, kgdelta::evolution::Trajectory, PhysParams, GridSpec) {
    let params = PhysParams::new(3.0, 1.0, -1.0).unwrap();
    let grid = make_grid(40.0, n).unwrap();
    let s0 = pinned_state(&params, &grid);
    let traj = evolve(&s0, &params, &grid, &quiet(dt, 10.0), |_, _| ControlFlow::Continue(())).unwrap();
    let d: Vec<f64> = traj.final_state.u.iter().zip(&s0.u).map(|(a, b)| a - b).collect();
    (field::norm_h1(&d, &grid).unwrap(), traj, params, grid)
}

fn stationarity() -> Outcome {
    let t0 = Instant::now();
    let (d1, _, _, _) = stationarity_deviation(1601, 0.025);
    let (d2, _, _, _) = stationarity_deviation(3201, 0.0125);
    let el = t0.elapsed();
    let ratio = d1 / d2;
    let pass = d1 <= 5e-3 && ratio >= 3.5 && within(el, 5.0);
    Outcome::new(
        pass,
        format!(
            "||u(10) - Q_gamma||_H1 = {d1:.3e} (tol 5e-3), refinement ratio {ratio:.2} (tol >= 3.5), {:.2}s (< 5s)",
            el.as_secs_f64()
        ),
    )
    .note("the pinned profile at gamma = -1 carries an unstable direction; the O(h^2) discretization")
    .note("mismatch seeds it and it grows like e^{t} over [0, 10], so the deviation is O(1) at any h")
}

fn energy_identity() -> Outcome {
    let (_, traj, params, grid) = stationarity_deviation(1601, 0.025);
    let e0 = field::energy_e_gamma(&pinned_state(&params, &grid), &params, &grid).unwrap();
    let e1 = field::energy_e_gamma(&traj.final_state, &params, &grid).unwrap();
    let defect = (e1 - e0 + traj.ledger.damping_integral).abs();
    let tol = 1e-3 * e0.abs().max(1.0);
    Outcome::new(defect <= tol, format!("|E(T) - E(0) + 2 alpha int ||u_t||^2| = {defect:.3e} (tol {tol:.3e})"))
}

fn linear_decay() -> Outcome {
    let t0 = Instant::now();
    let mut pass = true;
    let mut parts = Vec::new();
    for gamma in [0.0, -2.0] {
        let params = PhysParams::new(3.0, 1.0, gamma).unwrap();
        let grid = make_grid(40.0, 1601).unwrap();
        let mut u0 = grid.sample(|x| profiles::soliton_q(x, 3.0).unwrap());
        let n = u0.len();
        u0[0] = 0.0;
        u0[n - 1] = 0.0;
        let fit = fit_linear_decay_rate(&params, &grid, &u0, 40.0, 0.025).unwrap();
        let rel = fit.final_norm / fit.initial_norm;
        pass &= fit.kappa > 0.1 && rel < 1e-4;
        parts.push(format!("gamma={gamma}: kappa={:.4} (> 0.1), ratio={rel:.3e} (< 1e-4)", fit.kappa));
    }
    let el = t0.elapsed();
    pass &= within(el, 5.0);
    Outcome::new(pass, format!("{}; {:.2}s (< 5s)", parts.join("; "), el.as_secs_f64()))
}

fn spectral() -> Outcome {
    let grid = make_grid(40.0, 1601).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    let mut notes = Vec::new();
    for p in [3.0, 4.0] {
        let params = PhysParams::new(p, 1.0, 0.0).unwrap();
        let r = linearized_residuals(0.0, &grid, &params).unwrap();
        let r2 = linearized_residuals(0.0, &grid.refined(), &params).unwrap();
        pass &= r.eig_residual <= 5e-3 && r.kernel_residual <= 5e-3;
        parts.push(format!("p={p}: eig {:.2e}, kernel {:.2e}", r.eig_residual, r.kernel_residual));
        notes.push(format!(
            "p={p}: at h=0.025 eig {:.2e}, kernel {:.2e} (ratios {:.2}, {:.2})",
            r2.eig_residual,
            r2.kernel_residual,
            r.eig_residual / r2.eig_residual,
            r.kernel_residual / r2.kernel_residual
        ));
    }
    let mut o = Outcome::new(pass, format!("{} (tol 5e-3, h=0.05)", parts.join("; ")));
    o.notes = notes;
    o.note("the 3-point stencil error h^2/12 |f''''| alone exceeds 5e-3 relative for the sharper p=4 profiles")
}

fn interaction_identity() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for p in [2.5, 3.0, 4.0] {
        let v = quadrature::integrate(|x| profiles::soliton_q(x, p).unwrap().powf(p) * (-x).exp(), -80.0, 80.0);
        let target = 2.0 * profiles::tail_constant(p);
        let err = (v - target).abs();
        pass &= err <= 1e-8;
        parts.push(format!("p={p}: |int Q^p e^-x - 2c_Q| = {err:.2e}"));
    }
    Outcome::new(pass, format!("{} (tol 1e-8)", parts.join("; ")))
}

fn dichotomy() -> Outcome {
    let params = PhysParams::new(3.0, 1.0, 0.0).unwrap();
    let grid = make_grid(40.0, 1601).unwrap();
    let dt = 0.025;
    let q = grid.sample(|x| profiles::soliton_q(x, 3.0).unwrap());
    let scaled = |c: f64| {
        let mut u: Vec<f64> = q.iter().map(|x| c * x).collect();
        let n = u.len();
        u[0] = 0.0;
        u[n - 1] = 0.0;
        State::at_rest(u)
    };
    let opts = ClassifyOptions::new(dt, 30.0, Symmetry::None);

    let t0 = Instant::now();
    let small = classify_trajectory(&scaled(0.5), &params, &grid, &opts).unwrap();
    let decay_ok = small.classification == Classification::Decays;
    let final_norm = if decay_ok {
        confirm_decay(&small, &params, &grid, dt, 30.0 - small.certificate_time).unwrap()
    } else {
        f64::NAN
    };
    let el_small = t0.elapsed();

    let t1 = Instant::now();
    let large = classify_trajectory(&scaled(1.5), &params, &grid, &opts).unwrap();
    let el_large = t1.elapsed();
    let cap_hit = large.summary.exit == ExitReason::BlowupCap;

    let pass = decay_ok && final_norm < 1e-3 && within(el_small, 10.0) && large.classification == Classification::BlowsUp && cap_hit && within(el_large, 10.0);
    Outcome::new(
        pass,
        format!(
            "0.5Q: {} at t={:.2}, ||(u,v)(30)||_H = {final_norm:.2e} (< 1e-3), {:.2}s; 1.5Q: {} at t={:.2}, exit {}, {:.2}s",
            small.classification.label(),
            small.certificate_time,
            el_small.as_secs_f64(),
            large.classification.label(),
            large.certificate_time,
            large.summary.exit.label(),
            el_large.as_secs_f64()
        ),
    )
}

fn all_certified(r: &ThresholdResult, level: Option<f64>) -> bool {
    r.probes.iter().all(|p| {
        p.outcome.classification != Classification::Undetermined
            && p.outcome
                .certificate
                .is_some_and(|c| level.is_none_or(|l| (c.level_used - l).abs() <= 1e-12 * l))
    })
}

fn shooting_run(varsigma: u8, gamma: f64, limit: f64) -> (bool, String) {
    let params = PhysParams::new(3.0, 1.0, gamma).unwrap();
    let grid = make_grid(60.0, 2401).unwrap();
    let t0 = Instant::now();
    let r = bisect_threshold(&params, &grid, &ShootOptions::new(varsigma, 5.0, 0.025)).unwrap();
    let el = t0.elapsed();
    let level = if varsigma == 1 {
        Some(2.0 * profiles::ground_state_action(3.0).unwrap())
    } else {
        None
    };
    let certified = all_certified(&r, level);
    let pass = r.converged && r.bracket_width <= 1e-10 && r.lambda_star.abs() <= 0.1 && certified && within(el, limit);
    (
        pass,
        format!(
            "varsigma={varsigma}, gamma={gamma}: lambda*={:.6e}, width {:.1e} (<= 1e-10), {} probes, all certified: {certified}, {:.2}s (< {limit}s)",
            r.lambda_star,
            r.bracket_width,
            r.probes.len(),
            el.as_secs_f64()
        ),
    )
}

fn shooting() -> Outcome {
    let (a, sa) = shooting_run(0, -1.0, 180.0);
    let (b, sb) = shooting_run(1, -2.5, 300.0);
    let r_level = level_r(&PhysParams::new(3.0, 1.0, -2.5).unwrap()).unwrap();
    Outcome::new(a && b, sa)
        .note(sb)
        .note(format!("even-sector level r_gamma at gamma=-2.5: {r_level:.6} (= 2 J_0(Q) = 8/3)"))
}

fn center_dynamics() -> Outcome {
    let params = PhysParams::new(3.0, 1.0, -1.0).unwrap();
    let grid = make_grid(60.0, 2401).unwrap();
    let z0 = 3.0;
    let t0 = Instant::now();
    let r = bisect_threshold(&params, &grid, &ShootOptions::new(0, z0, 0.025)).unwrap();
    let s0 = initial_family(r.lambda_star, 0, z0, &grid, &params).unwrap();
    let traj = record_frames(&s0, &params, &grid, 0.025, 40.0, 4).unwrap();
    let cfg = ModulationConfig::for_params(&params);
    let rep = track_center(&traj.states, Reference::single(), z0, &params, &grid, &cfg).unwrap();
    let el = t0.elapsed();

    let (w0, w1) = rep.window;
    let window_frames = w1 - w0;
    // (a) needs at least a few dominated frames; (b) needs an actual window.
    let a_ok = rep.dominated_frames >= 3 && rep.worst_dominated_gap.is_some_and(|g| g <= 0.15);
    let slope = rep.e2z_slope.unwrap_or(f64::NAN);
    let b_ok = window_frames >= 10 && (slope - 6.0).abs() <= 0.2 * 6.0;
    let c_ok = window_frames >= 10 && rep.half_log_nonincreasing;
    let pass = a_ok && b_ok && c_ok && within(el, 120.0);

    // diagnostics over every frame that stayed in the tube
    let pts: Vec<(f64, f64)> = rep.frames.iter().map(|f| (f.t, (2.0 * f.z).exp())).collect();
    let tube_slope = slope_of(&pts);
    let gaps: Vec<f64> = rep
        .reports
        .iter()
        .skip(1)
        .take(rep.reports.len().saturating_sub(2))
        .map(|q| q.relative_gap)
        .collect();
    let median_gap = median(gaps);
    let sc = profiles::spectral_constants(&params);
    let qn = profiles::q_deriv_norm_sq(3.0).unwrap();
    let g = params.gamma();
    let with_trace = -2.0 * g * sc.c_q * sc.c_q / ((2.0 - g) * params.alpha() * qn);
    let eps_first = rep.frames.first().map(|f| f.eps_norm_h).unwrap_or(f64::NAN);
    let eps_later = rep.frames.iter().find(|f| f.t >= 1.0).map(|f| f.eps_norm_h).unwrap_or(f64::NAN);

    let mut s = String::new();
    let _ = write!(
        s,
        "window {window_frames} frames (eps_H <= 0.05); (a) {} dominated frames, worst gap {} (<= 0.15): {}; (b) slope {} vs 6 +/- 20%: {}; (c) sup(z - log t/2) = {:.4}, non-increasing: {}; {:.1}s (< 120s)",
        rep.dominated_frames,
        fmt_opt(rep.worst_dominated_gap),
        mark(a_ok),
        fmt_opt(rep.e2z_slope),
        mark(b_ok),
        rep.sup_half_log,
        rep.half_log_nonincreasing,
        el.as_secs_f64()
    );
    Outcome::new(pass, s)
        .note(format!(
            "lambda* = {:.6e}; {} tube frames up to t = {:.2}",
            r.lambda_star,
            rep.frames.len(),
            rep.frames.last().map(|f| f.t).unwrap_or(0.0)
        ))
        .note(format!(
            "||(eps,eta)||_H is {eps_first:.2e} at t=0 and {eps_later:.3} by t=1: the point interaction builds a quasi-static tail"
        ))
        .note("~ gamma Q(z)/(2-gamma) e^{-|x|} whose norm exceeds 0.05 and whose square exceeds e^{-2z}/10 at z=3")
        .note(format!(
            "e^{{2z}} slope over all tube frames: {tube_slope:.3}; leading term alone predicts 6, leading + trace term predicts {with_trace:.3}"
        ))
        .note(format!(
            "median relative gap, measured z' vs predicted (with trace term), over tube frames: {median_gap:.3e}"
        ))
}

fn slope_of(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    if pts.len() < 2 {
        return f64::NAN;
    }
    let mt = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let cov: f64 = pts.iter().map(|p| (p.0 - mt) * (p.1 - my)).sum();
    let var: f64 = pts.iter().map(|p| (p.0 - mt).powi(2)).sum();
    cov / var
}

fn median(mut v: Vec<f64>) -> f64 {
    v.retain(|x| x.is_finite());
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| format!("{v:.4}")).unwrap_or_else(|| "n/a".into())
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "fail"
    }
}

fn variational_levels() -> Outcome {
    let grid = make_grid(40.0, 1601).unwrap();
    let run = |gamma: f64, sym: Symmetry| {
        let params = PhysParams::new(3.0, 1.0, gamma).unwrap();
        let varsigma = if sym == Symmetry::Even { 1 } else { 0 };
        let u0 = initial_family(0.0, varsigma, 3.0, &grid, &params).unwrap().u;
        let t0 = Instant::now();
        let rep = minimize_level(&params, &grid, sym, &u0, DEFAULT_MAX_ITERS).unwrap();
        (rep, t0.elapsed())
    };
    let (even, te) = run(-1.0, Symmetry::Even);
    let (free, tf) = run(-1.0, Symmetry::None);
    let (even_r, tr) = run(-2.5, Symmetry::Even);
    let g1 = (even.level_estimate - 2.25).abs() / 2.25;
    let g2 = (free.level_estimate - 4.0 / 3.0).abs() / (4.0 / 3.0);
    let g3 = (even_r.level_estimate - 8.0 / 3.0).abs() / (8.0 / 3.0);
    let pass = g1 <= 0.01 && g2 <= 0.01 && free.escaped && g3 <= 0.02 && even_r.escaped && [te, tf, tr].iter().all(|t| within(*t, 60.0));
    Outcome::new(
        pass,
        format!(
            "even gamma=-1: {:.6} vs 9/4 (gap {g1:.2e} <= 1e-2); free gamma=-1: {:.6} vs 4/3 (gap {g2:.2e} <= 1e-2), escaped {}; even gamma=-2.5: {:.6} vs 8/3 (gap {g3:.2e} <= 2e-2), escaped {}",
            even.level_estimate, free.level_estimate, free.escaped, even_r.level_estimate, even_r.escaped
        ),
    )
    .note(format!(
        "iterations {}/{}/{}, times {:.2}s/{:.2}s/{:.2}s (< 60s each)",
        even.iterations,
        free.iterations,
        even_r.iterations,
        te.as_secs_f64(),
        tf.as_secs_f64(),
        tr.as_secs_f64()
    ))
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn symmetry_determinism() -> Outcome {
    let params = PhysParams::new(3.0, 1.0, -1.0).unwrap();
    let grid = make_grid(30.0, 1201).unwrap();
    // asymmetric, moving data below the threshold
    let mut s = initial_family(-0.05, 0, 4.0, &grid, &params).unwrap();
    for j in 1..grid.n() - 1 {
        let x = grid.x(j);
        s.u[j] += 0.1 * (-(x + 2.0).powi(2)).exp();
        s.v[j] = 0.2 * x * (-(x - 1.0).powi(2)).exp();
    }
    let run = |st: &State| {
        evolve(st, &params, &grid, &quiet(0.025, 5.0), |_, _| ControlFlow::Continue(()))
            .unwrap()
            .final_state
    };
    let base = run(&s);
    let neg = run(&s.negated()).negated();
    let refl = run(&s.reflected()).reflected();
    let sign_err = max_diff(&base.u, &neg.u).max(max_diff(&base.v, &neg.v));
    let refl_err = max_diff(&base.u, &refl.u).max(max_diff(&base.v, &refl.v));
    let scale = base.sup_u().max(1.0);
    let rounding = 1e-13 * scale;

    // byte-identical re-runs through the CLI driver
    let text = "gamma = -1\nL = 30\nn = 1201\nT = 3\ninitial = family\nlambda = -0.05\nz0 = 4\nsnapshot_stride = 10\n";
    let dirs = [tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap()];
    let outs: Vec<_> = dirs.iter().map(|d| kgdelta::cli::run_from_text("simulate", text, d.path())).collect();
    let mut identical = outs.iter().all(|o| o.exit_code == 0) && outs[0].artifacts.len() == outs[1].artifacts.len();
    let mut files = 0;
    for (a, b) in outs[0].artifacts.iter().zip(&outs[1].artifacts) {
        identical &= std::fs::read(a).unwrap() == std::fs::read(b).unwrap();
        files += 1;
    }

    let once = nehari_project(&s.u, &params, &grid).unwrap();
    let twice = nehari_project(&once, &params, &grid).unwrap();
    let idem = max_diff(&once, &twice);

    let pass = sign_err <= rounding && refl_err <= rounding && identical && idem <= 1e-12;
    Outcome::new(
        pass,
        format!(
            "sign err {sign_err:.1e}, reflection err {refl_err:.1e} (<= {rounding:.1e}); {files} output files byte-identical: {identical}; Nehari idempotence {idem:.1e} (<= 1e-12)"
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 10] = [
        ("stationarity of the pinned soliton", stationarity),
        ("energy dissipation identity", energy_identity),
        ("linear decay", linear_decay),
        ("linearized spectral residuals", spectral),
        ("interaction identity", interaction_identity),
        ("dichotomy certificates", dichotomy),
        ("threshold shooting", shooting),
        ("center dynamics", center_dynamics),
        ("variational levels", variational_levels),
        ("symmetry and determinism", symmetry_determinism),
    ];
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let o = f();
        println!("criterion {:>2} [{}] {name}: {}", i + 1, if o.pass { "PASS" } else { "FAIL" }, o.summary);
        for n in &o.notes {
            println!("      {n}");
        }
        if !o.pass {
            failed.push(i + 1);
        }
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed.len(), criteria.len());
    if failed.is_empty() {
        ExitCode::SUCCESS
    } else {
        println!("acceptance: failing criteria {failed:?}");
        ExitCode::FAILURE
    }
}
