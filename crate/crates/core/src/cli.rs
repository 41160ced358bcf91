//! Subcommand drivers behind the `kg` binary. Every artifact embeds the
//! resolved configuration; numbers use the fixed 17-digit format.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::ops::ControlFlow;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde_json::Value;

use crate::config::{parse_config_for, InitialKind, RunConfig, SymmetryChoice, VarInit};
use crate::error::{Error, Result};
use crate::evolution::{self, build_operator, evolve, EvolveOptions, ExitReason, StepOptions};
use crate::experiments::{
    self, bisect_threshold, classify_trajectory, initial_family, Classification, ClassifyOptions, ShootOptions, Symmetry, ThresholdResult,
};
use crate::field::{self, read_snapshot, write_snapshot, GridSpec, State};
use crate::modulation::{self, decompose, fit_center, ModulationConfig, Reference};
use crate::output::{int, num, text, write_json, CsvWriter, Obj};
use crate::profiles::{self, PhysParams};
use crate::variational::{self, minimize_level, nehari_project, reference_levels};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;
pub const EXIT_CHECK_FAILED: i32 = 4;

pub const SUBCOMMANDS: &[&str] = &["profile", "simulate", "shoot", "track", "variational", "check"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub exit_code: i32,
    pub artifacts: Vec<PathBuf>,
    /// Error text for nonzero exits.
    pub message: Option<String>,
}

pub fn exit_code_for(err: &Error) -> i32 {
    match err {
        Error::Config { .. } => EXIT_CONFIG,
        _ => EXIT_NUMERIC,
    }
}

/// Parses `config_text` and runs `name`, writing artifacts into `out_dir`.
pub fn run_from_text(name: &str, config_text: &str, out_dir: &Path) -> RunOutcome {
    match parse_config_for(config_text, Some(name)) {
        Ok(cfg) => run_subcommand(name, &cfg, out_dir),
        Err(e) => RunOutcome {
            exit_code: exit_code_for(&e),
            artifacts: Vec::new(),
            message: Some(format!("config error: {e}")),
        },
    }
}

pub fn run_subcommand(name: &str, cfg: &RunConfig, out_dir: &Path) -> RunOutcome {
    if !SUBCOMMANDS.contains(&name) {
        return RunOutcome {
            exit_code: EXIT_CONFIG,
            artifacts: Vec::new(),
            message: Some(format!("unknown subcommand '{name}'; expected one of {}", SUBCOMMANDS.join(", "))),
        };
    }
    if cfg.needs_family_room(Some(name)) && !cfg.has_family_room() {
        return RunOutcome {
            exit_code: EXIT_CONFIG,
            artifacts: Vec::new(),
            message: Some(format!(
                "config error: {}",
                Error::Config {
                    line: 0,
                    msg: cfg.family_room_message()
                }
            )),
        };
    }
    let mut out = Artifacts {
        dir: out_dir.to_path_buf(),
        written: Vec::new(),
    };
    let result = fs::create_dir_all(out_dir).map_err(Error::from).and_then(|_| {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build()
            .map_err(|e| Error::Precondition(format!("worker pool: {e}")))?;
        pool.install(|| match name {
            "profile" => cmd_profile(cfg, &mut out),
            "simulate" => cmd_simulate(cfg, &mut out),
            "shoot" => cmd_shoot(cfg, &mut out),
            "track" => cmd_track(cfg, &mut out),
            "variational" => cmd_variational(cfg, &mut out),
            "check" => cmd_check(cfg, &mut out),
            _ => unreachable!("subcommand list checked above"),
        })
    });
    match result {
        Ok(code) => RunOutcome {
            exit_code: code,
            artifacts: out.written,
            message: None,
        },
        Err(e) => {
            // partial outputs carry an explicit marker
            let summary = header(name, cfg, true).set("error", text(e.to_string())).build();
            let _ = out.json(&format!("{name}.json"), &summary);
            RunOutcome {
                exit_code: exit_code_for(&e),
                artifacts: out.written,
                message: Some(e.to_string()),
            }
        }
    }
}

struct Artifacts {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Artifacts {
    fn create(&mut self, name: &str) -> Result<BufWriter<File>> {
        let path = self.dir.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        let f = File::create(&path)?;
        self.written.push(path);
        Ok(BufWriter::new(f))
    }

    fn json(&mut self, name: &str, value: &Value) -> Result<()> {
        let mut w = self.create(name)?;
        write_json(&mut w, value)?;
        w.flush()?;
        Ok(())
    }
}

fn header(command: &str, cfg: &RunConfig, incomplete: bool) -> Obj {
    Obj::new()
        .set("command", text(command))
        .set("config", cfg.to_json())
        .set("incomplete", Value::Bool(incomplete))
}

fn comment(command: &str, cfg: &RunConfig) -> String {
    format!("kg {command} {}", cfg.echo_line())
}

fn setup(cfg: &RunConfig) -> Result<(PhysParams, GridSpec)> {
    Ok((cfg.params()?, cfg.grid()?))
}

fn cmd_profile(cfg: &RunConfig, out: &mut Artifacts) -> Result<i32> {
    let (params, grid) = setup(cfg)?;
    let p = params.p();
    let pinned = params.gamma().abs() < 2.0;
    {
        let mut w = out.create("profile.csv")?;
        let mut csv = CsvWriter::new(&mut w, Some(&comment("profile", cfg)), &["x", "Q", "Q_gamma", "Q_deriv", "phi"])?;
        for j in 0..grid.n() {
            let x = grid.x(j);
            let qg = if pinned { profiles::soliton_q_gamma(x, &params)? } else { f64::NAN };
            csv.row(&[
                x,
                profiles::soliton_q(x, p)?,
                qg,
                profiles::soliton_q_deriv(x, p)?,
                profiles::neutral_even_mode_phi(x, p)?,
            ])?;
        }
        w.flush()?;
    }
    let sc = profiles::spectral_constants(&params);
    let mut cm = Obj::new();
    for (label, m) in [("2", 2.0), ("3", 3.0), ("p", p)] {
        let c = profiles::interaction_constant_with_bound(m, p)?;
        cm.insert(
            label,
            Obj::new()
                .set("m", num(m))
                .set("value", num(c.value))
                .set("truncation_bound", num(c.truncation_bound))
                .build(),
        );
    }
    let levels = reference_levels(&params)?;
    let lin = evolution::linearized_residuals(0.0, &grid, &params)?;
    let summary = header("profile", cfg, false)
        .set("c_Q", num(sc.c_q))
        .set("nu", num(sc.nu))
        .set("nu_plus", num(sc.nu_plus))
        .set("nu_minus", num(sc.nu_minus))
        .set("interaction_constants", cm.build())
        .set("two_c_Q_sq", num(2.0 * sc.c_q * sc.c_q))
        .set("Q_deriv_norm_sq", num(profiles::q_deriv_norm_sq(p)?))
        .set("phi_norm_sq", num(profiles::phi_norm_sq(p)?))
        .set("J0_Q", num(profiles::ground_state_action(p)?))
        .set("J0_Q_direct", num(profiles::ground_state_action_direct(p)?))
        .set("n_gamma", num(levels.n_gamma))
        .set("r_gamma", num(levels.r_gamma))
        .set(
            "pinned_action",
            if pinned {
                num(profiles::pinned_profile_action(&params)?)
            } else {
                Value::Null
            },
        )
        .set("eig_residual", num(lin.eig_residual))
        .set("kernel_residual", num(lin.kernel_residual))
        .build();
    out.json("profile.json", &summary)?;
    Ok(EXIT_OK)
}

fn initial_state(cfg: &RunConfig, params: &PhysParams, grid: &GridSpec) -> Result<State> {
    match cfg.initial {
        InitialKind::Pinned => Ok(State::at_rest(grid.sample(|x| profiles::soliton_q_gamma(x, params).unwrap_or(f64::NAN)))),
        InitialKind::Family => {
            let s = initial_family(cfg.lambda, cfg.varsigma, cfg.z0, grid, params)?;
            Ok(if cfg.sign < 0 { s.negated() } else { s })
        }
        InitialKind::Snapshot => {
            let path = cfg.initial_file.as_deref().ok_or_else(|| Error::Precondition("initial_file missing".into()))?;
            let (hdr, s) = read_snapshot(BufReader::new(File::open(path)?))?;
            if hdr.n != grid.n() || (hdr.half_width - grid.half_width()).abs() > 1e-12 * grid.half_width() {
                return Err(Error::Grid(format!(
                    "snapshot grid (L = {}, n = {}) differs from the configured grid (L = {}, n = {})",
                    hdr.half_width,
                    hdr.n,
                    grid.half_width(),
                    grid.n()
                )));
            }
            Ok(s)
        }
    }
}

fn evolve_options(cfg: &RunConfig) -> EvolveOptions {
    let mut ev = EvolveOptions::new(cfg.dt, cfg.t_final);
    ev.sample_stride = cfg.sample_stride;
    ev.snapshot_stride = cfg.snapshot_stride;
    ev.step = StepOptions {
        blowup_cap: cfg.blowup_cap,
        nonlinear: cfg.nonlinear,
    };
    ev
}

fn cmd_simulate(cfg: &RunConfig, out: &mut Artifacts) -> Result<i32> {
    let (params, grid) = setup(cfg)?;
    let s0 = initial_state(cfg, &params, &grid)?;
    let traj = evolve(&s0, &params, &grid, &evolve_options(cfg), |_, _| ControlFlow::Continue(()))?;
    {
        let mut w = out.create("ledger.csv")?;
        traj.write_scalars_csv(&mut w, Some(&comment("simulate", cfg)))?;
        w.flush()?;
    }
    if cfg.snapshot_stride > 0 {
        for (k, s) in traj.states.iter().enumerate() {
            let mut w = out.create(&format!("snapshots/snapshot_{k:05}.csv"))?;
            write_snapshot(&mut w, s, &params, &grid)?;
            w.flush()?;
        }
    }
    {
        let mut w = out.create("final.csv")?;
        write_snapshot(&mut w, &traj.final_state, &params, &grid)?;
        w.flush()?;
    }
    let e0 = traj.scalars.first().map(|s| s.energy).unwrap_or(f64::NAN);
    let e1 = traj.scalars.last().map(|s| s.energy).unwrap_or(f64::NAN);
    let mw = field::diagnostics_mw(&traj.final_state, &params, &grid, traj.mass_time_integral)?;
    let mut summary = header("simulate", cfg, false)
        .set("exit", text(traj.exit.label()))
        .set("t_end", num(traj.final_state.t))
        .set("energy_initial", num(e0))
        .set("energy_final", num(e1))
        .set("damping_integral", num(traj.ledger.damping_integral))
        .set("identity_defect", num(traj.ledger.identity_defect()))
        .set("worst_energy_increase_rate", num(traj.ledger.worst_increase_rate()))
        .set("sup_norm", num(traj.sup_norm))
        .set("final_norm", num(field::state_norm(&traj.final_state, &grid)?))
        .set("K_final", num(field::functional_k_gamma(&traj.final_state.u, &params, &grid)?))
        .set("P_final", num(field::functional_p(&traj.final_state, &params, &grid)?))
        .set("M_final", num(mw.m_value))
        .set("W_final", num(mw.w_value))
        .set("samples", int(traj.scalars.len()));
    if cfg.initial == InitialKind::Pinned {
        let q = grid.sample(|x| profiles::soliton_q_gamma(x, &params).unwrap_or(f64::NAN));
        let d: Vec<f64> = traj.final_state.u.iter().zip(&q).map(|(a, b)| a - b).collect();
        summary.insert("deviation_from_pinned_h1", num(field::norm_h1(&d, &grid)?));
    }
    out.json("simulate.json", &summary.build())?;
    Ok(EXIT_OK)
}

fn shoot_options(cfg: &RunConfig) -> ShootOptions {
    let mut o = ShootOptions::new(cfg.varsigma, cfg.z0, cfg.dt);
    o.sign = cfg.sign;
    o.lambda_lo = cfg.lambda_lo;
    o.lambda_hi = cfg.lambda_hi;
    o.tol = cfg.tol;
    o.classify.t_max = cfg.t_max;
    o.classify.margin = cfg.cert_margin;
    o.classify.blowup_cap = cfg.blowup_cap;
    o
}

fn threshold_json(r: &ThresholdResult) -> Value {
    let probes: Vec<Value> = r
        .probes
        .iter()
        .map(|p| {
            let o = &p.outcome;
            let mut row = Obj::new()
                .set("lambda", num(p.lambda))
                .set("classification", text(o.classification.label()))
                .set("certificate_time", num(o.certificate_time))
                .set("exit", text(o.summary.exit.label()))
                .set("t_end", num(o.summary.t_end))
                .set("extended", Value::Bool(p.extended))
                .set("boundary_flag", Value::Bool(o.summary.boundary_flag));
            if let Some(c) = &o.certificate {
                row.insert("E_gamma_at_cert", num(c.e_gamma));
                row.insert("K_gamma_at_cert", num(c.k_gamma));
                row.insert("level_used", num(c.level_used));
                row.insert("symmetry", text(c.symmetry.label()));
            }
            row.build()
        })
        .collect();
    Obj::new()
        .set("lambda_star", num(r.lambda_star))
        .set("bracket", Value::Array(vec![num(r.bracket.0), num(r.bracket.1)]))
        .set("bracket_width", num(r.bracket_width))
        .set("low_side", text(r.low_side.label()))
        .set("converged", Value::Bool(r.converged))
        .set("monotone", Value::Bool(r.monotone))
        .set("probes", Value::Array(probes))
        .build()
}

fn cmd_shoot(cfg: &RunConfig, out: &mut Artifacts) -> Result<i32> {
    let (params, grid) = setup(cfg)?;
    let r = bisect_threshold(&params, &grid, &shoot_options(cfg))?;
    {
        let mut w = out.create("probes.csv")?;
        let mut csv = CsvWriter::new(
            &mut w,
            Some(&comment("shoot", cfg)),
            &[
                "index",
                "lambda",
                "classification",
                "certificate_time",
                "E_gamma_at_cert",
                "K_gamma_at_cert",
                "t_end",
                "exit",
            ],
        )?;
        for (i, p) in r.probes.iter().enumerate() {
            let o = &p.outcome;
            let (e, k) = o.certificate.map(|c| (c.e_gamma, c.k_gamma)).unwrap_or((f64::NAN, f64::NAN));
            csv.raw_row(&[
                i.to_string(),
                crate::output::fmt_f64(p.lambda),
                o.classification.label().to_string(),
                crate::output::fmt_f64(o.certificate_time),
                crate::output::fmt_f64(e),
                crate::output::fmt_f64(k),
                crate::output::fmt_f64(o.summary.t_end),
                o.summary.exit.label().to_string(),
            ])?;
        }
        w.flush()?;
    }
    for (i, p) in r.probes.iter().enumerate() {
        let mut w = out.create(&format!("probes/probe_{i:03}.csv"))?;
        let mut csv = CsvWriter::new(
            &mut w,
            Some(&format!("{} probe={i} lambda={}", comment("shoot", cfg), crate::output::fmt_f64(p.lambda))),
            &["t", "E_gamma", "H1_norm", "L2_v", "u_at_0", "damping_integral"],
        )?;
        for s in &p.outcome.summary.scalars {
            csv.row(&[s.t, s.energy, s.h1_norm, s.l2_v_norm, s.u_at_0, s.damping_integral])?;
        }
        csv.into_inner().flush()?;
    }
    let mut summary = header("shoot", cfg, false);
    summary.insert("threshold", threshold_json(&r));
    out.json("shoot.json", &summary.build())?;
    Ok(if r.converged { EXIT_OK } else { EXIT_NUMERIC })
}

fn cmd_track(cfg: &RunConfig, out: &mut Artifacts) -> Result<i32> {
    let (params, grid) = setup(cfg)?;
    let mut summary = header("track", cfg, false);
    let lambda = match cfg.track_lambda {
        Some(l) => l,
        None => {
            let r = bisect_threshold(&params, &grid, &shoot_options(cfg))?;
            summary.insert("threshold", threshold_json(&r));
            r.lambda_star
        }
    };
    let mut s0 = initial_family(lambda, cfg.varsigma, cfg.z0, &grid, &params)?;
    if cfg.sign < 0 {
        s0 = s0.negated();
    }
    let traj = experiments::record_frames(&s0, &params, &grid, cfg.dt, cfg.t_track, cfg.frame_stride)?;
    let mcfg = ModulationConfig {
        mu: cfg.mu,
        l_weight: cfg.l_weight,
        tube_radius: cfg.tube_radius,
    };
    let r = Reference::new(cfg.varsigma, cfg.sign)?;
    let rep = experiments::track_center(&traj.states, r, cfg.z0, &params, &grid, &mcfg)?;
    {
        let mut w = out.create("frames.csv")?;
        modulation::write_frames_csv(&mut w, Some(&comment("track", cfg)), &rep.frames, &rep.reports)?;
        w.flush()?;
    }
    let opt = |x: Option<f64>| x.map(num).unwrap_or(Value::Null);
    let drift = if rep.window.1 - rep.window.0 >= 2 {
        match modulation::eigenmode_drift_check(rep.window_frames(), &params) {
            Ok(d) => Obj::new()
                .set("max_ratio_plus", num(d.max_ratio_plus))
                .set("max_ratio_minus", num(d.max_ratio_minus))
                .set("max_ratio_zero", num(d.max_ratio_zero))
                .build(),
            Err(e) => text(e.to_string()),
        }
    } else {
        Value::Null
    };
    summary.insert("lambda", num(lambda));
    summary.insert("frames", int(rep.frames.len()));
    summary.insert("window", Value::Array(vec![int(rep.window.0), int(rep.window.1)]));
    summary.insert("window_empty", Value::Bool(rep.empty));
    summary.insert("ended_out_of_tube", Value::Bool(rep.ended_out_of_tube));
    summary.insert("sup_half_log", num(rep.sup_half_log));
    summary.insert("half_log_nonincreasing", Value::Bool(rep.half_log_nonincreasing));
    summary.insert("e2z_slope", opt(rep.e2z_slope));
    summary.insert("dominated_frames", int(rep.dominated_frames));
    summary.insert("worst_dominated_gap", opt(rep.worst_dominated_gap));
    summary.insert("sandwich_constant", opt(rep.sandwich_constant));
    summary.insert("unstable_ratio", opt(rep.unstable_ratio));
    summary.insert("eigenmode_drift", drift);
    out.json("track.json", &summary.build())?;
    Ok(EXIT_OK)
}

fn var_initial(cfg: &RunConfig, params: &PhysParams, grid: &GridSpec, sym: Symmetry) -> Result<Vec<f64>> {
    match cfg.var_init {
        VarInit::Pinned => {
            let mut u = Vec::with_capacity(grid.n());
            for j in 0..grid.n() {
                let x = grid.x(j);
                u.push(profiles::soliton_q_gamma(x, params)? + 0.05 * (-x * x).exp());
            }
            let n = u.len();
            u[0] = 0.0;
            u[n - 1] = 0.0;
            Ok(u)
        }
        VarInit::Shifted => {
            let varsigma = if sym == Symmetry::Even { 1 } else { 0 };
            Ok(initial_family(0.0, varsigma, cfg.z0, grid, params)?.u)
        }
    }
}

fn cmd_variational(cfg: &RunConfig, out: &mut Artifacts) -> Result<i32> {
    let (params, grid) = setup(cfg)?;
    let syms: Vec<Symmetry> = match cfg.symmetry {
        SymmetryChoice::Even => vec![Symmetry::Even],
        SymmetryChoice::None => vec![Symmetry::None],
        SymmetryChoice::Both => vec![Symmetry::Even, Symmetry::None],
    };
    let reports: Vec<Result<variational::MinimizationReport>> = syms
        .par_iter()
        .map(|&s| {
            let u0 = var_initial(cfg, &params, &grid, s)?;
            minimize_level(&params, &grid, s, &u0, cfg.max_iters)
        })
        .collect();
    let mut all = Obj::new();
    for (s, rep) in syms.iter().zip(reports) {
        let rep = rep?;
        {
            let mut w = out.create(&format!("variational_{}.csv", s.label()))?;
            rep.write_history_csv(&mut w, Some(&comment("variational", cfg)))?;
            w.flush()?;
        }
        all.insert(
            s.label(),
            Obj::new()
                .set("level_estimate", num(rep.level_estimate))
                .set("reference_level", num(rep.reference_level))
                .set("relative_gap", num(rep.relative_gap()))
                .set("escaped", Value::Bool(rep.escaped))
                .set("center_drift", num(rep.escape_diagnostic.center_drift))
                .set("mass_near_origin", num(rep.escape_diagnostic.mass_near_origin))
                .set("iterations", int(rep.iterations))
                .set("status", text(rep.status.label()))
                .build(),
        );
    }
    let summary = header("variational", cfg, false).set("runs", all.build()).build();
    out.json("variational.json", &summary)?;
    Ok(EXIT_OK)
}

struct CheckResult {
    pass: bool,
    value: f64,
    detail: String,
}

impl CheckResult {
    fn bound(value: f64, limit: f64) -> Self {
        Self {
            pass: value <= limit,
            value,
            detail: format!("{} <= {}", crate::output::fmt_f64(value), crate::output::fmt_f64(limit)),
        }
    }

    fn flag(pass: bool, value: f64, detail: impl Into<String>) -> Self {
        Self {
            pass,
            value,
            detail: detail.into(),
        }
    }

    fn skipped(why: &str) -> Self {
        Self {
            pass: true,
            value: f64::NAN,
            detail: format!("skipped: {why}"),
        }
    }
}

type Check = fn(&PhysParams, &GridSpec) -> Result<CheckResult>;

fn perturbed_family(grid: &GridSpec, params: &PhysParams, seed: u64) -> Result<State> {
    let z = (grid.half_width() / 8.0).min(5.0);
    let mut s = initial_family(0.0, 0, z, grid, params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (a, c, b) = (rng.gen_range(-0.1..0.1), rng.gen_range(-2.0..2.0), rng.gen_range(-0.1..0.1));
    let n = s.u.len();
    for j in 1..n - 1 {
        let x = grid.x(j);
        s.u[j] += a * (-(x - c) * (x - c)).exp();
        s.v[j] = b * (-(x + c) * (x + c)).exp();
    }
    Ok(s)
}

fn short_run(s: &State, params: &PhysParams, grid: &GridSpec, t: f64) -> Result<evolution::Trajectory> {
    let mut ev = EvolveOptions::new(0.5 * grid.h(), t);
    ev.sample_stride = 4;
    ev.snapshot_stride = 0;
    evolve(s, params, grid, &ev, |_, _| ControlFlow::Continue(()))
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

const CHECKS: &[(&str, Check)] = &[
    ("amplitude_identities", |params, grid| {
        let s = perturbed_family(grid, params, 5)?;
        let z = (grid.half_width() / 8.0).min(5.0);
        let f = decompose(&s, z, Reference::single(), params, grid, &ModulationConfig::for_params(params))?;
        let sc = profiles::spectral_constants(params);
        let d1 = (f.a_plus - f.a_minus - (sc.nu_plus - sc.nu_minus) * f.eps_phi).abs();
        let d2 = (sc.nu_plus * f.a_plus - sc.nu_minus * f.a_minus - (sc.nu_plus - sc.nu_minus) * f.eta_phi).abs();
        Ok(CheckResult::bound(d1.max(d2), 1e-12))
    }),
    ("certificate_examples", |params, grid| {
        let p = params.p();
        let opts = ClassifyOptions::new(0.5 * grid.h(), 60.0, Symmetry::None);
        let small = State::at_rest(grid.sample(|x| 0.5 * profiles::soliton_q(x, p).unwrap_or(0.0)));
        let large = State::at_rest(grid.sample(|x| 1.5 * profiles::soliton_q(x, p).unwrap_or(0.0)));
        let (a, b) = rayon::join(
            || classify_trajectory(&small, params, grid, &opts),
            || classify_trajectory(&large, params, grid, &opts),
        );
        let (a, b) = (a?.classification, b?.classification);
        Ok(CheckResult::flag(
            a == Classification::Decays && b == Classification::BlowsUp,
            f64::NAN,
            format!("0.5 Q: {}, 1.5 Q: {}", a.label(), b.label()),
        ))
    }),
    ("determinism", |params, grid| {
        let s = perturbed_family(grid, params, 1)?;
        let a = short_run(&s, params, grid, 2.0)?;
        let b = short_run(&s, params, grid, 2.0)?;
        let same = a.final_state == b.final_state && a.scalars == b.scalars;
        Ok(CheckResult::flag(
            same,
            max_abs_diff(&a.final_state.u, &b.final_state.u),
            "two identical runs compared bitwise",
        ))
    }),
    ("energy_identity", |params, grid| {
        let s = perturbed_family(grid, params, 2)?;
        let t = short_run(&s, params, grid, 2.0)?;
        Ok(CheckResult::bound(t.ledger.identity_defect(), 1e-3))
    }),
    ("energy_nonincreasing", |params, grid| {
        let s = perturbed_family(grid, params, 3)?;
        let t = short_run(&s, params, grid, 2.0)?;
        let e0 = t.ledger.energies.first().copied().unwrap_or(0.0);
        let rise = t.ledger.energies.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        Ok(CheckResult::bound(rise, 1e-6 * e0.abs().max(1.0)))
    }),
    ("even_sector_preserved", |params, grid| {
        let z = (grid.half_width() / 8.0).min(5.0);
        let s = initial_family(0.1, 1, z, grid, params)?;
        let t = short_run(&s, params, grid, 2.0)?;
        let r = t.final_state.reflected();
        Ok(CheckResult::bound(
            max_abs_diff(&t.final_state.u, &r.u).max(max_abs_diff(&t.final_state.v, &r.v)),
            0.0,
        ))
    }),
    ("fit_center_orthogonality", |params, grid| {
        let s = perturbed_family(grid, params, 4)?;
        let z = (grid.half_width() / 8.0).min(5.0);
        let cfg = ModulationConfig::for_params(params);
        let z1 = fit_center(&s, Reference::single(), z, params, grid, &cfg)?;
        let z2 = fit_center(&s, Reference::single(), z + 0.1, params, grid, &cfg)?;
        let g = modulation::orthogonality(&s, z1, Reference::single(), params, grid)?;
        Ok(CheckResult::flag(
            g.abs() <= 1e-10 && (z1 - z2).abs() <= 1e-8,
            g.abs(),
            format!("|G| = {:e}, refit shift {:e}", g.abs(), (z1 - z2).abs()),
        ))
    }),
    ("interaction_identity", |params, _| {
        let p = params.p();
        let cq = profiles::tail_constant(p);
        let v = profiles::interaction_constant_cm(p, p)?;
        Ok(CheckResult::bound((v - 2.0 * cq * cq).abs() / (2.0 * cq * cq), 1e-10))
    }),
    ("level_ordering", |params, _| {
        let l = reference_levels(params)?;
        Ok(CheckResult::bound(l.n_gamma - l.r_gamma, 2e-3))
    }),
    ("linearized_second_order", |params, grid| {
        let base = params.with_gamma(0.0)?;
        let a = evolution::linearized_residuals(0.0, grid, &base)?;
        let b = evolution::linearized_residuals(0.0, &grid.refined(), &base)?;
        let ratio = (a.eig_residual / b.eig_residual).min(a.kernel_residual / b.kernel_residual);
        Ok(CheckResult::flag(ratio >= 3.5, ratio, format!("refinement ratio {ratio:.3} >= 3.5")))
    }),
    ("nehari_idempotence", |params, grid| {
        let s = perturbed_family(grid, params, 6)?;
        let once = nehari_project(&s.u, params, grid)?;
        let twice = nehari_project(&once, params, grid)?;
        let k = field::functional_k_gamma(&once, params, grid)?;
        let d = max_abs_diff(&once, &twice);
        Ok(CheckResult::flag(
            d <= 1e-12 && k.abs() <= 1e-10,
            d,
            format!("max diff {d:e}, |K| {:e}", k.abs()),
        ))
    }),
    ("operator_reflection", |params, grid| {
        let op = build_operator(grid, params);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = grid.n();
        let mut u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        u[0] = 0.0;
        u[n - 1] = 0.0;
        let mut r = u.clone();
        r.reverse();
        let mut a = op.apply(&u);
        a.reverse();
        Ok(CheckResult::bound(max_abs_diff(&a, &op.apply(&r)), 0.0))
    }),
    ("pinned_jump_condition", |params, _| {
        if params.gamma().abs() >= 2.0 {
            return Ok(CheckResult::skipped("no pinned profile for |gamma| >= 2"));
        }
        let right = profiles::soliton_q_gamma_deriv(0.0, params)?;
        let left = profiles::soliton_q_gamma_deriv(-0.0, params)?;
        let q0 = profiles::soliton_q_gamma(0.0, params)?;
        Ok(CheckResult::bound((right - left + params.gamma() * q0).abs(), 1e-10))
    }),
    ("profile_ode_residual", |params, grid| {
        let p = params.p();
        let h = 1e-3;
        let q = |x: f64| profiles::soliton_q(x, p).unwrap_or(f64::NAN);
        let mut worst = 0.0f64;
        for j in (0..grid.n()).step_by(7) {
            let x = grid.x(j);
            let d2 = (-q(x + 2.0 * h) + 16.0 * q(x + h) - 30.0 * q(x) + 16.0 * q(x - h) - q(x - 2.0 * h)) / (12.0 * h * h);
            worst = worst.max((d2 - q(x) + q(x).powf(p)).abs());
        }
        Ok(CheckResult::bound(worst, 1e-6))
    }),
    ("reflection_equivariance", |params, grid| {
        let s = perturbed_family(grid, params, 7)?;
        let a = short_run(&s, params, grid, 2.0)?;
        let b = short_run(&s.reflected(), params, grid, 2.0)?;
        let r = b.final_state.reflected();
        Ok(CheckResult::bound(
            max_abs_diff(&a.final_state.u, &r.u).max(max_abs_diff(&a.final_state.v, &r.v)),
            0.0,
        ))
    }),
    ("sign_equivariance", |params, grid| {
        let s = perturbed_family(grid, params, 8)?;
        let a = short_run(&s, params, grid, 2.0)?;
        let b = short_run(&s.negated(), params, grid, 2.0)?;
        let r = b.final_state.negated();
        Ok(CheckResult::bound(
            max_abs_diff(&a.final_state.u, &r.u).max(max_abs_diff(&a.final_state.v, &r.v)),
            0.0,
        ))
    }),
];

/// Names of the invariant checks run by `check`, in output order.
pub fn check_names() -> Vec<&'static str> {
    CHECKS.iter().map(|(n, _)| *n).collect()
}

fn cmd_check(cfg: &RunConfig, out: &mut Artifacts) -> Result<i32> {
    let (params, grid) = setup(cfg)?;
    let results: Vec<(&str, Result<CheckResult>)> = CHECKS.par_iter().map(|(name, f)| (*name, f(&params, &grid))).collect();
    let mut table = Obj::new();
    let mut failed = 0usize;
    for (name, r) in results {
        let entry = match r {
            Ok(c) => {
                if !c.pass {
                    failed += 1;
                }
                Obj::new()
                    .set("pass", Value::Bool(c.pass))
                    .set("value", num(c.value))
                    .set("detail", text(c.detail))
            }
            Err(e) => {
                failed += 1;
                Obj::new()
                    .set("pass", Value::Bool(false))
                    .set("value", Value::Null)
                    .set("detail", text(format!("error: {e}")))
            }
        };
        table.insert(name, entry.build());
    }
    let summary = header("check", cfg, false)
        .set("checks", table.build())
        .set("failed", int(failed))
        .set("total", int(CHECKS.len()))
        .set("exit", text(ExitReason::Completed.label()))
        .build();
    out.json("check.json", &summary)?;
    Ok(if failed == 0 { EXIT_OK } else { EXIT_CHECK_FAILED })
}
