//! `key = value` run configuration with line-numbered validation.

use std::collections::BTreeMap;

use serde_json::Value;

use crate::error::{Error, Result};
use crate::field::{make_grid, GridSpec};
use crate::output::{int, num, text, Obj};
use crate::profiles::PhysParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InitialKind {
    /// `(Q_gamma, 0)`.
    Pinned,
    /// `sign * e^lambda (Q(. - z0) + varsigma Q(. + z0))`, at rest.
    Family,
    /// Read from `initial_file`.
    Snapshot,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SymmetryChoice {
    Even,
    None,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarInit {
    /// `Q_gamma + 0.05 e^{-x^2}`.
    Pinned,
    /// `Q(. - z0)`, or `Q(. - z0) + Q(. + z0)` in the even sector.
    Shifted,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub p: f64,
    pub alpha: f64,
    pub gamma: f64,
    /// Half-width `L` of the domain `[-L, L]`.
    pub half_width: f64,
    pub n: usize,
    pub dt: f64,
    pub t_final: f64,
    pub sample_stride: usize,
    pub snapshot_stride: usize,
    pub blowup_cap: f64,
    pub nonlinear: bool,
    pub mu: f64,
    pub l_weight: f64,
    pub tube_radius: f64,
    pub cert_margin: f64,
    pub initial: InitialKind,
    pub initial_file: Option<String>,
    pub lambda: f64,
    pub varsigma: u8,
    pub sign: i8,
    pub z0: f64,
    pub lambda_lo: f64,
    pub lambda_hi: f64,
    pub tol: f64,
    pub t_max: f64,
    pub frame_stride: usize,
    pub t_track: f64,
    /// `None`: locate the threshold by bisection before tracking.
    pub track_lambda: Option<f64>,
    pub symmetry: SymmetryChoice,
    pub var_init: VarInit,
    pub max_iters: usize,
    /// Worker threads; 0 lets the pool pick.
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            p: 3.0,
            alpha: 1.0,
            gamma: -1.0,
            half_width: 40.0,
            n: 1601,
            dt: 0.025,
            t_final: 10.0,
            sample_stride: 4,
            snapshot_stride: 0,
            blowup_cap: crate::evolution::DEFAULT_BLOWUP_CAP,
            nonlinear: true,
            mu: 0.1,
            l_weight: crate::modulation::DEFAULT_L_WEIGHT,
            tube_radius: crate::modulation::DEFAULT_TUBE_RADIUS,
            cert_margin: crate::experiments::DEFAULT_CERT_MARGIN,
            initial: InitialKind::Pinned,
            initial_file: None,
            lambda: 0.0,
            varsigma: 0,
            sign: 1,
            z0: 5.0,
            lambda_lo: -0.3,
            lambda_hi: 0.3,
            tol: crate::experiments::DEFAULT_BISECTION_TOL,
            t_max: crate::experiments::DEFAULT_T_MAX,
            frame_stride: 4,
            t_track: 40.0,
            track_lambda: None,
            symmetry: SymmetryChoice::Both,
            var_init: VarInit::Shifted,
            max_iters: crate::variational::DEFAULT_MAX_ITERS,
            workers: 0,
        }
    }
}

const KEYS: &[&str] = &[
    "p",
    "alpha",
    "gamma",
    "L",
    "n",
    "dt",
    "T",
    "sample_stride",
    "snapshot_stride",
    "blowup_cap",
    "nonlinear",
    "mu",
    "L_weight",
    "tube_radius",
    "cert_margin",
    "initial",
    "initial_file",
    "lambda",
    "varsigma",
    "sign",
    "z0",
    "lambda_lo",
    "lambda_hi",
    "tol",
    "t_max",
    "frame_stride",
    "t_track",
    "track_lambda",
    "symmetry",
    "var_init",
    "max_iters",
    "workers",
];

fn cfg_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Config { line, msg: msg.into() }
}

fn parse_f64(line: usize, key: &str, v: &str) -> Result<f64> {
    let x: f64 = v.parse().map_err(|_| cfg_err(line, format!("{key}: expected a number, got '{v}'")))?;
    if !x.is_finite() {
        return Err(cfg_err(line, format!("{key}: value must be finite")));
    }
    Ok(x)
}

fn parse_usize(line: usize, key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| cfg_err(line, format!("{key}: expected a non-negative integer, got '{v}'")))
}

fn parse_bool(line: usize, key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(cfg_err(line, format!("{key}: expected true or false, got '{v}'"))),
    }
}

/// Parses and validates a configuration. Every key is optional; absent keys
/// take their defaults (`mu` defaults to `0.1 alpha`).
pub fn parse_config(source: &str) -> Result<RunConfig> {
    parse_config_for(source, None)
}

/// As [`parse_config`], adding the checks that only matter to `command`
/// (room for the shifted profiles at `+-z0`).
pub fn parse_config_for(source: &str, command: Option<&str>) -> Result<RunConfig> {
    let mut c = RunConfig::default();
    let mut lines: BTreeMap<&'static str, usize> = BTreeMap::new();
    let mut mu_set = false;
    for (i, raw) in source.lines().enumerate() {
        let line = i + 1;
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        let (k, v) = body
            .split_once('=')
            .ok_or_else(|| cfg_err(line, format!("expected 'key = value', got '{body}'")))?;
        let (k, v) = (k.trim(), v.trim());
        let key = *KEYS
            .iter()
            .find(|&&known| known == k)
            .ok_or_else(|| cfg_err(line, format!("unknown key '{k}'")))?;
        if let Some(prev) = lines.insert(key, line) {
            return Err(cfg_err(line, format!("duplicate key '{key}' (first set on line {prev})")));
        }
        match key {
            "p" => c.p = parse_f64(line, key, v)?,
            "alpha" => c.alpha = parse_f64(line, key, v)?,
            "gamma" => c.gamma = parse_f64(line, key, v)?,
            "L" => c.half_width = parse_f64(line, key, v)?,
            "n" => c.n = parse_usize(line, key, v)?,
            "dt" => c.dt = parse_f64(line, key, v)?,
            "T" => c.t_final = parse_f64(line, key, v)?,
            "sample_stride" => c.sample_stride = parse_usize(line, key, v)?,
            "snapshot_stride" => c.snapshot_stride = parse_usize(line, key, v)?,
            "blowup_cap" => c.blowup_cap = parse_f64(line, key, v)?,
            "nonlinear" => c.nonlinear = parse_bool(line, key, v)?,
            "mu" => {
                c.mu = parse_f64(line, key, v)?;
                mu_set = true;
            }
            "L_weight" => c.l_weight = parse_f64(line, key, v)?,
            "tube_radius" => c.tube_radius = parse_f64(line, key, v)?,
            "cert_margin" => c.cert_margin = parse_f64(line, key, v)?,
            "initial" => {
                c.initial = match v {
                    "pinned" => InitialKind::Pinned,
                    "family" => InitialKind::Family,
                    "snapshot" => InitialKind::Snapshot,
                    _ => return Err(cfg_err(line, format!("initial: expected pinned, family or snapshot, got '{v}'"))),
                }
            }
            "initial_file" => {
                if v.is_empty() {
                    return Err(cfg_err(line, "initial_file: empty path"));
                }
                c.initial_file = Some(v.to_string());
            }
            "lambda" => c.lambda = parse_f64(line, key, v)?,
            "varsigma" => {
                c.varsigma = match v {
                    "0" => 0,
                    "1" => 1,
                    _ => return Err(cfg_err(line, format!("varsigma: expected 0 or 1, got '{v}'"))),
                }
            }
            "sign" => {
                c.sign = match v {
                    "1" | "+1" => 1,
                    "-1" => -1,
                    _ => return Err(cfg_err(line, format!("sign: expected 1 or -1, got '{v}'"))),
                }
            }
            "z0" => c.z0 = parse_f64(line, key, v)?,
            "lambda_lo" => c.lambda_lo = parse_f64(line, key, v)?,
            "lambda_hi" => c.lambda_hi = parse_f64(line, key, v)?,
            "tol" => c.tol = parse_f64(line, key, v)?,
            "t_max" => c.t_max = parse_f64(line, key, v)?,
            "frame_stride" => c.frame_stride = parse_usize(line, key, v)?,
            "t_track" => c.t_track = parse_f64(line, key, v)?,
            "track_lambda" => c.track_lambda = if v == "auto" { None } else { Some(parse_f64(line, key, v)?) },
            "symmetry" => {
                c.symmetry = match v {
                    "even" => SymmetryChoice::Even,
                    "none" => SymmetryChoice::None,
                    "both" => SymmetryChoice::Both,
                    _ => return Err(cfg_err(line, format!("symmetry: expected even, none or both, got '{v}'"))),
                }
            }
            "var_init" => {
                c.var_init = match v {
                    "pinned" => VarInit::Pinned,
                    "shifted" => VarInit::Shifted,
                    _ => return Err(cfg_err(line, format!("var_init: expected pinned or shifted, got '{v}'"))),
                }
            }
            "max_iters" => c.max_iters = parse_usize(line, key, v)?,
            "workers" => c.workers = parse_usize(line, key, v)?,
            _ => unreachable!("key list and match arms agree"),
        }
    }
    if !mu_set {
        c.mu = 0.1 * c.alpha;
    }
    validate(&c, &lines, command)?;
    Ok(c)
}

fn validate(c: &RunConfig, lines: &BTreeMap<&'static str, usize>, command: Option<&str>) -> Result<()> {
    // Cross-key errors cite the latest line among the keys involved; 0 means
    // every involved key took its default.
    let at = |keys: &[&str]| keys.iter().filter_map(|k| lines.get(k).copied()).max().unwrap_or(0);
    let fail = |keys: &[&str], msg: String| Err(cfg_err(at(keys), msg));

    if !(c.p > 2.0) {
        return fail(&["p"], format!("p must satisfy p > 2, got {}", c.p));
    }
    if !(c.alpha > 0.0) {
        return fail(&["alpha"], format!("alpha must satisfy alpha > 0, got {}", c.alpha));
    }
    if !(c.gamma < 2.0) {
        return fail(&["gamma"], format!("gamma must satisfy gamma < 2, got {}", c.gamma));
    }
    if c.n.is_multiple_of(2) || c.n < 3 {
        return fail(&["n"], format!("n must be odd and >= 3 so that x = 0 is a node, got {}", c.n));
    }
    if !(c.half_width > 0.0) {
        return fail(&["L"], format!("L must be > 0, got {}", c.half_width));
    }
    let grid = make_grid(c.half_width, c.n).map_err(|e| cfg_err(at(&["L", "n"]), e.to_string()))?;
    if !(c.dt > 0.0 && c.dt <= grid.h()) {
        return fail(&["dt", "L", "n"], format!("dt must satisfy 0 < dt <= h = {}, got {}", grid.h(), c.dt));
    }
    if !(c.t_final >= 0.0) {
        return fail(&["T"], format!("T must be >= 0, got {}", c.t_final));
    }
    if c.sample_stride == 0 {
        return fail(&["sample_stride"], "sample_stride must be >= 1".into());
    }
    if !(c.blowup_cap > 0.0) {
        return fail(&["blowup_cap"], format!("blowup_cap must be > 0, got {}", c.blowup_cap));
    }
    if !(c.mu > 0.0 && c.mu < 2.0 * c.alpha) {
        return fail(&["mu", "alpha"], format!("mu must lie in (0, 2 alpha) = (0, {}), got {}", 2.0 * c.alpha, c.mu));
    }
    if !(c.l_weight > 0.0) {
        return fail(&["L_weight"], format!("L_weight must be > 0, got {}", c.l_weight));
    }
    if !(c.tube_radius > 0.0) {
        return fail(&["tube_radius"], format!("tube_radius must be > 0, got {}", c.tube_radius));
    }
    if !(c.cert_margin >= 0.0) {
        return fail(&["cert_margin"], format!("cert_margin must be >= 0, got {}", c.cert_margin));
    }
    for (key, v) in [("lambda", c.lambda), ("lambda_lo", c.lambda_lo), ("lambda_hi", c.lambda_hi)] {
        if !(-1.0..=1.0).contains(&v) {
            return fail(&[key], format!("{key} must lie in [-1, 1], got {v}"));
        }
    }
    if let Some(v) = c.track_lambda {
        if !(-1.0..=1.0).contains(&v) {
            return fail(&["track_lambda"], format!("track_lambda must lie in [-1, 1], got {v}"));
        }
    }
    if !(c.lambda_lo < c.lambda_hi) {
        return fail(
            &["lambda_lo", "lambda_hi"],
            format!("lambda_lo must be < lambda_hi, got [{}, {}]", c.lambda_lo, c.lambda_hi),
        );
    }
    if !(c.tol > 0.0) {
        return fail(&["tol"], format!("tol must be > 0, got {}", c.tol));
    }
    if !(c.t_max > 0.0) {
        return fail(&["t_max"], format!("t_max must be > 0, got {}", c.t_max));
    }
    if c.frame_stride == 0 {
        return fail(&["frame_stride"], "frame_stride must be >= 1".into());
    }
    if !(c.t_track >= 0.0) {
        return fail(&["t_track"], format!("t_track must be >= 0, got {}", c.t_track));
    }
    if !(c.z0 >= 0.0) {
        return fail(&["z0"], format!("z0 must be >= 0, got {}", c.z0));
    }
    if c.needs_family_room(command) && !c.has_family_room() {
        return fail(&["z0", "L"], c.family_room_message());
    }
    match c.initial {
        InitialKind::Pinned if c.gamma.abs() >= 2.0 => {
            return fail(&["initial", "gamma"], format!("initial = pinned needs |gamma| < 2, got {}", c.gamma));
        }
        InitialKind::Snapshot if c.initial_file.is_none() => {
            return fail(&["initial"], "initial = snapshot needs initial_file".into());
        }
        _ => {}
    }
    if c.var_init == VarInit::Pinned && c.gamma.abs() >= 2.0 {
        return fail(&["var_init", "gamma"], format!("var_init = pinned needs |gamma| < 2, got {}", c.gamma));
    }
    Ok(())
}

impl RunConfig {
    /// Whether `command` builds profiles centered at `+-z0`.
    pub fn needs_family_room(&self, command: Option<&str>) -> bool {
        match command {
            Some("shoot") | Some("track") => true,
            Some("simulate") => self.initial == InitialKind::Family,
            Some("variational") => self.var_init == VarInit::Shifted,
            _ => false,
        }
    }

    pub fn has_family_room(&self) -> bool {
        self.z0 + 10.0 < self.half_width
    }

    pub(crate) fn family_room_message(&self) -> String {
        format!("z0 must satisfy z0 + 10 < L = {}, got z0 = {}", self.half_width, self.z0)
    }

    pub fn params(&self) -> Result<PhysParams> {
        PhysParams::new(self.p, self.alpha, self.gamma)
    }

    pub fn grid(&self) -> Result<GridSpec> {
        make_grid(self.half_width, self.n)
    }

    /// Every key with its resolved value, in sorted key order.
    pub fn resolved(&self) -> BTreeMap<&'static str, Value> {
        let mut m = BTreeMap::new();
        m.insert("p", num(self.p));
        m.insert("alpha", num(self.alpha));
        m.insert("gamma", num(self.gamma));
        m.insert("L", num(self.half_width));
        m.insert("n", int(self.n));
        m.insert("dt", num(self.dt));
        m.insert("T", num(self.t_final));
        m.insert("sample_stride", int(self.sample_stride));
        m.insert("snapshot_stride", int(self.snapshot_stride));
        m.insert("blowup_cap", num(self.blowup_cap));
        m.insert("nonlinear", Value::Bool(self.nonlinear));
        m.insert("mu", num(self.mu));
        m.insert("L_weight", num(self.l_weight));
        m.insert("tube_radius", num(self.tube_radius));
        m.insert("cert_margin", num(self.cert_margin));
        m.insert(
            "initial",
            text(match self.initial {
                InitialKind::Pinned => "pinned",
                InitialKind::Family => "family",
                InitialKind::Snapshot => "snapshot",
            }),
        );
        m.insert("initial_file", self.initial_file.as_deref().map(text).unwrap_or(Value::Null));
        m.insert("lambda", num(self.lambda));
        m.insert("varsigma", int(self.varsigma as usize));
        m.insert("sign", Value::from(self.sign as i64));
        m.insert("z0", num(self.z0));
        m.insert("lambda_lo", num(self.lambda_lo));
        m.insert("lambda_hi", num(self.lambda_hi));
        m.insert("tol", num(self.tol));
        m.insert("t_max", num(self.t_max));
        m.insert("frame_stride", int(self.frame_stride));
        m.insert("t_track", num(self.t_track));
        m.insert("track_lambda", self.track_lambda.map(num).unwrap_or_else(|| text("auto")));
        m.insert(
            "symmetry",
            text(match self.symmetry {
                SymmetryChoice::Even => "even",
                SymmetryChoice::None => "none",
                SymmetryChoice::Both => "both",
            }),
        );
        m.insert(
            "var_init",
            text(match self.var_init {
                VarInit::Pinned => "pinned",
                VarInit::Shifted => "shifted",
            }),
        );
        m.insert("max_iters", int(self.max_iters));
        m.insert("workers", int(self.workers));
        m
    }

    pub fn to_json(&self) -> Value {
        let mut o = Obj::new();
        for (k, v) in self.resolved() {
            o.insert(k, v);
        }
        o.build()
    }

    /// Canonical `key = value` text; parsing it reproduces `self`.
    pub fn canonical(&self) -> String {
        let mut s = String::new();
        for (k, v) in self.resolved() {
            let rendered = match (k, &v) {
                ("initial_file", Value::Null) => continue,
                (_, Value::String(t)) => t.clone(),
                (_, Value::Number(n)) => n.to_string(),
                (_, other) => other.to_string(),
            };
            s.push_str(&format!("{k} = {rendered}\n"));
        }
        s
    }

    /// One-line echo for CSV comment headers.
    pub fn echo_line(&self) -> String {
        self.canonical().lines().map(|l| l.replace(" = ", "=")).collect::<Vec<_>>().join(" ")
    }
}
