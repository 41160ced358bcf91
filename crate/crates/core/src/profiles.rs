//! Closed-form stationary profiles, spectral constants, and the soliton
//! interaction constants.
//!
//! All profiles are evaluated through a log-sech form so that tails far from
//! the center neither overflow `cosh` nor lose relative precision.

use crate::error::{Error, Result};
use crate::quadrature::{integrate, PANEL_WIDTH};

/// Physical parameters: nonlinearity exponent `p`, damping `alpha`, and
/// point-interaction strength `gamma`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhysParams {
    p: f64,
    alpha: f64,
    gamma: f64,
}

impl PhysParams {
    pub fn new(p: f64, alpha: f64, gamma: f64) -> Result<Self> {
        check_exponent(p)?;
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::Parameter(format!("alpha must be > 0, got {alpha}")));
        }
        if !(gamma.is_finite() && gamma < 2.0) {
            return Err(Error::Parameter(format!("gamma must be < 2, got {gamma}")));
        }
        Ok(Self { p, alpha, gamma })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    /// Same exponent and damping with a different potential strength.
    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Self::new(self.p, self.alpha, gamma)
    }
}

pub(crate) fn check_exponent(p: f64) -> Result<()> {
    if p.is_finite() && p > 2.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("exponent p must be > 2, got {p}")))
    }
}

/// Growth/decay rates of the linearized damped flow around one soliton and
/// the tail constant of the soliton.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralConstants {
    /// Square root of minus the negative eigenvalue of the linearized operator.
    pub nu: f64,
    /// Unstable rate (> 0).
    pub nu_plus: f64,
    /// Stable rate (< 0).
    pub nu_minus: f64,
    /// Tail constant: `Q(x) ~ c_q e^{-|x|}`.
    pub c_q: f64,
}

/// `ln sech(y)` without overflow.
#[inline]
pub(crate) fn ln_sech(y: f64) -> f64 {
    let a = y.abs();
    -a + std::f64::consts::LN_2 - (-2.0 * a).exp().ln_1p()
}

#[inline]
fn half_width_rate(p: f64) -> f64 {
    0.5 * (p - 1.0)
}

/// `ln Q(x)`; used wherever powers of the profile are taken.
#[inline]
pub(crate) fn ln_q(x: f64, p: f64) -> f64 {
    ((0.5 * (p + 1.0)).ln() + 2.0 * ln_sech(half_width_rate(p) * x)) / (p - 1.0)
}

#[inline]
pub(crate) fn q_unchecked(x: f64, p: f64) -> f64 {
    ln_q(x, p).exp()
}

#[inline]
pub(crate) fn q_deriv_unchecked(x: f64, p: f64) -> f64 {
    -q_unchecked(x, p) * (half_width_rate(p) * x).tanh()
}

#[inline]
pub(crate) fn phi_unchecked(x: f64, p: f64) -> f64 {
    ((p + 1.0) / (p - 1.0) * ln_sech(half_width_rate(p) * x)).exp()
}

/// `arctanh(gamma / 2)` in logarithmic form.
#[inline]
fn pinning_shift(gamma: f64) -> f64 {
    let t = 0.5 * gamma;
    0.5 * ((1.0 + t) / (1.0 - t)).ln()
}

/// The ground-state soliton: the positive even stationary solution without
/// potential.
pub fn soliton_q(x: f64, p: f64) -> Result<f64> {
    check_exponent(p)?;
    Ok(q_unchecked(x, p))
}

pub fn soliton_q_deriv(x: f64, p: f64) -> Result<f64> {
    check_exponent(p)?;
    Ok(q_deriv_unchecked(x, p))
}

fn check_pinned(params: &PhysParams) -> Result<()> {
    if params.gamma.abs() < 2.0 {
        Ok(())
    } else {
        Err(Error::Nonexistence { gamma: params.gamma })
    }
}

/// The pinned profile: positive stationary solution with the point
/// interaction, defined for `|gamma| < 2`.
pub fn soliton_q_gamma(x: f64, params: &PhysParams) -> Result<f64> {
    check_pinned(params)?;
    Ok(q_gamma_unchecked(x, params.p, params.gamma))
}

#[inline]
pub(crate) fn q_gamma_unchecked(x: f64, p: f64, gamma: f64) -> f64 {
    let y = half_width_rate(p) * x.abs() + pinning_shift(gamma);
    (((0.5 * (p + 1.0)).ln() + 2.0 * ln_sech(y)) / (p - 1.0)).exp()
}

/// Derivative of the pinned profile. The profile has a kink at the origin:
/// `+0.0` yields the right derivative and `-0.0` the left one.
pub fn soliton_q_gamma_deriv(x: f64, params: &PhysParams) -> Result<f64> {
    check_pinned(params)?;
    let p = params.p;
    let y = half_width_rate(p) * x.abs() + pinning_shift(params.gamma);
    let slope = -q_gamma_unchecked(x, p, params.gamma) * y.tanh();
    Ok(if x.is_sign_negative() { -slope } else { slope })
}

/// Neutral even mode `sech((p-1)x/2)^{(p+1)/(p-1)}`, the eigenfunction of
/// the negative eigenvalue of the linearized operator.
pub fn neutral_even_mode_phi(x: f64, p: f64) -> Result<f64> {
    check_exponent(p)?;
    Ok(phi_unchecked(x, p))
}

pub fn tail_constant(p: f64) -> f64 {
    (2.0 * p + 2.0).powf(1.0 / (p - 1.0))
}

pub fn spectral_constants(params: &PhysParams) -> SpectralConstants {
    let p = params.p;
    let a = params.alpha;
    let nu = ((p - 1.0) * (p + 3.0) / 4.0).sqrt();
    let root = (a * a + nu * nu).sqrt();
    SpectralConstants {
        nu,
        nu_plus: -a + root,
        nu_minus: -a - root,
        c_q: tail_constant(p),
    }
}

/// Half-width of the symmetric domain on which profile integrals are taken.
const PROFILE_DOMAIN: f64 = 40.0;

fn round_to_panel(x: f64) -> f64 {
    (x / PANEL_WIDTH).ceil() * PANEL_WIDTH
}

/// Value and certified truncation bound of `c_Q * int e^{-x} Q(x)^m dx`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InteractionConstant {
    pub value: f64,
    pub truncation_bound: f64,
}

/// Interaction constant `c_m = c_Q * int e^{-x} Q^m`, `m > 1`.
pub fn interaction_constant_cm(m: f64, p: f64) -> Result<f64> {
    interaction_constant_with_bound(m, p).map(|c| c.value)
}

pub fn interaction_constant_with_bound(m: f64, p: f64) -> Result<InteractionConstant> {
    check_exponent(p)?;
    if !(m.is_finite() && m > 1.0) {
        return Err(Error::Parameter(format!("interaction exponent m must be > 1, got {m}")));
    }
    let c_q = tail_constant(p);
    // Q <= c_Q e^{-|x|} bounds both tails; each tail gets half the budget.
    let budget = 0.5e-10 / c_q;
    let ln_cm = m * c_q.ln();
    let left = round_to_panel(PROFILE_DOMAIN.max((ln_cm - ((m - 1.0) * budget).ln()) / (m - 1.0)));
    let right = round_to_panel(PROFILE_DOMAIN.max((ln_cm - ((m + 1.0) * budget).ln()) / (m + 1.0)));
    let tail = (ln_cm - (m - 1.0) * left).exp() / (m - 1.0) + (ln_cm - (m + 1.0) * right).exp() / (m + 1.0);
    let integral = integrate(|x| (-x + m * ln_q(x, p)).exp(), -left, right);
    Ok(InteractionConstant {
        value: c_q * integral,
        truncation_bound: c_q * tail,
    })
}

/// `||Q||_{L^q}^q` by quadrature.
pub fn q_power_integral(q: f64, p: f64) -> Result<f64> {
    check_exponent(p)?;
    Ok(integrate(|x| (q * ln_q(x, p)).exp(), -PROFILE_DOMAIN, PROFILE_DOMAIN))
}

/// `||Q'||_{L^2}^2` by quadrature.
pub fn q_deriv_norm_sq(p: f64) -> Result<f64> {
    check_exponent(p)?;
    Ok(integrate(|x| q_deriv_unchecked(x, p).powi(2), -PROFILE_DOMAIN, PROFILE_DOMAIN))
}

/// `||phi||_{L^2}^2` by quadrature.
pub fn phi_norm_sq(p: f64) -> Result<f64> {
    check_exponent(p)?;
    Ok(integrate(|x| phi_unchecked(x, p).powi(2), -PROFILE_DOMAIN, PROFILE_DOMAIN))
}

/// Action of the soliton without potential, `J_0(Q)`, via the Nehari
/// identity `K_0(Q) = 0`: `(1/2 - 1/(p+1)) ||Q||_{p+1}^{p+1}`.
pub fn ground_state_action(p: f64) -> Result<f64> {
    let lp = q_power_integral(p + 1.0, p)?;
    Ok((0.5 - 1.0 / (p + 1.0)) * lp)
}

/// `J_0(Q)` from its definition (gradient, mass, and nonlinear terms).
pub fn ground_state_action_direct(p: f64) -> Result<f64> {
    check_exponent(p)?;
    let quad = integrate(
        |x| {
            let q = q_unchecked(x, p);
            let dq = q_deriv_unchecked(x, p);
            0.5 * (dq * dq + q * q) - ((p + 1.0) * ln_q(x, p)).exp() / (p + 1.0)
        },
        -PROFILE_DOMAIN,
        PROFILE_DOMAIN,
    );
    Ok(quad)
}

/// `J_gamma(Q_gamma)` from the definition, for `|gamma| < 2`.
pub fn pinned_profile_action(params: &PhysParams) -> Result<f64> {
    check_pinned(params)?;
    let (p, g) = (params.p, params.gamma);
    let quad = integrate(
        |x| {
            let q = q_gamma_unchecked(x, p, g);
            let dq = soliton_q_gamma_deriv(x, params).unwrap_or(0.0);
            0.5 * (dq * dq + q * q) - q.powf(p + 1.0) / (p + 1.0)
        },
        -PROFILE_DOMAIN,
        PROFILE_DOMAIN,
    );
    let q0 = q_gamma_unchecked(0.0, p, g);
    Ok(quad - 0.5 * g * q0 * q0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(p: f64, alpha: f64, gamma: f64) -> PhysParams {
        PhysParams::new(p, alpha, gamma).unwrap()
    }

    #[test]
    fn params_reject_standing_assumptions() {
        assert!(PhysParams::new(2.0, 1.0, 0.0).is_err());
        assert!(PhysParams::new(3.0, 0.0, 0.0).is_err());
        assert!(PhysParams::new(3.0, 1.0, 2.0).is_err());
        assert!(PhysParams::new(3.0, 1.0, f64::NAN).is_err());
        assert!(PhysParams::new(3.0, 1.0, -5.0).is_ok());
    }

    #[test]
    fn q_at_origin_and_evenness() {
        assert_relative_eq!(soliton_q(0.0, 3.0).unwrap(), 2f64.sqrt(), max_relative = 1e-15);
        for x in [0.5, 1.0, 3.0] {
            assert_eq!(soliton_q(x, 3.0).unwrap(), soliton_q(-x, 3.0).unwrap());
        }
        assert!(soliton_q(0.0, 2.0).is_err());
    }

    #[test]
    fn q_tail_matches_c_q() {
        let cq = tail_constant(3.0);
        assert_relative_eq!(cq, 2.0 * 2f64.sqrt(), max_relative = 1e-15);
        assert!((soliton_q(10.0, 3.0).unwrap() - cq * (-10f64).exp()).abs() < 1e-7);
        assert!((soliton_q_deriv(10.0, 3.0).unwrap() + cq * (-10f64).exp()).abs() < 1e-7);
        // far tail stays finite and positive
        let far = soliton_q(800.0, 3.0).unwrap();
        assert!(far >= 0.0 && far.is_finite());
    }

    #[test]
    fn q_deriv_matches_finite_difference() {
        assert_eq!(soliton_q_deriv(0.0, 3.0).unwrap(), 0.0);
        let step = 1e-5;
        let fd = (soliton_q(1.0 + step, 3.0).unwrap() - soliton_q(1.0 - step, 3.0).unwrap()) / (2.0 * step);
        assert_relative_eq!(soliton_q_deriv(1.0, 3.0).unwrap(), fd, max_relative = 1e-8);
    }

    #[test]
    fn pinned_profile_values() {
        let p0 = params(3.0, 1.0, 0.0);
        assert_eq!(soliton_q_gamma(2.0, &p0).unwrap(), soliton_q(2.0, 3.0).unwrap());
        // oracle: cosh^2(arctanh t) = 1/(1 - t^2)
        let t: f64 = -0.5;
        let expected = ((3.0 + 1.0) / 2.0 * (1.0 - t * t)).sqrt();
        assert_relative_eq!(soliton_q_gamma(0.0, &params(3.0, 1.0, -1.0)).unwrap(), expected, max_relative = 1e-14);
        assert_relative_eq!(expected, 1.5f64.sqrt(), max_relative = 1e-15);
        assert!(matches!(soliton_q_gamma(0.3, &params(3.0, 1.0, -2.5)), Err(Error::Nonexistence { .. })));
    }

    #[test]
    fn phi_values_and_proportionality() {
        assert_eq!(neutral_even_mode_phi(0.0, 3.0).unwrap(), 1.0);
        let sech5 = 1.0 / 5f64.cosh();
        assert_relative_eq!(neutral_even_mode_phi(5.0, 3.0).unwrap(), sech5 * sech5, max_relative = 1e-13);
        for p in [3.0f64, 4.0, 2.5] {
            let k = (2.0 / (p + 1.0)).powf((p + 1.0) / (2.0 * (p - 1.0)));
            for x in [0.0, 1.0, 2.0] {
                let ratio = neutral_even_mode_phi(x, p).unwrap() / soliton_q(x, p).unwrap().powf(0.5 * (p + 1.0));
                assert_relative_eq!(ratio, k, max_relative = 1e-13);
            }
        }
    }

    #[test]
    fn spectral_constants_p3() {
        let s = spectral_constants(&params(3.0, 1.0, 0.0));
        assert_relative_eq!(s.nu, 3f64.sqrt(), max_relative = 1e-15);
        assert_relative_eq!(s.nu_plus, 1.0, max_relative = 1e-15);
        assert_relative_eq!(s.nu_minus, -3.0, max_relative = 1e-15);
        assert_relative_eq!(s.c_q, 2.0 * 2f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn spectral_identities() {
        for (p, a) in [(2.5, 0.3), (3.0, 1.0), (4.0, 2.0), (5.5, 0.05)] {
            let s = spectral_constants(&params(p, a, 0.0));
            assert!((s.nu_plus * s.nu_minus + s.nu * s.nu).abs() < 1e-14 * s.nu * s.nu.max(1.0));
            assert!((s.nu_plus + s.nu_minus + 2.0 * a).abs() < 1e-14);
            assert!((s.nu * s.nu - (p - 1.0) * (p + 3.0) / 4.0).abs() < 1e-14);
        }
    }

    #[test]
    fn interaction_constant_identity() {
        // int Q^p e^{-x} = 2 c_Q, so c_p = 2 c_Q^2
        let c3 = interaction_constant_cm(3.0, 3.0).unwrap();
        assert!((c3 - 16.0).abs() < 1e-8, "{c3}");
        let c4 = interaction_constant_cm(4.0, 4.0).unwrap();
        assert!((c4 - 2.0 * 10f64.powf(2.0 / 3.0)).abs() < 1e-8, "{c4}");
        assert!(interaction_constant_cm(1.0, 3.0).is_err());
    }

    #[test]
    fn interaction_constant_vs_trapezoid_oracle() {
        // independent scheme: plain trapezoid at h = 1e-3 on [-60, 60]
        let h = 1e-3;
        let n = (120.0 / h) as usize;
        let f = |x: f64| {
            let q = 2f64.sqrt() / x.cosh();
            (-x).exp() * q * q
        };
        let mut s = 0.5 * (f(-60.0) + f(60.0));
        for j in 1..n {
            s += f(-60.0 + j as f64 * h);
        }
        let oracle = tail_constant(3.0) * s * h;
        let c2 = interaction_constant_cm(2.0, 3.0).unwrap();
        assert!((c2 - oracle).abs() < 1e-8, "{c2} vs {oracle}");
    }

    #[test]
    fn interaction_constant_near_one_extends_domain() {
        let c = interaction_constant_with_bound(1.05, 3.0).unwrap();
        assert!(c.truncation_bound <= 1e-10);
        assert!(c.value.is_finite() && c.value > 0.0);
    }

    #[test]
    fn interaction_constant_closed_forms_p3() {
        // Q = sqrt2 sech: int e^{-x} sech^2 = int sech and int e^{-x} sech^4 = int sech^3
        let c_q = 2f64.sqrt() * 2.0;
        let pi = std::f64::consts::PI;
        assert_relative_eq!(interaction_constant_cm(2.0, 3.0).unwrap(), c_q * 2.0 * pi, max_relative = 1e-10);
        assert_relative_eq!(interaction_constant_cm(4.0, 3.0).unwrap(), c_q * 4.0 * pi / 2.0, max_relative = 1e-10);
        assert_relative_eq!(interaction_constant_cm(3.0, 3.0).unwrap(), 2.0 * c_q * c_q, max_relative = 1e-10);
    }

    #[test]
    fn ground_state_action_routes() {
        assert!((ground_state_action(3.0).unwrap() - 4.0 / 3.0).abs() < 1e-8);
        for p in [2.5, 3.0, 4.0, 5.0] {
            let a = ground_state_action(p).unwrap();
            let b = ground_state_action_direct(p).unwrap();
            assert!((a - b).abs() < 1e-8, "p={p}: {a} vs {b}");
        }
    }

    #[test]
    fn closed_form_sech_integrals() {
        assert!((q_deriv_norm_sq(3.0).unwrap() - 4.0 / 3.0).abs() < 1e-12);
        assert!((phi_norm_sq(3.0).unwrap() - 4.0 / 3.0).abs() < 1e-12);
        assert!((q_power_integral(2.0, 3.0).unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn pinned_action_closed_form() {
        // ||Q_g||_4^4 = 8(2/3 - g/2 + g^3/24) at p = 3; J = ||Q_g||_4^4 / 4 on Nehari
        for g in [-1.5, -1.0, 0.0, 1.0, 1.5] {
            let j = pinned_profile_action(&params(3.0, 1.0, g)).unwrap();
            let l4 = 8.0 * (2.0 / 3.0 - g / 2.0 + g * g * g / 24.0);
            assert!((j - l4 / 4.0).abs() < 1e-8, "g={g}: {j} vs {}", l4 / 4.0);
        }
    }

    fn five_point_second(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (-f(x + 2.0 * h) + 16.0 * f(x + h) - 30.0 * f(x) + 16.0 * f(x - h) - f(x - 2.0 * h)) / (12.0 * h * h)
    }

    #[test]
    fn stationary_ode_residual() {
        for p in [2.2, 3.0, 4.5, 6.0] {
            for i in -40..=40 {
                let x = i as f64 * 0.25;
                let q = |y: f64| soliton_q(y, p).unwrap();
                let r = five_point_second(q, x, 1e-3) - q(x) + q(x).powf(p);
                assert!(r.abs() < 1e-6, "p={p} x={x} r={r}");
            }
        }
    }

    #[test]
    fn pinned_ode_residual_and_jump() {
        for g in [-1.9, -1.0, 0.5, 1.9] {
            let pp = params(3.0, 1.0, g);
            let f = |y: f64| soliton_q_gamma(y, &pp).unwrap();
            for i in -40..=40 {
                let x = i as f64 * 0.25 + 0.125;
                let r = five_point_second(f, x, 1e-3) - f(x) + f(x).powf(3.0);
                assert!(r.abs() < 1e-6, "g={g} x={x} r={r}");
            }
            let jump = soliton_q_gamma_deriv(0.0, &pp).unwrap() - soliton_q_gamma_deriv(-0.0, &pp).unwrap();
            assert!((jump + g * f(0.0)).abs() < 1e-6);
        }
    }
}
