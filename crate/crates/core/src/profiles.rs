//! Scalar building blocks of the construction: the exponential warp f_ℓ, the smooth step ρ,
//! the mollifier ψ_η, warp radii for the reference surfaces and the sinh/cosh gluing solver.

use std::fmt::Debug;
use std::ops::{Add, Sub};
use std::sync::OnceLock;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;

/// A value together with its first and second derivative.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Jet {
    pub value: f64,
    pub d1: f64,
    pub d2: f64,
}

impl Jet {
    pub const ZERO: Jet = Jet::new(0.0, 0.0, 0.0);

    pub const fn new(value: f64, d1: f64, d2: f64) -> Self {
        Self { value, d1, d2 }
    }

    pub const fn constant(value: f64) -> Self {
        Self::new(value, 0.0, 0.0)
    }

    pub fn scale(self, k: f64) -> Self {
        Self::new(k * self.value, k * self.d1, k * self.d2)
    }

    /// Leibniz product.
    pub fn mul(self, o: Jet) -> Self {
        Self::new(
            self.value * o.value,
            self.d1 * o.value + self.value * o.d1,
            self.d2 * o.value + 2.0 * self.d1 * o.d1 + self.value * o.d2,
        )
    }

    pub fn square(self) -> Self {
        self.mul(self)
    }

    /// Square root of a positive jet.
    pub fn sqrt(self) -> Self {
        let s = self.value.sqrt();
        let d1 = self.d1 / (2.0 * s);
        let d2 = self.d2 / (2.0 * s) - self.d1 * self.d1 / (4.0 * s * s * s);
        Self::new(s, d1, d2)
    }

    /// Jet of t ↦ self(a·t + b) given the jet at a·t + b.
    pub fn chain_affine(self, a: f64) -> Self {
        Self::new(self.value, a * self.d1, a * a * self.d2)
    }

    pub fn is_finite(&self) -> bool {
        self.value.is_finite() && self.d1.is_finite() && self.d2.is_finite()
    }
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        Jet::new(self.value + o.value, self.d1 + o.d1, self.d2 + o.d2)
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        Jet::new(self.value - o.value, self.d1 - o.d1, self.d2 - o.d2)
    }
}

/// Closed interval of the real line; infinite ends allowed.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub const REAL: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };

    pub fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.lo && t <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn check(&self, t: f64) -> Result<()> {
        if self.contains(t) {
            Ok(())
        } else {
            Err(Error::OutOfDomain {
                t,
                lo: self.lo,
                hi: self.hi,
            })
        }
    }
}

/// Radial data of a rotationally symmetric level family dt² + c(t)·(round metric), in the
/// ratio form used by the flow. Every field stays finite where c itself would overflow.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RadialSample {
    /// 1/c
    pub inv_c: f64,
    /// Principal curvature of the level, ½c'/c = w'/w.
    pub shape: f64,
    /// Curvature of planes containing ∂_t.
    pub k_radial: f64,
    /// Curvature of planes tangent to a level with unit round-sphere levels.
    pub k_level: f64,
}

impl RadialSample {
    pub fn from_warp(w: Jet) -> Self {
        let inv_w = 1.0 / w.value;
        let shape = w.d1 * inv_w;
        let inv_c = inv_w * inv_w;
        Self {
            inv_c,
            shape,
            k_radial: -w.d2 * inv_w,
            k_level: inv_c - shape * shape,
        }
    }

    pub fn from_scale(c: Jet) -> Self {
        let inv_c = 1.0 / c.value;
        let r = c.d1 * inv_c;
        let shape = 0.5 * r;
        Self {
            inv_c,
            shape,
            k_radial: -0.5 * c.d2 * inv_c + 0.25 * r * r,
            k_level: inv_c - shape * shape,
        }
    }
}

/// A twice-differentiable function of t with analytic derivatives.
pub trait ScalarProfile: Send + Sync + Debug {
    fn domain(&self) -> Interval {
        Interval::REAL
    }

    fn eval(&self, t: f64) -> Jet;

    /// Radial data when the profile is read as a warp radius w (metric dt² + w²·round).
    fn warp_sample(&self, t: f64) -> RadialSample {
        RadialSample::from_warp(self.eval(t))
    }
}

/// f_ℓ(t) = (e^{ℓt} − 1)/ℓ with derivatives e^{ℓt}, ℓe^{ℓt}.
pub fn f_ell(ell: f64, t: f64) -> Result<Jet> {
    if !(ell > 0.0) || !ell.is_finite() {
        return Err(Error::ParameterDomain(format!(
            "ℓ must be positive, got {ell}"
        )));
    }
    Ok(f_ell_unchecked(ell, t))
}

pub(crate) fn f_ell_unchecked(ell: f64, t: f64) -> Jet {
    let e = (ell * t).exp();
    Jet::new((ell * t).exp_m1() / ell, e, ell * e)
}

/// f_ℓ as a profile.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ExpWarp {
    pub ell: f64,
}

impl ExpWarp {
    pub fn new(ell: f64) -> Result<Self> {
        f_ell(ell, 0.0)?;
        Ok(Self { ell })
    }
}

impl ScalarProfile for ExpWarp {
    fn eval(&self, t: f64) -> Jet {
        f_ell_unchecked(self.ell, t)
    }
}

/// e^{−1/s} for s > 0 with two derivatives; zero (to all orders) for s below 1e−3.
fn flat_kernel(s: f64) -> (f64, f64, f64) {
    if s < 1e-3 {
        return (0.0, 0.0, 0.0);
    }
    let h = (-1.0 / s).exp();
    let s2 = s * s;
    let d1 = h / s2;
    let d2 = h * (1.0 / (s2 * s2) - 2.0 / (s2 * s));
    (h, d1, d2)
}

/// The smooth step ρ(t) = h(1−t)/(h(t)+h(1−t)), h(s) = e^{−1/s}: 1 on t ≤ 0, 0 on t ≥ 1.
pub fn bump_rho(t: f64) -> Jet {
    if t <= 0.0 {
        return Jet::constant(1.0);
    }
    if t >= 1.0 {
        return Jet::ZERO;
    }
    let (a, a1, a2) = flat_kernel(t);
    let (b, hb1, hb2) = flat_kernel(1.0 - t);
    let (b1, b2) = (-hb1, hb2);
    let s = a + b;
    let s1 = a1 + b1;
    let s2 = a2 + b2;
    let num1 = b1 * s - b * s1;
    let value = b / s;
    let d1 = num1 / (s * s);
    let d2 = (b2 * s - b * s2) / (s * s) - 2.0 * s1 * num1 / (s * s * s);
    Jet::new(value, d1, d2)
}

/// ρ as a profile.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct SmoothStep;

impl ScalarProfile for SmoothStep {
    fn eval(&self, t: f64) -> Jet {
        bump_rho(t)
    }
}

/// max |ρ'| (sampled on a 20001-point grid; attained at t = ½ where ρ' = −2).
pub fn rho_max_slope() -> f64 {
    static SLOPE: OnceLock<f64> = OnceLock::new();
    *SLOPE.get_or_init(|| {
        (0..=20000)
            .map(|k| bump_rho(k as f64 / 20000.0).d1.abs())
            .fold(0.0, f64::max)
    })
}

/// ‖ρ‖_{C¹} = sup|ρ| + sup|ρ'|.
pub fn rho_c1_norm() -> f64 {
    1.0 + rho_max_slope()
}

fn bump_unnormalized(x: f64) -> (f64, f64, f64) {
    let q = 1.0 - x * x;
    if q < 1e-3 {
        return (0.0, 0.0, 0.0);
    }
    let g = (-1.0 / q).exp();
    let q2 = q * q;
    let d1 = g * (-2.0 * x / q2);
    let d2 = g * (4.0 * x * x / (q2 * q2) - 2.0 / q2 - 8.0 * x * x / (q2 * q));
    (g, d1, d2)
}

/// 1/∫_{−1}^{1} e^{−1/(1−x²)} dx.
pub fn mollifier_constant() -> f64 {
    static C: OnceLock<f64> = OnceLock::new();
    *C.get_or_init(|| {
        let rule = GaussLegendre::shared64();
        1.0 / rule.integrate_composite(-1.0, 1.0, 16, |x| bump_unnormalized(x).0)
    })
}

fn check_eta(eta: f64) -> Result<()> {
    if eta > 0.0 && eta.is_finite() {
        Ok(())
    } else {
        Err(Error::ParameterDomain(format!(
            "η must be positive, got {eta}"
        )))
    }
}

/// ψ_η(t) = η^{−1} ψ(t/η) with ψ the normalized even bump on (−1, 1).
pub fn mollifier(eta: f64, t: f64) -> Result<f64> {
    Ok(mollifier_jet(eta, t)?.value)
}

/// ψ_η with its first two derivatives.
pub fn mollifier_jet(eta: f64, t: f64) -> Result<Jet> {
    check_eta(eta)?;
    let (g, g1, g2) = bump_unnormalized(t / eta);
    let c = mollifier_constant() / eta;
    Ok(Jet::new(c * g, c * g1 / eta, c * g2 / (eta * eta)))
}

/// w(t) = radius·cosh(rate·t): constant curvature −rate².
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CoshWarp {
    pub radius: f64,
    pub rate: f64,
}

impl CoshWarp {
    pub const UNIT: CoshWarp = CoshWarp {
        radius: 1.0,
        rate: 1.0,
    };
}

impl ScalarProfile for CoshWarp {
    fn eval(&self, t: f64) -> Jet {
        let x = self.rate * t;
        let (c, s) = (x.cosh(), x.sinh());
        let r = self.radius;
        Jet::new(r * c, r * self.rate * s, r * self.rate * self.rate * c)
    }

    fn warp_sample(&self, t: f64) -> RadialSample {
        let x = self.rate * t;
        let w = self.radius * x.cosh();
        let inv_c = 1.0 / (w * w);
        let shape = self.rate * x.tanh();
        RadialSample {
            inv_c,
            shape,
            k_radial: -self.rate * self.rate,
            k_level: inv_c - shape * shape,
        }
    }
}

/// w(t) = sin t: the round sphere in polar form (odd extension through the poles).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct SinWarp;

impl ScalarProfile for SinWarp {
    fn eval(&self, t: f64) -> Jet {
        Jet::new(t.sin(), t.cos(), -t.sin())
    }

    fn warp_sample(&self, t: f64) -> RadialSample {
        let s = t.sin();
        RadialSample {
            inv_c: 1.0 / (s * s),
            shape: t.cos() / s,
            k_radial: 1.0,
            k_level: 1.0,
        }
    }
}

/// w(t) = sinh t: hyperbolic space in polar form.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct SinhWarp;

impl ScalarProfile for SinhWarp {
    fn eval(&self, t: f64) -> Jet {
        Jet::new(t.sinh(), t.cosh(), t.sinh())
    }

    fn warp_sample(&self, t: f64) -> RadialSample {
        let s = t.sinh();
        RadialSample {
            inv_c: 1.0 / (s * s),
            shape: 1.0 / t.tanh(),
            k_radial: -1.0,
            k_level: -1.0,
        }
    }
}

/// w(t) = offset + slope·t: flat cylinder (slope 0) or flat plane in polar form (offset 0, slope 1).
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LinearWarp {
    pub offset: f64,
    pub slope: f64,
}

impl ScalarProfile for LinearWarp {
    fn eval(&self, t: f64) -> Jet {
        Jet::new(self.offset + self.slope * t, self.slope, 0.0)
    }

    fn warp_sample(&self, t: f64) -> RadialSample {
        let w = self.offset + self.slope * t;
        let inv_c = 1.0 / (w * w);
        RadialSample {
            inv_c,
            shape: self.slope / w,
            k_radial: 0.0,
            k_level: (1.0 - self.slope * self.slope) * inv_c,
        }
    }
}

/// w(t) = sinh(κ(t + r̃))/κ: the constant-curvature −κ² end.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FunnelWarp {
    pub kappa: f64,
    pub r_tilde: f64,
}

impl FunnelWarp {
    pub fn new(kappa: f64, r_tilde: f64) -> Result<Self> {
        if !(kappa > 0.0) || !kappa.is_finite() || !r_tilde.is_finite() {
            return Err(Error::ParameterDomain(format!(
                "funnel needs κ > 0 and finite r̃, got κ = {kappa}, r̃ = {r_tilde}"
            )));
        }
        Ok(Self { kappa, r_tilde })
    }
}

impl ScalarProfile for FunnelWarp {
    fn domain(&self) -> Interval {
        Interval::new(-self.r_tilde, f64::INFINITY)
    }

    fn eval(&self, t: f64) -> Jet {
        let k = self.kappa;
        let x = k * (t + self.r_tilde);
        Jet::new(x.sinh() / k, x.cosh(), k * x.sinh())
    }

    fn warp_sample(&self, t: f64) -> RadialSample {
        let k = self.kappa;
        let x = k * (t + self.r_tilde);
        let q = k / x.sinh();
        RadialSample {
            inv_c: q * q,
            shape: k / x.tanh(),
            k_radial: -k * k,
            k_level: -k * k,
        }
    }
}

/// p(t + shift): a profile read in a shifted coordinate.
#[derive(Debug, Clone)]
pub struct Shifted<P> {
    pub inner: P,
    pub shift: f64,
}

impl<P: ScalarProfile> ScalarProfile for Shifted<P> {
    fn domain(&self) -> Interval {
        let d = self.inner.domain();
        Interval::new(d.lo - self.shift, d.hi - self.shift)
    }

    fn eval(&self, t: f64) -> Jet {
        self.inner.eval(t + self.shift)
    }

    fn warp_sample(&self, t: f64) -> RadialSample {
        self.inner.warp_sample(t + self.shift)
    }
}

/// Which closed form produced a gluing solution.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum GluingBranch {
    EqualSquares,
    Generic,
}

/// κ and r with f_ℓ(τ) = u_κ(τ+r), f'_ℓ(τ) = u'_κ(τ+r), u_κ(t) = (a sinh κt + b cosh κt)²/κ².
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct GluingSolution {
    pub kappa: f64,
    pub r: f64,
    pub residual_value: f64,
    pub residual_deriv: f64,
    pub branch: GluingBranch,
}

/// u_κ and u'_κ at t.
pub fn gluing_profile(kappa: f64, a: f64, b: f64, t: f64) -> (f64, f64) {
    let x = kappa * t;
    let (s, c) = (x.sinh(), x.cosh());
    let p = a * s + b * c;
    let q = a * c + b * s;
    (p * p / (kappa * kappa), 2.0 * p * q / kappa)
}

/// Solve the two matching equations of the exponential warp against a sinh/cosh profile.
pub fn glue_to_hyperbolic(ell: f64, tau: f64, a: f64, b: f64) -> Result<GluingSolution> {
    if !(ell > 0.0) || !ell.is_finite() {
        return Err(Error::ParameterDomain(format!(
            "ℓ must be positive, got {ell}"
        )));
    }
    if !(tau > 0.0) || !tau.is_finite() {
        return Err(Error::ParameterDomain(format!(
            "τ must be positive, got {tau}"
        )));
    }
    let sum = a * a + b * b;
    if sum == 0.0 || !sum.is_finite() {
        return Err(Error::ParameterDomain("a² + b² must be non-zero".into()));
    }
    let f = f_ell_unchecked(ell, tau);
    let (big_f, big_e) = (f.value, f.d1);
    let d = a * a - b * b;
    let (kappa, s, branch) = if d.abs() <= 1e-14 * sum {
        if a * b <= 0.0 {
            return Err(Error::ParameterDomain(
                "a = −b forces κ < 0 in the matching equations".into(),
            ));
        }
        let kappa = big_e / (2.0 * big_f);
        let s = (big_f * kappa * kappa / (a * a)).ln() / (2.0 * kappa);
        (kappa, s, GluingBranch::EqualSquares)
    } else {
        let disc = big_e * big_e - 4.0 * big_f * d;
        if !(disc > 0.0) {
            return Err(Error::GluingThreshold(format!(
                "discriminant e^(2ℓτ) − 4 f_ℓ(τ)(a² − b²) = {disc:e} is not positive"
            )));
        }
        let kappa = disc.sqrt() / (2.0 * big_f);
        let x = big_f.sqrt() * kappa;
        let y = big_e * kappa / (2.0 * x);
        let mut ch = (a * y - b * x) / d;
        let mut sh = (a * x - b * y) / d;
        if ch < 0.0 {
            ch = -ch;
            sh = -sh;
        }
        if ch < 1.0 - 1e-9 {
            return Err(Error::GluingThreshold(format!(
                "no real matching time (cosh value {ch})"
            )));
        }
        (kappa, sh.asinh() / kappa, GluingBranch::Generic)
    };
    if !(s > 0.0) {
        return Err(Error::GluingThreshold(format!(
            "matching time τ + r = {s} is not positive"
        )));
    }
    let (u, du) = gluing_profile(kappa, a, b, s);
    Ok(GluingSolution {
        kappa,
        r: s - tau,
        residual_value: (big_f - u).abs() / big_f.abs(),
        residual_deriv: (big_e - du).abs() / big_e.abs(),
        branch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rho_midpoint_and_flat_ends() {
        let m = bump_rho(0.5);
        assert!((m.value - 0.5).abs() < 1e-15);
        assert!((m.d1 + 2.0).abs() < 1e-12);
        assert!(m.d2.abs() < 1e-12);
        assert_eq!(bump_rho(-0.3), Jet::constant(1.0));
        assert_eq!(bump_rho(1.2), Jet::ZERO);
        assert!((rho_max_slope() - 2.0).abs() < 1e-6);
    }

    #[test]
    fn mollifier_peak_is_at_origin() {
        let p = mollifier(0.1, 0.0).unwrap();
        for k in 1..100 {
            assert!(mollifier(0.1, k as f64 * 1e-3).unwrap() < p);
        }
        assert_eq!(mollifier(0.1, 0.1000001).unwrap(), 0.0);
        assert!(mollifier(0.0, 0.0).is_err());
    }

    #[test]
    fn gluing_equal_squares_closed_form() {
        let g = glue_to_hyperbolic(1.0, 1.0, 1.0, 1.0).unwrap();
        assert_eq!(g.branch, GluingBranch::EqualSquares);
        assert!((g.kappa - 0.5 / (1.0 - (-1.0f64).exp())).abs() < 1e-14);
        assert!(glue_to_hyperbolic(1.0, 1.0, 1.0, -1.0).is_err());
        assert!(glue_to_hyperbolic(1.0, 1.0, 0.0, 0.0).is_err());
    }
}
