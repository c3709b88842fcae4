//! Forward-mode dual numbers and the [`Real`] scalar abstraction.
//!
//! Every tracing and loss routine in the crate is generic over [`Real`], so the
//! same code runs on plain `f64` for rendering and on [`Dual`] for design
//! gradients.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, MulAssign, Neg, Sub, SubAssign};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AutodiffError {
    #[error("cannot seed an empty parameter vector")]
    EmptySeed,
    #[error("function is not finite at probe point (parameter {index}, offset {offset})")]
    NonFinite { index: usize, offset: f64 },
}

/// Scalar type usable by the tracer and the losses.
pub trait Real:
    Copy
    + Debug
    + Send
    + Sync
    + 'static
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + Add<f64, Output = Self>
    + Sub<f64, Output = Self>
    + Mul<f64, Output = Self>
    + Div<f64, Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
{
    fn cst(v: f64) -> Self;
    fn val(self) -> f64;
    fn sqrt(self) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
    fn tan(self) -> Self;
    fn asin(self) -> Self;
    fn acos(self) -> Self;
    fn atan(self) -> Self;
    fn atan2(self, x: Self) -> Self;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn ln_1p(self) -> Self;
    /// Absolute value with derivative 0 at the origin.
    fn abs(self) -> Self;

    fn zero() -> Self {
        Self::cst(0.0)
    }
    fn one() -> Self {
        Self::cst(1.0)
    }
    fn recip(self) -> Self {
        Self::one() / self
    }
    fn powi(self, n: i32) -> Self {
        let mut acc = Self::one();
        let base = if n < 0 { self.recip() } else { self };
        for _ in 0..n.unsigned_abs() {
            acc = acc * base;
        }
        acc
    }
    fn square(self) -> Self {
        self * self
    }
    fn hypot(self, other: Self) -> Self {
        (self * self + other * other).sqrt()
    }
    /// Selects by value; ties keep `self`.
    fn min(self, other: Self) -> Self {
        if other.val() < self.val() {
            other
        } else {
            self
        }
    }
    /// Selects by value; ties keep `self`.
    fn max(self, other: Self) -> Self {
        if other.val() > self.val() {
            other
        } else {
            self
        }
    }
    /// `log(1 + exp(x))`, evaluated as `max(x, 0) + log1p(exp(-|x|))`.
    fn softplus(self) -> Self {
        let pos = if self.val() > 0.0 { self } else { Self::zero() };
        pos + (-self.abs()).exp().ln_1p()
    }
    fn is_finite(self) -> bool;
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn val(self) -> f64 {
        self
    }
    #[inline]
    fn sqrt(self) -> Self {
        f64::sqrt(self)
    }
    #[inline]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline]
    fn cos(self) -> Self {
        f64::cos(self)
    }
    #[inline]
    fn tan(self) -> Self {
        f64::tan(self)
    }
    #[inline]
    fn asin(self) -> Self {
        f64::asin(self)
    }
    #[inline]
    fn acos(self) -> Self {
        f64::acos(self)
    }
    #[inline]
    fn atan(self) -> Self {
        f64::atan(self)
    }
    #[inline]
    fn atan2(self, x: Self) -> Self {
        f64::atan2(self, x)
    }
    #[inline]
    fn exp(self) -> Self {
        f64::exp(self)
    }
    #[inline]
    fn ln(self) -> Self {
        f64::ln(self)
    }
    #[inline]
    fn ln_1p(self) -> Self {
        f64::ln_1p(self)
    }
    #[inline]
    fn abs(self) -> Self {
        f64::abs(self)
    }
    #[inline]
    fn recip(self) -> Self {
        1.0 / self
    }
    #[inline]
    fn hypot(self, other: Self) -> Self {
        (self * self + other * other).sqrt()
    }
    #[inline]
    fn is_finite(self) -> bool {
        f64::is_finite(self)
    }
}

/// Value plus `N` partial derivatives.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual<const N: usize> {
    pub v: f64,
    pub d: [f64; N],
}

impl<const N: usize> Dual<N> {
    pub fn constant(v: f64) -> Self {
        Dual { v, d: [0.0; N] }
    }

    pub fn variable(v: f64, index: usize) -> Self {
        let mut d = [0.0; N];
        d[index] = 1.0;
        Dual { v, d }
    }

    #[inline]
    fn chain(self, v: f64, dv: f64) -> Self {
        let mut d = self.d;
        for x in d.iter_mut() {
            *x *= dv;
        }
        Dual { v, d }
    }

    pub fn grad(&self) -> [f64; N] {
        self.d
    }
}

/// Seeds `N` independent variables with an identity tangent matrix.
pub fn seed<const N: usize>(values: [f64; N]) -> Result<[Dual<N>; N], AutodiffError> {
    if N == 0 {
        return Err(AutodiffError::EmptySeed);
    }
    let mut out = [Dual::constant(0.0); N];
    for (i, v) in values.iter().enumerate() {
        out[i] = Dual::variable(*v, i);
    }
    Ok(out)
}

impl<const N: usize> Add for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(self, o: Self) -> Self {
        let mut d = self.d;
        for i in 0..N {
            d[i] += o.d[i];
        }
        Dual { v: self.v + o.v, d }
    }
}

impl<const N: usize> Sub for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(self, o: Self) -> Self {
        let mut d = self.d;
        for i in 0..N {
            d[i] -= o.d[i];
        }
        Dual { v: self.v - o.v, d }
    }
}

impl<const N: usize> Mul for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: Self) -> Self {
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = self.d[i] * o.v + self.v * o.d[i];
        }
        Dual { v: self.v * o.v, d }
    }
}

impl<const N: usize> Div for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: Self) -> Self {
        let v = self.v / o.v;
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = (self.d[i] - v * o.d[i]) / o.v;
        }
        Dual { v, d }
    }
}

impl<const N: usize> Neg for Dual<N> {
    type Output = Self;
    #[inline]
    fn neg(self) -> Self {
        self.chain(-self.v, -1.0)
    }
}

impl<const N: usize> Add<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn add(self, o: f64) -> Self {
        Dual { v: self.v + o, d: self.d }
    }
}

impl<const N: usize> Sub<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn sub(self, o: f64) -> Self {
        Dual { v: self.v - o, d: self.d }
    }
}

impl<const N: usize> Mul<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn mul(self, o: f64) -> Self {
        self.chain(self.v * o, o)
    }
}

impl<const N: usize> Div<f64> for Dual<N> {
    type Output = Self;
    #[inline]
    fn div(self, o: f64) -> Self {
        self.chain(self.v / o, 1.0 / o)
    }
}

impl<const N: usize> AddAssign for Dual<N> {
    #[inline]
    fn add_assign(&mut self, o: Self) {
        *self = *self + o;
    }
}

impl<const N: usize> SubAssign for Dual<N> {
    #[inline]
    fn sub_assign(&mut self, o: Self) {
        *self = *self - o;
    }
}

impl<const N: usize> MulAssign for Dual<N> {
    #[inline]
    fn mul_assign(&mut self, o: Self) {
        *self = *self * o;
    }
}

impl<const N: usize> Real for Dual<N> {
    fn cst(v: f64) -> Self {
        Dual::constant(v)
    }
    fn val(self) -> f64 {
        self.v
    }
    fn sqrt(self) -> Self {
        let s = self.v.sqrt();
        self.chain(s, 0.5 / s)
    }
    fn sin(self) -> Self {
        self.chain(self.v.sin(), self.v.cos())
    }
    fn cos(self) -> Self {
        self.chain(self.v.cos(), -self.v.sin())
    }
    fn tan(self) -> Self {
        let t = self.v.tan();
        self.chain(t, 1.0 + t * t)
    }
    fn asin(self) -> Self {
        self.chain(self.v.asin(), 1.0 / (1.0 - self.v * self.v).sqrt())
    }
    fn acos(self) -> Self {
        self.chain(self.v.acos(), -1.0 / (1.0 - self.v * self.v).sqrt())
    }
    fn atan(self) -> Self {
        self.chain(self.v.atan(), 1.0 / (1.0 + self.v * self.v))
    }
    fn atan2(self, x: Self) -> Self {
        let r2 = self.v * self.v + x.v * x.v;
        let mut d = [0.0; N];
        for i in 0..N {
            d[i] = (x.v * self.d[i] - self.v * x.d[i]) / r2;
        }
        Dual { v: self.v.atan2(x.v), d }
    }
    fn exp(self) -> Self {
        let e = self.v.exp();
        self.chain(e, e)
    }
    fn ln(self) -> Self {
        self.chain(self.v.ln(), 1.0 / self.v)
    }
    fn ln_1p(self) -> Self {
        self.chain(self.v.ln_1p(), 1.0 / (1.0 + self.v))
    }
    fn abs(self) -> Self {
        if self.v > 0.0 {
            self
        } else if self.v < 0.0 {
            -self
        } else {
            Dual::constant(0.0)
        }
    }
    fn is_finite(self) -> bool {
        self.v.is_finite() && self.d.iter().all(|x| x.is_finite())
    }
}

/// A scalar function that can be evaluated on any [`Real`].
pub trait ScalarFunction {
    fn eval<S: Real>(&self, x: &[S]) -> S;
}

/// Outcome of [`gradient_check`].
#[derive(Clone, Debug)]
pub struct GradientCheck {
    pub max_rel_error: f64,
    pub dual: Vec<f64>,
    pub finite_difference: Vec<f64>,
}

/// Compares dual-number gradients against central finite differences.
///
/// The error per component is `|g_dual - g_fd| / max(1, |g_fd|)`.
pub fn gradient_check<const N: usize, F: ScalarFunction>(
    f: &F,
    point: &[f64; N],
    step: f64,
) -> Result<GradientCheck, AutodiffError> {
    let vars = seed(*point)?;
    let y = f.eval(&vars);
    if !y.is_finite() {
        return Err(AutodiffError::NonFinite { index: 0, offset: 0.0 });
    }
    let mut fd = vec![0.0; N];
    let mut max_err: f64 = 0.0;
    for i in 0..N {
        let mut p = *point;
        p[i] = point[i] + step;
        let fp = f.eval(&p);
        p[i] = point[i] - step;
        let fm = f.eval(&p);
        if !fp.is_finite() {
            return Err(AutodiffError::NonFinite { index: i, offset: step });
        }
        if !fm.is_finite() {
            return Err(AutodiffError::NonFinite { index: i, offset: -step });
        }
        fd[i] = (fp - fm) / (2.0 * step);
        let err = (y.d[i] - fd[i]).abs() / fd[i].abs().max(1.0);
        max_err = max_err.max(err);
    }
    Ok(GradientCheck {
        max_rel_error: max_err,
        dual: y.d.to_vec(),
        finite_difference: fd,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn seed_square() {
        let [x] = seed([2.0]).unwrap();
        let y = x * x;
        assert_eq!(y.v, 4.0);
        assert_eq!(y.d, [4.0]);
    }

    #[test]
    fn seed_hypot() {
        let [x, y] = seed([3.0, 4.0]).unwrap();
        let h = x.hypot(y);
        assert!((h.v - 5.0).abs() < 1e-15);
        assert!((h.d[0] - 0.6).abs() < 1e-15);
        assert!((h.d[1] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn seed_asin() {
        let [x] = seed([0.5]).unwrap();
        let y = x.asin();
        assert!((y.d[0] - 1.0 / 0.75f64.sqrt()).abs() < 1e-14);
        assert!((y.d[0] - 1.154700538).abs() < 1e-9);
    }

    #[test]
    fn empty_seed_is_error() {
        assert_eq!(seed::<0>([]).unwrap_err(), AutodiffError::EmptySeed);
    }

    struct SinXY;
    impl ScalarFunction for SinXY {
        fn eval<S: Real>(&self, x: &[S]) -> S {
            (x[0] * x[1]).sin()
        }
    }

    struct Constant;
    impl ScalarFunction for Constant {
        fn eval<S: Real>(&self, _x: &[S]) -> S {
            S::cst(3.0)
        }
    }

    struct Blowup;
    impl ScalarFunction for Blowup {
        fn eval<S: Real>(&self, x: &[S]) -> S {
            x[0].ln()
        }
    }

    #[test]
    fn gradient_check_smooth() {
        let r = gradient_check(&SinXY, &[1.0, 2.0], 1e-6).unwrap();
        assert!(r.max_rel_error < 1e-6, "{}", r.max_rel_error);
    }

    #[test]
    fn gradient_check_constant() {
        let r = gradient_check(&Constant, &[1.0, 2.0], 1e-6).unwrap();
        assert_eq!(r.max_rel_error, 0.0);
        assert_eq!(r.dual, vec![0.0, 0.0]);
    }

    #[test]
    fn gradient_check_reports_non_finite() {
        assert!(gradient_check(&Blowup, &[0.0], 1e-6).is_err());
    }

    #[test]
    fn abs_at_zero_has_zero_derivative() {
        let [x] = seed([0.0]).unwrap();
        assert_eq!(x.abs().d, [0.0]);
    }

    #[test]
    fn min_max_tie_takes_first() {
        let [a, b] = seed([1.0, 1.0]).unwrap();
        assert_eq!(a.min(b).d, [1.0, 0.0]);
        assert_eq!(a.max(b).d, [1.0, 0.0]);
        assert_eq!(b.max(a).d, [0.0, 1.0]);
    }

    #[test]
    fn softplus_stable() {
        assert!((0.0f64.softplus() - 2f64.ln()).abs() < 1e-15);
        assert!((1000.0f64.softplus() - 1000.0).abs() < 1e-12);
        assert!(((-1000.0f64).softplus()).abs() < 1e-300 + 1e-12);
        let [x] = seed([0.3]).unwrap();
        let s = x.softplus();
        let sig = 1.0 / (1.0 + (-0.3f64).exp());
        assert!((s.d[0] - sig).abs() < 1e-14);
    }

    fn fd(f: impl Fn(f64) -> f64, x: f64) -> f64 {
        let h = 1e-6 * x.abs().max(1.0);
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    fn check(fd_val: f64, dual: f64) -> bool {
        (fd_val - dual).abs() / fd_val.abs().max(1.0) < 1e-6
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn elementary_derivatives(x in -0.95f64..0.95, y in 0.1f64..3.0) {
            let [a, b] = seed([x, y]).unwrap();
            prop_assert!(check(fd(f64::sin, x), a.sin().d[0]));
            prop_assert!(check(fd(f64::cos, x), a.cos().d[0]));
            prop_assert!(check(fd(f64::tan, x), a.tan().d[0]));
            prop_assert!(check(fd(f64::asin, x), a.asin().d[0]));
            prop_assert!(check(fd(f64::acos, x), a.acos().d[0]));
            prop_assert!(check(fd(f64::atan, x), a.atan().d[0]));
            prop_assert!(check(fd(f64::exp, x), a.exp().d[0]));
            prop_assert!(check(fd(f64::ln, y), b.ln().d[1]));
            prop_assert!(check(fd(f64::sqrt, y), b.sqrt().d[1]));
            prop_assert!(check(fd(|v| v.softplus(), x * 5.0), (a * 5.0).softplus().d[0] / 5.0));
            prop_assert!(check(fd(f64::abs, x), a.abs().d[0]));
            prop_assert!(check(fd(|v| v.atan2(y), x), a.atan2(b).d[0]));
            prop_assert!(check(fd(|v| x.atan2(v), y), a.atan2(b).d[1]));
            prop_assert!(check(fd(|v| v / y, x), (a / b).d[0]));
            prop_assert!(check(fd(|v| x / v, y), (a / b).d[1]));
            prop_assert!(check(fd(|v| v * y, x), (a * b).d[0]));
            prop_assert!(check(fd(|v| x - v, y), (a - b).d[1]));
            prop_assert!(check(fd(|v| v.min(y), x), a.min(b).d[0]));
            prop_assert!(check(fd(|v| v.max(0.0), x), a.max(Dual::constant(0.0)).d[0]));
        }

        #[test]
        fn zero_tangent_matches_plain(x in -3.0f64..3.0, y in 0.1f64..3.0) {
            let a = Dual::<3>::constant(x);
            let b = Dual::<3>::constant(y);
            let g = |s: Dual<3>, t: Dual<3>| ((s * t).sin() + s.atan2(t) * t.sqrt()).exp() / (t + 1.0);
            let h = |s: f64, t: f64| ((s * t).sin() + s.atan2(t) * t.sqrt()).exp() / (t + 1.0);
            let r = g(a, b);
            prop_assert_eq!(r.v.to_bits(), h(x, y).to_bits());
            prop_assert_eq!(r.d, [0.0; 3]);
        }
    }
}
