//! Outward-rounded interval arithmetic.
//!
//! Basic operations (`+ - * /`, `sqrt`) use error-free transformations
//! (TwoSum, FMA-based TwoProduct) to recover the exact rounding error of the
//! round-to-nearest result and step one ulp outward only when the result was
//! inexact. Library transcendentals are not correctly rounded, so their
//! results are widened by a fixed number of ulps.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use serde::{Serialize, Serializer};
use thiserror::Error;

/// Number of ulps the results of `exp`, `ln`, `sin` and `cos` are widened by.
const LIBM_ULPS: u32 = 2;

/// Products and quotients smaller than this fall back to ulp widening since
/// the FMA error term may itself be inexact in the subnormal range.
const TINY: f64 = 1e-290;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum IntervalError {
    #[error("division by an interval containing zero: {0}")]
    DivisionByZero(Interval),
    #[error("{func} is undefined on {arg}")]
    Domain { func: &'static str, arg: Interval },
}

/// Closed real interval `[lo, hi]` with `lo <= hi`.
///
/// Endpoints are finite except for half-line markers used while searching
/// for the support of a density.
#[derive(Clone, Copy, PartialEq)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

fn next_down(x: f64) -> f64 {
    if x == f64::NEG_INFINITY || x.is_nan() {
        x
    } else {
        x.next_down()
    }
}

fn next_up(x: f64) -> f64 {
    if x == f64::INFINITY || x.is_nan() {
        x
    } else {
        x.next_up()
    }
}

fn widen_down(mut x: f64, ulps: u32) -> f64 {
    for _ in 0..ulps {
        x = next_down(x);
    }
    x
}

fn widen_up(mut x: f64, ulps: u32) -> f64 {
    for _ in 0..ulps {
        x = next_up(x);
    }
    x
}

/// Sum rounded toward negative and positive infinity.
fn add_rounded(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    if !s.is_finite() {
        if a.is_finite() && b.is_finite() {
            // overflow of finite operands
            return if s > 0.0 { (f64::MAX, s) } else { (s, -f64::MAX) };
        }
        return (s, s);
    }
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    if err > 0.0 {
        (s, next_up(s))
    } else if err < 0.0 {
        (next_down(s), s)
    } else {
        (s, s)
    }
}

pub(crate) fn add_down(a: f64, b: f64) -> f64 {
    add_rounded(a, b).0
}

pub(crate) fn add_up(a: f64, b: f64) -> f64 {
    add_rounded(a, b).1
}

pub(crate) fn sub_down(a: f64, b: f64) -> f64 {
    add_rounded(a, -b).0
}

pub(crate) fn sub_up(a: f64, b: f64) -> f64 {
    add_rounded(a, -b).1
}

/// Product rounded toward negative and positive infinity; `0 * inf = 0`.
fn mul_rounded(a: f64, b: f64) -> (f64, f64) {
    if a == 0.0 || b == 0.0 {
        return (0.0, 0.0);
    }
    let p = a * b;
    if !p.is_finite() {
        if a.is_finite() && b.is_finite() {
            return if p > 0.0 { (f64::MAX, p) } else { (p, -f64::MAX) };
        }
        return (p, p);
    }
    if p.abs() < TINY {
        return (next_down(p), next_up(p));
    }
    let err = a.mul_add(b, -p);
    if err > 0.0 {
        (p, next_up(p))
    } else if err < 0.0 {
        (next_down(p), p)
    } else {
        (p, p)
    }
}

pub(crate) fn mul_down(a: f64, b: f64) -> f64 {
    mul_rounded(a, b).0
}

pub(crate) fn mul_up(a: f64, b: f64) -> f64 {
    mul_rounded(a, b).1
}

fn div_rounded(a: f64, b: f64) -> (f64, f64) {
    if a == 0.0 {
        return (0.0, 0.0);
    }
    let q = a / b;
    if !q.is_finite() || q == 0.0 || q.abs() < TINY || !a.is_finite() || !b.is_finite() {
        if q.is_infinite() && a.is_finite() && b.is_finite() {
            return if q > 0.0 { (f64::MAX, q) } else { (q, -f64::MAX) };
        }
        return (next_down(q), next_up(q));
    }
    // remainder a - q*b is exact; its sign relative to b says where the true quotient lies
    let r = (-q).mul_add(b, a);
    let above = if b > 0.0 { r > 0.0 } else { r < 0.0 };
    let below = if b > 0.0 { r < 0.0 } else { r > 0.0 };
    if above {
        (q, next_up(q))
    } else if below {
        (next_down(q), q)
    } else {
        (q, q)
    }
}

pub(crate) fn div_down(a: f64, b: f64) -> f64 {
    div_rounded(a, b).0
}

fn sqrt_rounded(x: f64) -> (f64, f64) {
    let s = x.sqrt();
    if x == 0.0 || !s.is_finite() || x < TINY {
        return (next_down(s).max(0.0), next_up(s));
    }
    let r = (-s).mul_add(s, x);
    if r > 0.0 {
        (s, next_up(s))
    } else if r < 0.0 {
        (next_down(s).max(0.0), s)
    } else {
        (s, s)
    }
}

impl Interval {
    pub const ZERO: Interval = Interval { lo: 0.0, hi: 0.0 };
    pub const ONE: Interval = Interval { lo: 1.0, hi: 1.0 };
    pub const UNIT: Interval = Interval { lo: 0.0, hi: 1.0 };
    pub const ENTIRE: Interval = Interval {
        lo: f64::NEG_INFINITY,
        hi: f64::INFINITY,
    };
    /// Enclosure of pi.
    pub const PI: Interval = Interval {
        lo: std::f64::consts::PI,
        hi: 3.141_592_653_589_793_6,
    };

    /// Creates `[lo, hi]`. Panics if `lo > hi` or either endpoint is NaN.
    pub fn new(lo: f64, hi: f64) -> Self {
        assert!(lo <= hi, "invalid interval [{lo}, {hi}]");
        Interval { lo, hi }
    }

    pub fn try_new(lo: f64, hi: f64) -> Option<Self> {
        (lo <= hi).then_some(Interval { lo, hi })
    }

    pub fn point(x: f64) -> Self {
        Self::new(x, x)
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    pub fn is_finite(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    /// `hi - lo`, rounded upward.
    pub fn width(&self) -> f64 {
        sub_up(self.hi, self.lo)
    }

    /// A representable point inside the interval, nominally `(lo + hi) / 2`.
    pub fn midpoint(&self) -> f64 {
        match (self.lo.is_finite(), self.hi.is_finite()) {
            (true, true) => {
                let m = 0.5 * self.lo + 0.5 * self.hi;
                m.clamp(self.lo, self.hi)
            }
            (false, true) => {
                if self.hi > 0.0 {
                    0.0
                } else {
                    (2.0 * self.hi - 1.0).max(-f64::MAX)
                }
            }
            (true, false) => {
                if self.lo < 0.0 {
                    0.0
                } else {
                    (2.0 * self.lo + 1.0).min(f64::MAX)
                }
            }
            (false, false) => 0.0,
        }
    }

    /// Tight enclosure of the exact midpoint `(lo + hi) / 2`.
    pub fn midpoint_enclosure(&self) -> Interval {
        let (slo, _) = add_rounded(self.lo, self.hi);
        let (_, shi) = add_rounded(self.lo, self.hi);
        Interval::new(mul_down(slo, 0.5), mul_up(shi, 0.5))
    }

    /// Largest absolute value over the interval.
    pub fn mag(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }

    /// Smallest absolute value over the interval.
    pub fn mig(&self) -> f64 {
        if self.contains(0.0) {
            0.0
        } else {
            self.lo.abs().min(self.hi.abs())
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_zero(&self) -> bool {
        self.contains(0.0)
    }

    /// `self ⊆ other`.
    pub fn subset_of(&self, other: &Interval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }

    /// `self` lies in the interior of `other`.
    pub fn interior_of(&self, other: &Interval) -> bool {
        other.lo < self.lo && self.hi < other.hi
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval::new(self.lo.min(other.lo), self.hi.max(other.hi))
    }

    pub fn hull_point(&self, x: f64) -> Interval {
        Interval::new(self.lo.min(x), self.hi.max(x))
    }

    /// Set intersection; `None` when the intervals are disjoint.
    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        Interval::try_new(self.lo.max(other.lo), self.hi.min(other.hi))
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.intersect(other).is_some()
    }

    /// Splits at the midpoint.
    pub fn bisect(&self) -> (Interval, Interval) {
        let m = self.midpoint();
        (Interval::new(self.lo, m), Interval::new(m, self.hi))
    }

    /// `[lo - r, hi + r]`, rounded outward.
    pub fn inflate(&self, r: f64) -> Interval {
        Interval::new(sub_down(self.lo, r), add_up(self.hi, r))
    }

    /// Clamps to `bounds`; returns `bounds`' nearest endpoint if disjoint.
    pub fn clamp_to(&self, bounds: &Interval) -> Interval {
        match self.intersect(bounds) {
            Some(i) => i,
            None if self.hi < bounds.lo => Interval::point(bounds.lo),
            None => Interval::point(bounds.hi),
        }
    }

    pub fn abs(&self) -> Interval {
        if self.lo >= 0.0 {
            *self
        } else if self.hi <= 0.0 {
            -*self
        } else {
            Interval::new(0.0, self.mag())
        }
    }

    pub fn sqr(&self) -> Interval {
        let a = self.abs();
        Interval::new(mul_down(a.lo, a.lo), mul_up(a.hi, a.hi))
    }

    pub fn checked_div(&self, rhs: &Interval) -> Result<Interval, IntervalError> {
        if rhs.contains_zero() {
            return Err(IntervalError::DivisionByZero(*rhs));
        }
        if self.is_point() {
            let a = self.lo;
            let c = [div_rounded(a, rhs.lo), div_rounded(a, rhs.hi)];
            let lo = c[0].0.min(c[1].0);
            let hi = c[0].1.max(c[1].1);
            return Ok(Interval::new(lo, hi));
        }
        let cands = [
            div_rounded(self.lo, rhs.lo),
            div_rounded(self.lo, rhs.hi),
            div_rounded(self.hi, rhs.lo),
            div_rounded(self.hi, rhs.hi),
        ];
        let lo = cands.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
        let hi = cands.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
        Ok(Interval::new(lo, hi))
    }

    pub fn recip(&self) -> Result<Interval, IntervalError> {
        Interval::ONE.checked_div(self)
    }

    pub fn sqrt(&self) -> Result<Interval, IntervalError> {
        if self.lo < 0.0 {
            return Err(IntervalError::Domain {
                func: "sqrt",
                arg: *self,
            });
        }
        Ok(Interval::new(sqrt_rounded(self.lo).0, sqrt_rounded(self.hi).1))
    }

    pub fn exp(&self) -> Interval {
        let lo = if self.lo == f64::NEG_INFINITY {
            0.0
        } else {
            widen_down(self.lo.exp(), LIBM_ULPS).max(0.0)
        };
        let hi = widen_up(self.hi.exp(), LIBM_ULPS);
        Interval::new(lo, hi)
    }

    pub fn ln(&self) -> Result<Interval, IntervalError> {
        if self.lo <= 0.0 {
            return Err(IntervalError::Domain {
                func: "log",
                arg: *self,
            });
        }
        Ok(Interval::new(
            widen_down(self.lo.ln(), LIBM_ULPS),
            widen_up(self.hi.ln(), LIBM_ULPS),
        ))
    }

    /// Integer power. Negative exponents divide and fail if zero is enclosed.
    pub fn powi(&self, n: i32) -> Result<Interval, IntervalError> {
        if n == 0 {
            return Ok(Interval::ONE);
        }
        if n < 0 {
            return self.powi(-n)?.recip();
        }
        let n = n as u32;
        let pow_up = |a: f64| (0..n - 1).fold(a, |acc, _| mul_up(acc, a));
        let pow_down = |a: f64| (0..n - 1).fold(a, |acc, _| mul_down(acc, a));
        if n % 2 == 0 {
            let a = self.abs();
            Ok(Interval::new(pow_down(a.lo), pow_up(a.hi)))
        } else {
            // odd powers are monotone; for negative bases use -(|x|^n)
            let lo = if self.lo >= 0.0 {
                pow_down(self.lo)
            } else {
                -pow_up(-self.lo)
            };
            let hi = if self.hi >= 0.0 {
                pow_up(self.hi)
            } else {
                -pow_down(-self.hi)
            };
            Ok(Interval::new(lo, hi))
        }
    }

    pub fn sin(&self) -> Interval {
        // extrema of sin: maxima at pi/2 + 2 pi n, minima at -pi/2 + 2 pi n
        self.periodic(f64::sin, 0.5, -0.5)
    }

    pub fn cos(&self) -> Interval {
        // maxima at 2 pi n, minima at pi + 2 pi n
        self.periodic(f64::cos, 0.0, 1.0)
    }

    /// Range of a 2pi-periodic unimodal-per-half-period function whose maxima
    /// sit at `(max_off + 2n) * pi` and minima at `(min_off + 2n) * pi`.
    fn periodic(&self, f: fn(f64) -> f64, max_off: f64, min_off: f64) -> Interval {
        const FULL: Interval = Interval { lo: -1.0, hi: 1.0 };
        if !self.is_finite() || self.mag() > 1e8 {
            return FULL;
        }
        let two_pi = Interval::PI * Interval::point(2.0);
        if self.width() >= two_pi.lo {
            return FULL;
        }
        let has_extremum = |off: f64| {
            let shifted = *self - Interval::PI * Interval::point(off);
            match shifted.checked_div(&two_pi) {
                Ok(q) => q.lo.ceil() <= q.hi,
                Err(_) => true,
            }
        };
        let a = f(self.lo);
        let b = f(self.hi);
        let mut lo = widen_down(a.min(b), LIBM_ULPS);
        let mut hi = widen_up(a.max(b), LIBM_ULPS);
        if has_extremum(max_off) {
            hi = 1.0;
        }
        if has_extremum(min_off) {
            lo = -1.0;
        }
        Interval::new(lo.max(-1.0), hi.min(1.0))
    }
}

impl fmt::Debug for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:e}, {:e}]", self.lo, self.hi)
    }
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}]", self.lo, self.hi)
    }
}

impl Serialize for Interval {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.lo, self.hi].serialize(s)
    }
}

impl From<f64> for Interval {
    fn from(x: f64) -> Self {
        Interval::point(x)
    }
}

impl Add for Interval {
    type Output = Interval;

    fn add(self, rhs: Interval) -> Interval {
        Interval::new(add_down(self.lo, rhs.lo), add_up(self.hi, rhs.hi))
    }
}

impl Sub for Interval {
    type Output = Interval;

    fn sub(self, rhs: Interval) -> Interval {
        Interval::new(sub_down(self.lo, rhs.hi), sub_up(self.hi, rhs.lo))
    }
}

impl Neg for Interval {
    type Output = Interval;

    fn neg(self) -> Interval {
        Interval::new(-self.hi, -self.lo)
    }
}

impl Mul for Interval {
    type Output = Interval;

    fn mul(self, rhs: Interval) -> Interval {
        let (a, b, c, d) = (self.lo, self.hi, rhs.lo, rhs.hi);
        if a >= 0.0 && c >= 0.0 {
            return Interval::new(mul_down(a, c), mul_up(b, d));
        }
        let lo = [
            mul_down(a, c),
            mul_down(a, d),
            mul_down(b, c),
            mul_down(b, d),
        ]
        .into_iter()
        .fold(f64::INFINITY, f64::min);
        let hi = [
            mul_up(a, c),
            mul_up(a, d),
            mul_up(b, c),
            mul_up(b, d),
        ]
        .into_iter()
        .fold(f64::NEG_INFINITY, f64::max);
        Interval::new(lo, hi)
    }
}

impl std::iter::Sum for Interval {
    fn sum<I: Iterator<Item = Interval>>(iter: I) -> Interval {
        iter.fold(Interval::ZERO, |a, b| a + b)
    }
}

impl std::iter::Product for Interval {
    fn product<I: Iterator<Item = Interval>>(iter: I) -> Interval {
        iter.fold(Interval::ONE, |a, b| a * b)
    }
}

/// A box with named coordinates.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct IntervalBox {
    dims: Vec<(String, Interval)>,
}

impl IntervalBox {
    pub fn new(dims: Vec<(String, Interval)>) -> Self {
        IntervalBox { dims }
    }

    pub fn get(&self, name: &str) -> Option<Interval> {
        self.dims.iter().find(|(n, _)| n == name).map(|(_, x)| *x)
    }

    /// Sets `name`, appending a new coordinate if absent.
    pub fn set(&mut self, name: &str, x: Interval) {
        match self.dims.iter_mut().find(|(n, _)| n == name) {
            Some(slot) => slot.1 = x,
            None => self.dims.push((name.to_string(), x)),
        }
    }

    pub fn dims(&self) -> &[(String, Interval)] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn max_width(&self) -> f64 {
        self.dims.iter().map(|(_, x)| x.width()).fold(0.0, f64::max)
    }
}
