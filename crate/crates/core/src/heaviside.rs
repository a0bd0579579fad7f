//! Dynamic top-2 threshold and the temperature-controlled piecewise-linear
//! Heaviside approximation.
//!
//! For a threshold `tau` and temperature `T` the approximation interpolates
//! the five anchors `(0, 0)`, `(tau - tau_m/2, T)`, `(tau, 0.5)`,
//! `(tau + tau_m/2, 1 - T)`, `(1, 1)` with `tau_m = 5 T min(tau, 1 - tau)`.
//! At `T = 0.2` this is `tau_m = min(tau, 1 - tau)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Largest admissible temperature.
pub const MAX_TEMPERATURE: f64 = 0.4;

/// Floor applied to the outer-segment denominators. At `T = 0.4` one of
/// `tau - tau_m/2` or `1 - tau - tau_m/2` is exactly zero.
pub const DENOM_FLOOR: f64 = 1e-12;

/// Thresholds within this distance of 0.5 are treated as sitting on the kink
/// of `min(tau, 1 - tau)`. For `d = 2` the threshold is 0.5 up to rounding.
pub const KINK_TOL: f64 = 1e-12;

/// Sharpness parameter in `(0, 0.4]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Temperature<S: Scalar = f64>(S);

impl<S: Scalar> Temperature<S> {
    pub fn new(value: S) -> Result<Self> {
        if value > S::zero() && value <= S::lit(MAX_TEMPERATURE) {
            Ok(Self(value))
        } else {
            Err(Error::InvalidTemperature(value.as_f64()))
        }
    }

    #[inline]
    pub fn value(self) -> S {
        self.0
    }
}

impl<S: Scalar> Serialize for Temperature<S> {
    fn serialize<Z: serde::Serializer>(&self, serializer: Z) -> std::result::Result<Z::Ok, Z::Error> {
        serializer.serialize_f64(self.0.as_f64())
    }
}

impl<'de, S: Scalar> Deserialize<'de> for Temperature<S> {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let v = f64::deserialize(deserializer)?;
        Self::new(S::lit(v)).map_err(serde::de::Error::custom)
    }
}

/// Which linear piece of the approximation a point falls on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Segment {
    Lower,
    Middle,
    Upper,
}

impl Segment {
    pub fn code(self) -> u8 {
        match self {
            Segment::Lower => 0,
            Segment::Middle => 1,
            Segment::Upper => 2,
        }
    }
}

/// Breakpoints and slopes of the approximation for one `(tau, T)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdParams<S: Scalar = f64> {
    pub tau: S,
    pub temperature: S,
    pub tau_m: S,
    pub m1: S,
    pub m2: S,
    pub m3: S,
    /// `d min(tau, 1 - tau) / d tau`; zero at the kink `tau = 0.5`.
    width_slope: S,
    lower_floored: bool,
    upper_floored: bool,
}

impl<S: Scalar> ThresholdParams<S> {
    pub fn new(tau: S, temperature: Temperature<S>) -> Result<Self> {
        if !(tau > S::zero() && tau < S::one()) {
            return Err(Error::InvalidThreshold(tau.as_f64()));
        }
        let t = temperature.value();
        let half = S::lit(0.5);
        let five = S::lit(5.0);
        let floor = S::lit(DENOM_FLOOR);
        let width = tau.min(S::one() - tau);
        let width_slope = match kink_side(tau) {
            std::cmp::Ordering::Less => S::one(),
            std::cmp::Ordering::Greater => -S::one(),
            std::cmp::Ordering::Equal => S::zero(),
        };
        let tau_m = five * t * width;
        let lower_den = tau - tau_m * half;
        let upper_den = S::one() - tau - tau_m * half;
        Ok(Self {
            tau,
            temperature: t,
            tau_m,
            m1: t / lower_den.max(floor),
            m2: (S::one() - t - t) / tau_m,
            m3: t / upper_den.max(floor),
            width_slope,
            lower_floored: lower_den < floor,
            upper_floored: upper_den < floor,
        })
    }

    #[inline]
    pub fn lower_break(&self) -> S {
        self.tau - self.tau_m * S::lit(0.5)
    }

    #[inline]
    pub fn upper_break(&self) -> S {
        self.tau + self.tau_m * S::lit(0.5)
    }

    /// Boundary points belong to the middle segment, except where an outer
    /// segment has collapsed to a point (`T = 0.4`); that endpoint keeps its anchor.
    #[inline]
    pub fn segment(&self, p: S) -> Segment {
        if self.lower_floored && p <= self.lower_break() {
            Segment::Lower
        } else if self.upper_floored && p >= self.upper_break() {
            Segment::Upper
        } else if p < self.lower_break() {
            Segment::Lower
        } else if p > self.upper_break() {
            Segment::Upper
        } else {
            Segment::Middle
        }
    }

    pub fn value(&self, p: S) -> S {
        let half = S::lit(0.5);
        match self.segment(p) {
            Segment::Lower if self.lower_floored => S::zero(),
            Segment::Upper if self.upper_floored => S::one(),
            Segment::Lower => p * self.m1,
            Segment::Upper => {
                p * self.m3 + (S::one() - self.temperature - self.m3 * self.upper_break())
            }
            Segment::Middle => p * self.m2 + (half - self.m2 * self.tau),
        }
    }

    /// `dH/dp` on the active segment.
    pub fn slope(&self, p: S) -> S {
        match self.segment(p) {
            Segment::Lower if self.lower_floored => S::zero(),
            Segment::Upper if self.upper_floored => S::zero(),
            Segment::Lower => self.m1,
            Segment::Middle => self.m2,
            Segment::Upper => self.m3,
        }
    }

    /// `dH/dtau` at fixed `p`, differentiating through `tau_m`, `m1`, `m2`, `m3`.
    /// Floored denominators are treated as constants.
    pub fn tau_derivative(&self, p: S) -> S {
        let t = self.temperature;
        let half = S::lit(0.5);
        let dtau_m = S::lit(5.0) * t * self.width_slope;
        match self.segment(p) {
            Segment::Lower => {
                if self.lower_floored {
                    return S::zero();
                }
                let den = self.lower_break();
                let dden = S::one() - half * dtau_m;
                -p * t / (den * den) * dden
            }
            Segment::Middle => {
                let dm2 = -(S::one() - t - t) / (self.tau_m * self.tau_m) * dtau_m;
                -self.m2 + (p - self.tau) * dm2
            }
            Segment::Upper => {
                let b = self.upper_break();
                if self.upper_floored {
                    return S::zero();
                }
                let db = S::one() + half * dtau_m;
                let den = S::one() - b;
                let dm3 = t / (den * den) * db;
                -(b - p) * dm3 - self.m3 * db
            }
        }
    }
}

/// Side of 0.5 the threshold falls on, with `KINK_TOL` counted as equal.
pub fn kink_side<S: Scalar>(tau: S) -> std::cmp::Ordering {
    let off = tau - S::lit(0.5);
    if off.abs() <= S::lit(KINK_TOL) {
        std::cmp::Ordering::Equal
    } else if off < S::zero() {
        std::cmp::Ordering::Less
    } else {
        std::cmp::Ordering::Greater
    }
}

/// Indices of the largest and second-largest components; ties go to the lower index.
pub fn top2<S: Scalar>(p: &[S]) -> Result<(usize, usize)> {
    if p.len() < 2 {
        return Err(Error::TooFewClasses(p.len()));
    }
    let (mut first, mut second) = if p[1] > p[0] { (1, 0) } else { (0, 1) };
    for (i, &v) in p.iter().enumerate().skip(2) {
        if v > p[first] {
            second = first;
            first = i;
        } else if v > p[second] {
            second = i;
        }
    }
    Ok((first, second))
}

/// Mean of the two largest components.
pub fn tau_avg<S: Scalar>(p: &[S]) -> Result<S> {
    let (a, b) = top2(p)?;
    Ok((p[a] + p[b]) * S::lit(0.5))
}

/// Exact step with the value 0.5 at the threshold.
pub fn heaviside_hard<S: Scalar>(x: S, tau: S) -> S {
    if x > tau {
        S::one()
    } else if x < tau {
        S::zero()
    } else {
        S::lit(0.5)
    }
}

pub fn heaviside_linear<S: Scalar>(p: S, tau: S, temperature: Temperature<S>) -> Result<S> {
    Ok(ThresholdParams::new(tau, temperature)?.value(p))
}

/// Applies the approximation coordinate-wise at the shared threshold `tau_avg(p)`.
pub fn heaviside_linear_vec<S: Scalar>(p: &[S], temperature: Temperature<S>) -> Result<Vec<S>> {
    let params = ThresholdParams::new(tau_avg(p)?, temperature)?;
    Ok(p.iter().map(|&v| params.value(v)).collect())
}
