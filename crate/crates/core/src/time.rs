//! Extended-range nonnegative times.
//!
//! Breakpoint schedules such as `t_k = 2^{-k}` run far below the smallest
//! positive `f64` once a few hundred breakpoint triples are generated. [`Time`]
//! keeps a normalized `f64` mantissa together with an unbounded binary
//! exponent, so dyadic breakpoints stay exact at any depth and equality is
//! exact identity of the representation.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// A nonnegative time `mant * 2^exp` with `mant` in `[0.5, 1)` (or zero).
#[derive(Clone, Copy, Debug)]
pub struct Time {
    mant: f64,
    exp: i32,
}

pub(crate) fn frexp(x: f64) -> (f64, i32) {
    if x == 0.0 || !x.is_finite() {
        return (x, 0);
    }
    let bits = x.to_bits();
    let raw = ((bits >> 52) & 0x7ff) as i32;
    if raw == 0 {
        let (m, e) = frexp(x * 2f64.powi(64));
        return (m, e - 64);
    }
    let m = f64::from_bits((bits & !(0x7ffu64 << 52)) | (1022u64 << 52));
    (m, raw - 1022)
}

pub(crate) fn ldexp(mut x: f64, mut e: i32) -> f64 {
    while e > 1000 {
        x *= 2f64.powi(1000);
        e -= 1000;
    }
    while e < -1000 {
        x *= 2f64.powi(-1000);
        e += 1000;
        if x == 0.0 {
            return 0.0;
        }
    }
    x * 2f64.powi(e)
}

impl Time {
    pub const ZERO: Time = Time { mant: 0.0, exp: 0 };
    pub const ONE: Time = Time { mant: 0.5, exp: 1 };

    pub fn from_f64(x: f64) -> Result<Time> {
        if !x.is_finite() || x < 0.0 {
            return Err(Error::domain(format!("time must be finite and nonnegative, got {x}")));
        }
        Ok(Self::from_parts(x, 0))
    }

    /// `2^k`, exact for every `k`.
    pub fn pow2(k: i32) -> Time {
        Time { mant: 0.5, exp: k + 1 }
    }

    fn from_parts(m: f64, e: i32) -> Time {
        if m == 0.0 {
            return Time::ZERO;
        }
        let (mm, ee) = frexp(m);
        Time { mant: mm, exp: e + ee }
    }

    pub fn is_zero(self) -> bool {
        self.mant == 0.0
    }

    /// Nearest `f64`; underflows to zero for very small times.
    pub fn to_f64(self) -> f64 {
        ldexp(self.mant, self.exp)
    }

    /// Binary exponent `e` with `self` in `[2^(e-1), 2^e)`.
    pub fn exponent(self) -> i32 {
        self.exp
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, other: Time) -> Time {
        if self.is_zero() {
            return other;
        }
        if other.is_zero() {
            return self;
        }
        let (hi, lo) = if self.exp >= other.exp { (self, other) } else { (other, self) };
        let d = hi.exp - lo.exp;
        if d > 1100 {
            return hi;
        }
        Self::from_parts(hi.mant + ldexp(lo.mant, -d), hi.exp)
    }

    /// `self - other`; errors when the result would be negative.
    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, other: Time) -> Result<Time> {
        match self.cmp(&other) {
            Ordering::Less => Err(Error::domain("negative time difference")),
            Ordering::Equal => Ok(Time::ZERO),
            Ordering::Greater => {
                if other.is_zero() {
                    return Ok(self);
                }
                let d = self.exp - other.exp;
                if d > 1100 {
                    return Ok(self);
                }
                Ok(Self::from_parts(self.mant - ldexp(other.mant, -d), self.exp))
            }
        }
    }

    pub fn scale(self, factor: f64) -> Result<Time> {
        if !factor.is_finite() || factor < 0.0 {
            return Err(Error::domain(format!("invalid time scale factor {factor}")));
        }
        Ok(Self::from_parts(self.mant * factor, self.exp))
    }

    /// `self / other` as an `f64`.
    pub fn ratio(self, other: Time) -> f64 {
        if other.is_zero() {
            return if self.is_zero() { f64::NAN } else { f64::INFINITY };
        }
        if self.is_zero() {
            return 0.0;
        }
        ldexp(self.mant / other.mant, self.exp - other.exp)
    }

    /// True when the value is exactly representable as a normal (or zero) `f64`.
    fn is_plain(self) -> bool {
        self.is_zero() || (self.exp > -1021 && self.exp <= 1024)
    }
}

impl PartialEq for Time {
    fn eq(&self, other: &Self) -> bool {
        self.mant == other.mant && (self.is_zero() || self.exp == other.exp)
    }
}

impl Eq for Time {}

impl PartialOrd for Time {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Time {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self.is_zero(), other.is_zero()) {
            (true, true) => Ordering::Equal,
            (true, false) => Ordering::Less,
            (false, true) => Ordering::Greater,
            _ => self.exp.cmp(&other.exp).then_with(|| self.mant.partial_cmp(&other.mant).unwrap_or(Ordering::Equal)),
        }
    }
}

impl From<u32> for Time {
    fn from(v: u32) -> Self {
        Time::from_parts(v as f64, 0)
    }
}

/// Shortest round-trip decimal text for an `f64`.
pub fn fmt_f64(v: f64) -> String {
    let a = v.abs();
    if v == 0.0 || (1e-5..1e16).contains(&a) {
        format!("{v}")
    } else {
        format!("{v:e}")
    }
}

impl fmt::Display for Time {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_plain() {
            f.write_str(&fmt_f64(self.to_f64()))
        } else {
            write!(f, "{}p{}", fmt_f64(self.mant), self.exp)
        }
    }
}

impl FromStr for Time {
    type Err = Error;

    fn from_str(s: &str) -> Result<Time> {
        let s = s.trim();
        if let Some((m, e)) = s.split_once('p') {
            let m: f64 = m.parse().map_err(|_| Error::Parse(format!("bad time mantissa in {s:?}")))?;
            let e: i32 = e.parse().map_err(|_| Error::Parse(format!("bad time exponent in {s:?}")))?;
            if !m.is_finite() || m < 0.0 {
                return Err(Error::Parse(format!("bad time {s:?}")));
            }
            Ok(Time::from_parts(m, e))
        } else {
            let v: f64 = s.parse().map_err(|_| Error::Parse(format!("bad time {s:?}")))?;
            Time::from_f64(v)
        }
    }
}

impl Serialize for Time {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_plain() {
            serializer.serialize_f64(self.to_f64())
        } else {
            serializer.serialize_str(&self.to_string())
        }
    }
}

impl<'de> Deserialize<'de> for Time {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Repr {
            Num(f64),
            Text(String),
        }
        match Repr::deserialize(deserializer)? {
            Repr::Num(v) => Time::from_f64(v).map_err(de::Error::custom),
            Repr::Text(s) => s.parse().map_err(de::Error::custom),
        }
    }
}
