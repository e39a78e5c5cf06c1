//! Exact rational arithmetic used for simulated time, frequencies and energy.
//!
//! All simulation state is kept in `Ratio<i128>` so that work conservation
//! and determinism hold exactly. Floats appear only at the reporting edge.

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::{BigRational, Ratio};
use num_traits::{Signed, ToPrimitive, Zero};
use thiserror::Error;

/// Exact rational number.
pub type Rat = Ratio<i128>;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid decimal number `{0}`")]
pub struct DecimalError(pub String);

pub fn rat(n: i128) -> Rat {
    Rat::from_integer(n)
}

/// `n / d` as an exact rational.
pub fn ratio(n: i128, d: i128) -> Rat {
    Rat::new(n, d)
}

/// Parses a plain decimal literal (`"2.4"`, `"-0.125"`, `"500"`, `"1e3"` is rejected).
pub fn parse_decimal(s: &str) -> Result<Rat, DecimalError> {
    let err = || DecimalError(s.to_string());
    let t = s.trim();
    let (neg, body) = match t.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, t.strip_prefix('+').unwrap_or(t)),
    };
    if body.is_empty() {
        return Err(err());
    }
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return Err(err());
    }
    if !int_part.bytes().all(|b| b.is_ascii_digit()) || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
        return Err(err());
    }
    if int_part.len() + frac_part.len() > 30 {
        return Err(err());
    }
    let digits = format!("{int_part}{frac_part}");
    let numer: i128 = if digits.is_empty() { 0 } else { digits.parse().map_err(|_| err())? };
    let denom = 10i128.pow(frac_part.len() as u32);
    let r = Rat::new(numer, denom);
    Ok(if neg { -r } else { r })
}

/// Formats `r` with exactly `digits` fractional digits, rounding half away from zero.
pub fn fmt_decimal(r: &Rat, digits: u32) -> String {
    let scale = 10i128.pow(digits);
    let scaled = r * rat(scale);
    let rounded = scaled.abs().round().to_integer();
    let neg = scaled.is_negative() && rounded != 0;
    let (int_part, frac_part) = rounded.div_rem(&scale);
    let sign = if neg { "-" } else { "" };
    if digits == 0 {
        format!("{sign}{int_part}")
    } else {
        format!("{sign}{int_part}.{frac_part:0width$}", width = digits as usize)
    }
}

/// Shortest exact decimal rendering when the denominator is a product of 2s and 5s,
/// otherwise rounded to 9 fractional digits.
pub fn fmt_compact(r: &Rat) -> String {
    let mut d = *r.denom();
    while d % 2 == 0 {
        d /= 2;
    }
    while d % 5 == 0 {
        d /= 5;
    }
    if d != 1 {
        return fmt_decimal(r, 9);
    }
    for digits in 0..=30u32 {
        let scaled = r * rat(10i128.pow(digits));
        if scaled.is_integer() {
            return fmt_decimal(r, digits);
        }
    }
    fmt_decimal(r, 9)
}

pub fn to_f64(r: &Rat) -> f64 {
    // Split to keep precision for large numerators.
    let int = r.trunc();
    let frac = r - int;
    int.to_integer() as f64 + frac.numer().to_f64().unwrap_or(0.0) / frac.denom().to_f64().unwrap_or(1.0)
}

pub fn big(r: &Rat) -> BigRational {
    BigRational::new(BigInt::from(*r.numer()), BigInt::from(*r.denom()))
}

/// Back to `Rat`: exact when numerator and denominator fit, otherwise
/// rounded to the nearest multiple of 1e-18.
pub fn narrow(r: &BigRational) -> Rat {
    if let (Some(n), Some(d)) = (r.numer().to_i128(), r.denom().to_i128()) {
        return Rat::new(n, d);
    }
    let scale = BigInt::from(10).pow(18);
    let scaled = (r * BigRational::from_integer(scale.clone())).round().to_integer();
    Rat::new(scaled.to_i128().expect("value within i128 range after scaling"), 10i128.pow(18))
}

/// Smallest integer multiple of `period` strictly greater than `t` (`t >= 0`).
pub fn next_multiple_after(t: &Rat, period: &Rat) -> Rat {
    let k = (t / period).floor().to_integer() + 1;
    period * rat(k)
}

pub fn is_multiple_of(t: &Rat, period: &Rat) -> bool {
    !period.is_zero() && (t / period).is_integer()
}

pub fn max(a: Rat, b: Rat) -> Rat {
    if a >= b {
        a
    } else {
        b
    }
}
