//! Exact rational numbers.
//!
//! Every numeric literal that enters the engine (graph documents, policy
//! expressions, provider responses) is parsed into an arbitrary-precision
//! rational. Decimal literals therefore survive parse/serialize unchanged, and
//! `7.1 == 7.095` can never be confused by binary rounding.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use num_bigint::{BigInt, Sign};
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};
use thiserror::Error;

/// Largest accepted decimal exponent magnitude (`1e4096`).
const MAX_EXPONENT: i64 = 4096;
/// Largest accepted number of digits in a single literal.
const MAX_DIGITS: usize = 8192;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NumberError {
    #[error("invalid numeric literal '{0}'")]
    Invalid(String),
    #[error("numeric literal '{0}' is out of the supported range")]
    OutOfRange(String),
    #[error("zero denominator in '{0}'")]
    ZeroDenominator(String),
}

/// An exact rational number.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Number(BigRational);

impl Number {
    pub fn zero() -> Self {
        Number(BigRational::zero())
    }

    pub fn one() -> Self {
        Number(BigRational::one())
    }

    pub fn from_ratio(numer: i64, denom: i64) -> Self {
        assert!(denom != 0, "zero denominator");
        Number(BigRational::new(BigInt::from(numer), BigInt::from(denom)))
    }

    pub fn from_rational(r: BigRational) -> Self {
        Number(r)
    }

    pub fn as_rational(&self) -> &BigRational {
        &self.0
    }

    pub fn numer(&self) -> &BigInt {
        self.0.numer()
    }

    pub fn denom(&self) -> &BigInt {
        self.0.denom()
    }

    pub fn is_zero(&self) -> bool {
        self.0.is_zero()
    }

    pub fn is_integer(&self) -> bool {
        self.0.is_integer()
    }

    pub fn is_negative(&self) -> bool {
        self.0.is_negative()
    }

    /// Lossy conversion, for display and statistics only.
    pub fn to_f64(&self) -> f64 {
        self.0.to_f64().unwrap_or(f64::NAN)
    }

    pub fn to_i64(&self) -> Option<i64> {
        if self.is_integer() {
            self.0.numer().to_i64()
        } else {
            None
        }
    }

    pub fn checked_div(&self, rhs: &Number) -> Option<Number> {
        if rhs.is_zero() {
            None
        } else {
            Some(Number(&self.0 / &rhs.0))
        }
    }

    /// Truncated remainder, defined for integers only. `None` when either
    /// side is non-integral or the divisor is zero; callers distinguish the
    /// two cases themselves.
    pub fn checked_rem(&self, rhs: &Number) -> Option<Number> {
        if !self.is_integer() || !rhs.is_integer() || rhs.is_zero() {
            return None;
        }
        Some(Number(BigRational::from_integer(self.0.numer() % rhs.0.numer())))
    }

    /// Parses a JSON-style decimal literal (`-12`, `7.095`, `1e-3`, `.5`).
    pub fn parse_decimal(text: &str) -> Result<Number, NumberError> {
        let invalid = || NumberError::Invalid(text.to_string());
        if text.len() > MAX_DIGITS {
            return Err(NumberError::OutOfRange(text.to_string()));
        }
        let (negative, body) = match text.as_bytes().first() {
            Some(b'-') => (true, &text[1..]),
            Some(b'+') => (false, &text[1..]),
            _ => (false, text),
        };
        let (mantissa, exponent) = match body.find(['e', 'E']) {
            Some(pos) => {
                let exp: i64 = body[pos + 1..].parse().map_err(|_| invalid())?;
                (&body[..pos], exp)
            }
            None => (body, 0),
        };
        let (int_part, frac_part) = match mantissa.find('.') {
            Some(pos) => (&mantissa[..pos], &mantissa[pos + 1..]),
            None => (mantissa, ""),
        };
        if int_part.is_empty() && frac_part.is_empty() {
            return Err(invalid());
        }
        if !int_part.bytes().all(|b| b.is_ascii_digit()) || !frac_part.bytes().all(|b| b.is_ascii_digit()) {
            return Err(invalid());
        }
        let scale = exponent - frac_part.len() as i64;
        if scale.abs() > MAX_EXPONENT + MAX_DIGITS as i64 || exponent.abs() > MAX_EXPONENT {
            return Err(NumberError::OutOfRange(text.to_string()));
        }
        let digits = format!("{int_part}{frac_part}");
        let mut numer: BigInt =
            if digits.is_empty() { BigInt::zero() } else { digits.parse().map_err(|_| invalid())? };
        if negative {
            numer = -numer;
        }
        let ten = BigInt::from(10u8);
        let value = if scale >= 0 {
            BigRational::from_integer(numer * num_traits::pow(ten, scale as usize))
        } else {
            BigRational::new(numer, num_traits::pow(ten, (-scale) as usize))
        };
        Ok(Number(value))
    }

    /// Parses the `n/d` form produced for non-terminating values.
    pub fn parse_fraction(text: &str) -> Result<Number, NumberError> {
        let (n, d) = text.split_once('/').ok_or_else(|| NumberError::Invalid(text.to_string()))?;
        let is_int = |s: &str| {
            let s = s.strip_prefix('-').unwrap_or(s);
            !s.is_empty() && s.len() <= MAX_DIGITS && s.bytes().all(|b| b.is_ascii_digit())
        };
        if !is_int(n) || !is_int(d) || d.starts_with('-') {
            return Err(NumberError::Invalid(text.to_string()));
        }
        let numer: BigInt = n.parse().map_err(|_| NumberError::Invalid(text.to_string()))?;
        let denom: BigInt = d.parse().map_err(|_| NumberError::Invalid(text.to_string()))?;
        if denom.is_zero() {
            return Err(NumberError::ZeroDenominator(text.to_string()));
        }
        Ok(Number(BigRational::new(numer, denom)))
    }

    /// Recognizes a string in exactly the form [`Number::render`] emits for a
    /// non-terminating rational: reduced, positive denominator that is not of
    /// the form 2^a·5^b.
    pub fn from_canonical_fraction(text: &str) -> Option<Number> {
        let n = Number::parse_fraction(text).ok()?;
        if n.terminates() {
            return None;
        }
        (n.render() == Rendered::Fraction(text.to_string())).then_some(n)
    }

    /// True when the value has a finite decimal expansion.
    pub fn terminates(&self) -> bool {
        let mut d = self.0.denom().clone();
        let two = BigInt::from(2u8);
        let five = BigInt::from(5u8);
        while d.is_even() {
            d /= &two;
        }
        while (&d % &five).is_zero() {
            d /= &five;
        }
        d.is_one()
    }

    /// Shortest exact decimal when one exists, otherwise `n/d`.
    pub fn render(&self) -> Rendered {
        if !self.terminates() {
            return Rendered::Fraction(format!("{}/{}", self.0.numer(), self.0.denom()));
        }
        let denom = self.0.denom();
        let mut twos = 0usize;
        let mut fives = 0usize;
        let mut d = denom.clone();
        while d.is_even() {
            d /= 2;
            twos += 1;
        }
        while (&d % 5u8).is_zero() {
            d /= 5;
            fives += 1;
        }
        let places = twos.max(fives);
        let scaled = self.0.numer() * num_traits::pow(BigInt::from(10u8), places) / denom;
        let (sign, magnitude) = scaled.into_parts();
        let mut digits = magnitude.to_string();
        if places > 0 {
            if digits.len() <= places {
                digits = format!("{}{}", "0".repeat(places - digits.len() + 1), digits);
            }
            let split = digits.len() - places;
            digits.insert(split, '.');
        }
        if sign == Sign::Minus {
            digits.insert(0, '-');
        }
        Rendered::Decimal(digits)
    }
}

/// Textual form of a [`Number`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Rendered {
    /// A JSON number literal.
    Decimal(String),
    /// `n/d`, carried as a JSON string.
    Fraction(String),
}

impl Rendered {
    pub fn as_str(&self) -> &str {
        match self {
            Rendered::Decimal(s) | Rendered::Fraction(s) => s,
        }
    }
}

impl fmt::Display for Number {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.render().as_str())
    }
}

impl fmt::Debug for Number {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Number({self})")
    }
}

impl FromStr for Number {
    type Err = NumberError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.contains('/') {
            Number::parse_fraction(s)
        } else {
            Number::parse_decimal(s)
        }
    }
}

impl PartialOrd for Number {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Number {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.cmp(&other.0)
    }
}

impl From<i64> for Number {
    fn from(v: i64) -> Self {
        Number(BigRational::from_integer(BigInt::from(v)))
    }
}

impl From<usize> for Number {
    fn from(v: usize) -> Self {
        Number(BigRational::from_integer(BigInt::from(v)))
    }
}

macro_rules! forward_binop {
    ($trait:ident, $method:ident) => {
        impl std::ops::$trait<&Number> for &Number {
            type Output = Number;
            fn $method(self, rhs: &Number) -> Number {
                Number(std::ops::$trait::$method(&self.0, &rhs.0))
            }
        }
        impl std::ops::$trait for Number {
            type Output = Number;
            fn $method(self, rhs: Number) -> Number {
                Number(std::ops::$trait::$method(self.0, rhs.0))
            }
        }
    };
}

forward_binop!(Add, add);
forward_binop!(Sub, sub);
forward_binop!(Mul, mul);

impl std::ops::Neg for Number {
    type Output = Number;
    fn neg(self) -> Number {
        Number(-self.0)
    }
}

impl std::iter::Sum for Number {
    fn sum<I: Iterator<Item = Number>>(iter: I) -> Number {
        iter.fold(Number::zero(), |acc, n| acc + n)
    }
}

impl serde::Serialize for Number {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self.render() {
            Rendered::Decimal(text) => {
                let n: serde_json::Number = text.parse().map_err(serde::ser::Error::custom)?;
                n.serialize(serializer)
            }
            Rendered::Fraction(text) => serializer.serialize_str(&text),
        }
    }
}

impl<'de> serde::Deserialize<'de> for Number {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        match serde_json::Value::deserialize(deserializer)? {
            serde_json::Value::Number(n) => Number::parse_decimal(&n.to_string()).map_err(serde::de::Error::custom),
            serde_json::Value::String(s) => Number::parse_fraction(&s).map_err(serde::de::Error::custom),
            other => Err(serde::de::Error::custom(format!("expected a number, found {other}"))),
        }
    }
}
