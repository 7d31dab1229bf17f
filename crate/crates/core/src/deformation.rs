//! The nonlinearity function `f(n)` and its factorial
//! `[f(n)]! = f(n) f(n-1) ... f(1)`, `[f(0)]! = 1`.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::SignedLog;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeformationError {
    #[error("k must be a positive finite real, got {0}")]
    BadK(f64),
    #[error("{name} must be a positive integer or half-integer, got {value}")]
    NotHalfInteger { name: &'static str, value: f64 },
    #[error("custom table entry {index} is not a finite nonnegative number")]
    BadTableEntry { index: usize },
    #[error("custom table has f({zero}) = 0 followed by nonzero f({resumed})")]
    SpectrumResurrection { zero: usize, resumed: usize },
    #[error("custom table is empty")]
    EmptyTable,
    #[error("level {level} lies beyond the custom table (last level {last})")]
    BeyondTable { level: usize, last: usize },
    #[error("level {level} lies beyond the cached range (max level {max})")]
    BeyondCache { level: usize, max: usize },
    #[error("cannot parse nonlinearity '{0}'")]
    Parse(String),
    #[error("reading {path}: {message}")]
    Io { path: String, message: String },
}

/// A positive value on the lattice {1/2, 1, 3/2, ...}, stored as twice itself.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HalfInteger(u32);

impl HalfInteger {
    pub fn from_twice(twice: u32) -> Option<Self> {
        (twice >= 1).then_some(Self(twice))
    }

    pub fn from_f64(name: &'static str, value: f64) -> Result<Self, DeformationError> {
        let twice = 2.0 * value;
        if value.is_finite() && twice >= 1.0 && twice == twice.round() && twice < u32::MAX as f64 {
            Ok(Self(twice as u32))
        } else {
            Err(DeformationError::NotHalfInteger { name, value })
        }
    }

    pub fn twice(self) -> u32 {
        self.0
    }

    pub fn value(self) -> f64 {
        self.0 as f64 / 2.0
    }
}

impl fmt::Display for HalfInteger {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0 % 2 == 0 {
            write!(f, "{}", self.0 / 2)
        } else {
            write!(f, "{}/2", self.0)
        }
    }
}

impl Serialize for HalfInteger {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.value())
    }
}

impl<'de> Deserialize<'de> for HalfInteger {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        HalfInteger::from_f64("half-integer", v).map_err(serde::de::Error::custom)
    }
}

/// Which deformation `f(n)` to use. Physical prefactors of the group
/// nonlinearities are set to one; only their products with the displacement
/// ever matter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DeformationKind {
    Identity,
    /// `f(n) = 1 / (1 + k n)`
    Rational { k: f64 },
    /// `f(n) = sqrt(n + 2 lambda - 1)`
    GilmorePerelomov { lambda: HalfInteger },
    /// `f(n) = sqrt(2 s + 1 - n)`, clamped to zero past `n = 2 s + 1`
    Su2 { s: HalfInteger },
    /// `f(n) = table[n]`
    Custom { table: Vec<f64> },
}

impl DeformationKind {
    pub fn rational(k: f64) -> Result<Self, DeformationError> {
        if k.is_finite() && k > 0.0 {
            Ok(Self::Rational { k })
        } else {
            Err(DeformationError::BadK(k))
        }
    }

    pub fn gilmore_perelomov(lambda: f64) -> Result<Self, DeformationError> {
        Ok(Self::GilmorePerelomov {
            lambda: HalfInteger::from_f64("lambda", lambda)?,
        })
    }

    pub fn su2(s: f64) -> Result<Self, DeformationError> {
        Ok(Self::Su2 {
            s: HalfInteger::from_f64("s", s)?,
        })
    }

    pub fn custom(table: Vec<f64>) -> Result<Self, DeformationError> {
        if table.is_empty() {
            return Err(DeformationError::EmptyTable);
        }
        if let Some(index) = table.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(DeformationError::BadTableEntry { index });
        }
        // f(0) never enters [f(n)]!, so the terminal-tail rule starts at n = 1
        if let Some(zero) = (1..table.len()).find(|&i| table[i] == 0.0) {
            if let Some(resumed) = (zero + 1..table.len()).find(|&i| table[i] != 0.0) {
                return Err(DeformationError::SpectrumResurrection { zero, resumed });
            }
        }
        Ok(Self::Custom { table })
    }

    /// One nonnegative decimal per line; line index is `n`. Blank lines and
    /// lines starting with `#` are skipped.
    pub fn parse_table(text: &str) -> Result<Self, DeformationError> {
        let mut table = Vec::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let v: f64 = line
                .parse()
                .map_err(|_| DeformationError::Parse(line.to_string()))?;
            table.push(v);
        }
        Self::custom(table)
    }

    pub fn load_table(path: impl AsRef<Path>) -> Result<Self, DeformationError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| DeformationError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse_table(&text)
    }

    /// `f(n)`.
    pub fn eval(&self, n: usize) -> Result<f64, DeformationError> {
        let nf = n as f64;
        Ok(match self {
            Self::Identity => 1.0,
            Self::Rational { k } => 1.0 / (1.0 + k * nf),
            Self::GilmorePerelomov { lambda } => (nf + lambda.twice() as f64 - 1.0).sqrt(),
            Self::Su2 { s } => {
                let top = s.twice() as usize + 1;
                if n <= top {
                    ((top - n) as f64).sqrt()
                } else {
                    0.0
                }
            }
            Self::Custom { table } => *table.get(n).ok_or(DeformationError::BeyondTable {
                level: n,
                last: table.len() - 1,
            })?,
        })
    }

    /// Highest level this kind can be evaluated at.
    pub fn max_level(&self) -> Option<usize> {
        match self {
            Self::Custom { table } => Some(table.len() - 1),
            _ => None,
        }
    }

    /// `f(n)^2` evaluated without a square root where the kind allows it.
    pub fn eval_squared(&self, n: usize) -> Result<f64, DeformationError> {
        Ok(match self {
            Self::GilmorePerelomov { lambda } => n as f64 + lambda.twice() as f64 - 1.0,
            Self::Su2 { s } => (s.twice() as f64 + 1.0 - n as f64).max(0.0),
            _ => self.eval(n)?.powi(2),
        })
    }
}

impl fmt::Display for DeformationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Identity => write!(f, "identity"),
            Self::Rational { k } => write!(f, "rational:k={k}"),
            Self::GilmorePerelomov { lambda } => write!(f, "gp:lambda={lambda}"),
            Self::Su2 { s } => write!(f, "su2:s={s}"),
            Self::Custom { table } => write!(f, "custom:{} levels", table.len()),
        }
    }
}

/// Accepts `identity`, `rational:k=<k>`, `gp:lambda=<l>`, `su2:s=<s>`
/// and `custom:<path>`.
impl FromStr for DeformationKind {
    type Err = DeformationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim();
        let parse_num = |v: &str| -> Result<f64, DeformationError> {
            v.trim()
                .parse::<f64>()
                .map_err(|_| DeformationError::Parse(s.to_string()))
        };
        if s == "identity" {
            return Ok(Self::Identity);
        }
        let (head, rest) = s
            .split_once(':')
            .ok_or_else(|| DeformationError::Parse(s.to_string()))?;
        match head {
            "rational" => {
                let v = rest.strip_prefix("k=").unwrap_or(rest);
                Self::rational(parse_num(v)?)
            }
            "gp" => {
                let v = rest.strip_prefix("lambda=").unwrap_or(rest);
                Self::gilmore_perelomov(parse_num(v)?)
            }
            "su2" => {
                let v = rest.strip_prefix("s=").unwrap_or(rest);
                Self::su2(parse_num(v)?)
            }
            "custom" => Self::load_table(rest),
            _ => Err(DeformationError::Parse(s.to_string())),
        }
    }
}

/// A deformation with `ln [f(n)]!` cached for `n = 0..=max_level`.
#[derive(Debug, Clone)]
pub struct NonlinearityFunction {
    kind: DeformationKind,
    log_f_factorial: Vec<f64>,
    cutoff: Option<usize>,
}

impl NonlinearityFunction {
    /// Builds the cache up to `max_level`, clipped to the table for custom
    /// kinds.
    pub fn new(kind: DeformationKind, max_level: usize) -> Self {
        let max_level = kind.max_level().map_or(max_level, |m| m.min(max_level));
        let mut cache = Vec::with_capacity(max_level + 1);
        cache.push(0.0);
        let mut cutoff = None;
        let mut acc = 0.0;
        for n in 1..=max_level {
            let v = kind.eval(n).expect("level within table");
            if v == 0.0 {
                cutoff = Some(n);
                break;
            }
            acc += v.ln();
            cache.push(acc);
        }
        Self {
            kind,
            log_f_factorial: cache,
            cutoff,
        }
    }

    pub fn identity(max_level: usize) -> Self {
        Self::new(DeformationKind::Identity, max_level)
    }

    pub fn kind(&self) -> &DeformationKind {
        &self.kind
    }

    /// First level `n >= 1` with `f(n) = 0`, if any lies in the cached range.
    pub fn cutoff(&self) -> Option<usize> {
        self.cutoff
    }

    /// Highest level at which `[f(n)]!` is available. Past a cutoff the
    /// factorial is identically zero, so every level is available.
    pub fn max_level(&self) -> usize {
        match self.cutoff {
            Some(_) => usize::MAX,
            None => self.log_f_factorial.len() - 1,
        }
    }

    pub fn eval_f(&self, n: usize) -> Result<f64, DeformationError> {
        self.kind.eval(n)
    }

    /// `[f(n)]!` in log form; [`SignedLog::Zero`] once a factor vanishes.
    pub fn log_f_factorial(&self, n: usize) -> Result<SignedLog, DeformationError> {
        if let Some(c) = self.cutoff {
            if n >= c {
                return Ok(SignedLog::Zero);
            }
        }
        self.log_f_factorial
            .get(n)
            .map(|&v| SignedLog::positive(v))
            .ok_or(DeformationError::BeyondCache {
                level: n,
                max: self.log_f_factorial.len() - 1,
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn eval_examples() {
        assert_eq!(DeformationKind::Identity.eval(7).unwrap(), 1.0);
        let r = DeformationKind::rational(0.1).unwrap();
        assert_relative_eq!(r.eval(2).unwrap(), 1.0 / 1.2, max_relative = 1e-15);
        let su2 = DeformationKind::su2(1.0).unwrap();
        assert_eq!(su2.eval(3).unwrap(), 0.0);
        assert_eq!(su2.eval(9).unwrap(), 0.0);
        assert_relative_eq!(su2.eval(1).unwrap(), 2f64.sqrt(), max_relative = 1e-15);
        let gp = DeformationKind::gilmore_perelomov(1.5).unwrap();
        assert_relative_eq!(gp.eval(2).unwrap(), 4f64.sqrt(), max_relative = 1e-15);
    }

    #[test]
    fn custom_lookup_past_table_is_error() {
        let c = DeformationKind::custom(vec![1.0, 0.5, 0.25]).unwrap();
        assert_eq!(c.eval(2).unwrap(), 0.25);
        assert_eq!(
            c.eval(3),
            Err(DeformationError::BeyondTable { level: 3, last: 2 })
        );
    }

    #[test]
    fn custom_validation() {
        assert!(matches!(
            DeformationKind::custom(vec![1.0, 0.0, 2.0]),
            Err(DeformationError::SpectrumResurrection { zero: 1, resumed: 2 })
        ));
        assert!(matches!(
            DeformationKind::custom(vec![1.0, -0.1]),
            Err(DeformationError::BadTableEntry { index: 1 })
        ));
        assert!(DeformationKind::custom(vec![]).is_err());
        // terminal zero tail is a finite spectrum
        let c = DeformationKind::custom(vec![1.0, 2.0, 0.0, 0.0]).unwrap();
        let f = NonlinearityFunction::new(c, 100);
        assert_eq!(f.cutoff(), Some(2));
        assert!(f.log_f_factorial(3).unwrap().is_zero());
    }

    #[test]
    fn parse_table_text() {
        let k = DeformationKind::parse_table("# f(n)\n1\n0.5\n\n0.25\n").unwrap();
        assert_eq!(k, DeformationKind::Custom { table: vec![1.0, 0.5, 0.25] });
        assert!(DeformationKind::parse_table("1\nabc\n").is_err());
    }

    #[test]
    fn half_integer_lattice() {
        assert!(HalfInteger::from_f64("s", 0.5).is_ok());
        assert!(HalfInteger::from_f64("s", 3.0).is_ok());
        assert!(HalfInteger::from_f64("s", 0.0).is_err());
        assert!(HalfInteger::from_f64("s", 0.75).is_err());
        assert!(HalfInteger::from_f64("s", -1.0).is_err());
        assert_eq!(HalfInteger::from_f64("s", 1.5).unwrap().to_string(), "3/2");
        assert!(DeformationKind::rational(0.0).is_err());
        assert!(DeformationKind::rational(f64::NAN).is_err());
    }

    #[test]
    fn from_str_forms() {
        assert_eq!("identity".parse::<DeformationKind>().unwrap(), DeformationKind::Identity);
        assert_eq!(
            "rational:k=0.1".parse::<DeformationKind>().unwrap(),
            DeformationKind::Rational { k: 0.1 }
        );
        assert_eq!(
            "su2:s=1.5".parse::<DeformationKind>().unwrap(),
            DeformationKind::su2(1.5).unwrap()
        );
        assert!("rational:k=-1".parse::<DeformationKind>().is_err());
        assert!("bogus".parse::<DeformationKind>().is_err());
    }

    #[test]
    fn f_factorial_examples() {
        let r = NonlinearityFunction::new(DeformationKind::rational(0.1).unwrap(), 64);
        assert_eq!(r.log_f_factorial(0).unwrap(), SignedLog::ONE);
        let v = r.log_f_factorial(2).unwrap();
        // direct product f(2) f(1)
        assert_relative_eq!(v.to_f64(), 1.0 / (1.1 * 1.2), max_relative = 1e-14);
        let su2 = NonlinearityFunction::new(DeformationKind::su2(1.0).unwrap(), 64);
        assert!(su2.log_f_factorial(4).unwrap().is_zero());
        assert!(!su2.log_f_factorial(2).unwrap().is_zero());
        assert_eq!(su2.cutoff(), Some(3));
        assert!(r.log_f_factorial(65).is_err());
    }

    #[test]
    fn f_factorial_multiplicative() {
        for kind in [
            DeformationKind::rational(0.1).unwrap(),
            DeformationKind::gilmore_perelomov(0.5).unwrap(),
            DeformationKind::gilmore_perelomov(2.0).unwrap(),
            DeformationKind::su2(2.5).unwrap(),
        ] {
            let f = NonlinearityFunction::new(kind, 200);
            for n in 1..=200 {
                let cur = f.log_f_factorial(n).unwrap();
                let prev = f.log_f_factorial(n - 1).unwrap();
                if cur.is_zero() {
                    assert!(prev.is_zero() || f.eval_f(n).unwrap() == 0.0);
                    continue;
                }
                let lhs = cur.to_f64();
                let rhs = prev.to_f64() * f.eval_f(n).unwrap();
                if lhs.is_finite() && lhs > 1e-300 {
                    assert_relative_eq!(lhs, rhs, max_relative = 1e-12);
                } else {
                    assert!((cur.ln_abs() - prev.ln_abs() - f.eval_f(n).unwrap().ln()).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn gp_integer_spacing() {
        for lambda in [0.5, 1.0, 1.5, 4.0] {
            let kind = DeformationKind::gilmore_perelomov(lambda).unwrap();
            for n in 1..500 {
                let d = kind.eval_squared(n).unwrap() - kind.eval_squared(n - 1).unwrap();
                assert_eq!(d, 1.0);
            }
        }
    }
}
