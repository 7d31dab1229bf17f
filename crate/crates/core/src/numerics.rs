//! Scalar building blocks shared by every coefficient formula: log-factorials,
//! associated Laguerre polynomials and sign-tracked log-domain products.

use std::sync::OnceLock;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("negative Laguerre superscript l = {0}")]
    NegativeSuperscript(i64),
    #[error("Laguerre argument must be a finite nonnegative real, got {0}")]
    BadArgument(f64),
}

/// Largest `n` for which `n!` fits in a `u64`.
const EXACT_FACTORIAL_MAX: usize = 20;

/// Size of the process-wide table behind [`log_factorial`].
const GLOBAL_TABLE_LEN: usize = 16_384;

/// `values[n] = ln(n!)`.
#[derive(Debug, Clone)]
pub struct LogFactorialTable {
    values: Vec<f64>,
}

impl LogFactorialTable {
    /// Table covering `0..=max_n`.
    pub fn new(max_n: usize) -> Self {
        let mut values = Vec::with_capacity(max_n + 1);
        let mut exact: u64 = 1;
        values.push(0.0);
        for n in 1..=max_n {
            if n <= EXACT_FACTORIAL_MAX {
                exact *= n as u64;
                values.push((exact as f64).ln());
            } else {
                let prev = values[n - 1];
                values.push(prev + (n as f64).ln());
            }
        }
        Self { values }
    }

    pub fn max_n(&self) -> usize {
        self.values.len() - 1
    }

    /// `ln(n!)`; panics if `n` is past the end of the table.
    pub fn get(&self, n: usize) -> f64 {
        self.values[n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

fn global_table() -> &'static LogFactorialTable {
    static TABLE: OnceLock<LogFactorialTable> = OnceLock::new();
    TABLE.get_or_init(|| LogFactorialTable::new(GLOBAL_TABLE_LEN - 1))
}

/// `ln(n!)`, exact (correctly rounded from the integer) up to `n = 20` and an
/// accumulated sum of logarithms beyond.
pub fn log_factorial(n: usize) -> f64 {
    let table = global_table();
    if n <= table.max_n() {
        return table.get(n);
    }
    let mut acc = table.get(table.max_n());
    for j in table.max_n() + 1..=n {
        acc += (j as f64).ln();
    }
    acc
}

/// Associated Laguerre polynomial `L_k^l(x)` by the upward three-term
/// recurrence in the degree,
/// `(j+1) L_{j+1} = (2j + 1 + l - x) L_j - (j + l) L_{j-1}`,
/// seeded with `L_0 = 1` and `L_1 = 1 + l - x`.
pub fn assoc_laguerre(k: usize, l: i64, x: f64) -> Result<f64, NumericsError> {
    if l < 0 {
        return Err(NumericsError::NegativeSuperscript(l));
    }
    if !(x.is_finite() && x >= 0.0) {
        return Err(NumericsError::BadArgument(x));
    }
    Ok(laguerre_unchecked(k, l as f64, x))
}

pub(crate) fn laguerre_unchecked(k: usize, l: f64, x: f64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    let mut prev = 1.0;
    let mut cur = 1.0 + l - x;
    for j in 1..k {
        let jf = j as f64;
        let next = ((2.0 * jf + 1.0 + l - x) * cur - (jf + l) * prev) / (jf + 1.0);
        prev = cur;
        cur = next;
    }
    cur
}

/// A real number stored as `±exp(ln_abs)`, with an exact zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SignedLog {
    Zero,
    Value { ln_abs: f64, negative: bool },
}

impl SignedLog {
    pub const ONE: SignedLog = SignedLog::Value {
        ln_abs: 0.0,
        negative: false,
    };

    pub fn positive(ln_abs: f64) -> Self {
        SignedLog::Value {
            ln_abs,
            negative: false,
        }
    }

    pub fn new(ln_abs: f64, negative: bool) -> Self {
        if ln_abs == f64::NEG_INFINITY {
            SignedLog::Zero
        } else {
            SignedLog::Value { ln_abs, negative }
        }
    }

    pub fn from_f64(x: f64) -> Self {
        if x == 0.0 {
            SignedLog::Zero
        } else {
            SignedLog::Value {
                ln_abs: x.abs().ln(),
                negative: x < 0.0,
            }
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, SignedLog::Zero)
    }

    /// `ln|x|`, `-inf` for zero.
    pub fn ln_abs(&self) -> f64 {
        match *self {
            SignedLog::Zero => f64::NEG_INFINITY,
            SignedLog::Value { ln_abs, .. } => ln_abs,
        }
    }

    /// `+1`, `-1`, or `0` for the exact zero.
    pub fn signum(&self) -> f64 {
        match *self {
            SignedLog::Zero => 0.0,
            SignedLog::Value { negative: true, .. } => -1.0,
            SignedLog::Value { negative: false, .. } => 1.0,
        }
    }

    pub fn to_f64(&self) -> f64 {
        self.scaled(0.0)
    }

    /// `x / exp(shift)`, evaluated without forming `x`.
    pub fn scaled(&self, shift: f64) -> f64 {
        match *self {
            SignedLog::Zero => 0.0,
            SignedLog::Value { ln_abs, negative } => {
                let m = (ln_abs - shift).exp();
                if negative {
                    -m
                } else {
                    m
                }
            }
        }
    }

    pub fn mul(self, other: SignedLog) -> SignedLog {
        match (self, other) {
            (SignedLog::Zero, _) | (_, SignedLog::Zero) => SignedLog::Zero,
            (
                SignedLog::Value {
                    ln_abs: a,
                    negative: sa,
                },
                SignedLog::Value {
                    ln_abs: b,
                    negative: sb,
                },
            ) => SignedLog::Value {
                ln_abs: a + b,
                negative: sa != sb,
            },
        }
    }

    pub fn recip(self) -> Option<SignedLog> {
        match self {
            SignedLog::Zero => None,
            SignedLog::Value { ln_abs, negative } => Some(SignedLog::Value {
                ln_abs: -ln_abs,
                negative,
            }),
        }
    }
}

/// Product of sign-tracked log magnitudes. Exponentiation is left to the
/// caller; any zero factor makes the result [`SignedLog::Zero`].
pub fn signed_log_product<I>(factors: I) -> SignedLog
where
    I: IntoIterator<Item = SignedLog>,
{
    factors.into_iter().fold(SignedLog::ONE, SignedLog::mul)
}

/// Sum of sign-tracked log magnitudes, factoring out the largest term.
pub fn signed_log_sum<I>(terms: I) -> SignedLog
where
    I: IntoIterator<Item = SignedLog>,
{
    let terms: Vec<SignedLog> = terms.into_iter().filter(|t| !t.is_zero()).collect();
    let shift = terms
        .iter()
        .map(SignedLog::ln_abs)
        .fold(f64::NEG_INFINITY, f64::max);
    if shift == f64::NEG_INFINITY {
        return SignedLog::Zero;
    }
    let total: f64 = terms.iter().map(|t| t.scaled(shift)).sum();
    if total == 0.0 {
        SignedLog::Zero
    } else {
        SignedLog::Value {
            ln_abs: shift + total.abs().ln(),
            negative: total < 0.0,
        }
    }
}
