//! Closed-form Fock-amplitude vectors for the six state families.
//!
//! Every coefficient is assembled in log form with separate sign and phase,
//! so factorial ratios never overflow; one global L2 normalization is applied
//! at the end. The unnormalized norm is kept for bookkeeping.

use std::fmt;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::deformation::{DeformationError, DeformationKind, HalfInteger, NonlinearityFunction};
use crate::numerics::{laguerre_unchecked, log_factorial, signed_log_sum, SignedLog};
use crate::oracle::{self, OracleError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StateError {
    #[error("invalid parameters: {0}")]
    Invalid(String),
    #[error(transparent)]
    Deformation(#[from] DeformationError),
    #[error("[f({level})]! vanishes inside the support of a {family} state")]
    ZeroFactorial { family: Family, level: usize },
    #[error("truncation failure: tail mass {tail:.3e} above tolerance at N = {n_max}")]
    Truncation { n_max: usize, tail: f64 },
    #[error("expansion diverges: smallest term before regrowth is {min_prob:.3e} at level {level}")]
    Divergent { level: usize, min_prob: f64 },
    #[error(transparent)]
    Oracle(#[from] OracleError),
}

impl StateError {
    pub fn is_truncation(&self) -> bool {
        matches!(
            self,
            StateError::Truncation { .. }
                | StateError::Divergent { .. }
                | StateError::Oracle(OracleError::Truncation { .. })
                | StateError::Oracle(OracleError::NoConvergence { .. })
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    /// `D(alpha)|n>`
    Dns,
    /// DNS coefficients divided by `[f(m)]!`
    ManualNdns,
    /// `exp(alpha A^+ - alpha^* B)|n>`
    NdnsPrime,
    /// `exp(alpha B^+ - alpha^* A)|n>`
    NdnsDoublePrime,
    /// SU(1,1) Gilmore-Perelomov displacement of `|n>`
    Gp,
    /// SU(2) displacement of `|n>` on the finite ladder
    Su2,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::Dns,
        Family::ManualNdns,
        Family::NdnsPrime,
        Family::NdnsDoublePrime,
        Family::Gp,
        Family::Su2,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::Dns => "dns",
            Family::ManualNdns => "manual-ndns",
            Family::NdnsPrime => "ndns-prime",
            Family::NdnsDoublePrime => "ndns-double-prime",
            Family::Gp => "gp",
            Family::Su2 => "su2",
        }
    }

    pub fn is_group(self) -> bool {
        matches!(self, Family::Gp | Family::Su2)
    }

    /// Families whose coefficients carry a user-chosen deformation.
    pub fn takes_deformation(self) -> bool {
        matches!(
            self,
            Family::ManualNdns | Family::NdnsPrime | Family::NdnsDoublePrime
        )
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Family {
    type Err = StateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str() == s)
            .ok_or_else(|| StateError::Invalid(format!("unknown family '{s}'")))
    }
}

/// Closed-form expansion or direct operator exponential.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstructionMode {
    #[default]
    ClosedForm,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    /// First truncation tried.
    pub start: usize,
    /// Largest truncation allowed.
    pub max_n: usize,
    /// Largest acceptable probability mass beyond the truncation.
    pub tail_tolerance: f64,
}

impl Default for Truncation {
    fn default() -> Self {
        Self {
            start: 64,
            max_n: 4096,
            tail_tolerance: 1e-12,
        }
    }
}

impl Truncation {
    pub fn with_max(max_n: usize) -> Self {
        Self {
            max_n,
            start: Self::default().start.min(max_n),
            ..Self::default()
        }
    }
}

pub(crate) mod complex_pair {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(z: &Complex64, s: S) -> Result<S::Ok, S::Error> {
        [z.re, z.im].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Complex64, D::Error> {
        let [re, im] = <[f64; 2]>::deserialize(d)?;
        Ok(Complex64::new(re, im))
    }
}

pub(crate) mod complex_vec {
    use num_complex::Complex64;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[Complex64], s: S) -> Result<S::Ok, S::Error> {
        let pairs: Vec<[f64; 2]> = v.iter().map(|z| [z.re, z.im]).collect();
        pairs.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Complex64>, D::Error> {
        let pairs = Vec::<[f64; 2]>::deserialize(d)?;
        Ok(pairs.into_iter().map(|[re, im]| Complex64::new(re, im)).collect())
    }
}

/// Everything needed to build one state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateSpec {
    pub family: Family,
    /// Reference Fock level.
    pub n: usize,
    /// `alpha` for the algebraic families, `zeta` for GP, `gamma` for SU(2).
    #[serde(with = "complex_pair")]
    pub displacement: Complex64,
    pub deformation: DeformationKind,
    #[serde(default)]
    pub mode: ConstructionMode,
    pub truncation: Truncation,
}

impl StateSpec {
    pub fn dns(n: usize, alpha: Complex64) -> Self {
        Self {
            family: Family::Dns,
            n,
            displacement: alpha,
            deformation: DeformationKind::Identity,
            mode: ConstructionMode::ClosedForm,
            truncation: Truncation::default(),
        }
    }

    pub fn algebraic(family: Family, n: usize, alpha: Complex64, f: DeformationKind) -> Self {
        Self {
            family,
            deformation: f,
            ..Self::dns(n, alpha)
        }
    }

    pub fn gp(n: usize, zeta: Complex64, lambda: HalfInteger) -> Self {
        Self {
            family: Family::Gp,
            deformation: DeformationKind::GilmorePerelomov { lambda },
            ..Self::dns(n, zeta)
        }
    }

    pub fn su2(n: usize, gamma: Complex64, s: HalfInteger) -> Self {
        Self {
            family: Family::Su2,
            deformation: DeformationKind::Su2 { s },
            ..Self::dns(n, gamma)
        }
    }

    pub fn with_mode(mut self, mode: ConstructionMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn with_truncation(mut self, truncation: Truncation) -> Self {
        self.truncation = truncation;
        self
    }

    pub fn with_displacement(mut self, displacement: Complex64) -> Self {
        self.displacement = displacement;
        self
    }

    /// Parameter combinations are checked before anything is computed.
    pub fn validate(&self) -> Result<(), StateError> {
        let d = self.displacement;
        if !(d.re.is_finite() && d.im.is_finite()) {
            return Err(StateError::Invalid("displacement must be finite".into()));
        }
        let t = &self.truncation;
        if t.max_n == 0 || t.start == 0 {
            return Err(StateError::Invalid("truncation must be positive".into()));
        }
        if !(t.tail_tolerance > 0.0 && t.tail_tolerance < 1.0) {
            return Err(StateError::Invalid("tail tolerance must lie in (0, 1)".into()));
        }
        if self.n > t.max_n {
            return Err(StateError::Invalid(format!(
                "reference level {} exceeds the truncation cap {}",
                self.n, t.max_n
            )));
        }
        match (self.family, &self.deformation) {
            (Family::Dns, DeformationKind::Identity) => {}
            (Family::Dns, _) => {
                return Err(StateError::Invalid("dns takes no deformation".into()));
            }
            (Family::Gp, DeformationKind::GilmorePerelomov { .. }) => {
                if d.norm() >= 1.0 {
                    return Err(StateError::Invalid("gp requires |zeta| < 1".into()));
                }
            }
            (Family::Gp, _) => {
                return Err(StateError::Invalid("gp requires lambda".into()));
            }
            (Family::Su2, DeformationKind::Su2 { s }) => {
                if self.n > s.twice() as usize {
                    return Err(StateError::Invalid("n exceeds 2s".into()));
                }
            }
            (Family::Su2, _) => {
                return Err(StateError::Invalid("su2 requires s".into()));
            }
            (_, _) => {}
        }
        if self.mode == ConstructionMode::Oracle && self.family == Family::ManualNdns {
            return Err(StateError::Invalid(
                "manual-ndns has no generating operator; use closed-form mode".into(),
            ));
        }
        Ok(())
    }
}

/// A normalized amplitude vector over Fock levels `0..=truncation`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FockVector {
    pub family: Family,
    pub n: usize,
    #[serde(with = "complex_pair")]
    pub displacement: Complex64,
    pub truncation: usize,
    #[serde(with = "complex_vec")]
    pub amplitudes: Vec<Complex64>,
    pub norm_before_normalization: f64,
    pub tail_bound: f64,
    /// Set when the expansion is asymptotic and was cut at its smallest term.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub asymptotic: bool,
}

impl FockVector {
    /// Normalizes `raw` and records its norm. `tail_bound` is passed through.
    pub fn from_raw(
        family: Family,
        n: usize,
        displacement: Complex64,
        raw: Vec<Complex64>,
        tail_bound: f64,
    ) -> Self {
        let norm = l2_norm(&raw);
        let amplitudes = if norm > 0.0 {
            raw.iter().map(|z| z / norm).collect()
        } else {
            raw
        };
        Self {
            family,
            n,
            displacement,
            truncation: amplitudes.len().saturating_sub(1),
            amplitudes,
            norm_before_normalization: norm,
            tail_bound,
            asymptotic: false,
        }
    }

    /// The Fock state `|level>` in a space of `dim` levels.
    pub fn basis(level: usize, dim: usize) -> Self {
        let mut raw = vec![Complex64::new(0.0, 0.0); dim.max(level + 1)];
        raw[level] = Complex64::new(1.0, 0.0);
        Self::from_raw(Family::Dns, level, Complex64::new(0.0, 0.0), raw, 0.0)
    }

    pub fn norm(&self) -> f64 {
        l2_norm(&self.amplitudes)
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amplitudes.iter().map(|z| z.norm_sqr()).collect()
    }

    pub fn amplitude(&self, m: usize) -> Complex64 {
        self.amplitudes.get(m).copied().unwrap_or_default()
    }

    /// Largest per-level modulus of the difference, padding the shorter
    /// vector with zeros.
    pub fn max_deviation(&self, other: &FockVector) -> f64 {
        max_deviation(&self.amplitudes, &other.amplitudes)
    }

    /// Last level with probability above `threshold`.
    pub fn support_end(&self, threshold: f64) -> usize {
        self.amplitudes
            .iter()
            .rposition(|z| z.norm_sqr() > threshold)
            .unwrap_or(0)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("FockVector is always serializable")
    }
}

pub(crate) fn l2_norm(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

pub fn max_deviation(a: &[Complex64], b: &[Complex64]) -> f64 {
    let len = a.len().max(b.len());
    (0..len)
        .map(|i| {
            let x = a.get(i).copied().unwrap_or_default();
            let y = b.get(i).copied().unwrap_or_default();
            (x - y).norm()
        })
        .fold(0.0, f64::max)
}

/// One coefficient as `magnitude * phase`, with the real signed magnitude kept
/// in log form.
#[derive(Debug, Clone, Copy)]
struct Term {
    mag: SignedLog,
    phase: Complex64,
}

impl Term {
    fn zero() -> Self {
        Term {
            mag: SignedLog::Zero,
            phase: Complex64::new(1.0, 0.0),
        }
    }
}

/// `e * ln|z|`, with `0^0 = 1`.
fn pow_ln(ln_abs: f64, e: usize) -> f64 {
    if e == 0 {
        0.0
    } else {
        e as f64 * ln_abs
    }
}

/// `D(alpha)|n>` at level `m`:
/// `m <= n`: `e^{-x/2} sqrt(m!/n!) (-alpha^*)^{n-m} L_m^{n-m}(x)`,
/// `m > n`:  `e^{-x/2} sqrt(n!/m!) alpha^{m-n} L_n^{m-n}(x)`, `x = |alpha|^2`.
fn dns_term(n: usize, m: usize, alpha: Complex64) -> Term {
    let x = alpha.norm_sqr();
    let ln_r = alpha.norm().ln();
    let phi = alpha.arg();
    let (d, ln_fact, lag, phase) = if m <= n {
        let d = n - m;
        let sign = if d % 2 == 0 { 1.0 } else { -1.0 };
        (
            d,
            0.5 * (log_factorial(m) - log_factorial(n)),
            laguerre_unchecked(m, d as f64, x),
            Complex64::from_polar(sign, -(d as f64) * phi),
        )
    } else {
        let d = m - n;
        (
            d,
            0.5 * (log_factorial(n) - log_factorial(m)),
            laguerre_unchecked(n, d as f64, x),
            Complex64::from_polar(1.0, d as f64 * phi),
        )
    };
    let mag = SignedLog::new(-0.5 * x + ln_fact + pow_ln(ln_r, d), false)
        .mul(SignedLog::from_f64(lag));
    Term { mag, phase }
}

/// Inner p-sum shared by the GP and SU(2) expansions:
/// `sum_p (-1)^p c^{p} |z|^{m+n-2p} sqrt(m! n!) / (p! (n-p)! (m-p)!)
///      [f(n)]! [f(m)]! / ([f(p)]!)^2`
/// with `ln c = ln_c`.
fn group_term(
    n: usize,
    m: usize,
    z: Complex64,
    ln_c: f64,
    f: &NonlinearityFunction,
) -> Result<Term, StateError> {
    let ffn = f.log_f_factorial(n)?;
    let ffm = f.log_f_factorial(m)?;
    if ffn.is_zero() || ffm.is_zero() {
        return Ok(Term::zero());
    }
    let ln_z = z.norm().ln();
    let mut terms = Vec::with_capacity(n.min(m) + 1);
    for p in 0..=n.min(m) {
        let ffp = f.log_f_factorial(p)?;
        let inv_ffp_sq = match ffp.recip() {
            Some(r) => r.mul(r),
            None => continue,
        };
        let ln = pow_ln(ln_z, m + n - 2 * p) + p as f64 * ln_c
            + 0.5 * (log_factorial(m) + log_factorial(n))
            - log_factorial(p)
            - log_factorial(n - p)
            - log_factorial(m - p);
        terms.push(
            SignedLog::new(ln, p % 2 == 1)
                .mul(ffn)
                .mul(ffm)
                .mul(inv_ffp_sq),
        );
    }
    let sign = if m % 2 == 0 { 1.0 } else { -1.0 };
    Ok(Term {
        mag: signed_log_sum(terms),
        phase: Complex64::from_polar(sign, (n as f64 - m as f64) * z.arg()),
    })
}

/// Geometric-tail estimate on a probability vector normalized to unit sum:
/// mass of the top 5% of levels plus the geometric continuation implied by
/// the decay ratio across that window.
fn tail_estimate(p: &[f64]) -> (f64, f64) {
    let last = p.len() - 1;
    let w = ((0.05 * p.len() as f64).ceil() as usize).clamp(2, p.len());
    let first = last + 1 - w;
    let top: f64 = p[first..].iter().sum();
    if p[last] == 0.0 {
        return (top, 0.0);
    }
    if p[first] == 0.0 {
        return (f64::INFINITY, f64::INFINITY);
    }
    let ratio = (p[last] / p[first]).powf(1.0 / (w - 1) as f64);
    if ratio >= 1.0 {
        (f64::INFINITY, ratio)
    } else {
        (top + p[last] * ratio / (1.0 - ratio), ratio)
    }
}

struct Assembled {
    raw: Vec<Complex64>,
    tail: f64,
    asymptotic: bool,
}

fn materialize(terms: &[Term]) -> Vec<Complex64> {
    let shift = terms
        .iter()
        .map(|t| t.mag.ln_abs())
        .fold(f64::NEG_INFINITY, f64::max);
    let shift = if shift.is_finite() { shift } else { 0.0 };
    let scale = shift.exp();
    terms
        .iter()
        .map(|t| t.phase * (t.mag.scaled(shift) * scale))
        .collect()
}

fn relative_probs(terms: &[Term]) -> Vec<f64> {
    let shift = terms
        .iter()
        .map(|t| t.mag.ln_abs())
        .fold(f64::NEG_INFINITY, f64::max);
    let p: Vec<f64> = terms
        .iter()
        .map(|t| {
            let s = t.mag.scaled(shift);
            s * s
        })
        .collect();
    let total: f64 = p.iter().sum();
    if total > 0.0 {
        p.into_iter().map(|v| v / total).collect()
    } else {
        p
    }
}

/// Grows the truncation geometrically until the estimated tail mass drops
/// below tolerance.
fn assemble_geometric<F>(term: F, cap: usize, t: &Truncation) -> Result<Assembled, StateError>
where
    F: Fn(usize) -> Result<Term, StateError>,
{
    let mut n_max = t.start.min(cap).max(1);
    let mut terms: Vec<Term> = Vec::new();
    loop {
        for m in terms.len()..=n_max {
            terms.push(term(m)?);
        }
        let p = relative_probs(&terms);
        let (tail, _) = tail_estimate(&p);
        if tail < t.tail_tolerance {
            return Ok(Assembled {
                raw: materialize(&terms),
                tail,
                asymptotic: false,
            });
        }
        if n_max >= cap {
            return Err(StateError::Truncation { n_max, tail });
        }
        n_max = (2 * n_max).min(cap);
    }
}

/// For expansions whose weights can grow factorially: scan every level up to
/// the cap, and if the terms regrow at the top cut at the smallest term before
/// the final rise, provided it is negligible.
fn assemble_asymptotic<F>(
    term: F,
    n: usize,
    cap: usize,
    t: &Truncation,
) -> Result<Assembled, StateError>
where
    F: Fn(usize) -> Result<Term, StateError>,
{
    let terms: Vec<Term> = (0..=cap).map(&term).collect::<Result<_, _>>()?;
    let ln_p: Vec<f64> = terms.iter().map(|t| 2.0 * t.mag.ln_abs()).collect();
    let mut start = cap;
    while start > n + 1 && ln_p[start - 1] < ln_p[start] {
        start -= 1;
    }
    if start == cap || ln_p[cap] == f64::NEG_INFINITY {
        return assemble_geometric(term, cap, t);
    }
    let kept = &terms[..=start];
    let p = relative_probs(kept);
    let min_prob = p[start];
    if min_prob < t.tail_tolerance {
        Ok(Assembled {
            raw: materialize(kept),
            tail: min_prob,
            asymptotic: true,
        })
    } else {
        Err(StateError::Divergent {
            level: start,
            min_prob,
        })
    }
}

fn effective_cap(t: &Truncation, f: &NonlinearityFunction) -> usize {
    t.max_n.min(f.max_level())
}

fn finish(family: Family, n: usize, displacement: Complex64, a: Assembled) -> FockVector {
    let mut v = FockVector::from_raw(family, n, displacement, a.raw, a.tail);
    v.asymptotic = a.asymptotic;
    v
}

fn require_nonzero(
    f: &NonlinearityFunction,
    family: Family,
    level: usize,
) -> Result<SignedLog, StateError> {
    let v = f.log_f_factorial(level)?;
    if v.is_zero() {
        Err(StateError::ZeroFactorial { family, level })
    } else {
        Ok(v)
    }
}

fn check_reference(n: usize, t: &Truncation) -> Result<(), StateError> {
    if n > t.max_n {
        Err(StateError::Invalid(format!(
            "reference level {n} exceeds the truncation cap {}",
            t.max_n
        )))
    } else {
        Ok(())
    }
}

/// `D(alpha)|n>` from its Laguerre expansion.
pub fn build_dns(n: usize, alpha: Complex64, t: &Truncation) -> Result<FockVector, StateError> {
    check_reference(n, t)?;
    let a = assemble_geometric(|m| Ok(dns_term(n, m, alpha)), t.max_n, t)?;
    Ok(finish(Family::Dns, n, alpha, a))
}

/// DNS coefficients weighted by `1/[f(m)]!`.
pub fn build_manual_ndns(
    n: usize,
    alpha: Complex64,
    f: &NonlinearityFunction,
    t: &Truncation,
) -> Result<FockVector, StateError> {
    check_reference(n, t)?;
    let family = Family::ManualNdns;
    let term = |m: usize| -> Result<Term, StateError> {
        let mut term = dns_term(n, m, alpha);
        let w = require_nonzero(f, family, m)?.recip().expect("nonzero");
        term.mag = term.mag.mul(w);
        Ok(term)
    };
    let a = assemble_asymptotic(term, n, effective_cap(t, f), t)?;
    Ok(finish(family, n, alpha, a))
}

/// DNS coefficients weighted by `[f(m)]!/[f(n)]!`.
pub fn build_ndns_prime(
    n: usize,
    alpha: Complex64,
    f: &NonlinearityFunction,
    t: &Truncation,
) -> Result<FockVector, StateError> {
    check_reference(n, t)?;
    let family = Family::NdnsPrime;
    let inv_ffn = require_nonzero(f, family, n)?.recip().expect("nonzero");
    let term = |m: usize| -> Result<Term, StateError> {
        let mut term = dns_term(n, m, alpha);
        term.mag = term.mag.mul(require_nonzero(f, family, m)?).mul(inv_ffn);
        Ok(term)
    };
    let a = assemble_geometric(term, effective_cap(t, f), t)?;
    Ok(finish(family, n, alpha, a))
}

/// DNS coefficients weighted by `[f(n)]!/[f(m)]!`.
pub fn build_ndns_double_prime(
    n: usize,
    alpha: Complex64,
    f: &NonlinearityFunction,
    t: &Truncation,
) -> Result<FockVector, StateError> {
    check_reference(n, t)?;
    let family = Family::NdnsDoublePrime;
    let ffn = require_nonzero(f, family, n)?;
    let term = |m: usize| -> Result<Term, StateError> {
        let mut term = dns_term(n, m, alpha);
        let w = require_nonzero(f, family, m)?.recip().expect("nonzero");
        term.mag = term.mag.mul(w).mul(ffn);
        Ok(term)
    };
    let a = assemble_asymptotic(term, n, effective_cap(t, f), t)?;
    Ok(finish(family, n, alpha, a))
}

/// SU(1,1) expansion in `zeta`, `|zeta| < 1`, with
/// `f(n) = sqrt(n + 2 lambda - 1)`:
/// `(1-|z|^2)^lambda sum_p (-z^*)^m z^n sqrt(m! n!) (1 - 1/|z|^2)^p
///  / (p! (n-p)! (m-p)!) [f(n)]! [f(m)]! / ([f(p)]!)^2`.
pub fn build_gp(
    n: usize,
    zeta: Complex64,
    lambda: HalfInteger,
    t: &Truncation,
) -> Result<FockVector, StateError> {
    check_reference(n, t)?;
    let r2 = zeta.norm_sqr();
    if r2 >= 1.0 {
        return Err(StateError::Invalid("gp requires |zeta| < 1".into()));
    }
    let f = NonlinearityFunction::new(DeformationKind::GilmorePerelomov { lambda }, t.max_n);
    let ln_c = (1.0 - r2).ln();
    let prefactor = SignedLog::positive(lambda.value() * ln_c);
    let term = |m: usize| -> Result<Term, StateError> {
        let mut term = group_term(n, m, zeta, ln_c, &f)?;
        term.mag = term.mag.mul(prefactor);
        Ok(term)
    };
    let a = assemble_geometric(term, t.max_n, t)?;
    Ok(finish(Family::Gp, n, zeta, a))
}

/// SU(2) expansion in `gamma` with `f(n) = sqrt(2 s + 1 - n)`:
/// `(1+|g|^2)^{-s} sum_p (-g^*)^m g^n sqrt(m! n!) (-|g|^2/(1+|g|^2))^{-p}
///  / (p! (n-p)! (m-p)!) [f(n)]! [f(m)]! / ([f(p)]!)^2`.
/// Levels past `2 s` vanish through `[f(m)]! = 0`.
pub fn build_su2(
    n: usize,
    gamma: Complex64,
    s: HalfInteger,
    t: &Truncation,
) -> Result<FockVector, StateError> {
    check_reference(n, t)?;
    if n > s.twice() as usize {
        return Err(StateError::Invalid("n exceeds 2s".into()));
    }
    let f = NonlinearityFunction::new(DeformationKind::Su2 { s }, t.max_n);
    let ln_c = (1.0 + gamma.norm_sqr()).ln();
    let prefactor = SignedLog::positive(-s.value() * ln_c);
    let term = |m: usize| -> Result<Term, StateError> {
        let mut term = group_term(n, m, gamma, ln_c, &f)?;
        term.mag = term.mag.mul(prefactor);
        Ok(term)
    };
    let a = assemble_geometric(term, t.max_n, t)?;
    Ok(finish(Family::Su2, n, gamma, a))
}

/// Builds the state described by `spec`, dispatching on family and mode.
pub fn build(spec: &StateSpec) -> Result<FockVector, StateError> {
    spec.validate()?;
    let t = &spec.truncation;
    let (n, d) = (spec.n, spec.displacement);
    if spec.mode == ConstructionMode::Oracle {
        return Ok(oracle::build_oracle_state(spec)?);
    }
    match (spec.family, &spec.deformation) {
        (Family::Dns, _) => build_dns(n, d, t),
        (Family::Gp, DeformationKind::GilmorePerelomov { lambda }) => build_gp(n, d, *lambda, t),
        (Family::Su2, DeformationKind::Su2 { s }) => build_su2(n, d, *s, t),
        (family, kind) => {
            let f = NonlinearityFunction::new(kind.clone(), t.max_n);
            match family {
                Family::ManualNdns => build_manual_ndns(n, d, &f, t),
                Family::NdnsPrime => build_ndns_prime(n, d, &f, t),
                Family::NdnsDoublePrime => build_ndns_double_prime(n, d, &f, t),
                _ => unreachable!("validated above"),
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn rational() -> NonlinearityFunction {
        NonlinearityFunction::new(DeformationKind::rational(0.1).unwrap(), 4096)
    }

    fn identity() -> NonlinearityFunction {
        NonlinearityFunction::identity(4096)
    }

    fn half(v: f64) -> HalfInteger {
        HalfInteger::from_f64("test", v).unwrap()
    }

    fn assert_delta(v: &FockVector, level: usize) {
        for (m, z) in v.amplitudes.iter().enumerate() {
            if m == level {
                assert!((z - c(1.0, 0.0)).norm() < 1e-15, "level {m}: {z}");
            } else {
                assert!(z.norm() < 1e-15, "level {m}: {z}");
            }
        }
    }

    #[test]
    fn dns_identity_displacement() {
        let t = Truncation::default();
        assert_delta(&build_dns(0, c(0.0, 0.0), &t).unwrap(), 0);
        assert_delta(&build_dns(3, c(0.0, 0.0), &t).unwrap(), 3);
    }

    #[test]
    fn dns_of_vacuum_is_poisson() {
        let v = build_dns(0, c(1.0, 0.0), &Truncation::default()).unwrap();
        for m in 0..30 {
            let expect = (-1.0 - log_factorial(m)).exp();
            assert_relative_eq!(v.amplitudes[m].norm_sqr(), expect, max_relative = 1e-12);
        }
        assert!((v.norm_before_normalization - 1.0).abs() < 1e-12);
    }

    #[test]
    fn dns_branches_agree_at_reference_level() {
        for n in [0usize, 1, 4, 9] {
            for alpha in [c(0.3, 0.1), c(1.7, -0.4), c(-2.0, 0.0)] {
                let x = alpha.norm_sqr();
                let low = (log_factorial(n) - log_factorial(n)) * 0.5;
                let a = low.exp() * laguerre_unchecked(n, 0.0, x);
                let b = low.exp() * laguerre_unchecked(n, 0.0, x);
                assert_eq!(a, b);
                // the m = n coefficient from either branch formula
                let t = dns_term(n, n, alpha);
                let expect = (-0.5 * x).exp() * laguerre_unchecked(n, 0.0, x);
                assert_relative_eq!(
                    (t.phase * t.mag.to_f64()).re,
                    expect,
                    max_relative = 1e-12,
                    epsilon = 1e-300
                );
            }
        }
    }

    #[test]
    fn dns_norm_is_unitary() {
        for n in [0usize, 2, 5, 12] {
            for alpha in [c(0.5, 0.0), c(1.5, 0.5), c(-3.0, 2.0)] {
                let v = build_dns(n, alpha, &Truncation::default()).unwrap();
                assert!((v.norm_before_normalization - 1.0).abs() < 1e-10);
                assert!(v.tail_bound < 1e-12);
            }
        }
    }

    #[test]
    fn identity_deformation_reduces_to_dns() {
        let t = Truncation::default();
        let f = identity();
        for (n, alpha) in [(1usize, c(0.8, 0.0)), (3, c(1.2, -0.7)), (0, c(2.0, 0.5))] {
            let dns = build_dns(n, alpha, &t).unwrap();
            for v in [
                build_manual_ndns(n, alpha, &f, &t).unwrap(),
                build_ndns_prime(n, alpha, &f, &t).unwrap(),
                build_ndns_double_prime(n, alpha, &f, &t).unwrap(),
            ] {
                assert!(dns.max_deviation(&v) < 1e-12, "{}", v.family);
            }
        }
    }

    #[test]
    fn zero_displacement_is_number_state() {
        let t = Truncation::default();
        let f = rational();
        for n in [0usize, 1, 4] {
            let z = c(0.0, 0.0);
            assert_delta(&build_manual_ndns(n, z, &f, &t).unwrap(), n);
            assert_delta(&build_ndns_prime(n, z, &f, &t).unwrap(), n);
            assert_delta(&build_ndns_double_prime(n, z, &f, &t).unwrap(), n);
            assert_delta(&build_gp(n, z, half(1.0), &t).unwrap(), n);
            assert_delta(&build_su2(n, z, half(2.5), &t).unwrap(), n);
        }
    }

    #[test]
    fn coherent_reduction_of_ndns_prime() {
        let v = build_ndns_prime(0, c(1.2, 0.0), &identity(), &Truncation::default()).unwrap();
        let x: f64 = 1.44;
        for m in 0..25 {
            let expect = (-x + m as f64 * x.ln() - log_factorial(m)).exp();
            assert_relative_eq!(v.amplitudes[m].norm_sqr(), expect, max_relative = 1e-11);
        }
    }

    /// Term-by-term recomputation of the manual expansion with plain floats.
    #[test]
    fn manual_ndns_matches_direct_sum() {
        let (n, alpha, k) = (2usize, 1.0f64, 0.1f64);
        // the expansion is asymptotic here; its smallest term is near 1e-10
        let t = Truncation {
            tail_tolerance: 1e-9,
            ..Truncation::default()
        };
        let v = build_manual_ndns(n, c(alpha, 0.0), &rational(), &t).unwrap();
        assert!(v.asymptotic);
        let fact = |m: usize| (1..=m).map(|j| j as f64).product::<f64>();
        let ff = |m: usize| (1..=m).map(|j| 1.0 / (1.0 + k * j as f64)).product::<f64>();
        let mut raw = Vec::new();
        for m in 0..=v.truncation {
            let base = if m <= n {
                (fact(m) / fact(n)).sqrt()
                    * (-alpha).powi((n - m) as i32)
                    * laguerre_unchecked(m, (n - m) as f64, alpha * alpha)
            } else {
                (fact(n) / fact(m)).sqrt()
                    * alpha.powi((m - n) as i32)
                    * laguerre_unchecked(n, (m - n) as f64, alpha * alpha)
            };
            raw.push((-alpha * alpha / 2.0).exp() * base / ff(m));
        }
        let norm = raw.iter().map(|x| x * x).sum::<f64>().sqrt();
        for (m, r) in raw.iter().enumerate() {
            assert!((v.amplitudes[m] - c(r / norm, 0.0)).norm() < 1e-12, "m = {m}");
        }
    }

    #[test]
    fn ndns_prime_and_double_prime_differ() {
        let t = Truncation {
            tail_tolerance: 1e-9,
            ..Truncation::default()
        };
        let f = rational();
        let a = build_ndns_prime(2, c(1.0, 0.0), &f, &t).unwrap();
        let b = build_ndns_double_prime(2, c(1.0, 0.0), &f, &t).unwrap();
        assert!(a.max_deviation(&b) > 1e-3);
    }

    #[test]
    fn phase_covariance() {
        let t = Truncation::default();
        let f = rational();
        let theta = 0.7f64;
        let rot = Complex64::from_polar(1.0, theta);
        let n = 2usize;
        let alpha = c(0.6, 0.2);
        let builders: [&dyn Fn(Complex64) -> FockVector; 3] = [
            &|a| build_dns(n, a, &t).unwrap(),
            &|a| build_ndns_prime(n, a, &f, &t).unwrap(),
            &|a| build_ndns_double_prime(n, a, &f, &t).unwrap(),
        ];
        for b in builders {
            let v0 = b(alpha);
            let v1 = b(alpha * rot);
            for m in 0..v0.amplitudes.len().min(v1.amplitudes.len()) {
                let expect =
                    v0.amplitudes[m] * Complex64::from_polar(1.0, theta * (m as f64 - n as f64));
                assert!((v1.amplitudes[m] - expect).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn su2_support_is_finite() {
        let v = build_su2(0, c(0.4, 0.0), half(1.0), &Truncation::default()).unwrap();
        for m in 3..v.amplitudes.len() {
            assert_eq!(v.amplitudes[m], c(0.0, 0.0));
        }
        assert!(v.amplitudes[2].norm() > 0.1);
        assert!((v.norm() - 1.0).abs() < 1e-12);
        let s = half(2.5);
        let v = build_su2(3, c(0.3, -0.2), s, &Truncation::default()).unwrap();
        assert!(v.amplitudes[6..].iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn su2_vacuum_is_binomial() {
        // n = 0 leaves a single p-term: |amp_m|^2 = C(2s, m) |g|^{2m} / (1+|g|^2)^{2s}
        let g: f64 = 0.4;
        let v = build_su2(0, c(g, 0.0), half(2.0), &Truncation::default()).unwrap();
        let binom = [1.0, 4.0, 6.0, 4.0, 1.0];
        for (m, b) in binom.iter().enumerate() {
            let expect = b * g.powi(2 * m as i32) / (1.0 + g * g).powi(4);
            assert_relative_eq!(v.amplitudes[m].norm_sqr(), expect, max_relative = 1e-12);
        }
        assert!((v.norm_before_normalization - 1.0).abs() < 1e-12);
    }

    #[test]
    fn gp_vacuum_is_negative_binomial() {
        // |amp_m|^2 = (1-|z|^2)^{2 lambda} Gamma(2 lambda + m) / (m! Gamma(2 lambda)) |z|^{2m}
        let z: f64 = 0.5;
        let v = build_gp(0, c(z, 0.0), half(0.5), &Truncation::default()).unwrap();
        for m in 0..40 {
            let expect = (1.0 - z * z) * z.powi(2 * m as i32);
            assert_relative_eq!(v.amplitudes[m].norm_sqr(), expect, max_relative = 1e-11);
        }
        assert!((v.norm_before_normalization - 1.0).abs() < 1e-11);
    }

    #[test]
    fn gp_rejects_unit_disk_boundary() {
        assert!(build_gp(0, c(1.0, 0.0), half(1.0), &Truncation::default()).is_err());
        assert!(build_gp(0, c(0.8, 0.7), half(1.0), &Truncation::default()).is_err());
    }

    #[test]
    fn su2_rejects_reference_above_ladder() {
        let err = build_su2(3, c(0.4, 0.0), half(1.0), &Truncation::default()).unwrap_err();
        assert!(err.to_string().contains("n exceeds 2s"));
        let spec = StateSpec::su2(3, c(0.4, 0.0), half(1.0));
        assert!(spec.validate().is_err());
    }

    #[test]
    fn truncation_failure_when_cap_too_small() {
        let t = Truncation::with_max(8);
        let err = build_dns(0, c(2.0, 0.0), &t).unwrap_err();
        assert!(matches!(err, StateError::Truncation { .. }));
        assert!(err.is_truncation());
    }

    #[test]
    fn double_prime_is_asymptotic_for_rational_deformation() {
        let t = Truncation::default();
        let v = build_ndns_double_prime(0, c(0.5, 0.0), &rational(), &t).unwrap();
        assert!(v.asymptotic);
        assert!(v.tail_bound < 1e-100);
        let err = build_ndns_double_prime(0, c(2.0, 0.0), &rational(), &t).unwrap_err();
        assert!(matches!(err, StateError::Divergent { .. }), "{err}");
    }

    #[test]
    fn deformation_with_cutoff_rejected_for_algebraic_families() {
        let f = NonlinearityFunction::new(DeformationKind::su2(2.0).unwrap(), 4096);
        let err = build_ndns_prime(1, c(0.5, 0.0), &f, &Truncation::default()).unwrap_err();
        assert!(matches!(err, StateError::ZeroFactorial { level: 5, .. }));
    }

    #[test]
    fn custom_table_limits_truncation() {
        let table: Vec<f64> = (0..40).map(|n| 1.0 / (1.0 + 0.1 * n as f64)).collect();
        let f = NonlinearityFunction::new(DeformationKind::custom(table).unwrap(), 4096);
        let v = build_ndns_prime(1, c(0.7, 0.0), &f, &Truncation::default()).unwrap();
        assert!(v.truncation <= 39);
        let r = build_ndns_prime(1, c(0.7, 0.0), &rational(), &Truncation::default()).unwrap();
        assert!(v.max_deviation(&r) < 1e-12);
    }

    #[test]
    fn spec_validation() {
        let s = StateSpec::dns(0, c(0.0, 0.0));
        assert!(s.validate().is_ok());
        let mut bad = s.clone();
        bad.deformation = DeformationKind::rational(0.1).unwrap();
        assert!(bad.validate().is_err());
        let mut gp = StateSpec::gp(1, c(0.3, 0.0), half(1.0));
        assert!(gp.validate().is_ok());
        gp.displacement = c(1.0, 0.0);
        assert!(gp.validate().is_err());
        gp.deformation = DeformationKind::Identity;
        assert!(gp.validate().is_err());
        let manual = StateSpec::algebraic(
            Family::ManualNdns,
            1,
            c(0.5, 0.0),
            DeformationKind::rational(0.1).unwrap(),
        )
        .with_mode(ConstructionMode::Oracle);
        assert!(manual.validate().is_err());
    }

    #[test]
    fn json_shape() {
        let v = build_dns(0, c(0.0, 0.0), &Truncation::default()).unwrap();
        let j: serde_json::Value = serde_json::from_str(&v.to_json()).unwrap();
        for key in [
            "family",
            "n",
            "displacement",
            "truncation",
            "amplitudes",
            "norm_before_normalization",
            "tail_bound",
        ] {
            assert!(j.get(key).is_some(), "{key}");
        }
        assert_eq!(j["family"], "dns");
        assert_eq!(j["amplitudes"][0], serde_json::json!([1.0, 0.0]));
        assert!(j.get("asymptotic").is_none());
        let back: FockVector = serde_json::from_str(&v.to_json()).unwrap();
        assert_eq!(back, v);
    }

    #[test]
    fn family_names_round_trip() {
        for f in Family::ALL {
            assert_eq!(f.as_str().parse::<Family>().unwrap(), f);
            assert_eq!(serde_json::to_string(&f).unwrap(), format!("\"{}\"", f.as_str()));
        }
    }
}
