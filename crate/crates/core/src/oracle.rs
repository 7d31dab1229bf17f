//! Truncated-operator ground truth.
//!
//! Ladder operators are built as matrices over Fock levels `0..=N`, and
//! displacement-type exponentials are applied to vectors by a scaled Taylor
//! series. Nothing here uses the closed-form expansions.

use std::collections::BTreeMap;

use ndarray::Array2;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::deformation::{DeformationError, DeformationKind, HalfInteger, NonlinearityFunction};
use crate::states::{self, Family, FockVector, StateError, StateSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("invalid oracle input: {0}")]
    Invalid(String),
    #[error("f({level}) = 0 inside the range where its inverse is needed")]
    ZeroF { level: usize },
    #[error(transparent)]
    Deformation(#[from] DeformationError),
    #[error("truncation failure: top 10% of levels carry {top_mass:.3e} at N = {n_max}")]
    Truncation { n_max: usize, top_mass: f64 },
    #[error("Taylor series did not converge within {terms} terms")]
    NoConvergence { terms: usize },
}

const C0: Complex64 = Complex64::new(0.0, 0.0);
const C1: Complex64 = Complex64::new(1.0, 0.0);

/// Smallest truncation accepted for operator construction.
pub const MIN_TRUNCATION: usize = 8;
/// Largest probability allowed in the top 10% of levels of an oracle vector.
pub const TOP_MASS_TOLERANCE: f64 = 1e-10;
/// Relative stopping threshold for the Taylor remainder.
pub const SERIES_TOLERANCE: f64 = 1e-16;
/// Target 1-norm of each scaled step.
const THETA: f64 = 4.0;
const MAX_TERMS: usize = 200;

/// Dense operator over Fock levels `0..=N`.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    pub label: String,
    pub entries: Array2<Complex64>,
}

impl OperatorMatrix {
    pub fn new(label: impl Into<String>, entries: Array2<Complex64>) -> Self {
        Self {
            label: label.into(),
            entries,
        }
    }

    pub fn zeros(label: impl Into<String>, dim: usize) -> Self {
        Self::new(label, Array2::zeros((dim, dim)))
    }

    pub fn identity(dim: usize) -> Self {
        Self::new("I", Array2::eye(dim))
    }

    pub fn diagonal(label: impl Into<String>, values: &[f64]) -> Self {
        let mut m = Self::zeros(label, values.len());
        for (i, v) in values.iter().enumerate() {
            m.entries[[i, i]] = Complex64::new(*v, 0.0);
        }
        m
    }

    /// Lowering operator with `M[m-1, m] = weights[m]`; `weights[0]` is unused.
    pub fn lowering(label: impl Into<String>, weights: &[f64]) -> Self {
        let mut m = Self::zeros(label, weights.len());
        for i in 1..weights.len() {
            m.entries[[i - 1, i]] = Complex64::new(weights[i], 0.0);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn adjoint(&self, label: impl Into<String>) -> Self {
        Self::new(label, self.entries.t().mapv(|z| z.conj()))
    }

    pub fn dot(&self, other: &OperatorMatrix) -> OperatorMatrix {
        Self::new(
            format!("{}{}", self.label, other.label),
            self.entries.dot(&other.entries),
        )
    }

    pub fn scaled(&self, c: Complex64) -> OperatorMatrix {
        Self::new(self.label.clone(), self.entries.mapv(|z| z * c))
    }

    pub fn plus(&self, other: &OperatorMatrix) -> OperatorMatrix {
        Self::new(
            format!("{}+{}", self.label, other.label),
            &self.entries + &other.entries,
        )
    }

    pub fn minus(&self, other: &OperatorMatrix) -> OperatorMatrix {
        Self::new(
            format!("{}-{}", self.label, other.label),
            &self.entries - &other.entries,
        )
    }

    /// `[self, other]`.
    pub fn commutator(&self, other: &OperatorMatrix) -> OperatorMatrix {
        let e = self.entries.dot(&other.entries) - other.entries.dot(&self.entries);
        Self::new(format!("[{},{}]", self.label, other.label), e)
    }

    /// Largest entry modulus restricted to levels `0..block`.
    pub fn block_max_abs(&self, block: usize) -> f64 {
        let b = block.min(self.dim());
        let mut max = 0.0f64;
        for i in 0..b {
            for j in 0..b {
                max = max.max(self.entries[[i, j]].norm());
            }
        }
        max
    }

    /// Largest entry modulus on levels `0..=N-2`, away from the truncation edge.
    pub fn interior_max_abs(&self) -> f64 {
        self.block_max_abs(self.dim().saturating_sub(1))
    }

    pub fn apply(&self, v: &[Complex64]) -> Vec<Complex64> {
        let mut out = vec![C0; self.dim()];
        for (i, row) in self.entries.rows().into_iter().enumerate() {
            out[i] = row.iter().zip(v).map(|(a, b)| a * b).sum();
        }
        out
    }

    pub fn to_sparse(&self) -> SparseMatrix {
        SparseMatrix::from_dense(&self.entries)
    }
}

/// Compressed-row matrix used for repeated matrix-vector products.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    values: Vec<Complex64>,
}

impl SparseMatrix {
    pub fn from_dense(m: &Array2<Complex64>) -> Self {
        let dim = m.nrows();
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for row in m.rows() {
            for (j, z) in row.iter().enumerate() {
                if *z != C0 {
                    cols.push(j);
                    values.push(*z);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            dim,
            row_ptr,
            cols,
            values,
        }
    }

    /// `c_up * U + c_down * L` with `U[m+1, m] = up[m]` and
    /// `L[m-1, m] = down[m]` over `dim` levels.
    pub fn ladder(dim: usize, c_up: Complex64, up: &[f64], c_down: Complex64, down: &[f64]) -> Self {
        let mut row_ptr = Vec::with_capacity(dim + 1);
        let mut cols = Vec::with_capacity(2 * dim);
        let mut values = Vec::with_capacity(2 * dim);
        row_ptr.push(0);
        for i in 0..dim {
            if i > 0 {
                let z = c_up * up[i - 1];
                if z != C0 {
                    cols.push(i - 1);
                    values.push(z);
                }
            }
            if i + 1 < dim {
                let z = c_down * down[i + 1];
                if z != C0 {
                    cols.push(i + 1);
                    values.push(z);
                }
            }
            row_ptr.push(cols.len());
        }
        Self {
            dim,
            row_ptr,
            cols,
            values,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Induced 1-norm (largest column sum of moduli).
    pub fn norm1(&self) -> f64 {
        let mut col = vec![0.0; self.dim];
        for (j, z) in self.cols.iter().zip(&self.values) {
            col[*j] += z.norm();
        }
        col.into_iter().fold(0.0, f64::max)
    }

    /// `out = c * M x`.
    fn matvec_scaled(&self, x: &[Complex64], c: f64, out: &mut [Complex64]) {
        for i in 0..self.dim {
            let mut acc = C0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.cols[k]];
            }
            out[i] = acc * c;
        }
    }
}

fn l1(v: &[Complex64]) -> f64 {
    v.iter().map(|z| z.norm()).sum()
}

/// `exp(X) v` by a scaled Taylor series applied directly to the vector.
///
/// The exponent is split into `s` steps with `||X/s||_1 <= 4`; each step adds
/// terms until the remainder bound `||t_k|| r/(1-r)`, `r = h/(k+1)`, drops
/// below `1e-16` of the running sum.
pub fn expm_multiply(x: &SparseMatrix, v: &[Complex64]) -> Result<Vec<Complex64>, OracleError> {
    let dim = x.dim();
    let mut w: Vec<Complex64> = (0..dim).map(|i| v.get(i).copied().unwrap_or(C0)).collect();
    let norm = x.norm1();
    if norm == 0.0 {
        return Ok(w);
    }
    let steps = (norm / THETA).ceil().max(1.0) as usize;
    let h = norm / steps as f64;
    let mut term = vec![C0; dim];
    let mut next = vec![C0; dim];
    for _ in 0..steps {
        term.copy_from_slice(&w);
        let mut converged = false;
        for k in 1..=MAX_TERMS {
            x.matvec_scaled(&term, 1.0 / (steps as f64 * k as f64), &mut next);
            std::mem::swap(&mut term, &mut next);
            for (a, t) in w.iter_mut().zip(&term) {
                *a += t;
            }
            let tn = l1(&term);
            if tn == 0.0 {
                converged = true;
                break;
            }
            let r = h / (k + 1) as f64;
            if r < 1.0 && tn * r / (1.0 - r) <= SERIES_TOLERANCE * l1(&w) {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(OracleError::NoConvergence { terms: MAX_TERMS });
        }
    }
    Ok(w)
}

/// Fraction of the probability carried by the top 10% of levels.
pub fn top_mass(v: &[Complex64]) -> f64 {
    let total: f64 = v.iter().map(|z| z.norm_sqr()).sum();
    if total == 0.0 {
        return 0.0;
    }
    let start = v.len() - (v.len() / 10).max(1);
    v[start..].iter().map(|z| z.norm_sqr()).sum::<f64>() / total
}

/// `exp(X) v` with the truncation-edge check on the result.
pub fn apply_exponential(x: &OperatorMatrix, v: &[Complex64]) -> Result<Vec<Complex64>, OracleError> {
    apply_sparse_checked(&x.to_sparse(), v)
}

fn apply_sparse_checked(x: &SparseMatrix, v: &[Complex64]) -> Result<Vec<Complex64>, OracleError> {
    let w = expm_multiply(x, v)?;
    let mass = top_mass(&w);
    if mass < TOP_MASS_TOLERANCE {
        Ok(w)
    } else {
        Err(OracleError::Truncation {
            n_max: x.dim() - 1,
            top_mass: mass,
        })
    }
}

fn basis(level: usize, dim: usize) -> Vec<Complex64> {
    let mut v = vec![C0; dim];
    v[level] = C1;
    v
}

/// Ladder weights `sqrt(m) f(m)` for `m = 0..=n_max`.
fn weights_a(f: &NonlinearityFunction, n_max: usize) -> Result<Vec<f64>, OracleError> {
    (0..=n_max)
        .map(|m| Ok((m as f64).sqrt() * f.eval_f(m)?))
        .collect()
}

/// Ladder weights `sqrt(m) / f(m)` for `m = 0..=n_max`; `f(0)` is never used.
fn weights_b(f: &NonlinearityFunction, n_max: usize) -> Result<Vec<f64>, OracleError> {
    (0..=n_max)
        .map(|m| {
            if m == 0 {
                return Ok(0.0);
            }
            let v = f.eval_f(m)?;
            if v == 0.0 {
                Err(OracleError::ZeroF { level: m })
            } else {
                Ok((m as f64).sqrt() / v)
            }
        })
        .collect()
}

fn shift_up(w: &[f64]) -> Vec<f64> {
    // U[m+1, m] = w[m+1]
    let mut up: Vec<f64> = w.iter().skip(1).copied().collect();
    up.push(0.0);
    up
}

/// The operator set `a, a^+, n, f(n), A, A^+` and optionally `B, B^+`.
#[derive(Debug, Clone)]
pub struct OperatorSet {
    pub a: OperatorMatrix,
    pub a_dag: OperatorMatrix,
    pub number: OperatorMatrix,
    pub f_diag: OperatorMatrix,
    pub big_a: OperatorMatrix,
    pub big_a_dag: OperatorMatrix,
    pub b: Option<OperatorMatrix>,
    pub b_dag: Option<OperatorMatrix>,
}

/// Builds `a`, `a^+`, `n`, `f(n)`, `A = a f(n)`, `A^+` and, when asked,
/// `B = a f(n)^{-1}` and `B^+` over levels `0..=n_max`.
pub fn build_operators(
    f: &NonlinearityFunction,
    n_max: usize,
    with_b: bool,
) -> Result<OperatorSet, OracleError> {
    if n_max < MIN_TRUNCATION {
        return Err(OracleError::Invalid(format!(
            "truncation must be at least {MIN_TRUNCATION}"
        )));
    }
    let sq: Vec<f64> = (0..=n_max).map(|m| (m as f64).sqrt()).collect();
    let fv: Vec<f64> = (0..=n_max).map(|m| f.eval_f(m)).collect::<Result<_, _>>()?;
    let a = OperatorMatrix::lowering("a", &sq);
    let a_dag = a.adjoint("a+");
    let number = OperatorMatrix::diagonal("n", &(0..=n_max).map(|m| m as f64).collect::<Vec<_>>());
    let f_diag = OperatorMatrix::diagonal("f(n)", &fv);
    let big_a = OperatorMatrix::lowering("A", &weights_a(f, n_max)?);
    let big_a_dag = big_a.adjoint("A+");
    let (b, b_dag) = if with_b {
        let b = OperatorMatrix::lowering("B", &weights_b(f, n_max)?);
        let bd = b.adjoint("B+");
        (Some(b), Some(bd))
    } else {
        (None, None)
    };
    Ok(OperatorSet {
        a,
        a_dag,
        number,
        f_diag,
        big_a,
        big_a_dag,
        b,
        b_dag,
    })
}

/// Residuals of the deformed-oscillator algebra on the interior block:
/// `[a,a+] = I`, `[A,B+] = I`, `[B,A+] = I`,
/// `[A,A+] = (n+1) f^2(n+1) - n f^2(n)`, and `B+A = n = A+B` on the full block.
pub fn algebra_residuals(
    f: &NonlinearityFunction,
    n_max: usize,
) -> Result<BTreeMap<String, f64>, OracleError> {
    let ops = build_operators(f, n_max, true)?;
    let dim = n_max + 1;
    let id = OperatorMatrix::identity(dim);
    let b = ops.b.as_ref().expect("requested");
    let b_dag = ops.b_dag.as_ref().expect("requested");
    let mut out = BTreeMap::new();
    out.insert(
        "[a,a+]-I".to_string(),
        ops.a.commutator(&ops.a_dag).minus(&id).interior_max_abs(),
    );
    out.insert(
        "[A,B+]-I".to_string(),
        ops.big_a.commutator(b_dag).minus(&id).interior_max_abs(),
    );
    out.insert(
        "[B,A+]-I".to_string(),
        b.commutator(&ops.big_a_dag).minus(&id).interior_max_abs(),
    );
    // Only levels 0..=N-1 enter the interior block, so f(N) is the last value used.
    let mut diag = vec![0.0; dim];
    for (m, d) in diag.iter_mut().enumerate().take(n_max) {
        let up = f.kind().eval_squared(m + 1)?;
        let here = f.kind().eval_squared(m)?;
        *d = (m as f64 + 1.0) * up - m as f64 * here;
    }
    out.insert(
        "[A,A+]-((n+1)f^2(n+1)-nf^2(n))".to_string(),
        ops.big_a
            .commutator(&ops.big_a_dag)
            .minus(&OperatorMatrix::diagonal("g", &diag))
            .interior_max_abs(),
    );
    out.insert(
        "B+A-n".to_string(),
        b_dag.dot(&ops.big_a).minus(&ops.number).block_max_abs(dim),
    );
    out.insert(
        "A+B-n".to_string(),
        ops.big_a_dag.dot(b).minus(&ops.number).block_max_abs(dim),
    );
    Ok(out)
}

/// Group generators `(K-, K+, K0)` over levels `0..=n_max`:
/// SU(1,1) with `K- = a sqrt(n + 2 lambda - 1)`, `K0 = n + lambda`, or
/// SU(2) with `K- = a sqrt(2 s + 1 - n)`, `K0 = n - s`.
pub fn group_generators(
    kind: &DeformationKind,
    n_max: usize,
) -> Result<(OperatorMatrix, OperatorMatrix, OperatorMatrix), OracleError> {
    let f = NonlinearityFunction::new(kind.clone(), n_max);
    let offset = match kind {
        DeformationKind::GilmorePerelomov { lambda } => lambda.value(),
        DeformationKind::Su2 { s } => -s.value(),
        _ => return Err(OracleError::Invalid("group generators need lambda or s".into())),
    };
    let k_minus = OperatorMatrix::lowering("K-", &weights_a(&f, n_max)?);
    let k_plus = k_minus.adjoint("K+");
    let k0 = OperatorMatrix::diagonal(
        "K0",
        &(0..=n_max).map(|m| m as f64 + offset).collect::<Vec<_>>(),
    );
    Ok((k_minus, k_plus, k0))
}

/// Lie-algebra residuals of the group generators on the interior block, or
/// on the whole ladder for SU(2):
/// `[K0,K+] = K+`, `[K0,K-] = -K-`, and `[K-,K+] = 2 K0` (SU(1,1)) or
/// `-2 K0` (SU(2)).
pub fn group_residuals(kind: &DeformationKind, n_max: usize) -> Result<BTreeMap<String, f64>, OracleError> {
    let (km, kp, k0) = group_generators(kind, n_max)?;
    // The SU(2) ladder is the finite block 0..=2s; above it K- and K+ vanish
    // while K0 does not.
    let (sign, block) = match kind {
        DeformationKind::Su2 { s } => (-2.0, (s.twice() as usize + 1).min(n_max + 1)),
        _ => (2.0, n_max),
    };
    let mut out = BTreeMap::new();
    out.insert(
        "[K0,K+]-K+".to_string(),
        k0.commutator(&kp).minus(&kp).block_max_abs(block),
    );
    out.insert(
        "[K0,K-]+K-".to_string(),
        k0.commutator(&km).plus(&km).block_max_abs(block),
    );
    out.insert(
        "[K-,K+]-c*K0".to_string(),
        km.commutator(&kp)
            .minus(&k0.scaled(Complex64::new(sign, 0.0)))
            .block_max_abs(block),
    );
    Ok(out)
}

/// `artanh|z| e^{i arg z}`, inverting `z = (w/|w|) tanh|w|`.
pub fn inverse_tanh_map(z: Complex64) -> Result<Complex64, OracleError> {
    let r = z.norm();
    if r >= 1.0 {
        return Err(OracleError::Invalid(format!(
            "|{r}| >= 1 has no inverse under the tanh map"
        )));
    }
    if r == 0.0 {
        return Ok(C0);
    }
    Ok(z * (r.atanh() / r))
}

/// `(w/|w|) tanh|w|`.
pub fn tanh_map(w: Complex64) -> Complex64 {
    let r = w.norm();
    if r == 0.0 {
        C0
    } else {
        w * (r.tanh() / r)
    }
}

/// Sparse exponent for the displacement-type operator of `family` over
/// levels `0..=n_max`, with `f` taken from `deformation`.
pub fn generator(
    family: Family,
    displacement: Complex64,
    deformation: &DeformationKind,
    n_max: usize,
) -> Result<SparseMatrix, OracleError> {
    let dim = n_max + 1;
    let f = NonlinearityFunction::new(deformation.clone(), n_max);
    let (c, up, down) = match family {
        Family::Dns => {
            let w: Vec<f64> = (0..dim).map(|m| (m as f64).sqrt()).collect();
            (displacement, shift_up(&w), w)
        }
        Family::NdnsPrime => (
            displacement,
            shift_up(&weights_a(&f, n_max)?),
            weights_b(&f, n_max)?,
        ),
        Family::NdnsDoublePrime => (
            displacement,
            shift_up(&weights_b(&f, n_max)?),
            weights_a(&f, n_max)?,
        ),
        Family::Gp | Family::Su2 => {
            let w = weights_a(&f, n_max)?;
            (inverse_tanh_map(displacement)?, shift_up(&w), w)
        }
        Family::ManualNdns => {
            return Err(OracleError::Invalid(
                "manual-ndns has no generating operator".into(),
            ))
        }
    };
    Ok(SparseMatrix::ladder(dim, c, &up, -c.conj(), &down))
}

/// The oracle state at a fixed truncation, normalized, with the raw norm of
/// `exp(X)|n>` recorded.
pub fn oracle_state_at(spec: &StateSpec, n_max: usize) -> Result<FockVector, OracleError> {
    if n_max < MIN_TRUNCATION {
        return Err(OracleError::Invalid(format!(
            "truncation must be at least {MIN_TRUNCATION}"
        )));
    }
    if spec.n > n_max {
        return Err(OracleError::Invalid(format!(
            "reference level {} exceeds truncation {n_max}",
            spec.n
        )));
    }
    let x = generator(spec.family, spec.displacement, &spec.deformation, n_max)?;
    let w = apply_sparse_checked(&x, &basis(spec.n, n_max + 1))?;
    let tail = top_mass(&w);
    Ok(FockVector::from_raw(
        spec.family,
        spec.n,
        spec.displacement,
        w,
        tail,
    ))
}

/// The oracle state, doubling the truncation from the spec's starting value
/// until the edge check passes or the cap is reached.
pub fn build_oracle_state(spec: &StateSpec) -> Result<FockVector, OracleError> {
    let t = &spec.truncation;
    let mut n_max = t.start.max(MIN_TRUNCATION).max(spec.n + MIN_TRUNCATION).min(t.max_n);
    if n_max < MIN_TRUNCATION || spec.n > n_max {
        return Err(OracleError::Truncation {
            n_max,
            top_mass: 1.0,
        });
    }
    loop {
        match oracle_state_at(spec, n_max) {
            Err(OracleError::Truncation { .. }) if n_max < t.max_n => {
                n_max = (2 * n_max).min(t.max_n);
            }
            other => return other,
        }
    }
}

/// L-infinity distance between `exp(alpha A+ - alpha^* B)|n>` and
/// `e^{-|alpha|^2/2} exp(alpha A+) exp(-alpha^* B)|n>` (unnormalized).
pub fn verify_bch_factorization(
    alpha: Complex64,
    f: &NonlinearityFunction,
    n: usize,
    n_max: usize,
) -> Result<f64, OracleError> {
    if n > n_max || n_max < MIN_TRUNCATION {
        return Err(OracleError::Invalid("bad truncation".into()));
    }
    let dim = n_max + 1;
    let wa = weights_a(f, n_max)?;
    let wb = weights_b(f, n_max)?;
    let zeros = vec![0.0; dim];
    let v = basis(n, dim);
    let full = SparseMatrix::ladder(dim, alpha, &shift_up(&wa), -alpha.conj(), &wb);
    let lhs = apply_sparse_checked(&full, &v)?;
    let lower = SparseMatrix::ladder(dim, C0, &zeros, -alpha.conj(), &wb);
    let raise = SparseMatrix::ladder(dim, alpha, &shift_up(&wa), C0, &zeros);
    let mid = expm_multiply(&lower, &v)?;
    let rhs = apply_sparse_checked(&raise, &mid)?;
    let scale = (-0.5 * alpha.norm_sqr()).exp();
    Ok(lhs
        .iter()
        .zip(&rhs)
        .map(|(l, r)| (l - r * scale).norm())
        .fold(0.0, f64::max))
}

/// Oracle state for a group family from `zeta` (SU(1,1)) or `gamma` (SU(2)).
pub fn build_group_oracle(
    family: Family,
    displacement: Complex64,
    index: HalfInteger,
    n: usize,
    n_max: usize,
) -> Result<FockVector, OracleError> {
    let spec = match family {
        Family::Gp => StateSpec::gp(n, displacement, index),
        Family::Su2 => StateSpec::su2(n, displacement, index),
        _ => return Err(OracleError::Invalid("not a group family".into())),
    };
    spec.validate().map_err(|e| OracleError::Invalid(e.to_string()))?;
    oracle_state_at(&spec, n_max)
}

/// Comparison record between the closed-form and oracle constructions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub family: Family,
    pub params: StateSpec,
    pub truncation: usize,
    pub max_amplitude_deviation: f64,
    pub closed_form_norm: f64,
    pub oracle_norm: f64,
    pub commutator_residuals: BTreeMap<String, f64>,
}

impl OracleReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serializable")
    }
}

/// Builds `spec` both ways, the oracle at truncation `n_max`, and records the
/// per-amplitude deviation together with the relevant algebra residuals.
pub fn compare(spec: &StateSpec, n_max: usize) -> Result<OracleReport, StateError> {
    spec.validate()?;
    let closed = states::build(&spec.clone().with_mode(Default::default()))?;
    let oracle = oracle_state_at(spec, n_max)?;
    let residuals = match spec.family {
        Family::Gp | Family::Su2 => group_residuals(&spec.deformation, n_max)?,
        Family::Dns => algebra_residuals(&NonlinearityFunction::identity(n_max), n_max)?,
        _ => algebra_residuals(&NonlinearityFunction::new(spec.deformation.clone(), n_max), n_max)?,
    };
    Ok(OracleReport {
        family: spec.family,
        params: spec.clone(),
        truncation: n_max,
        max_amplitude_deviation: states::max_deviation(&closed.amplitudes, &oracle.amplitudes),
        closed_form_norm: closed.norm_before_normalization,
        oracle_norm: oracle.norm_before_normalization,
        commutator_residuals: residuals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::log_factorial;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn rational() -> NonlinearityFunction {
        NonlinearityFunction::new(DeformationKind::rational(0.1).unwrap(), 600)
    }

    fn half(v: f64) -> HalfInteger {
        HalfInteger::from_f64("test", v).unwrap()
    }

    #[test]
    fn zero_exponent_is_identity() {
        let x = OperatorMatrix::zeros("0", 16);
        let v: Vec<Complex64> = (0..16).map(|i| c(i as f64, -1.0)).collect();
        assert_eq!(expm_multiply(&x.to_sparse(), &v).unwrap(), v);
    }

    #[test]
    fn displacement_of_vacuum_is_coherent() {
        let ops = build_operators(&NonlinearityFunction::identity(64), 64, false).unwrap();
        let x = ops.a_dag.minus(&ops.a);
        let w = apply_exponential(&x, &basis(0, 65)).unwrap();
        for (m, z) in w.iter().enumerate().take(30) {
            let expect = (-1.0 - log_factorial(m)).exp();
            assert!((z.norm_sqr() - expect).abs() < 1e-14, "m = {m}");
        }
    }

    #[test]
    fn small_dense_exponential_matches_closed_form() {
        // exp of a 2x2 nilpotent block [[0,1],[0,0]] is [[1,1],[0,1]]
        let mut m = OperatorMatrix::zeros("N", 2);
        m.entries[[0, 1]] = C1;
        let w = expm_multiply(&m.to_sparse(), &[c(0.0, 0.0), c(1.0, 0.0)]).unwrap();
        assert_eq!(w, vec![c(1.0, 0.0), c(1.0, 0.0)]);
    }

    #[test]
    fn sparse_ladder_matches_dense() {
        let f = rational();
        let ops = build_operators(&f, 20, true).unwrap();
        let alpha = c(0.7, -0.2);
        let dense = ops
            .big_a_dag
            .scaled(alpha)
            .minus(&ops.b.unwrap().scaled(alpha.conj()));
        let sparse = generator(
            Family::NdnsPrime,
            alpha,
            &DeformationKind::rational(0.1).unwrap(),
            20,
        )
        .unwrap();
        assert_eq!(dense.to_sparse(), sparse);
    }

    #[test]
    fn algebra_identity() {
        let r = algebra_residuals(&NonlinearityFunction::identity(32), 32).unwrap();
        // squares of correctly rounded sqrt(m) put the floor near 2 N eps
        assert!(r["[a,a+]-I"] < 4.0 * 32.0 * f64::EPSILON, "{}", r["[a,a+]-I"]);
        for (k, v) in &r {
            assert!(*v < 1e-12, "{k}: {v}");
        }
    }

    #[test]
    fn algebra_rational() {
        let r = algebra_residuals(&rational(), 64).unwrap();
        for (k, v) in &r {
            assert!(*v < 1e-12, "{k}: {v}");
        }
    }

    #[test]
    fn truncation_edge_is_excluded() {
        let ops = build_operators(&NonlinearityFunction::identity(16), 16, false).unwrap();
        let comm = ops.a.commutator(&ops.a_dag).minus(&OperatorMatrix::identity(17));
        assert!(comm.interior_max_abs() < 1e-14);
        assert!(comm.block_max_abs(17) > 1.0);
    }

    #[test]
    fn b_requires_positive_f() {
        let f = NonlinearityFunction::new(DeformationKind::su2(1.0).unwrap(), 32);
        assert!(matches!(
            build_operators(&f, 16, true),
            Err(OracleError::ZeroF { level: 3 })
        ));
        assert!(build_operators(&f, 16, false).is_ok());
    }

    #[test]
    fn group_algebra() {
        for kind in [
            DeformationKind::gilmore_perelomov(1.0).unwrap(),
            DeformationKind::gilmore_perelomov(0.5).unwrap(),
            DeformationKind::su2(1.5).unwrap(),
            DeformationKind::su2(2.0).unwrap(),
        ] {
            for (k, v) in group_residuals(&kind, 40).unwrap() {
                assert!(v < 1e-12, "{kind} {k}: {v}");
            }
        }
    }

    #[test]
    fn su2_algebra_holds_on_full_block() {
        let kind = DeformationKind::su2(2.0).unwrap();
        let (km, kp, k0) = group_generators(&kind, 4).unwrap();
        let r = km.commutator(&kp).plus(&k0.scaled(c(2.0, 0.0)));
        assert!(r.block_max_abs(5) < 1e-12);
    }

    #[test]
    fn bch_holds() {
        assert_eq!(verify_bch_factorization(C0, &rational(), 2, 120).unwrap(), 0.0);
        let d = verify_bch_factorization(c(1.0, 0.0), &NonlinearityFunction::identity(200), 0, 120)
            .unwrap();
        assert!(d < 1e-12, "{d}");
        let d = verify_bch_factorization(c(1.5, 0.0), &rational(), 2, 160).unwrap();
        assert!(d < 1e-10, "{d}");
    }

    #[test]
    fn group_oracle_trivial_cases() {
        let v = build_group_oracle(Family::Gp, C0, half(1.0), 3, 32).unwrap();
        for (m, z) in v.amplitudes.iter().enumerate() {
            assert_eq!(*z, if m == 3 { C1 } else { C0 });
        }
        let v = build_group_oracle(Family::Gp, c(0.3, 0.0), half(0.5), 0, 128).unwrap();
        assert!((v.norm_before_normalization - 1.0).abs() < 1e-12);
        let v = build_group_oracle(Family::Su2, c(0.4, 0.0), half(1.0), 0, 16).unwrap();
        assert!(v.amplitudes[3].norm() < 1e-14);
        assert!(v.amplitudes[2].norm() > 0.1);
        assert!((v.norm_before_normalization - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_escalates_truncation() {
        let spec = StateSpec::dns(0, c(6.0, 0.0)).with_truncation(states::Truncation {
            start: 16,
            ..Default::default()
        });
        let v = build_oracle_state(&spec).unwrap();
        assert!(v.truncation >= 64);
        assert!((v.norm_before_normalization - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oracle_reports_truncation_failure() {
        let err = oracle_state_at(&StateSpec::dns(0, c(2.0, 0.0)), 8).unwrap_err();
        assert!(matches!(err, OracleError::Truncation { .. }));
    }

    #[test]
    fn tanh_maps_invert() {
        for z in [c(0.3, 0.0), c(-0.2, 0.5), c(0.0, 0.0)] {
            let w = inverse_tanh_map(z).unwrap();
            assert!((tanh_map(w) - z).norm() < 1e-15);
        }
        assert!(inverse_tanh_map(c(1.0, 0.0)).is_err());
    }

    #[test]
    fn report_serializes() {
        let spec = StateSpec::dns(2, c(0.5, 0.3));
        let r = compare(&spec, 64).unwrap();
        assert!(r.max_amplitude_deviation < 1e-10);
        let j: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(j["family"], "dns");
        assert!(j["commutator_residuals"]["[a,a+]-I"].as_f64().unwrap() < 1e-12);
    }
}
