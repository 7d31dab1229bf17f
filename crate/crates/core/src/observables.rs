//! Photon statistics and Wigner quasi-probability on Fock vectors.

use std::f64::consts::FRAC_2_PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::oracle::{self, OracleError, SparseMatrix};
use crate::states::{self, FockVector, StateError, StateSpec};

/// Largest accepted deviation of an input state's norm from 1.
pub const NORM_TOLERANCE: f64 = 1e-9;
/// Default decision tolerance for the Mandel classification.
pub const DEFAULT_EPS_Q: f64 = 1e-9;
/// Largest probability allowed past the parity-sum cut.
pub const WIGNER_TAIL_TOLERANCE: f64 = 1e-12;
const WIGNER_MAX_DIM: usize = 8192;
/// Levels whose probability is below this are ignored when sizing the
/// working space.
const SUPPORT_THRESHOLD: f64 = 1e-20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ObservableError {
    #[error("state norm {norm} deviates from 1 by more than {NORM_TOLERANCE:e}")]
    Unnormalized { norm: f64 },
    #[error("Wigner point ({re}, {im}): displaced tail {tail:.3e} not negligible at N = {n_max}")]
    WignerTruncation { re: f64, im: f64, n_max: usize, tail: f64 },
    #[error("Wigner point ({re}, {im}): {source}")]
    WignerOracle { re: f64, im: f64, source: OracleError },
    #[error("invalid grid: {0}")]
    Grid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Classification {
    SubPoissonian,
    Poissonian,
    SuperPoissonian,
}

impl Classification {
    pub fn as_str(self) -> &'static str {
        match self {
            Classification::SubPoissonian => "sub-poissonian",
            Classification::Poissonian => "poissonian",
            Classification::SuperPoissonian => "super-poissonian",
        }
    }

    pub fn of(q: f64, eps_q: f64) -> Self {
        if q < -eps_q {
            Classification::SubPoissonian
        } else if q > eps_q {
            Classification::SuperPoissonian
        } else {
            Classification::Poissonian
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MandelResult {
    pub mean_n: f64,
    pub mean_n_squared: f64,
    /// `Var(n)/<n> - 1` from a two-pass variance.
    pub q: f64,
    /// `(<a+^2 a^2> - <n>^2)/<n>` with `<a+^2 a^2> = sum m(m-1) p_m`.
    pub q_normal_ordered: f64,
    pub classification: Classification,
}

fn check_norm(state: &FockVector) -> Result<(), ObservableError> {
    let norm = state.norm();
    if (norm - 1.0).abs() > NORM_TOLERANCE {
        Err(ObservableError::Unnormalized { norm })
    } else {
        Ok(())
    }
}

/// Mandel parameter `Q = (<n^2> - <n>^2)/<n> - 1`. The vacuum, where `<n> = 0`,
/// is classified as Poissonian with `Q = 0`.
pub fn mandel_q(state: &FockVector, eps_q: f64) -> Result<MandelResult, ObservableError> {
    check_norm(state)?;
    let p = state.probabilities();
    let mean: f64 = p.iter().enumerate().map(|(m, pm)| m as f64 * pm).sum();
    let var: f64 = p
        .iter()
        .enumerate()
        .map(|(m, pm)| (m as f64 - mean).powi(2) * pm)
        .sum();
    let mean_sq: f64 = p.iter().enumerate().map(|(m, pm)| (m as f64).powi(2) * pm).sum();
    let factorial2: f64 = p
        .iter()
        .enumerate()
        .map(|(m, pm)| m as f64 * (m as f64 - 1.0) * pm)
        .sum();
    let (q, q_no) = if mean > 0.0 {
        (var / mean - 1.0, (factorial2 - mean * mean) / mean)
    } else {
        (0.0, 0.0)
    };
    Ok(MandelResult {
        mean_n: mean,
        mean_n_squared: mean_sq,
        q,
        q_normal_ordered: q_no,
        classification: Classification::of(q, eps_q),
    })
}

/// Working dimension for a parity sum at displacement `beta` on a state whose
/// probability is confined to levels below `support`.
fn wigner_dim(support: usize, beta: Complex64) -> usize {
    let r = (support as f64).sqrt() + beta.norm();
    (r * r + 8.0 * r + 10.0).ceil() as usize
}

fn effective_support(state: &FockVector) -> usize {
    state
        .amplitudes
        .iter()
        .rposition(|z| z.norm_sqr() > SUPPORT_THRESHOLD)
        .map_or(1, |i| i + 1)
}

/// `(2/pi) sum_k (-1)^k |<k| D(-beta) |psi>|^2` at a fixed working dimension.
/// Returns the value and the probability found in the top 10% of levels.
pub fn wigner_point_at(state: &FockVector, beta: Complex64, dim: usize) -> Result<(f64, f64), OracleError> {
    let up: Vec<f64> = (1..=dim).map(|m| (m as f64).sqrt()).collect();
    let down: Vec<f64> = (0..dim).map(|m| (m as f64).sqrt()).collect();
    // D(-beta) = exp(-beta a+ + beta^* a)
    let x = SparseMatrix::ladder(dim, -beta, &up, beta.conj(), &down);
    let take = dim.min(state.amplitudes.len());
    let w = oracle::expm_multiply(&x, &state.amplitudes[..take])?;
    let parity: f64 = w
        .iter()
        .enumerate()
        .map(|(k, z)| if k % 2 == 0 { z.norm_sqr() } else { -z.norm_sqr() })
        .sum();
    Ok((FRAC_2_PI * parity, oracle::top_mass(&w)))
}

/// Wigner function of a pure state at `beta`, growing the working dimension
/// until the displaced tail is below `1e-12`.
pub fn wigner_point(state: &FockVector, beta: Complex64) -> Result<f64, ObservableError> {
    check_norm(state)?;
    let support = effective_support(state);
    let mut dim = wigner_dim(support, beta).max(support + 1);
    loop {
        let (w, tail) = wigner_point_at(state, beta, dim).map_err(|source| {
            ObservableError::WignerOracle {
                re: beta.re,
                im: beta.im,
                source,
            }
        })?;
        if tail < WIGNER_TAIL_TOLERANCE {
            return Ok(w);
        }
        if dim >= WIGNER_MAX_DIM {
            return Err(ObservableError::WignerTruncation {
                re: beta.re,
                im: beta.im,
                n_max: dim - 1,
                tail,
            });
        }
        dim = (dim * 3 / 2).min(WIGNER_MAX_DIM);
    }
}

/// One grid axis: nodes at `min + i * step`, `i = 0..count`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridAxis {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl GridAxis {
    pub fn new(min: f64, max: f64, step: f64) -> Result<Self, ObservableError> {
        if !(min.is_finite() && max.is_finite() && step.is_finite()) {
            return Err(ObservableError::Grid("bounds must be finite".into()));
        }
        if step <= 0.0 || max < min {
            return Err(ObservableError::Grid(format!(
                "need min <= max and step > 0, got {min}:{max}:{step}"
            )));
        }
        Ok(Self { min, max, step })
    }

    /// Parses `min:max:step`.
    pub fn parse(s: &str) -> Result<Self, ObservableError> {
        let parts: Vec<&str> = s.split(':').collect();
        let bad = || ObservableError::Grid(format!("expected min:max:step, got '{s}'"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let v: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        Self::new(v[0], v[1], v[2])
    }

    pub fn count(&self) -> usize {
        ((self.max - self.min) / self.step).round() as usize + 1
    }

    pub fn coord(&self, i: usize) -> f64 {
        self.min + i as f64 * self.step
    }

    pub fn coords(&self) -> Vec<f64> {
        (0..self.count()).map(|i| self.coord(i)).collect()
    }
}

/// Wigner values over a rectangle of the complex plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpaceGrid {
    pub re_range: GridAxis,
    pub im_range: GridAxis,
    /// `values[i][j]` at `re_range.coord(i) + i im_range.coord(j)`.
    pub values: Vec<Vec<f64>>,
    pub integral_estimate: f64,
    pub min_value: f64,
    /// `[re, im]` of the smallest value.
    pub min_location: [f64; 2],
    pub max_abs_value: f64,
    /// `(integral |W| - integral W) / 2`.
    pub negativity_volume: f64,
}

/// Evaluates the Wigner function on every node and summarizes it with the
/// midpoint rule. Nodes are evaluated in parallel on the current rayon pool;
/// the reduction runs in fixed order.
pub fn wigner_grid(
    state: &FockVector,
    re_range: GridAxis,
    im_range: GridAxis,
) -> Result<PhaseSpaceGrid, ObservableError> {
    check_norm(state)?;
    let (nr, ni) = (re_range.count(), im_range.count());
    let flat: Vec<f64> = (0..nr * ni)
        .into_par_iter()
        .map(|idx| {
            let beta = Complex64::new(re_range.coord(idx / ni), im_range.coord(idx % ni));
            wigner_point(state, beta)
        })
        .collect::<Result<_, _>>()?;
    let cell = re_range.step * im_range.step;
    let mut sum = 0.0;
    let mut abs_sum = 0.0;
    let mut min_value = f64::INFINITY;
    let mut min_location = [0.0; 2];
    let mut max_abs = 0.0f64;
    for (idx, w) in flat.iter().enumerate() {
        sum += w;
        abs_sum += w.abs();
        max_abs = max_abs.max(w.abs());
        if *w < min_value {
            min_value = *w;
            min_location = [re_range.coord(idx / ni), im_range.coord(idx % ni)];
        }
    }
    let values = flat.chunks(ni).map(|row| row.to_vec()).collect();
    Ok(PhaseSpaceGrid {
        re_range,
        im_range,
        values,
        integral_estimate: sum * cell,
        min_value,
        min_location,
        max_abs_value: max_abs,
        negativity_volume: 0.5 * (abs_sum - sum) * cell,
    })
}

/// One point of a Mandel sweep; failures are kept inline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub alpha: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub result: Option<MandelResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub truncation_failure: bool,
}

/// Mandel parameter of `template` with its displacement replaced by each real
/// value in turn. Input order is preserved; failing points are recorded and
/// the sweep continues.
pub fn mandel_sweep(template: &StateSpec, values: &[f64], eps_q: f64) -> Vec<SweepPoint> {
    values
        .par_iter()
        .map(|&alpha| {
            let spec = template
                .clone()
                .with_displacement(Complex64::new(alpha, 0.0));
            match states::build(&spec) {
                Ok(v) => match mandel_q(&v, eps_q) {
                    Ok(r) => SweepPoint {
                        alpha,
                        result: Some(r),
                        error: None,
                        truncation_failure: false,
                    },
                    Err(e) => SweepPoint {
                        alpha,
                        result: None,
                        error: Some(e.to_string()),
                        truncation_failure: false,
                    },
                },
                Err(e) => SweepPoint {
                    alpha,
                    result: None,
                    error: Some(e.to_string()),
                    truncation_failure: is_truncation(&e),
                },
            }
        })
        .collect()
}

fn is_truncation(e: &StateError) -> bool {
    e.is_truncation()
}

/// Round-trippable decimal form: 17 significant digits.
pub fn format_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

/// Ordered key/value description of how an output was produced.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metadata {
    pub fields: Vec<(String, String)>,
}

impl Metadata {
    pub fn new() -> Self {
        let mut m = Self::default();
        m.push("tool", concat!("ndns ", env!("CARGO_PKG_VERSION")));
        m
    }

    pub fn push(&mut self, key: impl Into<String>, value: impl Into<String>) -> &mut Self {
        self.fields.push((key.into(), value.into()));
        self
    }

    fn csv_header(&self) -> String {
        let mut s = String::new();
        for (k, v) in &self.fields {
            let _ = writeln!(s, "# {k}={v}");
        }
        s
    }

    fn to_json(&self) -> Value {
        let mut map = Map::new();
        for (k, v) in &self.fields {
            map.insert(k.clone(), Value::String(v.clone()));
        }
        Value::Object(map)
    }
}

/// Sweep rows `alpha,q,mean_n,classification`; failed points carry `nan`
/// and the classification `error`.
pub fn sweep_to_csv(meta: &Metadata, points: &[SweepPoint]) -> String {
    let mut s = meta.csv_header();
    s.push_str("alpha,q,mean_n,classification\n");
    for p in points {
        match &p.result {
            Some(r) => {
                let _ = writeln!(
                    s,
                    "{},{},{},{}",
                    format_f64(p.alpha),
                    format_f64(r.q),
                    format_f64(r.mean_n),
                    r.classification.as_str()
                );
            }
            None => {
                let _ = writeln!(s, "{},nan,nan,error", format_f64(p.alpha));
            }
        }
    }
    s
}

pub fn sweep_to_json(meta: &Metadata, points: &[SweepPoint]) -> String {
    let rows: Vec<Value> = points
        .iter()
        .map(|p| match &p.result {
            Some(r) => json!({
                "alpha": p.alpha,
                "q": r.q,
                "q_normal_ordered": r.q_normal_ordered,
                "mean_n": r.mean_n,
                "mean_n_squared": r.mean_n_squared,
                "classification": r.classification,
            }),
            None => json!({ "alpha": p.alpha, "error": p.error }),
        })
        .collect();
    let doc = json!({ "metadata": meta.to_json(), "rows": rows });
    serde_json::to_string_pretty(&doc).expect("json values serialize") + "\n"
}

fn grid_summary(grid: &PhaseSpaceGrid) -> Vec<(&'static str, f64)> {
    vec![
        ("integral_estimate", grid.integral_estimate),
        ("min_value", grid.min_value),
        ("min_re", grid.min_location[0]),
        ("min_im", grid.min_location[1]),
        ("max_abs_value", grid.max_abs_value),
        ("negativity_volume", grid.negativity_volume),
    ]
}

/// Grid rows `re,im,w` after a header carrying the summary.
pub fn grid_to_csv(meta: &Metadata, grid: &PhaseSpaceGrid) -> String {
    let mut s = meta.csv_header();
    for (k, v) in grid_summary(grid) {
        let _ = writeln!(s, "# {k}={}", format_f64(v));
    }
    s.push_str("re,im,w\n");
    for (i, row) in grid.values.iter().enumerate() {
        let re = format_f64(grid.re_range.coord(i));
        for (j, w) in row.iter().enumerate() {
            let _ = writeln!(
                s,
                "{re},{},{}",
                format_f64(grid.im_range.coord(j)),
                format_f64(*w)
            );
        }
    }
    s
}

pub fn grid_to_json(meta: &Metadata, grid: &PhaseSpaceGrid) -> String {
    let mut summary = Map::new();
    for (k, v) in grid_summary(grid) {
        summary.insert(k.to_string(), json!(v));
    }
    let doc = json!({
        "metadata": meta.to_json(),
        "summary": summary,
        "re_range": grid.re_range,
        "im_range": grid.im_range,
        "values": grid.values,
    });
    serde_json::to_string_pretty(&doc).expect("json values serialize") + "\n"
}
