//! Command-line state parameters and their translation into a `StateSpec`.

use clap::{Args, ValueEnum};
use ndns_core::deformation::{DeformationKind, HalfInteger};
use ndns_core::observables::GridAxis;
use ndns_core::oracle::tanh_map;
use ndns_core::states::{ConstructionMode, Family, StateSpec, Truncation};
use num_complex::Complex64;

use crate::CliError;

pub const MAX_TRUNCATION_ENV: &str = "NDNS_MAX_TRUNCATION";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    ClosedForm,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Args, Debug, Clone)]
pub struct TruncationArgs {
    /// Largest Fock level allowed; `NDNS_MAX_TRUNCATION` caps it further.
    #[arg(long)]
    pub max_n: Option<usize>,
    /// Largest probability mass allowed beyond the truncation.
    #[arg(long, default_value_t = 1e-12)]
    pub tail_tol: f64,
}

impl TruncationArgs {
    pub fn resolve(&self) -> Result<Truncation, CliError> {
        let mut max_n = self.max_n.unwrap_or(Truncation::default().max_n);
        if let Ok(v) = std::env::var(MAX_TRUNCATION_ENV) {
            let cap: usize = v.trim().parse().map_err(|_| {
                CliError::Validation(format!("{MAX_TRUNCATION_ENV} must be a nonnegative integer, got '{v}'"))
            })?;
            max_n = max_n.min(cap);
        }
        if max_n == 0 {
            return Err(CliError::Validation("truncation cap must be positive".into()));
        }
        if !(self.tail_tol > 0.0 && self.tail_tol < 1.0) {
            return Err(CliError::Validation("--tail-tol must lie in (0, 1)".into()));
        }
        Ok(Truncation {
            max_n,
            tail_tolerance: self.tail_tol,
            ..Truncation::with_max(max_n)
        })
    }
}

#[derive(Args, Debug, Clone)]
pub struct StateArgs {
    /// dns, manual-ndns, ndns-prime, ndns-double-prime, gp or su2.
    #[arg(long)]
    pub family: String,
    /// Reference Fock level.
    #[arg(long, default_value_t = 0)]
    pub n: usize,
    /// Displacement for the algebraic families: `re[,im]`, or `a:b:step` for sweeps.
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<String>,
    /// SU(1,1) parameter inside the unit disk.
    #[arg(long, allow_hyphen_values = true)]
    pub zeta: Option<String>,
    /// SU(2) parameter.
    #[arg(long, allow_hyphen_values = true)]
    pub gamma: Option<String>,
    /// SU(1,1) displacement, mapped to zeta by `(xi/|xi|) tanh|xi|`.
    #[arg(long, allow_hyphen_values = true)]
    pub xi: Option<String>,
    /// SU(2) displacement, mapped to gamma by `(eta/|eta|) tanh|eta|`.
    #[arg(long, allow_hyphen_values = true)]
    pub eta: Option<String>,
    /// Bargmann index for gp.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Ladder index for su2.
    #[arg(long)]
    pub s: Option<f64>,
    /// Nonlinearity: identity, rational:k=<k>, custom:<path>.
    #[arg(long = "f")]
    pub deformation: Option<String>,
    #[arg(long, value_enum, default_value = "closed-form")]
    pub mode: Mode,
    #[command(flatten)]
    pub truncation: TruncationArgs,
}

/// Which flag carried the displacement and whether it passes through the
/// tanh map.
#[derive(Debug, Clone)]
pub struct Displacement {
    pub flag: &'static str,
    pub raw: String,
    pub tanh: bool,
}

impl Displacement {
    fn map(&self, z: Complex64) -> Complex64 {
        if self.tanh {
            tanh_map(z)
        } else {
            z
        }
    }

    /// A single complex value `re[,im]`.
    pub fn point(&self) -> Result<Complex64, CliError> {
        Ok(self.map(parse_complex(self.flag, &self.raw)?))
    }

    /// Real sweep values from `a:b:step` or a single number.
    pub fn sweep(&self) -> Result<Vec<f64>, CliError> {
        let values = if self.raw.contains(':') {
            GridAxis::parse(&self.raw)
                .map_err(|e| CliError::Validation(format!("--{}: {e}", self.flag)))?
                .coords()
        } else {
            vec![parse_real(self.flag, &self.raw)?]
        };
        if values.iter().any(|v| *v < 0.0) {
            return Err(CliError::Validation(format!(
                "--{} sweep values must be nonnegative",
                self.flag
            )));
        }
        Ok(values.into_iter().map(|v| self.map(Complex64::new(v, 0.0)).re).collect())
    }
}

fn parse_real(flag: &str, s: &str) -> Result<f64, CliError> {
    s.trim()
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| CliError::Validation(format!("--{flag}: cannot parse '{s}' as a number")))
}

pub fn parse_complex(flag: &str, s: &str) -> Result<Complex64, CliError> {
    match s.split_once(',') {
        Some((re, im)) => Ok(Complex64::new(parse_real(flag, re)?, parse_real(flag, im)?)),
        None => Ok(Complex64::new(parse_real(flag, s)?, 0.0)),
    }
}

fn half_integer(name: &'static str, v: f64) -> Result<HalfInteger, CliError> {
    HalfInteger::from_f64(name, v).map_err(|e| CliError::Validation(e.to_string()))
}

impl StateArgs {
    pub fn family(&self) -> Result<Family, CliError> {
        self.family
            .parse()
            .map_err(|e: ndns_core::StateError| CliError::Validation(e.to_string()))
    }

    fn reject(&self, family: Family, flags: &[(&str, bool)]) -> Result<(), CliError> {
        for (name, present) in flags {
            if *present {
                return Err(CliError::Validation(format!("--{name} does not apply to {family}")));
            }
        }
        Ok(())
    }

    /// The spec with a zero displacement, plus where the displacement lives.
    pub fn template(&self) -> Result<(StateSpec, Displacement), CliError> {
        let family = self.family()?;
        let truncation = self.truncation.resolve()?;
        let pick = |flag: &'static str, v: &Option<String>, tanh: bool| {
            v.as_ref().map(|raw| Displacement {
                flag,
                raw: raw.clone(),
                tanh,
            })
        };
        let one_of = |a: Option<Displacement>, b: Option<Displacement>, names: &str| match (a, b) {
            (Some(_), Some(_)) => Err(CliError::Validation(format!("give only one of {names}"))),
            (Some(d), None) | (None, Some(d)) => Ok(d),
            (None, None) => Err(CliError::Validation(format!("{family} requires {names}"))),
        };
        let zero = Complex64::new(0.0, 0.0);
        let (spec, disp) = match family {
            Family::Gp => {
                self.reject(
                    family,
                    &[
                        ("alpha", self.alpha.is_some()),
                        ("gamma", self.gamma.is_some()),
                        ("eta", self.eta.is_some()),
                        ("s", self.s.is_some()),
                        ("f", self.deformation.is_some()),
                    ],
                )?;
                let lambda = self
                    .lambda
                    .ok_or_else(|| CliError::Validation("gp requires --lambda".into()))?;
                let d = one_of(
                    pick("zeta", &self.zeta, false),
                    pick("xi", &self.xi, true),
                    "--zeta or --xi",
                )?;
                (StateSpec::gp(self.n, zero, half_integer("lambda", lambda)?), d)
            }
            Family::Su2 => {
                self.reject(
                    family,
                    &[
                        ("alpha", self.alpha.is_some()),
                        ("zeta", self.zeta.is_some()),
                        ("xi", self.xi.is_some()),
                        ("lambda", self.lambda.is_some()),
                        ("f", self.deformation.is_some()),
                    ],
                )?;
                let s = self
                    .s
                    .ok_or_else(|| CliError::Validation("su2 requires --s".into()))?;
                let d = one_of(
                    pick("gamma", &self.gamma, false),
                    pick("eta", &self.eta, true),
                    "--gamma or --eta",
                )?;
                (StateSpec::su2(self.n, zero, half_integer("s", s)?), d)
            }
            _ => {
                self.reject(
                    family,
                    &[
                        ("zeta", self.zeta.is_some()),
                        ("gamma", self.gamma.is_some()),
                        ("xi", self.xi.is_some()),
                        ("eta", self.eta.is_some()),
                        ("lambda", self.lambda.is_some()),
                        ("s", self.s.is_some()),
                    ],
                )?;
                let d = pick("alpha", &self.alpha, false)
                    .ok_or_else(|| CliError::Validation(format!("{family} requires --alpha")))?;
                let kind = match &self.deformation {
                    Some(f) => f
                        .parse::<DeformationKind>()
                        .map_err(|e| CliError::Validation(e.to_string()))?,
                    None if family == Family::Dns => DeformationKind::Identity,
                    None => {
                        return Err(CliError::Validation(format!("{family} requires --f")));
                    }
                };
                (StateSpec::algebraic(family, self.n, zero, kind), d)
            }
        };
        let mode = match self.mode {
            Mode::ClosedForm => ConstructionMode::ClosedForm,
            Mode::Oracle => ConstructionMode::Oracle,
        };
        let spec = spec.with_mode(mode).with_truncation(truncation);
        spec.validate()
            .map_err(|e| CliError::Validation(e.to_string()))?;
        Ok((spec, disp))
    }

    /// The fully specified single state.
    pub fn spec(&self) -> Result<StateSpec, CliError> {
        let (spec, disp) = self.template()?;
        let spec = spec.with_displacement(disp.point()?);
        spec.validate()
            .map_err(|e| CliError::Validation(e.to_string()))?;
        Ok(spec)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn disp(raw: &str, tanh: bool) -> Displacement {
        Displacement {
            flag: "alpha",
            raw: raw.into(),
            tanh,
        }
    }

    #[test]
    fn complex_values() {
        assert_eq!(parse_complex("alpha", "1.5").unwrap(), Complex64::new(1.5, 0.0));
        assert_eq!(parse_complex("alpha", "-1,0.5").unwrap(), Complex64::new(-1.0, 0.5));
        assert!(parse_complex("alpha", "1,x").is_err());
        assert!(parse_complex("alpha", "inf").is_err());
    }

    #[test]
    fn sweeps() {
        assert_eq!(disp("0:1:0.5", false).sweep().unwrap(), vec![0.0, 0.5, 1.0]);
        assert_eq!(disp("0.7", false).sweep().unwrap(), vec![0.7]);
        assert!(disp("-1:1:0.5", false).sweep().is_err());
        let mapped = disp("0:1:1", true).sweep().unwrap();
        assert_eq!(mapped[0], 0.0);
        assert!((mapped[1] - 1f64.tanh()).abs() < 1e-15);
    }
}
