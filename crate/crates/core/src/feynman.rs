//! Dimensionless benchmark functions, box domains, sampled datasets and
//! their CSV form.
//!
//! CSV layout: a header `x1,...,xd,f`, then one sample per row, every value
//! written with 17 significant digits so that reading back reproduces the
//! exact `f64` bits. Lines end in LF.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numeric::{DenseMatrix, Rng};

/// Draws examined per rejection-rate window in [`generate_dataset`].
pub const REJECTION_WINDOW: usize = 10_000;

/// The benchmark functions, in their dimensionless forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FunctionId {
    /// exp(−θ²/2σ²) / √(2πσ²)
    I6_2,
    /// a / ((b−1)² + (c−d)² + (e−f)²)
    I9_18,
    /// a (1/b − 1)
    I13_12,
    /// arcsin(n sin θ₂)
    I26_2,
    /// √(1 + a² − 2a cos(θ₁ − θ₂))
    I29_16,
}

impl FunctionId {
    pub const ALL: [FunctionId; 5] = [
        FunctionId::I6_2,
        FunctionId::I9_18,
        FunctionId::I13_12,
        FunctionId::I26_2,
        FunctionId::I29_16,
    ];

    pub fn dim(self) -> usize {
        match self {
            FunctionId::I6_2 => 2,
            FunctionId::I9_18 => 6,
            FunctionId::I13_12 => 2,
            FunctionId::I26_2 => 2,
            FunctionId::I29_16 => 3,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FunctionId::I6_2 => "I_6_2",
            FunctionId::I9_18 => "I_9_18",
            FunctionId::I13_12 => "I_13_12",
            FunctionId::I26_2 => "I_26_2",
            FunctionId::I29_16 => "I_29_16",
        }
    }

    /// Default sampling box. I.13.12 uses [1,5]², I.26.2 uses n ∈ [0,1],
    /// θ₂ ∈ [1,2]; the others use [1,3] in every variable.
    pub fn default_domain(self) -> Domain {
        let bounds = match self {
            FunctionId::I13_12 => vec![(1.0, 5.0); 2],
            FunctionId::I26_2 => vec![(0.0, 1.0), (1.0, 2.0)],
            other => vec![(1.0, 3.0); other.dim()],
        };
        Domain::new(bounds).expect("default domains are valid")
    }

    /// Exact value at `x`, or the violated precondition.
    pub fn eval(self, x: &[f64]) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                context: "function arguments",
                expected: self.dim(),
                got: x.len(),
            });
        }
        let violation = |constraint| Error::DomainViolation {
            function: self.name(),
            constraint,
        };
        let v = match self {
            FunctionId::I6_2 => {
                let (theta, sigma) = (x[0], x[1]);
                if sigma == 0.0 {
                    return Err(violation("sigma must be nonzero"));
                }
                let s2 = sigma * sigma;
                (-(theta * theta) / (2.0 * s2)).exp() / (2.0 * PI * s2).sqrt()
            }
            FunctionId::I9_18 => {
                let denom = (x[1] - 1.0).powi(2) + (x[2] - x[3]).powi(2) + (x[4] - x[5]).powi(2);
                if !(denom > 0.0) {
                    return Err(violation("(b-1)^2 + (c-d)^2 + (e-f)^2 must be positive"));
                }
                x[0] / denom
            }
            FunctionId::I13_12 => {
                if x[1] == 0.0 {
                    return Err(violation("b must be nonzero"));
                }
                x[0] * (1.0 / x[1] - 1.0)
            }
            FunctionId::I26_2 => {
                let s = x[0] * x[1].sin();
                if !(s.abs() <= 1.0) {
                    return Err(violation("|n sin(theta2)| must not exceed 1"));
                }
                s.asin()
            }
            FunctionId::I29_16 => {
                let a = x[0];
                // (1-a)^2 + 2a(1-cos) >= 0; clamp rounding below zero
                (1.0 + a * a - 2.0 * a * (x[1] - x[2]).cos()).max(0.0).sqrt()
            }
        };
        Ok(v)
    }
}

pub fn eval_function(id: FunctionId, x: &[f64]) -> Result<f64> {
    id.eval(x)
}

impl fmt::Display for FunctionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FunctionId {
    type Err = Error;

    /// Accepts `I_13_12`, `I.13.12`, `i13_12` and similar spellings.
    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| !matches!(c, '_' | '.' | '-' | ' '))
            .collect::<String>()
            .to_ascii_uppercase();
        FunctionId::ALL
            .into_iter()
            .find(|id| id.name().replace('_', "") == norm)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown function `{s}`")))
    }
}

/// Axis-aligned box, one `(lo, hi)` pair per variable with `lo < hi`.
#[derive(Debug, Clone, PartialEq)]
pub struct Domain {
    bounds: Vec<(f64, f64)>,
}

impl Domain {
    pub fn new(bounds: Vec<(f64, f64)>) -> Result<Self> {
        if bounds.is_empty() {
            return Err(Error::Empty("domain with no variables"));
        }
        for (i, &(lo, hi)) in bounds.iter().enumerate() {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::InvalidArgument(format!(
                    "variable {} has invalid bounds [{lo}, {hi}]; need lo < hi",
                    i + 1
                )));
            }
        }
        Ok(Self { bounds })
    }

    /// The same interval for every one of `dim` variables.
    pub fn cube(lo: f64, hi: f64, dim: usize) -> Result<Self> {
        Self::new(vec![(lo, hi); dim])
    }

    pub fn dim(&self) -> usize {
        self.bounds.len()
    }

    pub fn bounds(&self) -> &[(f64, f64)] {
        &self.bounds
    }

    /// Closed-box membership.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.len() == self.bounds.len()
            && x.iter()
                .zip(&self.bounds)
                .all(|(&v, &(lo, hi))| lo <= v && v <= hi)
    }

    pub fn contains_domain(&self, other: &Domain) -> bool {
        self.dim() == other.dim()
            && self
                .bounds
                .iter()
                .zip(&other.bounds)
                .all(|(&(lo, hi), &(olo, ohi))| lo <= olo && ohi <= hi)
    }
}

/// Samples `(x_k, f(x_k))`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: DenseMatrix,
    pub y: Vec<f64>,
    pub domain: Option<Domain>,
    pub function: Option<FunctionId>,
    pub seed: Option<u64>,
}

impl Dataset {
    pub fn new(x: DenseMatrix, y: Vec<f64>) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::DimensionMismatch {
                context: "dataset targets",
                expected: x.rows(),
                got: y.len(),
            });
        }
        Ok(Self {
            x,
            y,
            domain: None,
            function: None,
            seed: None,
        })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.x.cols()
    }

    /// Rows at `indices`, in that order; metadata is kept.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(indices),
            y: indices.iter().map(|&i| self.y[i]).collect(),
            domain: self.domain.clone(),
            function: self.function,
            seed: self.seed,
        }
    }

    /// Rows lying inside `domain` (closed box), tagged with that domain.
    pub fn restrict_to(&self, domain: &Domain) -> Dataset {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| domain.contains(self.x.row(i)))
            .collect();
        let mut out = self.subset(&idx);
        out.domain = Some(domain.clone());
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        write_csv(self, path)
    }

    pub fn read_csv(path: impl AsRef<Path>) -> Result<Dataset> {
        read_csv(path)
    }
}

/// `n` i.i.d. uniform samples of `id` over `domain`, each labelled with its
/// exact value. Draws violating the function's preconditions are rejected
/// and redrawn.
pub fn generate_dataset(id: FunctionId, n: usize, domain: &Domain, rng: &mut Rng) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("sample count must be at least 1".into()));
    }
    if domain.dim() != id.dim() {
        return Err(Error::DimensionMismatch {
            context: "domain for function",
            expected: id.dim(),
            got: domain.dim(),
        });
    }
    let d = id.dim();
    let mut x = DenseMatrix::zeros(n, d);
    let mut y = Vec::with_capacity(n);
    let mut point = vec![0.0; d];
    let (mut window_draws, mut window_accepted, mut rejected) = (0usize, 0usize, 0usize);
    while y.len() < n {
        for (v, &(lo, hi)) in point.iter_mut().zip(domain.bounds()) {
            *v = rng.uniform(lo, hi)?;
        }
        window_draws += 1;
        match id.eval(&point) {
            Ok(f) if f.is_finite() => {
                x.row_mut(y.len()).copy_from_slice(&point);
                y.push(f);
                window_accepted += 1;
            }
            Ok(_) | Err(Error::DomainViolation { .. }) => rejected += 1,
            Err(e) => return Err(e),
        }
        if window_draws == REJECTION_WINDOW {
            if window_accepted * 100 < REJECTION_WINDOW {
                return Err(Error::IllPosedDomain {
                    accepted: window_accepted,
                    attempted: window_draws,
                });
            }
            window_draws = 0;
            window_accepted = 0;
        }
    }
    if rejected > 0 {
        log::debug!("{id}: redrew {rejected} samples violating the function's constraints");
    }
    Ok(Dataset {
        x,
        y,
        domain: Some(domain.clone()),
        function: Some(id),
        seed: None,
    })
}

/// 17 significant digits; parses back to the identical `f64`.
pub fn format_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)?;
    let d = ds.dim();
    let header: Vec<String> = (1..=d).map(|i| format!("x{i}")).chain(["f".into()]).collect();
    w.write_record(&header)?;
    let mut rec = Vec::with_capacity(d + 1);
    for (row, &f) in ds.x.iter_rows().zip(&ds.y) {
        rec.clear();
        rec.extend(row.iter().map(|&v| format_f64(v)));
        rec.push(format_f64(f));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<Dataset> {
    let mut r = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_path(path)?;
    let mut records = r.records();
    let header = match records.next() {
        Some(rec) => rec?,
        None => {
            return Err(Error::Parse {
                line: 1,
                message: "empty file; expected header `x1,...,xd,f`".into(),
            })
        }
    };
    let cols = header.len();
    let expected: Vec<String> = (1..cols).map(|i| format!("x{i}")).chain(["f".into()]).collect();
    if cols < 2 || header.iter().map(str::trim).ne(expected.iter().map(String::as_str)) {
        return Err(Error::Parse {
            line: 1,
            message: format!(
                "bad header `{}`; expected `x1,...,xd,f`",
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let d = cols - 1;
    let mut data = Vec::new();
    let mut y = Vec::new();
    for rec in records {
        let rec = rec?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() != cols {
            return Err(Error::Parse {
                line,
                message: format!("expected {cols} columns, found {}", rec.len()),
            });
        }
        for (j, field) in rec.iter().enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| Error::Parse {
                line,
                message: format!("column {} is not a number: `{field}`", j + 1),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    message: format!("column {} is not finite", j + 1),
                });
            }
            if j < d {
                data.push(v);
            } else {
                y.push(v);
            }
        }
    }
    if y.is_empty() {
        return Err(Error::Parse {
            line: 2,
            message: "no samples after the header".into(),
        });
    }
    let x = DenseMatrix::from_row_major(y.len(), d, data)?;
    Dataset::new(x, y)
}
