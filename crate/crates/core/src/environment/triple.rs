use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{row_sum_norm, Mat};

/// One layer's transition blocks: `p` moves up a layer, `q` moves down a
/// layer and `r` stays in the layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TripleDoc", into = "TripleDoc")]
pub struct TransitionTriple {
    pub p: Mat,
    pub q: Mat,
    pub r: Mat,
}

/// Row-major wire form of a triple.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TripleDoc {
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
}

fn matrix_from_rows(rows: &[Vec<f64>], name: &str) -> Result<Mat> {
    let d = rows.len();
    if d == 0 {
        return Err(Error::InvalidLaw(format!("matrix `{name}` is empty")));
    }
    if let Some(bad) = rows.iter().position(|r| r.len() != d) {
        return Err(Error::InvalidLaw(format!(
            "matrix `{name}` is not square (row {bad} has {} entries, expected {d})",
            rows[bad].len()
        )));
    }
    Ok(Mat::from_fn(d, d, |i, j| rows[i][j]))
}

fn rows_of(m: &Mat) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl TryFrom<TripleDoc> for TransitionTriple {
    type Error = Error;

    fn try_from(doc: TripleDoc) -> Result<Self> {
        let p = matrix_from_rows(&doc.p, "p")?;
        let q = matrix_from_rows(&doc.q, "q")?;
        let r = matrix_from_rows(&doc.r, "r")?;
        TransitionTriple::new(p, q, r)
    }
}

impl From<TransitionTriple> for TripleDoc {
    fn from(t: TransitionTriple) -> Self {
        TripleDoc {
            p: rows_of(&t.p),
            q: rows_of(&t.q),
            r: rows_of(&t.r),
        }
    }
}

impl TransitionTriple {
    /// Builds a triple after checking that the three blocks are square and of
    /// one size. Probabilistic conditions are checked by [`validate_triple`].
    pub fn new(p: Mat, q: Mat, r: Mat) -> Result<Self> {
        let d = p.nrows();
        let square = |m: &Mat| m.nrows() == d && m.ncols() == d;
        if d == 0 || !square(&p) || !square(&q) || !square(&r) {
            return Err(Error::InvalidLaw(
                "p, q and r must be square matrices of the same nonzero size".into(),
            ));
        }
        Ok(Self { p, q, r })
    }

    /// Scalar (`d = 1`) triple.
    pub fn scalar(p: f64, q: f64, r: f64) -> Self {
        let one = |x| Mat::from_element(1, 1, x);
        Self {
            p: one(p),
            q: one(q),
            r: one(r),
        }
    }

    pub fn from_rows(p: &[Vec<f64>], q: &[Vec<f64>], r: &[Vec<f64>]) -> Result<Self> {
        TripleDoc {
            p: p.to_vec(),
            q: q.to_vec(),
            r: r.to_vec(),
        }
        .try_into()
    }

    pub fn dim(&self) -> usize {
        self.p.nrows()
    }
}

/// A single failed condition on a triple.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "kebab-case")]
pub enum Violation {
    EntryRange {
        matrix: char,
        row: usize,
        col: usize,
        value: f64,
    },
    Stochasticity {
        row: usize,
        sum: f64,
    },
    /// `||R + P|| < 1` fails.
    RightLaziness {
        norm: f64,
    },
    /// `||R + Q|| < 1` fails.
    LeftLaziness {
        norm: f64,
    },
    /// A column of `Q` sums to zero.
    DownColumn {
        col: usize,
    },
    /// A column of `P` sums to zero.
    UpColumn {
        col: usize,
    },
}

impl Violation {
    pub fn name(&self) -> &'static str {
        match self {
            Violation::EntryRange { .. } => "entry-range",
            Violation::Stochasticity { .. } => "stochasticity",
            Violation::RightLaziness { .. } => "c2-right",
            Violation::LeftLaziness { .. } => "c2-left",
            Violation::DownColumn { .. } => "c3-q-column",
            Violation::UpColumn { .. } => "c3-p-column",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn names(&self) -> Vec<&'static str> {
        self.violations.iter().map(Violation::name).collect()
    }
}

/// Lists every violated condition of `t`: entries in `[0, 1]`, rows of
/// `P + Q + R` summing to one within `tol`, the strict norm bounds
/// `||R + P|| < 1` and `||R + Q|| < 1`, and positive column sums of `P` and `Q`.
pub fn validate_triple(t: &TransitionTriple, tol: f64) -> ValidationReport {
    let d = t.dim();
    let mut violations = Vec::new();

    for (name, m) in [('p', &t.p), ('q', &t.q), ('r', &t.r)] {
        for i in 0..d {
            for j in 0..d {
                let v = m[(i, j)];
                if !(0.0..=1.0).contains(&v) {
                    violations.push(Violation::EntryRange {
                        matrix: name,
                        row: i,
                        col: j,
                        value: v,
                    });
                }
            }
        }
    }

    let total = &t.p + &t.q + &t.r;
    for (row, r) in total.row_iter().enumerate() {
        let sum: f64 = r.iter().sum();
        if (sum - 1.0).abs() > tol {
            violations.push(Violation::Stochasticity { row, sum });
        }
    }

    let right = row_sum_norm(&(&t.r + &t.p));
    if right >= 1.0 {
        violations.push(Violation::RightLaziness { norm: right });
    }
    let left = row_sum_norm(&(&t.r + &t.q));
    if left >= 1.0 {
        violations.push(Violation::LeftLaziness { norm: left });
    }

    for col in 0..d {
        if t.q.column(col).sum() <= 0.0 {
            violations.push(Violation::DownColumn { col });
        }
    }
    for col in 0..d {
        if t.p.column(col).sum() <= 0.0 {
            violations.push(Violation::UpColumn { col });
        }
    }

    ValidationReport { violations }
}
