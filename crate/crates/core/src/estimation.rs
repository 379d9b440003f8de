//! Second moments of paired samples and the regression maps built from them.

use std::path::Path;

use nalgebra::{DMatrix, DVector, SVD};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Position, Result};
use crate::scalar::Real;
use crate::trace_core::{CovMatrix, StructureMatrix};

/// Blocks with a condition number above this are treated as singular.
pub const DEFAULT_CONDITION_CAP: f64 = 1e12;

/// `N` paired observations `(x ∈ ℝⁿ, y ∈ ℝᵐ)`, stored as two row-major sample
/// matrices of shape `N × n` and `N × m`.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedDataset<T: Real> {
    x: DMatrix<T>,
    y: DMatrix<T>,
}

impl<T: Real> PairedDataset<T> {
    pub fn new(x: DMatrix<T>, y: DMatrix<T>) -> Result<Self> {
        if x.nrows() != y.nrows() {
            return Err(Error::Dimension(format!(
                "x has {} samples but y has {}",
                x.nrows(),
                y.nrows()
            )));
        }
        if x.nrows() == 0 {
            return Err(Error::InsufficientSamples { required: 1, got: 0 });
        }
        if x.ncols() == 0 || y.ncols() == 0 {
            return Err(Error::Dimension("x and y need at least one column each".into()));
        }
        if x.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Validation("dataset has non-finite entries".into()));
        }
        Ok(Self { x, y })
    }

    /// Splits each record into its first `nx` entries (x) and the rest (y).
    pub fn from_rows(rows: &[Vec<T>], nx: usize) -> Result<Self> {
        let width = rows.first().map(Vec::len).unwrap_or(0);
        if nx == 0 || nx >= width {
            return Err(Error::Config(format!(
                "nx must satisfy 0 < nx < columns (nx = {nx}, columns = {width})"
            )));
        }
        if let Some(i) = rows.iter().position(|r| r.len() != width) {
            return Err(Error::Dimension(format!(
                "record {i} has {} entries, expected {width}",
                rows[i].len()
            )));
        }
        let x = DMatrix::from_fn(rows.len(), nx, |i, j| rows[i][j]);
        let y = DMatrix::from_fn(rows.len(), width - nx, |i, j| rows[i][nx + j]);
        Self::new(x, y)
    }

    pub fn x(&self) -> &DMatrix<T> {
        &self.x
    }

    pub fn y(&self) -> &DMatrix<T> {
        &self.y
    }

    /// Dimension of x.
    pub fn n(&self) -> usize {
        self.x.ncols()
    }

    /// Dimension of y.
    pub fn m(&self) -> usize {
        self.y.ncols()
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Exchanges the roles of x and y.
    pub fn swapped(&self) -> Self {
        Self {
            x: self.y.clone(),
            y: self.x.clone(),
        }
    }
}

/// Reads paired samples from CSV: one sample per row, the first `nx` columns
/// are x and the remaining ones y. A first row that does not parse as numbers
/// is treated as a header.
pub fn load_paired_csv(path: &Path, nx: usize) -> Result<PairedDataset<f64>> {
    let file = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (index, record) in reader.records().enumerate() {
        let record = record?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(index + 1);
        let parse_err = |message: String| Error::Parse {
            file: file.clone(),
            position: Position::Line(line),
            message,
        };
        let parsed: std::result::Result<Vec<f64>, usize> = record
            .iter()
            .enumerate()
            .map(|(j, f)| f.parse::<f64>().map_err(|_| j))
            .collect();
        let values = match parsed {
            Ok(v) => v,
            Err(_) if index == 0 => continue,
            Err(j) => return Err(parse_err(format!("non-numeric cell {:?} in column {}", &record[j], j + 1))),
        };
        if let Some(first) = rows.first() {
            if values.len() != first.len() {
                return Err(parse_err(format!("row has {} columns, expected {}", values.len(), first.len())));
            }
        }
        rows.push(values);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            file,
            position: Position::Line(1),
            message: "file contains no samples".into(),
        });
    }
    PairedDataset::from_rows(&rows, nx)
}

/// Normalization of the centered scatter matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum Divisor {
    /// Maximum-likelihood convention.
    #[default]
    #[serde(rename = "n")]
    N,
    /// Unbiased convention.
    #[serde(rename = "n-1")]
    NMinusOne,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleCount {
    Samples(usize),
    /// Population covariances, no sampling involved.
    Exact,
}

impl SampleCount {
    pub fn samples(self) -> Option<usize> {
        match self {
            SampleCount::Samples(n) => Some(n),
            SampleCount::Exact => None,
        }
    }
}

/// Second-moment blocks of a pair `(X, Y)`. `C_YX` is always `C_XYᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovPack<T: Real> {
    pub cxx: CovMatrix<T>,
    pub cyy: CovMatrix<T>,
    cxy: DMatrix<T>,
    pub sample_count: SampleCount,
}

impl<T: Real> CovPack<T> {
    pub fn new(
        cxx: CovMatrix<T>,
        cyy: CovMatrix<T>,
        cxy: DMatrix<T>,
        sample_count: SampleCount,
    ) -> Result<Self> {
        if cxy.nrows() != cxx.dim() || cxy.ncols() != cyy.dim() {
            return Err(Error::Dimension(format!(
                "C_XY is {}×{} but C_XX is {n}×{n} and C_YY is {m}×{m}",
                cxy.nrows(),
                cxy.ncols(),
                n = cxx.dim(),
                m = cyy.dim()
            )));
        }
        if cxy.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("C_XY has non-finite entries".into()));
        }
        Ok(Self {
            cxx,
            cyy,
            cxy,
            sample_count,
        })
    }

    pub fn n(&self) -> usize {
        self.cxx.dim()
    }

    pub fn m(&self) -> usize {
        self.cyy.dim()
    }

    /// `n × m` cross-covariance `E[(X − EX)(Y − EY)ᵀ]`.
    pub fn cxy(&self) -> &DMatrix<T> {
        &self.cxy
    }

    pub fn cyx(&self) -> DMatrix<T> {
        self.cxy.transpose()
    }

    pub fn swapped(&self) -> Self {
        Self {
            cxx: self.cyy.clone(),
            cyy: self.cxx.clone(),
            cxy: self.cyx(),
            sample_count: self.sample_count,
        }
    }

    /// Adds `ridge · τ(C) · I` to both auto-covariance blocks.
    pub fn with_ridge(&self, ridge: T) -> Result<Self> {
        Ok(Self {
            cxx: self.cxx.with_ridge(ridge)?,
            cyy: self.cyy.with_ridge(ridge)?,
            cxy: self.cxy.clone(),
            sample_count: self.sample_count,
        })
    }
}

/// Mean-centered covariance and cross-covariance blocks of `data`.
///
/// With `ridge > 0` each auto-covariance block `C` becomes
/// `C + ridge · τ(C) · I`.
pub fn second_moments<T: Real>(
    data: &PairedDataset<T>,
    divisor: Divisor,
    ridge: T,
) -> Result<CovPack<T>> {
    let count = data.len();
    let denom = match divisor {
        Divisor::N => count,
        Divisor::NMinusOne => {
            if count < 2 {
                return Err(Error::InsufficientSamples {
                    required: 2,
                    got: count,
                });
            }
            count - 1
        }
    };
    if ridge < T::zero() || !ridge.is_finite() {
        return Err(Error::Config("ridge must be a finite non-negative number".into()));
    }
    let xc = centered(data.x());
    let yc = centered(data.y());
    let scale = T::one() / T::of(denom as f64);
    let cxx = xc.tr_mul(&xc) * scale;
    let cyy = yc.tr_mul(&yc) * scale;
    let cxy = xc.tr_mul(&yc) * scale;
    let pack = CovPack::new(
        CovMatrix::new(cxx)?,
        CovMatrix::new(cyy)?,
        cxy,
        SampleCount::Samples(count),
    )?;
    if ridge > T::zero() {
        pack.with_ridge(ridge)
    } else {
        Ok(pack)
    }
}

fn centered<T: Real>(m: &DMatrix<T>) -> DMatrix<T> {
    let inv = T::one() / T::of(m.nrows() as f64);
    let means: DVector<T> = m.row_sum().transpose() * inv;
    let mut out = m.clone();
    for (j, mean) in means.iter().enumerate() {
        out.column_mut(j).add_scalar_mut(-*mean);
    }
    out
}

/// Forward map `Â = C_YX C_XX⁻¹` (m × n) and backward map `Ã = C_XY C_YY⁻¹`
/// (n × m), with the default condition-number cap.
pub fn regression_matrices<T: Real>(
    pack: &CovPack<T>,
) -> Result<(StructureMatrix<T>, StructureMatrix<T>)> {
    regression_matrices_with_cap(pack, DEFAULT_CONDITION_CAP)
}

pub fn regression_matrices_with_cap<T: Real>(
    pack: &CovPack<T>,
    condition_cap: f64,
) -> Result<(StructureMatrix<T>, StructureMatrix<T>)> {
    let a_hat = solve_right(&pack.cxx, pack.cxy(), "C_XX", condition_cap)?;
    let a_tilde = solve_right(&pack.cyy, &pack.cyx(), "C_YY", condition_cap)?;
    Ok((StructureMatrix::new(a_hat)?, StructureMatrix::new(a_tilde)?))
}

/// `Bᵀ C⁻¹` computed as `(C⁻¹ B)ᵀ` for symmetric `C`.
fn solve_right<T: Real>(
    c: &CovMatrix<T>,
    b: &DMatrix<T>,
    block: &'static str,
    cap: f64,
) -> Result<DMatrix<T>> {
    let condition = c.condition_number();
    if !(condition <= cap) {
        return Err(Error::SingularCovariance { block, condition });
    }
    let chol = c
        .matrix()
        .clone()
        .cholesky()
        .ok_or(Error::SingularCovariance { block, condition })?;
    Ok(chol.solve(b).transpose())
}

/// Thin SVD factors `A = U diag(s) Vᵀ`.
pub(crate) struct SvdFactors<T: Real> {
    pub u: DMatrix<T>,
    pub singular_values: DVector<T>,
    pub v_t: DMatrix<T>,
}

/// SVD whose reconstruction has been verified.
///
/// The Golub–Kahan iteration in nalgebra occasionally stalls on
/// rank-deficient input and returns factors that do not reproduce the matrix;
/// those cases fall back to one-sided Jacobi.
pub(crate) fn checked_svd<T: Real>(a: &DMatrix<T>) -> Result<SvdFactors<T>> {
    let (m, n) = a.shape();
    let scale = a.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    let tol = T::of(1e3 * T::EPSILON * m.max(n) as f64) * scale;
    let reconstructs = |f: &SvdFactors<T>| {
        let mut us = f.u.clone();
        for (j, &s) in f.singular_values.iter().enumerate() {
            us.column_mut(j).scale_mut(s);
        }
        (us * &f.v_t - a).iter().all(|v| v.abs() <= tol)
    };
    if let Some(svd) = SVD::try_new(a.clone(), true, true, T::default_epsilon(), 0) {
        if let (Some(u), Some(v_t)) = (svd.u, svd.v_t) {
            let f = SvdFactors {
                u,
                singular_values: svd.singular_values,
                v_t,
            };
            if reconstructs(&f) {
                return Ok(f);
            }
        }
    }
    let f = if m >= n {
        jacobi_svd(a.clone())
    } else {
        let t = jacobi_svd(a.transpose());
        SvdFactors {
            u: t.v_t.transpose(),
            singular_values: t.singular_values,
            v_t: t.u.transpose(),
        }
    };
    if reconstructs(&f) {
        Ok(f)
    } else {
        Err(Error::Domain("singular value decomposition did not converge".into()))
    }
}

/// One-sided Jacobi SVD for a tall matrix (`rows ≥ cols`). Columns with zero
/// singular value get a zero left vector.
fn jacobi_svd<T: Real>(mut w: DMatrix<T>) -> SvdFactors<T> {
    let n = w.ncols();
    let mut v = DMatrix::<T>::identity(n, n);
    let eps = T::of(T::EPSILON);
    for _ in 0..80 {
        let mut rotated = false;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = w.column(p).norm_squared();
                let beta = w.column(q).norm_squared();
                let gamma = w.column(p).dot(&w.column(q));
                if gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (gamma * T::of(2.0));
                let t = zeta.signum() / (zeta.abs() + (T::one() + zeta * zeta).sqrt());
                let c = (T::one() + t * t).sqrt().recip();
                let s = c * t;
                for mat in [&mut w, &mut v] {
                    for i in 0..mat.nrows() {
                        let (xp, xq) = (mat[(i, p)], mat[(i, q)]);
                        mat[(i, p)] = c * xp - s * xq;
                        mat[(i, q)] = s * xp + c * xq;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let singular_values = DVector::from_fn(n, |j, _| w.column(j).norm());
    for j in 0..n {
        let s = singular_values[j];
        if s > T::zero() {
            w.column_mut(j).unscale_mut(s);
        }
    }
    SvdFactors {
        u: w,
        singular_values,
        v_t: v.transpose(),
    }
}

/// Moore–Penrose pseudo-inverse by singular value thresholding.
///
/// Singular values `≤ rtol · σ_max` are dropped. The default `rtol` is
/// `max(m, n) · ε`.
pub fn pseudo_inverse<T: Real>(a: &StructureMatrix<T>, rtol: Option<T>) -> Result<StructureMatrix<T>> {
    let (m, n) = (a.rows(), a.cols());
    let rtol = rtol.unwrap_or_else(|| T::of(m.max(n) as f64 * T::EPSILON));
    if rtol < T::zero() {
        return Err(Error::Config("pseudo-inverse rtol must be non-negative".into()));
    }
    let svd = checked_svd(a.matrix())?;
    let sigma_max = svd
        .singular_values
        .iter()
        .fold(T::zero(), |acc, &s| acc.max(s));
    let cutoff = rtol * sigma_max;
    let (u, v_t) = (&svd.u, &svd.v_t);
    let mut out = DMatrix::zeros(n, m);
    for (k, &s) in svd.singular_values.iter().enumerate() {
        if s > cutoff {
            out += v_t.row(k).transpose() * u.column(k).transpose() * s.recip();
        }
    }
    StructureMatrix::new(out)
}
