//! Trace functionals on covariance and structure matrices.
//!
//! Everything here is a pure function of its inputs. The central quantity is
//! [`delta`], the log-ratio between `τ_m(A C Aᵀ)` and `τ_n(C) τ_m(A Aᵀ)`, where
//! `τ_k` is the trace divided by the dimension. It vanishes when the traces are
//! multiplicative and is invariant under independent positive rescaling of
//! `C` and `A`.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Symmetric positive-semidefinite covariance matrix.
///
/// Construction symmetrizes the input as `(M + Mᵀ)/2` after checking that the
/// asymmetry is round-off sized, and rejects matrices with eigenvalues that are
/// negative beyond round-off. The eigenvalues are kept (ascending) because the
/// PSD check needs them anyway.
#[derive(Debug, Clone, PartialEq)]
pub struct CovMatrix<T: Real> {
    entries: DMatrix<T>,
    eigenvalues: Vec<T>,
}

impl<T: Real> CovMatrix<T> {
    pub fn new(entries: DMatrix<T>) -> Result<Self> {
        let entries = symmetrized(entries, "covariance matrix")?;
        let mut eigenvalues: Vec<T> = entries.symmetric_eigenvalues().iter().copied().collect();
        eigenvalues.sort_by(|a, b| a.partial_cmp(b).expect("finite eigenvalues"));
        let largest = eigenvalues
            .iter()
            .fold(T::zero(), |acc, v| acc.max(v.abs()));
        let floor = -T::of(T::SYMMETRY_RTOL) * largest;
        if let Some(&smallest) = eigenvalues.first() {
            if smallest < floor {
                return Err(Error::Validation(format!(
                    "covariance matrix is not positive semidefinite (eigenvalue {smallest:?}, largest {largest:?})"
                )));
            }
        }
        for v in eigenvalues.iter_mut() {
            *v = v.max(T::zero());
        }
        Ok(Self {
            entries,
            eigenvalues,
        })
    }

    pub fn from_diagonal(diagonal: &[T]) -> Result<Self> {
        if diagonal.is_empty() {
            return Err(Error::Dimension("covariance matrix must have dimension ≥ 1".into()));
        }
        Self::new(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diagonal)))
    }

    pub fn identity(dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("covariance matrix must have dimension ≥ 1".into()));
        }
        Self::new(DMatrix::identity(dim, dim))
    }

    /// `B Bᵀ` for an arbitrary factor `B`.
    pub fn from_factor(factor: &DMatrix<T>) -> Result<Self> {
        Self::new(factor * factor.transpose())
    }

    pub fn dim(&self) -> usize {
        self.entries.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.entries
    }

    pub fn into_inner(self) -> DMatrix<T> {
        self.entries
    }

    pub fn trace(&self) -> T {
        self.entries.trace()
    }

    pub fn normalized_trace(&self) -> T {
        self.trace() / T::of(self.dim() as f64)
    }

    /// Eigenvalues in ascending order, negative round-off clamped to zero.
    pub fn eigenvalues(&self) -> &[T] {
        &self.eigenvalues
    }

    /// Largest eigenvalue, i.e. the operator norm.
    pub fn operator_norm(&self) -> T {
        *self.eigenvalues.last().expect("dimension ≥ 1")
    }

    /// `λ_max / λ_min`; infinite for singular matrices.
    pub fn condition_number(&self) -> f64 {
        let lo = self.eigenvalues[0].as_f64();
        let hi = self.operator_norm().as_f64();
        if lo <= 0.0 {
            f64::INFINITY
        } else {
            hi / lo
        }
    }

    pub fn spectrum(&self) -> EigenvalueSpectrum<T> {
        EigenvalueSpectrum::from_eigenvalues(self.eigenvalues.iter().copied())
            .expect("eigenvalues validated at construction")
    }

    pub fn scaled(&self, factor: T) -> Result<Self> {
        if !(factor > T::zero()) {
            return Err(Error::Domain("covariance scale factor must be positive".into()));
        }
        Ok(Self {
            entries: &self.entries * factor,
            eigenvalues: self.eigenvalues.iter().map(|&v| v * factor).collect(),
        })
    }

    /// `C + ridge · τ(C) · I`.
    pub fn with_ridge(&self, ridge: T) -> Result<Self> {
        if ridge < T::zero() {
            return Err(Error::Config("ridge must be non-negative".into()));
        }
        let shift = ridge * self.normalized_trace();
        let n = self.dim();
        Ok(Self {
            entries: &self.entries + DMatrix::identity(n, n) * shift,
            eigenvalues: self.eigenvalues.iter().map(|&v| v + shift).collect(),
        })
    }

    /// The congruence `A C Aᵀ`.
    pub fn transformed(&self, a: &StructureMatrix<T>) -> Result<Self> {
        check_cols(a, self.dim())?;
        let am = a.matrix();
        Self::new(am * &self.entries * am.transpose())
    }
}

/// Arbitrary finite `m × n` linear map.
#[derive(Debug, Clone, PartialEq)]
pub struct StructureMatrix<T: Real> {
    entries: DMatrix<T>,
}

impl<T: Real> StructureMatrix<T> {
    pub fn new(entries: DMatrix<T>) -> Result<Self> {
        if entries.nrows() == 0 || entries.ncols() == 0 {
            return Err(Error::Dimension(format!(
                "structure matrix must be at least 1×1, got {}×{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("structure matrix has non-finite entries".into()));
        }
        Ok(Self { entries })
    }

    pub fn from_diagonal(diagonal: &[T]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&nalgebra::DVector::from_column_slice(diagonal)))
    }

    pub fn identity(dim: usize) -> Result<Self> {
        Self::new(DMatrix::identity(dim, dim))
    }

    pub fn rows(&self) -> usize {
        self.entries.nrows()
    }

    pub fn cols(&self) -> usize {
        self.entries.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<T> {
        &self.entries
    }

    pub fn into_inner(self) -> DMatrix<T> {
        self.entries
    }

    pub fn transpose(&self) -> Self {
        Self {
            entries: self.entries.transpose(),
        }
    }

    pub fn scaled(&self, factor: T) -> Self {
        Self {
            entries: &self.entries * factor,
        }
    }

    /// `A Aᵀ`.
    pub fn gram(&self) -> DMatrix<T> {
        &self.entries * self.entries.transpose()
    }

    /// Plain inverse of a square matrix.
    pub fn inverse(&self) -> Result<Self> {
        if self.rows() != self.cols() {
            return Err(Error::Dimension(format!(
                "cannot invert a {}×{} matrix",
                self.rows(),
                self.cols()
            )));
        }
        let inv = self
            .entries
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Domain("structure matrix is singular".into()))?;
        Self::new(inv)
    }
}

/// Empirical eigenvalue distribution of a PSD matrix, sorted ascending.
///
/// Values below `ZERO_EIGEN_RTOL × max` are stored as exact zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenvalueSpectrum<T: Real> {
    values: Vec<T>,
}

impl<T: Real> EigenvalueSpectrum<T> {
    pub fn from_eigenvalues(raw: impl IntoIterator<Item = T>) -> Result<Self> {
        let mut values: Vec<T> = raw.into_iter().collect();
        if values.is_empty() {
            return Err(Error::Dimension("spectrum of an empty matrix".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("non-finite eigenvalue".into()));
        }
        let largest = values.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
        if values
            .iter()
            .any(|&v| v < -T::of(T::SYMMETRY_RTOL) * largest)
        {
            return Err(Error::Validation("negative eigenvalue in PSD spectrum".into()));
        }
        let cutoff = T::of(T::ZERO_EIGEN_RTOL) * largest;
        for v in values.iter_mut() {
            if *v <= cutoff {
                *v = T::zero();
            }
        }
        values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
        Ok(Self { values })
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `E(Z^k)`; equals `τ(M^k)` of the source matrix.
    pub fn moment(&self, k: i32) -> T {
        let sum = self.values.iter().fold(T::zero(), |acc, v| acc + v.powi(k));
        sum / T::of(self.values.len() as f64)
    }

    pub fn mean(&self) -> T {
        self.moment(1)
    }

    pub fn zero_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_zero()).count()
    }
}

/// `tr(M) / dim(M)`.
pub fn normalized_trace<T: Real>(m: &DMatrix<T>) -> Result<T> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "normalized trace needs a square matrix, got {}×{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Err(Error::Dimension("normalized trace of an empty matrix".into()));
    }
    Ok(m.trace() / T::of(m.nrows() as f64))
}

/// `Δ(C, A) = log τ_m(A C Aᵀ) − log τ_n(C) − log τ_m(A Aᵀ)` (natural log).
///
/// Only traces are evaluated; `τ_m(A C Aᵀ)` is `Σ (A C) ∘ A / m`.
pub fn delta<T: Real>(c: &CovMatrix<T>, a: &StructureMatrix<T>) -> Result<T> {
    check_cols(a, c.dim())?;
    let m = T::of(a.rows() as f64);
    let am = a.matrix();
    let tau_c = c.normalized_trace();
    let tau_aat = am.norm_squared() / m;
    let tau_acat = (am * c.matrix()).component_mul(am).sum() / m;
    for (name, v) in [("τ(C)", tau_c), ("τ(A Aᵀ)", tau_aat), ("τ(A C Aᵀ)", tau_acat)] {
        if !(v > T::zero()) {
            return Err(Error::Domain(format!("{name} = {v:?} is not positive")));
        }
    }
    Ok(tau_acat.ln() - tau_c.ln() - tau_aat.ln())
}

/// Anisotropy `D(C) = ½ (n log τ_n(C) − log det C)`: the relative entropy from
/// `N(0, C)` to the closest isotropic Gaussian.
pub fn anisotropy<T: Real>(c: &CovMatrix<T>) -> Result<T> {
    let n = T::of(c.dim() as f64);
    let logdet = log_det(c.matrix(), "anisotropy needs a positive definite matrix")?;
    let d = (n * c.normalized_trace().ln() - logdet) * T::of(0.5);
    Ok(d.max(T::zero()))
}

/// `D(N(0,C) ‖ N(0,C₀)) = ½ (log(det C₀ / det C) + tr(C₀⁻¹ C) − n)`.
pub fn gaussian_relative_entropy<T: Real>(c: &CovMatrix<T>, c0: &CovMatrix<T>) -> Result<T> {
    if c.dim() != c0.dim() {
        return Err(Error::Dimension(format!(
            "relative entropy between {}- and {}-dimensional Gaussians",
            c.dim(),
            c0.dim()
        )));
    }
    let chol0 = c0
        .matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain("reference covariance C0 is singular".into()))?;
    let logdet0 = chol_log_det(&chol0);
    let logdet = log_det(c.matrix(), "covariance C is singular; relative entropy is infinite")?;
    let tr = chol0.solve(c.matrix()).trace();
    let n = T::of(c.dim() as f64);
    Ok((logdet0 - logdet + tr - n) * T::of(0.5))
}

/// Eigenvalue spectrum of a symmetric PSD matrix.
pub fn spectrum<T: Real>(m: &DMatrix<T>) -> Result<EigenvalueSpectrum<T>> {
    let sym = symmetrized(m.clone(), "spectrum input")?;
    EigenvalueSpectrum::from_eigenvalues(sym.symmetric_eigenvalues().iter().copied())
}

/// `Cov(Z, 1/Z) = 1 − E(Z) E(1/Z)`; never positive.
pub fn cov_z_inv_z<T: Real>(spec: &EigenvalueSpectrum<T>) -> Result<T> {
    if spec.zero_count() > 0 {
        return Err(Error::Domain(format!(
            "spectrum has {} zero eigenvalue(s); 1/Z undefined",
            spec.zero_count()
        )));
    }
    Ok(T::one() - spec.mean() * spec.moment(-1))
}

/// Same as [`cov_z_inv_z`] but with the Moore–Penrose reciprocal `1/0 := 0`.
///
/// This is the form that enters the deterministic identity for tall (`m > n`)
/// structure matrices, where `A Aᵀ` has `m − n` zero eigenvalues.
pub fn cov_z_inv_z_pseudo<T: Real>(spec: &EigenvalueSpectrum<T>) -> Result<T> {
    if spec.zero_count() == spec.len() {
        return Err(Error::Domain("spectrum is identically zero".into()));
    }
    let recip_sum = spec
        .values()
        .iter()
        .filter(|v| !v.is_zero())
        .fold(T::zero(), |acc, &v| acc + v.recip());
    let recip_mean = recip_sum / T::of(spec.len() as f64);
    Ok(T::one() - spec.mean() * recip_mean)
}

/// Value of `Δ(C, A) + Δ(A C Aᵀ, A⁺)` forced by the spectrum of `A Aᵀ` for a
/// deterministic model with full-column-rank `A` (`m ≥ n`), independent of `C`:
/// `−log(1 − Cov(Z, 1/Z)) + log(n/m)`.
pub fn deterministic_delta_sum<T: Real>(a: &StructureMatrix<T>) -> Result<T> {
    let spec = spectrum(&a.gram())?;
    let cov = cov_z_inv_z_pseudo(&spec)?;
    let ratio = T::of(a.cols() as f64) / T::of(a.rows() as f64);
    Ok(-(T::one() - cov).ln() + ratio.ln())
}

fn check_cols<T: Real>(a: &StructureMatrix<T>, n: usize) -> Result<()> {
    if a.cols() != n {
        return Err(Error::Dimension(format!(
            "structure matrix is {}×{} but the covariance is {n}×{n}",
            a.rows(),
            a.cols()
        )));
    }
    Ok(())
}

fn symmetrized<T: Real>(m: DMatrix<T>, what: &str) -> Result<DMatrix<T>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "{what} must be square, got {}×{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.nrows() == 0 {
        return Err(Error::Dimension(format!("{what} must have dimension ≥ 1")));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(format!("{what} has non-finite entries")));
    }
    let scale = m.iter().fold(T::zero(), |acc, v| acc.max(v.abs()));
    let tol = T::of(T::SYMMETRY_RTOL) * scale;
    let mt = m.transpose();
    let asym = m
        .iter()
        .zip(mt.iter())
        .fold(T::zero(), |acc, (a, b)| acc.max((*a - *b).abs()));
    if asym > tol {
        return Err(Error::Validation(format!(
            "{what} is not symmetric (max asymmetry {asym:?})"
        )));
    }
    Ok((m + mt) * T::of(0.5))
}

fn chol_log_det<T: Real>(chol: &nalgebra::Cholesky<T, nalgebra::Dyn>) -> T {
    chol.l_dirty()
        .diagonal()
        .iter()
        .fold(T::zero(), |acc, v| acc + v.ln())
        * T::of(2.0)
}

fn log_det<T: Real>(m: &DMatrix<T>, msg: &str) -> Result<T> {
    let chol = m
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Domain(msg.to_string()))?;
    let logdet = chol_log_det(&chol);
    if !logdet.is_finite() {
        return Err(Error::Domain(msg.to_string()));
    }
    Ok(logdet)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::gaussian_matrix;
    use crate::seed::rng_from_seed;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn diag(v: &[f64]) -> CovMatrix<f64> {
        CovMatrix::from_diagonal(v).unwrap()
    }

    fn random_instance(n: usize, m: usize, seed: u64) -> (CovMatrix<f64>, StructureMatrix<f64>) {
        let mut rng = rng_from_seed(seed);
        let b = gaussian_matrix::<f64>(n, n, &mut rng);
        let a = gaussian_matrix::<f64>(m, n, &mut rng);
        (
            CovMatrix::from_factor(&b).unwrap(),
            StructureMatrix::new(a).unwrap(),
        )
    }

    fn random_orthogonal(n: usize, seed: u64) -> StructureMatrix<f64> {
        crate::orbit::haar_orthogonal(n, &mut rng_from_seed(seed)).unwrap()
    }

    #[test]
    fn normalized_trace_examples() {
        assert_eq!(normalized_trace(&DMatrix::<f64>::identity(3, 3)).unwrap(), 1.0);
        assert_eq!(diag(&[1.0, 2.0, 3.0, 4.0]).normalized_trace(), 2.5);
        assert!(matches!(
            normalized_trace(&DMatrix::<f64>::zeros(2, 3)),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn normalized_trace_is_mean_eigenvalue() {
        let mut rng = rng_from_seed(11);
        let g = gaussian_matrix::<f64>(7, 7, &mut rng);
        let m = &g + g.transpose();
        let eig = m.clone().symmetric_eigen().eigenvalues;
        let mean = eig.iter().sum::<f64>() / 7.0;
        assert_relative_eq!(normalized_trace(&m).unwrap(), mean, max_relative = 1e-9);
    }

    #[test]
    fn delta_diagonal_example() {
        let c = diag(&[1.0, 2.0, 3.0, 4.0]);
        let a = StructureMatrix::from_diagonal(&[2.0, 1.0, 0.5, 1.5]).unwrap();
        let expected = 3.9375f64.ln() - (2.5f64 * 1.875).ln();
        let d = delta(&c, &a).unwrap();
        assert_relative_eq!(d, expected, epsilon = 1e-14);
        assert!((d - -0.17435).abs() < 1e-5);
    }

    #[test]
    fn delta_of_orthogonal_map_is_zero() {
        let (c, _) = random_instance(6, 6, 3);
        let u = random_orthogonal(6, 4);
        assert!(delta(&c, &u).unwrap().abs() < 1e-12);
    }

    #[test]
    fn delta_rejects_zero_map_and_bad_shapes() {
        let c = diag(&[1.0, 2.0]);
        let zero = StructureMatrix::new(DMatrix::zeros(3, 2)).unwrap();
        assert!(matches!(delta(&c, &zero), Err(Error::Domain(_))));
        let zc = CovMatrix::new(DMatrix::<f64>::zeros(2, 2)).unwrap();
        let a = StructureMatrix::identity(2).unwrap();
        assert!(matches!(delta(&zc, &a), Err(Error::Domain(_))));
        let wrong = StructureMatrix::new(DMatrix::identity(3, 3)).unwrap();
        assert!(matches!(delta(&c, &wrong), Err(Error::Dimension(_))));
    }

    #[test]
    fn anisotropy_examples() {
        assert!(anisotropy(&diag(&[3.5, 3.5, 3.5])).unwrap().abs() < 1e-12);
        let expected = 0.5 * (2.0 * 2.5f64.ln() - 4f64.ln());
        assert_relative_eq!(anisotropy(&diag(&[1.0, 4.0])).unwrap(), expected, epsilon = 1e-14);
        assert!((expected - 0.22314).abs() < 1e-5);
        assert!(matches!(anisotropy(&diag(&[1.0, 0.0])), Err(Error::Domain(_))));
    }

    #[test]
    fn anisotropy_is_orthogonally_invariant() {
        let (c, _) = random_instance(5, 5, 9);
        let u = random_orthogonal(5, 10);
        let rotated = c.transformed(&u).unwrap();
        assert_relative_eq!(
            anisotropy(&rotated).unwrap(),
            anisotropy(&c).unwrap(),
            max_relative = 1e-10
        );
    }

    #[test]
    fn relative_entropy_examples() {
        let c = diag(&[1.0, 4.0]);
        assert!(gaussian_relative_entropy(&c, &c).unwrap().abs() < 1e-14);
        let iso = diag(&[2.5, 2.5]);
        let d = gaussian_relative_entropy(&c, &iso).unwrap();
        assert_relative_eq!(d, anisotropy(&c).unwrap(), epsilon = 1e-14);
        let e = gaussian_relative_entropy(&diag(&[1.0, 1.0]), &diag(&[2.0, 2.0])).unwrap();
        assert_relative_eq!(e, 0.5 * (4f64.ln() + 1.0 - 2.0), epsilon = 1e-14);
        assert!((e - 0.19315).abs() < 1e-5);
    }

    #[test]
    fn relative_entropy_minimized_at_mean_eigenvalue() {
        // D(C) is the minimum over λ of D(P_C ‖ N(0, λI)); scan λ around τ(C).
        let (c, _) = random_instance(4, 4, 21);
        let tau = c.normalized_trace();
        let at = |l: f64| gaussian_relative_entropy(&c, &CovMatrix::new(DMatrix::identity(4, 4) * l).unwrap()).unwrap();
        let best = at(tau);
        assert_relative_eq!(best, anisotropy(&c).unwrap(), max_relative = 1e-10);
        for f in [0.5, 0.9, 0.99, 1.01, 1.1, 2.0] {
            assert!(at(tau * f) > best);
        }
    }

    #[test]
    fn relative_entropy_errors() {
        let c = diag(&[1.0, 4.0]);
        assert!(matches!(
            gaussian_relative_entropy(&c, &diag(&[1.0, 0.0])),
            Err(Error::Domain(_))
        ));
        assert!(matches!(
            gaussian_relative_entropy(&c, &diag(&[1.0, 1.0, 1.0])),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn spectrum_examples() {
        let s = spectrum(&DMatrix::<f64>::identity(4, 4)).unwrap();
        assert_eq!(s.values(), &[1.0; 4]);
        let s = diag(&[4.0, 1.0, 0.25, 2.25]).spectrum();
        assert_eq!(s.values(), &[0.25, 1.0, 2.25, 4.0]);
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]);
        assert!(matches!(spectrum(&asym), Err(Error::Validation(_))));
    }

    #[test]
    fn spectrum_of_gram_matches_squared_singular_values() {
        let mut rng = rng_from_seed(5);
        let a = gaussian_matrix::<f64>(6, 6, &mut rng);
        let s = spectrum(&(&a * a.transpose())).unwrap();
        let mut sv: Vec<f64> = crate::estimation::checked_svd(&a).unwrap().singular_values.iter().map(|v| v * v).collect();
        sv.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for (x, y) in s.values().iter().zip(&sv) {
            assert_relative_eq!(*x, *y, max_relative = 1e-8);
        }
        // moments agree with normalized traces of powers
        let m = &a * a.transpose();
        assert_relative_eq!(s.moment(2), normalized_trace(&(&m * &m)).unwrap(), max_relative = 1e-10);
    }

    #[test]
    fn spectrum_zeroes_round_off_eigenvalues() {
        let a = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 3.0]);
        let s = spectrum(&(&a * a.transpose())).unwrap();
        assert_eq!(s.zero_count(), 2);
        assert_relative_eq!(s.values()[2], 14.0, max_relative = 1e-12);
    }

    #[test]
    fn cov_z_inv_z_examples() {
        let constant = EigenvalueSpectrum::from_eigenvalues([2.0f64, 2.0, 2.0]).unwrap();
        assert!(cov_z_inv_z(&constant).unwrap().abs() < 1e-15);
        let two = EigenvalueSpectrum::from_eigenvalues([1.0, 2.0]).unwrap();
        assert_relative_eq!(cov_z_inv_z(&two).unwrap(), -0.125, epsilon = 1e-15);
        let four = EigenvalueSpectrum::from_eigenvalues([4.0, 1.0, 0.25, 2.25]).unwrap();
        let expected: f64 = 1.0 - 1.875 * ((0.25 + 1.0 + 4.0 + 1.0 / 2.25) / 4.0);
        assert_relative_eq!(cov_z_inv_z(&four).unwrap(), expected, epsilon = 1e-14);
        assert!((expected - -1.66927).abs() < 1e-5);
        let zero = EigenvalueSpectrum::from_eigenvalues([0.0, 1.0]).unwrap();
        assert!(matches!(cov_z_inv_z(&zero), Err(Error::Domain(_))));
    }

    #[test]
    fn diagonal_example_backward_identity() {
        // Δ(C,A) + Δ(ACAᵀ, A⁻¹) = −log(1 − Cov(Z,1/Z)) with Z the spectrum of AAᵀ.
        let c = diag(&[1.0, 2.0, 3.0, 4.0]);
        let a = StructureMatrix::from_diagonal(&[2.0, 1.0, 0.5, 1.5]).unwrap();
        let cyy = c.transformed(&a).unwrap();
        let back = delta(&cyy, &a.inverse().unwrap()).unwrap();
        assert_relative_eq!(back, -0.8074519518400038, epsilon = 1e-12);
        let fwd = delta(&c, &a).unwrap();
        let cov = cov_z_inv_z(&spectrum(&a.gram()).unwrap()).unwrap();
        assert_relative_eq!(fwd + back, -(1.0 - cov).ln(), epsilon = 1e-12);
        assert_relative_eq!(deterministic_delta_sum(&a).unwrap(), fwd + back, epsilon = 1e-12);
    }

    #[test]
    fn covariance_validation() {
        assert!(matches!(
            CovMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.5, 1.0])),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            CovMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0])),
            Err(Error::Validation(_))
        ));
        assert!(matches!(
            CovMatrix::<f64>::new(DMatrix::zeros(2, 3)),
            Err(Error::Dimension(_))
        ));
        // round-off asymmetry is accepted and removed
        let c = CovMatrix::new(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0 + 1e-14, 2.0])).unwrap();
        assert_eq!(c.matrix()[(0, 1)], c.matrix()[(1, 0)]);
        assert!(StructureMatrix::new(DMatrix::from_element(1, 1, f64::NAN)).is_err());
    }

    #[test]
    fn single_precision_instantiation() {
        let c = CovMatrix::<f32>::from_diagonal(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let a = StructureMatrix::<f32>::from_diagonal(&[2.0, 1.0, 0.5, 1.5]).unwrap();
        assert!((delta(&c, &a).unwrap() - -0.174_353_39).abs() < 1e-5);
        assert!((anisotropy(&CovMatrix::<f32>::from_diagonal(&[1.0, 4.0]).unwrap()).unwrap() - 0.223_143_55).abs() < 1e-5);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn delta_is_scale_invariant(seed in any::<u64>(), n in 1usize..12, m in 1usize..12,
                                    alpha in 1e-3f64..1e3, beta in 1e-3f64..1e3) {
            let (c, a) = random_instance(n, m, seed);
            let d = delta(&c, &a).unwrap();
            let ds = delta(&c.scaled(alpha).unwrap(), &a.scaled(beta)).unwrap();
            prop_assert!((d - ds).abs() < 1e-10);
        }

        #[test]
        fn orthogonal_maps_are_neutral(seed in any::<u64>(), n in 1usize..15) {
            let (c, _) = random_instance(n, n, seed);
            let u = random_orthogonal(n, seed ^ 1);
            prop_assert!(delta(&c, &u).unwrap().abs() < 1e-10);
        }

        #[test]
        fn anisotropy_decomposes(seed in any::<u64>(), n in 2usize..=20) {
            let (c, a) = random_instance(n, n, seed);
            let out = c.transformed(&a).unwrap();
            let gram = CovMatrix::new(a.gram()).unwrap();
            let lhs = anisotropy(&out).unwrap();
            let half_n = 0.5 * n as f64;
            let rhs = anisotropy(&c).unwrap() + anisotropy(&gram).unwrap() + half_n * delta(&c, &a).unwrap();
            // forming ACAᵀ costs about ε·cond(ACAᵀ) in each log-determinant
            let tol = 1e-10 + 1e-14 * out.condition_number();
            prop_assert!((lhs - rhs).abs() <= tol, "lhs {lhs} rhs {rhs}");
        }

        #[test]
        fn forward_backward_identity_square(seed in any::<u64>(), n in 2usize..=12) {
            let (c, a) = random_instance(n, n, seed);
            let inv = a.inverse().unwrap();
            let sum = delta(&c, &a).unwrap() + delta(&c.transformed(&a).unwrap(), &inv).unwrap();
            let cov = cov_z_inv_z(&spectrum(&a.gram()).unwrap()).unwrap();
            prop_assert!((sum + (1.0 - cov).ln()).abs() < 1e-8 * sum.abs().max(1.0));
        }

        #[test]
        fn cov_is_never_positive(values in proptest::collection::vec(1e-3f64..1e3, 1..30)) {
            let spec = EigenvalueSpectrum::from_eigenvalues(values.clone()).unwrap();
            let cov = cov_z_inv_z(&spec).unwrap();
            prop_assert!(cov <= 1e-12);
            let distinct = values.iter().any(|v| (v - values[0]).abs() > 1e-6 * values[0]);
            if distinct {
                prop_assert!(cov < 0.0);
            }
        }

        #[test]
        fn anisotropy_is_non_negative(seed in any::<u64>(), n in 1usize..12, iso in 1e-3f64..1e3) {
            let (c, _) = random_instance(n, n, seed);
            prop_assert!(anisotropy(&c).unwrap() >= 0.0);
            let scaled_identity = CovMatrix::new(DMatrix::identity(n, n) * iso).unwrap();
            prop_assert!(anisotropy(&scaled_identity).unwrap() < 1e-10);
        }
    }
}
