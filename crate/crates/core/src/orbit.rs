//! Haar sampling and group-orbit typicality of the output trace.
//!
//! A causal hypothesis `X → Y` with map `A` predicts that `τ_m(A C Aᵀ)` looks
//! like a typical member of `{τ_m(A g C gᵀ Aᵀ) : g ∈ G}` for a group `G` acting
//! on the cause. The orbit is explored by Monte Carlo with one derived seed per
//! draw, so results do not depend on how draws are scheduled over threads.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::random::gaussian_matrix;
use crate::scalar::Real;
use crate::seed::stream_rng;
use crate::trace_core::{spectrum, CovMatrix, StructureMatrix};

/// Minimum number of orbit draws for a typicality report.
pub const MIN_TRIALS: usize = 10;

/// Haar-distributed orthogonal `n × n` matrix.
///
/// QR of a standard Gaussian matrix, with the signs of `R`'s diagonal folded
/// into `Q` so the distribution does not depend on the QR sign convention.
pub fn haar_orthogonal<T: Real>(n: usize, rng: &mut impl Rng) -> Result<StructureMatrix<T>> {
    if n == 0 {
        return Err(Error::Dimension("Haar sampling needs n ≥ 1".into()));
    }
    let qr = gaussian_matrix::<T>(n, n, rng).qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..n {
        if r[(j, j)] < T::zero() {
            q.column_mut(j).neg_mut();
        }
    }
    StructureMatrix::new(q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    Orthogonal,
    Permutation,
    /// Cyclic shifts of the coordinates; only meaningful when coordinate order
    /// carries structure (time series, scan lines).
    CyclicShift,
    Trivial,
}

impl GroupKind {
    pub fn as_str(self) -> &'static str {
        match self {
            GroupKind::Orthogonal => "orthogonal",
            GroupKind::Permutation => "permutation",
            GroupKind::CyclicShift => "cyclic_shift",
            GroupKind::Trivial => "trivial",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransformationGroup {
    pub kind: GroupKind,
    pub dim: usize,
}

impl TransformationGroup {
    pub fn new(kind: GroupKind, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("group dimension must be ≥ 1".into()));
        }
        Ok(Self { kind, dim })
    }

    /// Draws a uniformly distributed group element as an `n × n` matrix.
    pub fn sample<T: Real>(&self, rng: &mut impl Rng) -> DMatrix<T> {
        let n = self.dim;
        match self.kind {
            GroupKind::Orthogonal => haar_orthogonal(n, rng).expect("dim ≥ 1").into_inner(),
            GroupKind::Permutation => {
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(rng);
                permutation_matrix(&perm)
            }
            GroupKind::CyclicShift => {
                let offset = rng.random_range(0..n);
                let perm: Vec<usize> = (0..n).map(|i| (i + offset) % n).collect();
                permutation_matrix(&perm)
            }
            GroupKind::Trivial => DMatrix::identity(n, n),
        }
    }
}

fn permutation_matrix<T: Real>(perm: &[usize]) -> DMatrix<T> {
    let n = perm.len();
    let mut p = DMatrix::zeros(n, n);
    for (i, &j) in perm.iter().enumerate() {
        p[(i, j)] = T::one();
    }
    p
}

/// `τ_m(A g C gᵀ Aᵀ)` given `AᵀA`, computed as `Σ (AᵀA g) ∘ (g C) / m`.
fn orbit_trace<T: Real>(ata: &DMatrix<T>, g: &DMatrix<T>, c: &DMatrix<T>, m: usize) -> T {
    (ata * g).component_mul(&(g * c)).sum() / T::of(m as f64)
}

/// Normalized deviations `|τ_m(A U C Uᵀ Aᵀ) − τ_n(C) τ_m(AAᵀ)| / (‖C‖ ‖AAᵀ‖)`
/// over `trials` Haar draws of `U`. Draw `t` uses seed stream `t` of `seed`.
pub fn concentration_deviations<T: Real>(
    c: &CovMatrix<T>,
    a: &StructureMatrix<T>,
    trials: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = c.dim();
    if a.cols() != n {
        return Err(Error::Dimension(format!(
            "structure matrix has {} columns, covariance is {n}×{n}",
            a.cols()
        )));
    }
    if trials == 0 {
        return Err(Error::Config("trials must be ≥ 1".into()));
    }
    let m = a.rows();
    let gram = a.gram();
    let gram_norm = spectrum(&gram)?.values().last().copied().unwrap_or(T::zero());
    let scale = (c.operator_norm() * gram_norm).as_f64();
    let product = (c.normalized_trace() * gram.trace() / T::of(m as f64)).as_f64();
    let ata = a.matrix().tr_mul(a.matrix());
    Ok((0..trials)
        .into_par_iter()
        .map(|t| {
            let u = haar_orthogonal::<T>(n, &mut stream_rng(seed, t as u64))
                .expect("n ≥ 1")
                .into_inner();
            let dev = (orbit_trace(&ata, &u, c.matrix(), m).as_f64() - product).abs();
            if scale > 0.0 {
                dev / scale
            } else {
                0.0
            }
        })
        .collect())
}

/// Fraction of Haar draws `U` with
/// `|τ_m(A U C Uᵀ Aᵀ) − τ_n(C) τ_m(AAᵀ)| ≤ 2ε ‖C‖ ‖AAᵀ‖` (operator norms).
pub fn concentration_probe<T: Real>(
    c: &CovMatrix<T>,
    a: &StructureMatrix<T>,
    epsilon: f64,
    trials: usize,
    seed: u64,
) -> Result<f64> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::Config("epsilon must be positive and finite".into()));
    }
    let devs = concentration_deviations(c, a, trials, seed)?;
    Ok(fraction_within(&devs, epsilon))
}

/// Fraction of normalized deviations within the `2ε` bound.
pub fn fraction_within(deviations: &[f64], epsilon: f64) -> f64 {
    let bound = 2.0 * epsilon;
    deviations.iter().filter(|&&d| d <= bound).count() as f64 / deviations.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypicalityReport {
    pub group: GroupKind,
    /// `τ_m(A C Aᵀ)` of the observed pair.
    pub observed_k: f64,
    pub orbit_samples: Vec<f64>,
    /// Share of orbit samples `≤ observed_k`.
    pub lower_quantile: f64,
    /// `2 · min(q, 1 − q)`; small values mean the observation is atypical.
    pub two_sided_score: f64,
    pub trials: usize,
}

/// Monte-Carlo typicality of `τ_m(A C Aᵀ)` within the orbit of `C` under
/// `group`. The trivial group reports `lower_quantile = 0.5` by convention.
pub fn orbit_typicality<T: Real>(
    c: &CovMatrix<T>,
    a: &StructureMatrix<T>,
    group: &TransformationGroup,
    trials: usize,
    seed: u64,
) -> Result<TypicalityReport> {
    if trials < MIN_TRIALS {
        return Err(Error::Config(format!(
            "orbit typicality needs at least {MIN_TRIALS} trials, got {trials}"
        )));
    }
    let n = c.dim();
    if group.dim != n || a.cols() != n {
        return Err(Error::Dimension(format!(
            "group acts on {} dimensions, covariance is {n}×{n}, map has {} columns",
            group.dim,
            a.cols()
        )));
    }
    let m = a.rows();
    let ata = a.matrix().tr_mul(a.matrix());
    let identity = DMatrix::identity(n, n);
    let observed_k = orbit_trace(&ata, &identity, c.matrix(), m).as_f64();

    if group.kind == GroupKind::Trivial {
        return Ok(TypicalityReport {
            group: group.kind,
            observed_k,
            orbit_samples: vec![observed_k; trials],
            lower_quantile: 0.5,
            two_sided_score: 1.0,
            trials,
        });
    }

    let orbit_samples: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let g = group.sample::<T>(&mut stream_rng(seed, t as u64));
            orbit_trace(&ata, &g, c.matrix(), m).as_f64()
        })
        .collect();
    let below = orbit_samples.iter().filter(|&&k| k <= observed_k).count();
    let lower_quantile = below as f64 / trials as f64;
    let two_sided_score = (2.0 * lower_quantile.min(1.0 - lower_quantile)).clamp(0.0, 1.0);
    Ok(TypicalityReport {
        group: group.kind,
        observed_k,
        orbit_samples,
        lower_quantile,
        two_sided_score,
        trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from_seed;
    use crate::trace_core::normalized_trace;
    use proptest::prelude::*;

    fn max_abs(m: &DMatrix<f64>) -> f64 {
        m.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    fn random_pair(n: usize, m: usize, seed: u64) -> (CovMatrix<f64>, StructureMatrix<f64>) {
        let mut rng = rng_from_seed(seed);
        let b = gaussian_matrix::<f64>(n, n, &mut rng);
        let a = gaussian_matrix::<f64>(m, n, &mut rng);
        (CovMatrix::from_factor(&b).unwrap(), StructureMatrix::new(a).unwrap())
    }

    #[test]
    fn haar_is_orthogonal() {
        let mut rng = rng_from_seed(1);
        for n in [1, 2, 5, 30] {
            let u = haar_orthogonal::<f64>(n, &mut rng).unwrap().into_inner();
            assert!(max_abs(&(&u * u.transpose() - DMatrix::identity(n, n))) < 1e-10);
            assert!((u.determinant().abs() - 1.0).abs() < 1e-8);
        }
        assert!(matches!(haar_orthogonal::<f64>(0, &mut rng), Err(Error::Dimension(_))));
    }

    #[test]
    fn haar_entry_has_zero_mean() {
        let draws = 10_000;
        let mut rng = rng_from_seed(99);
        let mean = (0..draws)
            .map(|_| haar_orthogonal::<f64>(5, &mut rng).unwrap().matrix()[(0, 0)])
            .sum::<f64>()
            / draws as f64;
        assert!(mean.abs() < 3.0 / (5.0 * draws as f64).sqrt(), "mean {mean}");
    }

    #[test]
    fn haar_produces_both_orientations() {
        let mut rng = rng_from_seed(7);
        let dets: Vec<f64> = (0..200)
            .map(|_| haar_orthogonal::<f64>(3, &mut rng).unwrap().into_inner().determinant())
            .collect();
        let positive = dets.iter().filter(|&&d| d > 0.0).count();
        assert!(positive > 60 && positive < 140, "positive determinants {positive}");
    }

    #[test]
    fn probe_trivial_cases() {
        let (c, _) = random_pair(8, 8, 3);
        let u = haar_orthogonal::<f64>(8, &mut rng_from_seed(4)).unwrap();
        assert_eq!(concentration_probe(&c, &u, 0.01, 50, 0).unwrap(), 1.0);
        let (_, a) = random_pair(8, 5, 5);
        let identity = CovMatrix::identity(8).unwrap();
        assert_eq!(concentration_probe(&identity, &a, 1e-6, 50, 0).unwrap(), 1.0);
        assert!(concentration_probe(&identity, &a, 0.0, 50, 0).is_err());
    }

    #[test]
    fn probe_concentrates_at_n_100() {
        let (c, a) = random_pair(100, 100, 17);
        let fraction = concentration_probe(&c, &a, 0.05, 1000, 2024).unwrap();
        assert!(fraction >= 0.95, "fraction {fraction}");
    }

    #[test]
    fn probe_is_monotone_in_epsilon() {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_fn(6, |i, _| if i < 3 { 1.0 } else { 1e-3 }));
        let c = CovMatrix::new(d.clone()).unwrap();
        let a = StructureMatrix::new(d.map(f64::sqrt)).unwrap();
        let devs = concentration_deviations(&c, &a, 400, 8).unwrap();
        let mut last = 0.0;
        for eps in [1e-4, 1e-3, 0.01, 0.02, 0.05, 0.1] {
            let f = fraction_within(&devs, eps);
            assert!(f >= last);
            last = f;
        }
        assert!(fraction_within(&devs, 1e-3) < 1.0);
    }

    #[test]
    fn permutation_and_shift_elements_are_permutation_matrices() {
        let mut rng = rng_from_seed(12);
        for kind in [GroupKind::Permutation, GroupKind::CyclicShift] {
            let g = TransformationGroup::new(kind, 7).unwrap();
            for _ in 0..20 {
                let p: DMatrix<f64> = g.sample(&mut rng);
                assert!(p.iter().all(|&v| v == 0.0 || v == 1.0));
                assert!(p.row_iter().all(|r| r.sum() == 1.0));
                assert!(p.column_iter().all(|c| c.sum() == 1.0));
            }
        }
        let shift = TransformationGroup::new(GroupKind::CyclicShift, 5).unwrap();
        let p: DMatrix<f64> = shift.sample(&mut rng);
        let offset = (0..5).find(|&j| p[(0, j)] == 1.0).unwrap();
        for i in 0..5 {
            assert_eq!(p[(i, (i + offset) % 5)], 1.0);
        }
    }

    #[test]
    fn trivial_group_convention() {
        let (c, a) = random_pair(4, 4, 1);
        let g = TransformationGroup::new(GroupKind::Trivial, 4).unwrap();
        let r = orbit_typicality(&c, &a, &g, 10, 0).unwrap();
        assert_eq!(r.lower_quantile, 0.5);
        assert_eq!(r.two_sided_score, 1.0);
        let tau = normalized_trace(&(a.matrix() * c.matrix() * a.matrix().transpose())).unwrap();
        assert!((r.observed_k - tau).abs() < 1e-10 * tau);
    }

    #[test]
    fn typicality_validates_inputs() {
        let (c, a) = random_pair(4, 4, 1);
        let g = TransformationGroup::new(GroupKind::Orthogonal, 4).unwrap();
        assert!(matches!(orbit_typicality(&c, &a, &g, 5, 0), Err(Error::Config(_))));
        let wrong = TransformationGroup::new(GroupKind::Orthogonal, 3).unwrap();
        assert!(matches!(orbit_typicality(&c, &a, &wrong, 20, 0), Err(Error::Dimension(_))));
    }

    #[test]
    fn typicality_is_reproducible() {
        let (c, a) = random_pair(6, 4, 2);
        for kind in [GroupKind::Orthogonal, GroupKind::Permutation, GroupKind::CyclicShift] {
            let g = TransformationGroup::new(kind, 6).unwrap();
            let r1 = orbit_typicality(&c, &a, &g, 64, 5).unwrap();
            let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
            let r2 = pool.install(|| orbit_typicality(&c, &a, &g, 64, 5).unwrap());
            assert_eq!(r1, r2);
            assert_eq!(r1.trials, 64);
            let below = r1.orbit_samples.iter().filter(|&&k| k <= r1.observed_k).count();
            assert_eq!(r1.lower_quantile, below as f64 / 64.0);
        }
    }

    fn deterministic_model(n: usize, seed: u64) -> (CovMatrix<f64>, StructureMatrix<f64>, CovMatrix<f64>) {
        let (cxx, a) = random_pair(n, n, seed);
        let cyy = cxx.transformed(&a).unwrap();
        (cxx, a, cyy)
    }

    #[test]
    fn forward_pairs_look_typical() {
        let g = TransformationGroup::new(GroupKind::Orthogonal, 50).unwrap();
        let mut scores: Vec<f64> = (0..20)
            .map(|rep| {
                let (cxx, a, _) = deterministic_model(50, 1000 + rep);
                orbit_typicality(&cxx, &a, &g, 500, rep).unwrap().two_sided_score
            })
            .collect();
        scores.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = 0.5 * (scores[9] + scores[10]);
        assert!(median > 0.1, "median score {median}");
        assert!(scores.iter().any(|&s| s < 1.0), "scores degenerate");
    }

    #[test]
    fn backward_pairs_look_atypically_small() {
        let g = TransformationGroup::new(GroupKind::Orthogonal, 50).unwrap();
        let hits = (0..20)
            .filter(|&rep| {
                let (_, a, cyy) = deterministic_model(50, 2000 + rep);
                let inv = a.inverse().unwrap();
                orbit_typicality(&cyy, &inv, &g, 500, rep).unwrap().lower_quantile < 0.05
            })
            .count();
        assert!(hits >= 19, "only {hits}/20 backward pairs flagged");
    }

    fn ks_distance(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
        while i < a.len() && j < b.len() {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
        }
        d
    }

    #[test]
    fn haar_orbit_is_invariant_under_fixed_rotation() {
        let (c, a) = random_pair(5, 4, 31);
        let v = haar_orthogonal::<f64>(5, &mut rng_from_seed(32)).unwrap().into_inner();
        let ata = a.matrix().tr_mul(a.matrix());
        let draws = 10_000;
        let mut plain = Vec::with_capacity(draws);
        let mut left = Vec::with_capacity(draws);
        let mut right = Vec::with_capacity(draws);
        for t in 0..draws as u64 {
            let u = haar_orthogonal::<f64>(5, &mut stream_rng(33, t)).unwrap().into_inner();
            let w = haar_orthogonal::<f64>(5, &mut stream_rng(34, t)).unwrap().into_inner();
            plain.push(orbit_trace(&ata, &u, c.matrix(), 4));
            left.push(orbit_trace(&ata, &(&v * &w), c.matrix(), 4));
            right.push(orbit_trace(&ata, &(&w * &v), c.matrix(), 4));
        }
        assert!(ks_distance(plain.clone(), left) < 0.05);
        assert!(ks_distance(plain, right) < 0.05);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn fraction_is_monotone(seed in any::<u64>(), n in 2usize..8) {
            let (c, a) = random_pair(n, n, seed);
            let devs = concentration_deviations(&c, &a, 100, seed).unwrap();
            let mut last = 0.0;
            for eps in [1e-4, 1e-3, 1e-2, 0.05, 0.2] {
                let f = fraction_within(&devs, eps);
                prop_assert!(f >= last);
                last = f;
            }
        }
    }
}
