//! Decision rule: prefer the direction whose Δ is closer to zero.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{
    regression_matrices_with_cap, second_moments, CovPack, Divisor, PairedDataset,
    DEFAULT_CONDITION_CAP,
};
use crate::scalar::Real;
use crate::trace_core::{anisotropy, delta, CovMatrix, StructureMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Decision {
    XCausesY,
    YCausesX,
    Undecided,
}

impl Decision {
    /// The decision with the roles of X and Y exchanged.
    pub fn mirrored(self) -> Self {
        match self {
            Decision::XCausesY => Decision::YCausesX,
            Decision::YCausesX => Decision::XCausesY,
            Decision::Undecided => Decision::Undecided,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Decision::XCausesY => "x_causes_y",
            Decision::YCausesX => "y_causes_x",
            Decision::Undecided => "undecided",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    /// Width of the undecided band.
    pub epsilon: f64,
    pub divisor: Divisor,
    /// Relative ridge added to both auto-covariances.
    pub ridge: f64,
    pub condition_cap: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.1,
            divisor: Divisor::N,
            ridge: 0.0,
            condition_cap: DEFAULT_CONDITION_CAP,
        }
    }
}

impl InferenceConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() || self.epsilon < 0.0 {
            return Err(Error::Config(format!(
                "epsilon must be finite and non-negative, got {}",
                self.epsilon
            )));
        }
        if !self.ridge.is_finite() || self.ridge < 0.0 {
            return Err(Error::Config(format!(
                "ridge must be finite and non-negative, got {}",
                self.ridge
            )));
        }
        if !(self.condition_cap > 1.0) {
            return Err(Error::Config("condition cap must exceed 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalVerdict {
    pub decision: Decision,
    /// Δ(C_XX, Â) of the hypothesis X → Y.
    pub delta_xy: f64,
    /// Δ(C_YY, Ã) of the hypothesis Y → X.
    pub delta_yx: f64,
    pub epsilon: f64,
    pub n: usize,
    pub m: usize,
    /// `None` for exact covariances.
    pub sample_count: Option<usize>,
    pub diagnostics: BTreeMap<String, f64>,
}

/// Three-way rule on the two Δ values.
///
/// `|Δ_xy| > ε + |Δ_yx|` rejects X → Y, `|Δ_yx| > ε + |Δ_xy|` rejects Y → X,
/// anything else is undecided.
pub fn decide(delta_xy: f64, delta_yx: f64, epsilon: f64) -> Result<Decision> {
    if delta_xy.is_nan() || delta_yx.is_nan() || epsilon.is_nan() {
        return Err(Error::Validation("NaN passed to the decision rule".into()));
    }
    if !delta_xy.is_finite() || !delta_yx.is_finite() || !epsilon.is_finite() || epsilon < 0.0 {
        return Err(Error::Validation(
            "decision rule needs finite deltas and a finite epsilon ≥ 0".into(),
        ));
    }
    Ok(if delta_xy.abs() > epsilon + delta_yx.abs() {
        Decision::YCausesX
    } else if delta_yx.abs() > epsilon + delta_xy.abs() {
        Decision::XCausesY
    } else {
        Decision::Undecided
    })
}

/// Runs the rule on precomputed second moments. The ridge in `config` is
/// applied here only for exact packs; sample packs get it in
/// [`second_moments`].
pub fn infer_from_covpack<T: Real>(pack: &CovPack<T>, config: &InferenceConfig) -> Result<CausalVerdict> {
    config.validate()?;
    let (a_hat, a_tilde) = regression_matrices_with_cap(pack, config.condition_cap)?;
    let degenerate = |e: Error| match e {
        Error::Domain(msg) => Error::DegenerateModel(msg),
        other => other,
    };
    let delta_xy = delta(&pack.cxx, &a_hat).map_err(degenerate)?.as_f64();
    let delta_yx = delta(&pack.cyy, &a_tilde).map_err(degenerate)?.as_f64();
    let decision = decide(delta_xy, delta_yx, config.epsilon)?;

    let mut diagnostics = BTreeMap::new();
    diagnostics.insert("tau_cxx".into(), pack.cxx.normalized_trace().as_f64());
    diagnostics.insert("tau_cyy".into(), pack.cyy.normalized_trace().as_f64());
    diagnostics.insert("condition_cxx".into(), pack.cxx.condition_number());
    diagnostics.insert("condition_cyy".into(), pack.cyy.condition_number());
    if let Ok(d) = anisotropy(&pack.cxx) {
        diagnostics.insert("anisotropy_cxx".into(), d.as_f64());
    }
    if let Ok(d) = anisotropy(&pack.cyy) {
        diagnostics.insert("anisotropy_cyy".into(), d.as_f64());
    }
    if let Some(r) = decomposition_residual(&pack.cxx, &a_hat) {
        diagnostics.insert("anisotropy_residual_xy".into(), r);
    }
    if let Some(r) = decomposition_residual(&pack.cyy, &a_tilde) {
        diagnostics.insert("anisotropy_residual_yx".into(), r);
    }
    // JSON has no representation for infinities
    diagnostics.retain(|_, v: &mut f64| v.is_finite());

    Ok(CausalVerdict {
        decision,
        delta_xy,
        delta_yx,
        epsilon: config.epsilon,
        n: pack.n(),
        m: pack.m(),
        sample_count: pack.sample_count.samples(),
        diagnostics,
    })
}

/// `D(ACAᵀ) − D(C) − D(AAᵀ) − (n/2) Δ(C, A)` for square invertible maps; zero up to
/// round-off, so a large value flags a numerically broken fit.
fn decomposition_residual<T: Real>(c: &CovMatrix<T>, a: &StructureMatrix<T>) -> Option<f64> {
    if a.rows() != a.cols() {
        return None;
    }
    let out = c.transformed(a).ok()?;
    let gram = CovMatrix::new(a.gram()).ok()?;
    let half_n = T::of(0.5 * c.dim() as f64);
    let r = anisotropy(&out).ok()? - anisotropy(c).ok()? - anisotropy(&gram).ok()? - half_n * delta(c, a).ok()?;
    Some(r.as_f64())
}

/// Estimates the second moments of `data` and applies the decision rule.
///
/// Without a ridge both sample covariances must be invertible, which needs
/// `N > max(n, m)`.
pub fn infer_from_samples<T: Real>(data: &PairedDataset<T>, config: &InferenceConfig) -> Result<CausalVerdict> {
    config.validate()?;
    let required = if config.ridge > 0.0 {
        2
    } else {
        data.n().max(data.m()) + 1
    };
    if data.len() < required {
        return Err(Error::InsufficientSamples {
            required,
            got: data.len(),
        });
    }
    let pack = second_moments(data, config.divisor, T::of(config.ridge))?;
    infer_from_covpack(&pack, &InferenceConfig { ridge: 0.0, ..*config })
}

/// Applies the configured ridge to an exact pack, then decides.
pub fn infer_from_exact<T: Real>(pack: &CovPack<T>, config: &InferenceConfig) -> Result<CausalVerdict> {
    config.validate()?;
    if config.ridge > 0.0 {
        infer_from_covpack(&pack.with_ridge(T::of(config.ridge))?, config)
    } else {
        infer_from_covpack(pack, config)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimation::SampleCount;
    use crate::random::gaussian_matrix;
    use crate::seed::rng_from_seed;
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    fn diagonal_pack() -> CovPack<f64> {
        let c = CovMatrix::from_diagonal(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        let a = StructureMatrix::from_diagonal(&[2.0, 1.0, 0.5, 1.5]).unwrap();
        let cyy = c.transformed(&a).unwrap();
        let cxy = c.matrix() * a.matrix().transpose();
        CovPack::new(c, cyy, cxy, SampleCount::Exact).unwrap()
    }

    #[test]
    fn decide_examples() {
        assert_eq!(decide(-0.17435, -0.80741, 0.1).unwrap(), Decision::XCausesY);
        for eps in [0.0, 0.1, 5.0] {
            assert_eq!(decide(0.3, 0.3, eps).unwrap(), Decision::Undecided);
            assert_eq!(decide(-0.3, 0.3, eps).unwrap(), Decision::Undecided);
        }
        assert_eq!(decide(0.5, 0.1, 0.1).unwrap(), Decision::YCausesX);
        assert!(matches!(decide(f64::NAN, 0.0, 0.1), Err(Error::Validation(_))));
        assert!(matches!(decide(0.0, 0.0, -1.0), Err(Error::Validation(_))));
    }

    #[test]
    fn decision_band_boundary_is_undecided() {
        assert_eq!(decide(0.3, 0.1, 0.2).unwrap(), Decision::Undecided);
        assert_eq!(decide(0.3 + 1e-9, 0.1, 0.2).unwrap(), Decision::YCausesX);
    }

    #[test]
    fn diagonal_model_verdict() {
        let v = infer_from_covpack(&diagonal_pack(), &InferenceConfig::default()).unwrap();
        assert_eq!(v.decision, Decision::XCausesY);
        assert_relative_eq!(v.delta_xy, -0.17435338714477777, epsilon = 1e-12);
        assert_relative_eq!(v.delta_yx, -0.8074519518400038, epsilon = 1e-12);
        assert_eq!(v.sample_count, None);
        assert!(v.diagnostics["anisotropy_residual_xy"].abs() < 1e-10);
        assert!(v.diagnostics.contains_key("anisotropy_cxx"));
        assert!(v.diagnostics.contains_key("anisotropy_cyy"));
    }

    #[test]
    fn swapped_pack_mirrors_verdict() {
        let pack = diagonal_pack();
        let cfg = InferenceConfig::default();
        let v = infer_from_covpack(&pack, &cfg).unwrap();
        let w = infer_from_covpack(&pack.swapped(), &cfg).unwrap();
        assert_eq!(w.decision, v.decision.mirrored());
        assert_relative_eq!(w.delta_xy, v.delta_yx, epsilon = 1e-12);
        assert_relative_eq!(w.delta_yx, v.delta_xy, epsilon = 1e-12);
    }

    #[test]
    fn symmetric_pack_is_undecided() {
        let i = CovMatrix::<f64>::identity(3).unwrap();
        let pack = CovPack::new(i.clone(), i, DMatrix::identity(3, 3) * 0.5, SampleCount::Exact).unwrap();
        for eps in [0.0, 0.1, 1.0] {
            let cfg = InferenceConfig { epsilon: eps, ..Default::default() };
            assert_eq!(infer_from_covpack(&pack, &cfg).unwrap().decision, Decision::Undecided);
        }
    }

    fn seeded_samples(n: usize, count: usize, seed: u64) -> PairedDataset<f64> {
        let mut rng = rng_from_seed(seed);
        let a = gaussian_matrix::<f64>(n, n, &mut rng);
        let b = gaussian_matrix::<f64>(n, n, &mut rng);
        let x = gaussian_matrix::<f64>(count, n, &mut rng) * b.transpose();
        let y = &x * a.transpose();
        PairedDataset::new(x, y).unwrap()
    }

    #[test]
    fn seeded_deterministic_samples() {
        let data = seeded_samples(10, 1000, 1234);
        let v = infer_from_samples(&data, &InferenceConfig::default()).unwrap();
        assert_eq!(v.decision, Decision::XCausesY);
        assert_eq!(v.sample_count, Some(1000));
    }

    #[test]
    fn too_few_samples() {
        let data = seeded_samples(10, 5, 3);
        match infer_from_samples(&data, &InferenceConfig::default()) {
            Err(Error::InsufficientSamples { required, got }) => {
                assert_eq!((required, got), (11, 5));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicated_samples_keep_verdict() {
        let data = seeded_samples(6, 50, 77);
        let doubled = PairedDataset::new(
            DMatrix::from_fn(100, 6, |i, j| data.x()[(i % 50, j)]),
            DMatrix::from_fn(100, 6, |i, j| data.y()[(i % 50, j)]),
        )
        .unwrap();
        let cfg = InferenceConfig::default();
        let v = infer_from_samples(&data, &cfg).unwrap();
        let w = infer_from_samples(&doubled, &cfg).unwrap();
        assert_eq!(v.decision, w.decision);
        assert_relative_eq!(v.delta_xy, w.delta_xy, epsilon = 1e-9);
        assert_relative_eq!(v.delta_yx, w.delta_yx, epsilon = 1e-9);
    }

    #[test]
    fn scalar_case_is_symmetric() {
        // n = m = 1: every Δ is log(a²c) − log c − log a² = 0.
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 3.0 * i as f64]).collect();
        let data = PairedDataset::from_rows(&rows, 1).unwrap();
        let v = infer_from_samples(&data, &InferenceConfig::default()).unwrap();
        assert!(v.delta_xy.abs() < 1e-12 && v.delta_yx.abs() < 1e-12);
        assert_eq!(v.decision, Decision::Undecided);
    }

    #[test]
    fn epsilon_monotonicity() {
        let data = seeded_samples(5, 12, 19);
        let mut decided_before = true;
        for eps in [0.0, 0.05, 0.1, 0.5, 1.0, 10.0] {
            let cfg = InferenceConfig { epsilon: eps, ..Default::default() };
            let decided = infer_from_samples(&data, &cfg).unwrap().decision != Decision::Undecided;
            assert!(decided_before || !decided);
            decided_before = decided;
        }
    }

    #[test]
    fn invalid_config() {
        let data = seeded_samples(2, 10, 1);
        let cfg = InferenceConfig { epsilon: -0.1, ..Default::default() };
        assert!(matches!(infer_from_samples(&data, &cfg), Err(Error::Config(_))));
    }
}
