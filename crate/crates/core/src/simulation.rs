//! Random linear models `Y = AX + E`, their exact and sampled second moments,
//! and the accuracy sweeps over dimension and noise level.

use std::io::Write;

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{CovPack, PairedDataset, SampleCount};
use crate::inference::{infer_from_exact, infer_from_samples, Decision, InferenceConfig};
use crate::random::gaussian_matrix;
use crate::seed::{derive_seed, rng_from_seed, stream_rng};
use crate::trace_core::{CovMatrix, StructureMatrix};

/// Which signal the noise power is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseReference {
    /// `tr(C_EE) = σ² · (m/n) · tr(C_XX)`: per-coordinate noise power is σ²
    /// times the per-coordinate power of the cause.
    #[default]
    Cause,
    /// `tr(C_EE) = σ² · tr(A C_XX Aᵀ)`: noise power is σ² times the power of
    /// the noiseless effect.
    Effect,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub a: StructureMatrix<f64>,
    pub cxx: CovMatrix<f64>,
    pub cee: CovMatrix<f64>,
    pub sigma: f64,
    pub seed: u64,
    pub noise_reference: NoiseReference,
}

impl ModelSpec {
    /// Model with user-supplied blocks; `sigma` and `seed` are informational.
    pub fn new(a: StructureMatrix<f64>, cxx: CovMatrix<f64>, cee: CovMatrix<f64>, sigma: f64) -> Result<Self> {
        if a.cols() != cxx.dim() || a.rows() != cee.dim() {
            return Err(Error::Dimension(format!(
                "A is {}×{}, C_XX is {n}×{n}, C_EE is {m}×{m}",
                a.rows(),
                a.cols(),
                n = cxx.dim(),
                m = cee.dim()
            )));
        }
        Ok(Self {
            a,
            cxx,
            cee,
            sigma,
            seed: 0,
            noise_reference: NoiseReference::default(),
        })
    }

    pub fn n(&self) -> usize {
        self.cxx.dim()
    }

    pub fn m(&self) -> usize {
        self.a.rows()
    }

    /// `tr(A C_XX Aᵀ)`.
    pub fn signal_power(&self) -> f64 {
        let am = self.a.matrix();
        (am * self.cxx.matrix()).component_mul(am).sum()
    }
}

/// Draws `A` (m×n), `B` (n×n) and `F` (m×m) with i.i.d. standard normal
/// entries and sets `C_XX = BBᵀ`, `C_EE ∝ FFᵀ` scaled to the noise power
/// prescribed by `reference`. `σ = 0` gives a deterministic model.
///
/// The three matrices are drawn in the same order for every `σ`, so a fixed
/// seed yields the same `A` and `C_XX` across a noise sweep.
pub fn random_model(n: usize, m: usize, sigma: f64, reference: NoiseReference, seed: u64) -> Result<ModelSpec> {
    if n == 0 || m == 0 {
        return Err(Error::Dimension("model dimensions must be ≥ 1".into()));
    }
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::Config(format!("sigma must be finite and ≥ 0, got {sigma}")));
    }
    let mut rng = rng_from_seed(seed);
    let a = StructureMatrix::new(gaussian_matrix(m, n, &mut rng))?;
    let b: DMatrix<f64> = gaussian_matrix(n, n, &mut rng);
    let f: DMatrix<f64> = gaussian_matrix(m, m, &mut rng);
    let cxx = CovMatrix::from_factor(&b)?;
    let mut model = ModelSpec {
        a,
        cxx,
        cee: CovMatrix::new(DMatrix::zeros(m, m))?,
        sigma,
        seed,
        noise_reference: reference,
    };
    if sigma > 0.0 {
        let target = match reference {
            NoiseReference::Cause => model.cxx.trace() * m as f64 / n as f64,
            NoiseReference::Effect => model.signal_power(),
        };
        let fft = &f * f.transpose();
        let scale = sigma * sigma * target / fft.trace();
        model.cee = CovMatrix::new(fft * scale)?;
    }
    Ok(model)
}

/// Population moments: `C_YY = A C_XX Aᵀ + C_EE`, `C_XY = C_XX Aᵀ`.
pub fn exact_covariances(model: &ModelSpec) -> Result<CovPack<f64>> {
    let am = model.a.matrix();
    let cxx = model.cxx.matrix();
    let cyy = CovMatrix::new(am * cxx * am.transpose() + model.cee.matrix())?;
    let cxy = cxx * am.transpose();
    CovPack::new(model.cxx.clone(), cyy, cxy, SampleCount::Exact)
}

/// `count` Gaussian draws of `(X, Y)` with `X ~ N(0, C_XX)`, `E ~ N(0, C_EE)`
/// independent of `X`, and `Y = AX + E`.
pub fn sample_from_model(model: &ModelSpec, count: usize, rng: &mut impl Rng) -> Result<PairedDataset<f64>> {
    if count == 0 {
        return Err(Error::InsufficientSamples { required: 1, got: 0 });
    }
    let chol = model
        .cxx
        .matrix()
        .clone()
        .cholesky()
        .ok_or_else(|| Error::DegenerateModel("C_XX has no Cholesky factor".into()))?;
    let x = gaussian_matrix::<f64>(count, model.n(), rng) * chol.l().transpose();
    let mut y = &x * model.a.matrix().transpose();
    if model.cee.trace() > 0.0 {
        let factor = psd_sqrt(model.cee.matrix());
        y += gaussian_matrix::<f64>(count, model.m(), rng) * factor.transpose();
    }
    PairedDataset::new(x, y)
}

/// `L` with `L Lᵀ = C` for a PSD `C`, from the eigendecomposition.
fn psd_sqrt(c: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = c.clone().symmetric_eigen();
    let mut v = eig.eigenvectors;
    for (j, &l) in eig.eigenvalues.iter().enumerate() {
        let s = l.max(0.0).sqrt();
        v.column_mut(j).scale_mut(s);
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    Dimension,
    Noise,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimationMode {
    /// Moments estimated from drawn samples.
    #[default]
    Sample,
    /// Population moments of the generated model.
    Exact,
}

/// One row of a sweep; also the CSV record layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub axis: SweepAxis,
    pub axis_value: f64,
    pub n: usize,
    pub m: usize,
    pub sigma: f64,
    /// Empty for exact mode.
    pub samples: Option<usize>,
    pub mode: EstimationMode,
    pub trials: usize,
    pub fraction_correct: f64,
    pub fraction_wrong: f64,
    /// Includes trials that failed numerically.
    pub fraction_undecided: f64,
    pub errors: usize,
    pub mean_delta_true: Option<f64>,
    pub mean_delta_wrong: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub axis: SweepAxis,
    pub mode: EstimationMode,
    pub trials: usize,
    pub epsilon: f64,
    pub seed: u64,
    pub noise_reference: NoiseReference,
    pub points: Vec<SweepPoint>,
}

/// CSV header written by [`SweepResult::write_csv`].
pub const SWEEP_CSV_HEADER: &str = "axis,axis_value,n,m,sigma,samples,mode,trials,fraction_correct,fraction_wrong,fraction_undecided,errors,mean_delta_true,mean_delta_wrong";

impl SweepResult {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for p in &self.points {
            w.serialize(p)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is UTF-8"))
    }

    pub fn point(&self, axis_value: f64) -> Option<&SweepPoint> {
        self.points.iter().find(|p| p.axis_value == axis_value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DimensionSweep {
    /// Values of `n = m`.
    pub dims: Vec<usize>,
    pub sigma: f64,
    pub trials: usize,
    pub epsilon: f64,
    pub seed: u64,
    /// Sample size is `samples_per_dim · n`.
    pub samples_per_dim: usize,
    pub noise_reference: NoiseReference,
}

impl Default for DimensionSweep {
    fn default() -> Self {
        Self {
            dims: (2..=50).collect(),
            sigma: 0.05,
            trials: 100,
            epsilon: 0.0,
            seed: 0,
            samples_per_dim: 2,
            noise_reference: NoiseReference::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSweep {
    pub sigmas: Vec<f64>,
    pub n: usize,
    pub m: usize,
    pub samples: usize,
    pub trials: usize,
    pub epsilon: f64,
    pub mode: EstimationMode,
    pub seed: u64,
    pub noise_reference: NoiseReference,
}

impl Default for NoiseSweep {
    fn default() -> Self {
        Self {
            sigmas: vec![0.05, 0.1, 0.25, 0.5, 1.0, 2.0, 4.0],
            n: 10,
            m: 10,
            samples: 1000,
            trials: 100,
            epsilon: 0.0,
            mode: EstimationMode::Sample,
            seed: 0,
            noise_reference: NoiseReference::default(),
        }
    }
}

enum TrialOutcome {
    Verdict {
        decision: Decision,
        delta_xy: f64,
        delta_yx: f64,
    },
    Failed,
}

/// One random model, inferred from samples or exact moments. The model comes
/// from stream 0 of `trial_seed` and the samples from stream 1.
fn run_trial(
    n: usize,
    m: usize,
    sigma: f64,
    reference: NoiseReference,
    samples: Option<usize>,
    config: &InferenceConfig,
    trial_seed: u64,
) -> TrialOutcome {
    let outcome = (|| -> Result<_> {
        let model = random_model(n, m, sigma, reference, derive_seed(trial_seed, 0))?;
        match samples {
            Some(count) => {
                let data = sample_from_model(&model, count, &mut stream_rng(trial_seed, 1))?;
                infer_from_samples(&data, config)
            }
            None => infer_from_exact(&exact_covariances(&model)?, config),
        }
    })();
    match outcome {
        Ok(v) => TrialOutcome::Verdict {
            decision: v.decision,
            delta_xy: v.delta_xy,
            delta_yx: v.delta_yx,
        },
        Err(_) => TrialOutcome::Failed,
    }
}

struct Tally {
    fraction_correct: f64,
    fraction_wrong: f64,
    fraction_undecided: f64,
    errors: usize,
    mean_delta_true: Option<f64>,
    mean_delta_wrong: Option<f64>,
}

fn tally(outcomes: &[TrialOutcome]) -> Tally {
    let (mut correct, mut wrong, mut undecided, mut errors) = (0usize, 0usize, 0usize, 0usize);
    let (mut sum_true, mut sum_wrong) = (0.0, 0.0);
    for o in outcomes {
        match o {
            TrialOutcome::Verdict {
                decision,
                delta_xy,
                delta_yx,
            } => {
                match decision {
                    Decision::XCausesY => correct += 1,
                    Decision::YCausesX => wrong += 1,
                    Decision::Undecided => undecided += 1,
                }
                sum_true += delta_xy;
                sum_wrong += delta_yx;
            }
            TrialOutcome::Failed => errors += 1,
        }
    }
    let total = outcomes.len() as f64;
    let ok = outcomes.len() - errors;
    let mean = |s: f64| (ok > 0).then(|| s / ok as f64);
    Tally {
        fraction_correct: correct as f64 / total,
        fraction_wrong: wrong as f64 / total,
        fraction_undecided: (undecided + errors) as f64 / total,
        errors,
        mean_delta_true: mean(sum_true),
        mean_delta_wrong: mean(sum_wrong),
    }
}

fn sweep_config(epsilon: f64) -> Result<InferenceConfig> {
    let config = InferenceConfig {
        epsilon,
        ..Default::default()
    };
    config.validate()?;
    Ok(config)
}

/// Accuracy as a function of `n = m` with `N = samples_per_dim · n` samples.
///
/// Trial `t` at dimension `n` uses seed `derive(derive(seed, n), t)`.
pub fn run_dimension_sweep(sweep: &DimensionSweep) -> Result<SweepResult> {
    if sweep.trials == 0 {
        return Err(Error::Config("trials must be ≥ 1".into()));
    }
    if let Some(&d) = sweep.dims.iter().find(|&&d| d < 2) {
        return Err(Error::Config(format!("sweep dimensions must be ≥ 2, got {d}")));
    }
    if sweep.samples_per_dim == 0 {
        return Err(Error::Config("samples_per_dim must be ≥ 1".into()));
    }
    if !(sweep.sigma >= 0.0) || !sweep.sigma.is_finite() {
        return Err(Error::Config("sigma must be finite and ≥ 0".into()));
    }
    let config = sweep_config(sweep.epsilon)?;
    let points = sweep
        .dims
        .iter()
        .map(|&n| {
            let samples = sweep.samples_per_dim * n;
            let point_seed = derive_seed(sweep.seed, n as u64);
            let outcomes: Vec<TrialOutcome> = (0..sweep.trials)
                .into_par_iter()
                .map(|t| {
                    run_trial(
                        n,
                        n,
                        sweep.sigma,
                        sweep.noise_reference,
                        Some(samples),
                        &config,
                        derive_seed(point_seed, t as u64),
                    )
                })
                .collect();
            let t = tally(&outcomes);
            SweepPoint {
                axis: SweepAxis::Dimension,
                axis_value: n as f64,
                n,
                m: n,
                sigma: sweep.sigma,
                samples: Some(samples),
                mode: EstimationMode::Sample,
                trials: sweep.trials,
                fraction_correct: t.fraction_correct,
                fraction_wrong: t.fraction_wrong,
                fraction_undecided: t.fraction_undecided,
                errors: t.errors,
                mean_delta_true: t.mean_delta_true,
                mean_delta_wrong: t.mean_delta_wrong,
            }
        })
        .collect();
    Ok(SweepResult {
        axis: SweepAxis::Dimension,
        mode: EstimationMode::Sample,
        trials: sweep.trials,
        epsilon: sweep.epsilon,
        seed: sweep.seed,
        noise_reference: sweep.noise_reference,
        points,
    })
}

/// Accuracy as a function of the noise level at fixed `n`, `m`, `N`.
///
/// Trial `t` uses seed `derive(seed, t)` at every σ and in both modes, so the
/// same models are compared along the whole sweep.
pub fn run_noise_sweep(sweep: &NoiseSweep) -> Result<SweepResult> {
    if sweep.trials == 0 {
        return Err(Error::Config("trials must be ≥ 1".into()));
    }
    if sweep.n == 0 || sweep.m == 0 {
        return Err(Error::Config("dimensions must be ≥ 1".into()));
    }
    if let Some(s) = sweep.sigmas.iter().find(|s| !(**s >= 0.0) || !s.is_finite()) {
        return Err(Error::Config(format!("sigma must be finite and ≥ 0, got {s}")));
    }
    let samples = match sweep.mode {
        EstimationMode::Sample => {
            if sweep.samples <= sweep.n.max(sweep.m) {
                return Err(Error::Config(format!(
                    "samples must exceed max(n, m) = {}",
                    sweep.n.max(sweep.m)
                )));
            }
            Some(sweep.samples)
        }
        EstimationMode::Exact => None,
    };
    let config = sweep_config(sweep.epsilon)?;
    let points = sweep
        .sigmas
        .iter()
        .map(|&sigma| {
            let outcomes: Vec<TrialOutcome> = (0..sweep.trials)
                .into_par_iter()
                .map(|t| {
                    run_trial(
                        sweep.n,
                        sweep.m,
                        sigma,
                        sweep.noise_reference,
                        samples,
                        &config,
                        derive_seed(sweep.seed, t as u64),
                    )
                })
                .collect();
            let t = tally(&outcomes);
            SweepPoint {
                axis: SweepAxis::Noise,
                axis_value: sigma,
                n: sweep.n,
                m: sweep.m,
                sigma,
                samples,
                mode: sweep.mode,
                trials: sweep.trials,
                fraction_correct: t.fraction_correct,
                fraction_wrong: t.fraction_wrong,
                fraction_undecided: t.fraction_undecided,
                errors: t.errors,
                mean_delta_true: t.mean_delta_true,
                mean_delta_wrong: t.mean_delta_wrong,
            }
        })
        .collect();
    Ok(SweepResult {
        axis: SweepAxis::Noise,
        mode: sweep.mode,
        trials: sweep.trials,
        epsilon: sweep.epsilon,
        seed: sweep.seed,
        noise_reference: sweep.noise_reference,
        points,
    })
}
