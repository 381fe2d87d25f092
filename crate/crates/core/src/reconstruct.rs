//! From port statistics back to SIC probabilities and density matrices.
//!
//! Two pipelines are offered. [`normalization_correction`] divides each port
//! by the response of the same port to the maximally mixed state, which
//! removes the state-independent part of the loop's decay. [`model_fit`]
//! maximizes the multinomial likelihood of the raw counts under the full
//! forward model of [`crate::loopsim`].

use std::path::Path;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{json_parse_error, Error, Result};
use crate::loopsim::{multinomial, port_response, simulate_single_pass, welford, HwpOffsets, LoopConfig, PORTS};
use crate::optim::{bfgs, BfgsOptions};
use crate::sic::{sic_probabilities, SicPovm};
use crate::state::{
    c, check_dim, hermitian_eigen, hermitian_part, nearest_density_matrix, DensityMatrix, Operator,
    ProbabilityVector, C64,
};

/// Response of every port to the maximally mixed input.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrectionReference {
    response: Vec<f64>,
}

impl CorrectionReference {
    pub fn new(response: Vec<f64>) -> Result<Self> {
        if response.len() != PORTS {
            return Err(Error::Contract(format!("reference needs {PORTS} entries, got {}", response.len())));
        }
        if let Some((i, v)) = response.iter().enumerate().find(|(_, v)| !(**v > 0.0) || !v.is_finite()) {
            return Err(Error::Contract(format!("reference entry {i} = {v} is not strictly positive")));
        }
        Ok(CorrectionReference { response })
    }

    /// Simulated response of the apparatus described by `config` to `I/3`.
    pub fn simulated(config: &LoopConfig) -> Result<Self> {
        let res = simulate_single_pass(&DensityMatrix::maximally_mixed(3), config)?;
        Self::new(res.port_probabilities())
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }
}

/// `ρ̂ = Σ_i [(d+1) p_i − 1/d] |ψ_i⟩⟨ψ_i|`, the exact inverse of
/// [`sic_probabilities`]. The result has unit trace but need not be positive.
pub fn linear_inversion(p: &ProbabilityVector, povm: &SicPovm) -> Result<Operator> {
    povm.require_verified()?;
    let d = povm.dim();
    if p.len() != d * d {
        return Err(Error::Contract(format!("expected {} probabilities, got {}", d * d, p.len())));
    }
    let df = d as f64;
    let mut m = DMatrix::<C64>::zeros(d, d);
    for ((_, ket), &pi) in povm.ordered().zip(p.values()) {
        m += ket.projector() * C64::from((df + 1.0) * pi - 1.0 / df);
    }
    Operator::new(hermitian_part(&m))
}

/// Scales each port by the mixed-state response and renormalizes.
pub fn normalization_correction(raw: &[f64], reference: &CorrectionReference) -> Result<ProbabilityVector> {
    if raw.len() != PORTS {
        return Err(Error::Contract(format!("expected {PORTS} port values, got {}", raw.len())));
    }
    if raw.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::Contract("raw port values must be non-negative".into()));
    }
    let scaled: Vec<f64> = raw.iter().zip(&reference.response).map(|(r, q)| r / q).collect();
    ProbabilityVector::from_weights(&scaled)
}

/// Whether a SIC distribution comes from a physical state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Validity {
    pub valid: bool,
    pub min_eigenvalue: f64,
}

/// Checks positivity of [`linear_inversion`]`(p)` to 1e-10.
pub fn validate_sic_distribution(p: &ProbabilityVector, povm: &SicPovm) -> Result<Validity> {
    let rho = linear_inversion(p, povm)?;
    let (evals, _) = hermitian_eigen(rho.matrix());
    let min = evals.last().copied().unwrap_or(0.0);
    Ok(Validity { valid: min >= -1e-10, min_eigenvalue: min })
}

#[derive(Clone, Debug)]
pub struct FitOptions {
    pub restarts: usize,
    pub seed: u64,
    pub bfgs: BfgsOptions,
    /// Plate errors assumed in the forward model.
    pub offsets: HwpOffsets,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            restarts: 5,
            seed: 0,
            bfgs: BfgsOptions { max_iter: 2000, grad_tol: 1e-11, fd_step: 1e-6 },
            offsets: HwpOffsets::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FitReport {
    pub estimate: DensityMatrix,
    pub sic_probabilities: ProbabilityVector,
    /// KL divergence of the observed frequencies from the fitted ones.
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after each accepted step of the winning restart.
    pub trace: Vec<f64>,
    pub restart: usize,
}

const FIT_PARAMS: usize = 9;

/// Lower-triangular `L` from 9 reals (3 diagonal, 3 complex below), mapped
/// to `L L† / Tr(L L†)`.
fn params_to_density(p: &[f64]) -> DMatrix<C64> {
    let mut l = DMatrix::<C64>::zeros(3, 3);
    l[(0, 0)] = c(p[0], 0.0);
    l[(1, 1)] = c(p[1], 0.0);
    l[(2, 2)] = c(p[2], 0.0);
    l[(1, 0)] = c(p[3], p[4]);
    l[(2, 0)] = c(p[5], p[6]);
    l[(2, 1)] = c(p[7], p[8]);
    let rho = &l * l.adjoint();
    let tr = rho.trace().re;
    hermitian_part(&(rho / C64::from(tr.max(1e-300))))
}

fn density_to_params(rho: &DMatrix<C64>) -> Vec<f64> {
    // Cholesky of a slightly regularized ρ gives a warm start inside the domain
    let reg = rho + DMatrix::<C64>::identity(3, 3) * C64::from(1e-6);
    match reg.cholesky() {
        Some(ch) => {
            let l = ch.l();
            vec![l[(0, 0)].re, l[(1, 1)].re, l[(2, 2)].re, l[(1, 0)].re, l[(1, 0)].im, l[(2, 0)].re, l[(2, 0)].im, l[(2, 1)].re, l[(2, 1)].im]
        }
        None => vec![1.0, 1.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    }
}

fn kl_objective(effects: &[DMatrix<C64>], freqs: &[f64], rho: &DMatrix<C64>) -> f64 {
    let probs: Vec<f64> = effects.iter().map(|e| (e * rho).trace().re.max(0.0)).collect();
    let total: f64 = probs.iter().sum();
    freqs
        .iter()
        .zip(&probs)
        .filter(|(f, _)| **f > 0.0)
        .map(|(f, p)| f * (f / (p / total).max(1e-300)).ln())
        .sum()
}

/// Maximum-likelihood state for raw port counts under the loop model of
/// `config`. The port probabilities come from [`port_response`], which is the
/// linear map computed by [`simulate_single_pass`].
pub fn model_fit(raw_counts: &[u64], config: &LoopConfig, options: &FitOptions) -> Result<FitReport> {
    let effects = port_response(config, &options.offsets)?;
    fit_with_effects(raw_counts, &effects, options, None)
}

fn fit_with_effects(
    raw_counts: &[u64],
    effects: &[DMatrix<C64>],
    options: &FitOptions,
    warm_start: Option<&DMatrix<C64>>,
) -> Result<FitReport> {
    if raw_counts.len() != PORTS {
        return Err(Error::Contract(format!("expected {PORTS} port counts, got {}", raw_counts.len())));
    }
    let total: u64 = raw_counts.iter().sum();
    if total == 0 {
        return Err(Error::Contract("model fit needs at least one count".into()));
    }
    if options.restarts == 0 {
        return Err(Error::Contract("model fit needs at least one restart".into()));
    }
    let freqs: Vec<f64> = raw_counts.iter().map(|&n| n as f64 / total as f64).collect();
    let objective = |p: &[f64]| kl_objective(effects, &freqs, &params_to_density(p));

    let starts: Vec<Vec<f64>> = match warm_start {
        Some(rho) => vec![density_to_params(rho)],
        None => (0..options.restarts)
            .map(|r| {
                let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
                rng.set_stream(r as u64);
                (0..FIT_PARAMS).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
            })
            .collect(),
    };
    let mut best: Option<(usize, crate::optim::Minimum)> = None;
    for (r, start) in starts.iter().enumerate() {
        let m = bfgs(objective, start, options.bfgs);
        if best.as_ref().is_none_or(|(_, b)| m.value < b.value) {
            best = Some((r, m));
        }
    }
    let (restart, m) = best.expect("at least one start");
    let estimate = DensityMatrix::from_matrix_unchecked(params_to_density(&m.x));
    let povm = SicPovm::standard(3)?;
    Ok(FitReport {
        sic_probabilities: sic_probabilities(&estimate, &povm)?,
        estimate,
        objective: m.value,
        iterations: m.iterations,
        converged: m.converged,
        trace: m.trace,
        restart,
    })
}

/// Which correction turns port data into SIC probabilities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Normalization,
    ModelFit,
}

impl Method {
    pub fn name(&self) -> &'static str {
        match self {
            Method::Normalization => "normalization",
            Method::ModelFit => "model_fit",
        }
    }
}

/// A correction pipeline prepared for one apparatus, reusable across many
/// count vectors (bootstrap replicates, systematics samples).
pub struct Corrector {
    kind: CorrectorKind,
}

enum CorrectorKind {
    Normalization(CorrectionReference),
    ModelFit { effects: Vec<DMatrix<C64>>, options: FitOptions, warm: Option<DMatrix<C64>> },
}

impl Corrector {
    pub fn new(method: Method, config: &LoopConfig, seed: u64) -> Result<Self> {
        let kind = match method {
            Method::Normalization => CorrectorKind::Normalization(CorrectionReference::simulated(config)?),
            Method::ModelFit => {
                let options = FitOptions { seed, ..FitOptions::default() };
                CorrectorKind::ModelFit { effects: port_response(config, &options.offsets)?, options, warm: None }
            }
        };
        Ok(Corrector { kind })
    }

    pub fn method(&self) -> Method {
        match self.kind {
            CorrectorKind::Normalization(_) => Method::Normalization,
            CorrectorKind::ModelFit { .. } => Method::ModelFit,
        }
    }

    /// Later fits start from `rho` with a single local search.
    pub fn warm_started(mut self, rho: &DensityMatrix) -> Self {
        if let CorrectorKind::ModelFit { warm, .. } = &mut self.kind {
            *warm = Some(rho.matrix().clone());
        }
        self
    }

    /// SIC probabilities and a physical state for the given counts.
    pub fn correct(&self, counts: &[u64]) -> Result<(ProbabilityVector, DensityMatrix)> {
        let povm = SicPovm::standard(3)?;
        match &self.kind {
            CorrectorKind::Normalization(reference) => {
                let raw: Vec<f64> = counts.iter().map(|&n| n as f64).collect();
                let p = normalization_correction(&raw, reference)?;
                let rho = nearest_density_matrix(&linear_inversion(&p, &povm)?)?;
                Ok((p, rho))
            }
            CorrectorKind::ModelFit { effects, options, warm } => {
                let fit = fit_with_effects(counts, effects, options, warm.as_ref())?;
                Ok((fit.sic_probabilities, fit.estimate))
            }
        }
    }
}

/// A reconstructed state with its SIC probabilities and their statistical
/// spread.
#[derive(Clone, Debug)]
pub struct Reconstruction {
    pub method: Method,
    pub p: ProbabilityVector,
    pub rho: DensityMatrix,
    pub stat_err: Vec<f64>,
    pub validity: Validity,
}

/// Applies one pipeline to raw counts, with parametric-bootstrap errors on
/// the SIC probabilities.
pub fn reconstruct(
    counts: &[u64],
    config: &LoopConfig,
    method: Method,
    replicates: usize,
    seed: u64,
) -> Result<Reconstruction> {
    let povm = SicPovm::standard(3)?;
    let corrector = Corrector::new(method, config, seed)?;
    let (p, rho) = corrector.correct(counts)?;
    let validity = validate_sic_distribution(&p, &povm)?;
    let corrector = corrector.warm_started(&rho);
    let stat_err = bootstrap(counts, replicates, seed, |c| Ok(corrector.correct(c)?.0.values().to_vec()))?;
    Ok(Reconstruction { method, p, rho, stat_err, validity })
}

/// Standard deviation of `estimator` over multinomial resamples of `counts`
/// at the observed frequencies. Replicate `i` uses RNG stream `i` of `seed`.
pub fn bootstrap<F>(counts: &[u64], replicates: usize, seed: u64, estimator: F) -> Result<Vec<f64>>
where
    F: Fn(&[u64]) -> Result<Vec<f64>> + Sync,
{
    let total: u64 = counts.iter().sum();
    let freqs: Vec<f64> = counts.iter().map(|&n| n as f64).collect();
    let rows: Vec<Vec<f64>> = (0..replicates)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let resampled = multinomial(&freqs, total, &mut rng)?;
            estimator(&resampled)
        })
        .collect::<Result<_>>()?;
    let width = rows.first().map_or(counts.len(), |r| r.len());
    if rows.len() < 2 {
        return Ok(vec![0.0; width]);
    }
    Ok(welford(rows, width).1)
}

/// JSON written by the `reconstruct` command.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionFile {
    pub method: String,
    pub p: Vec<f64>,
    pub rho_re: Vec<f64>,
    pub rho_im: Vec<f64>,
    pub stat_err: Vec<f64>,
    pub valid: bool,
}

impl Reconstruction {
    pub fn to_file(&self) -> ReconstructionFile {
        let state = self.rho.to_file();
        ReconstructionFile {
            method: self.method.name().into(),
            p: self.p.values().to_vec(),
            rho_re: state.re,
            rho_im: state.im,
            stat_err: self.stat_err.clone(),
            valid: self.validity.valid,
        }
    }
}

impl ReconstructionFile {
    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| json_parse_error(&path.display().to_string(), e))
    }

    /// The stored density matrix.
    pub fn density(&self) -> Result<DensityMatrix> {
        let d = (self.rho_re.len() as f64).sqrt().round() as usize;
        check_dim(d * d, self.rho_re.len())?;
        let z: Vec<C64> = self.rho_re.iter().zip(&self.rho_im).map(|(&r, &i)| c(r, i)).collect();
        DensityMatrix::new(DMatrix::from_row_slice(d, d, &z))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{fidelity, random_density, random_ket, Ket};

    fn povm() -> SicPovm {
        SicPovm::standard(3).unwrap()
    }

    #[test]
    fn uniform_inverts_to_maximally_mixed() {
        let rho = linear_inversion(&ProbabilityVector::uniform(9), &povm()).unwrap();
        let want = DensityMatrix::maximally_mixed(3);
        assert!(rho.max_distance(&want.as_operator()) < 1e-12);
    }

    #[test]
    fn inversion_round_trip() {
        let povm = povm();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let rho = random_density(3, &mut rng);
            let p = sic_probabilities(&rho, &povm).unwrap();
            let back = linear_inversion(&p, &povm).unwrap();
            assert!((back.matrix() - rho.matrix()).norm() < 1e-10);
        }
    }

    #[test]
    fn sixths_distribution_inverts_to_projector() {
        let mut v = vec![1.0 / 6.0; 6];
        v.extend([0.0; 3]);
        let rho = linear_inversion(&ProbabilityVector::new(v).unwrap(), &povm()).unwrap();
        let want = DensityMatrix::pure(&Ket::basis(3, 0).unwrap());
        assert!(rho.max_distance(&want.as_operator()) < 1e-12);
    }

    #[test]
    fn inversion_length_mismatch() {
        assert!(matches!(linear_inversion(&ProbabilityVector::uniform(4), &povm()), Err(Error::Contract(_))));
    }

    #[test]
    fn normalization_examples() {
        let cfg = LoopConfig::experimental();
        let reference = CorrectionReference::simulated(&cfg).unwrap();
        let p = normalization_correction(reference.response(), &reference).unwrap();
        assert!(p.values().iter().all(|v| (v - 1.0 / 9.0).abs() < 1e-12));
        assert!(CorrectionReference::new(vec![1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0]).is_err());

        // V-only slide of 13 %: correction of |0⟩ data is approximate
        let cfg = LoopConfig { epsilon_h: 0.0, visibilities: [1.0; 3], ..LoopConfig::experimental() };
        let reference = CorrectionReference::simulated(&cfg).unwrap();
        let raw = simulate_single_pass(&DensityMatrix::pure(&Ket::basis(3, 0).unwrap()), &cfg).unwrap();
        let p = normalization_correction(&raw.port_probabilities(), &reference).unwrap();
        for (i, v) in p.values().iter().enumerate() {
            let want = if i < 6 { 1.0 / 6.0 } else { 0.0 };
            assert!((v - want).abs() < 0.02, "port {i}: {v}");
        }
    }

    #[test]
    fn normalization_ignores_count_rate() {
        let reference = CorrectionReference::simulated(&LoopConfig::experimental()).unwrap();
        let raw = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0, 5.0];
        let scaled: Vec<f64> = raw.iter().map(|r| r * 17.5).collect();
        let a = normalization_correction(&raw, &reference).unwrap();
        let b = normalization_correction(&scaled, &reference).unwrap();
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn validity_examples() {
        let povm = povm();
        let v = validate_sic_distribution(&ProbabilityVector::uniform(9), &povm).unwrap();
        assert!(v.valid && (v.min_eigenvalue - 1.0 / 3.0).abs() < 1e-12);
        let mut delta = vec![0.0; 9];
        delta[0] = 1.0;
        let v = validate_sic_distribution(&ProbabilityVector::new(delta).unwrap(), &povm).unwrap();
        assert!(!v.valid && (v.min_eigenvalue + 1.0).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let psi = random_ket(3, &mut rng);
        let p = sic_probabilities(&DensityMatrix::pure(&psi), &povm).unwrap();
        assert!(validate_sic_distribution(&p, &povm).unwrap().valid);
    }

    #[test]
    fn fit_recovers_noiseless_states() {
        let cfg = LoopConfig::experimental();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let psi = random_ket(3, &mut rng);
        let rho = DensityMatrix::pure(&psi);
        let res = simulate_single_pass(&rho, &cfg).unwrap();
        let counts: Vec<u64> = res.port_probabilities().iter().map(|p| (p * 1e6).round() as u64).collect();
        let fit = model_fit(&counts, &cfg, &FitOptions::default()).unwrap();
        let f = fidelity(&fit.estimate, &rho).unwrap();
        assert!(f > 0.9999, "fidelity {f}");
        assert!(fit.trace.windows(2).all(|w| w[1] <= w[0]));

        let mixed = DensityMatrix::maximally_mixed(3);
        let res = simulate_single_pass(&mixed, &cfg).unwrap();
        let counts: Vec<u64> = res.port_probabilities().iter().map(|p| (p * 1e6).round() as u64).collect();
        let fit = model_fit(&counts, &cfg, &FitOptions::default()).unwrap();
        assert!(fit.estimate.frobenius_distance(&mixed) < 1e-4);
    }

    #[test]
    fn fit_rejects_empty_counts() {
        assert!(matches!(model_fit(&[0; 9], &LoopConfig::experimental(), &FitOptions::default()), Err(Error::Contract(_))));
    }

    #[test]
    fn reconstruction_file_round_trip() {
        let cfg = LoopConfig::experimental();
        let rho = DensityMatrix::maximally_mixed(3);
        let res = simulate_single_pass(&rho, &cfg).unwrap();
        let counts: Vec<u64> = res.normalized_ports().iter().map(|p| (p * 6e4).round() as u64).collect();
        let rec = reconstruct(&counts, &cfg, Method::Normalization, 50, 1).unwrap();
        let file = rec.to_file();
        let json = serde_json::to_string(&file).unwrap();
        let back: ReconstructionFile = serde_json::from_str(&json).unwrap();
        assert_eq!(back, file);
        assert!(back.density().unwrap().frobenius_distance(&rec.rho) < 1e-15);
        assert!(rec.stat_err.iter().all(|e| *e > 0.0));
    }
}
