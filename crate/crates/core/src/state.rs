//! Complex value types shared by the rest of the crate: pure states, square
//! operators, density matrices and probability vectors, plus the Born rule and
//! the projection onto the set of density matrices.
//!
//! All matrices here are small (d ≤ 16) and dense, so everything is backed by
//! `nalgebra` dynamic matrices over `Complex<f64>`.

use std::fmt;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{json_parse_error, Error, Result};

pub type C64 = Complex<f64>;

/// Tolerance for exact algebraic identities.
pub const ALGEBRAIC_TOL: f64 = 1e-12;
/// Tolerance for quantities accumulated through longer pipelines.
pub const PIPELINE_TOL: f64 = 1e-9;
/// Smallest eigenvalue still accepted as positive.
pub const EIGEN_FLOOR: f64 = -1e-10;

pub(crate) fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// Root of unity `exp(2πi k / d)`.
pub fn omega_pow(d: usize, k: i64) -> C64 {
    let k = k.rem_euclid(d as i64) as f64;
    C64::from_polar(1.0, 2.0 * std::f64::consts::PI * k / d as f64)
}

/// A normalized pure state.
#[derive(Clone, Debug, PartialEq)]
pub struct Ket {
    amps: DVector<C64>,
}

impl Ket {
    /// Builds a ket, rejecting anything whose norm is off by more than 1e-12.
    pub fn new(amps: Vec<C64>) -> Result<Self> {
        let amps = DVector::from_vec(amps);
        if amps.len() < 2 {
            return Err(Error::DimensionTooSmall(amps.len()));
        }
        let norm = amps.norm();
        if (norm - 1.0).abs() > ALGEBRAIC_TOL {
            return Err(Error::NotNormalized(norm));
        }
        Ok(Ket { amps })
    }

    /// Builds a ket after rescaling to unit norm.
    pub fn normalized(amps: Vec<C64>) -> Result<Self> {
        let v = DVector::from_vec(amps);
        if v.len() < 2 {
            return Err(Error::DimensionTooSmall(v.len()));
        }
        let norm = v.norm();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::NotNormalized(norm));
        }
        Ok(Ket { amps: v / C64::from(norm) })
    }

    pub(crate) fn from_vector_unchecked(amps: DVector<C64>) -> Self {
        Ket { amps }
    }

    /// Computational basis state `|j⟩`.
    pub fn basis(dim: usize, j: usize) -> Result<Self> {
        if dim < 2 {
            return Err(Error::DimensionTooSmall(dim));
        }
        if j >= dim {
            return Err(Error::Contract(format!("basis index {j} out of range for d = {dim}")));
        }
        let mut amps = DVector::zeros(dim);
        amps[j] = C64::from(1.0);
        Ok(Ket { amps })
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn amplitudes(&self) -> &DVector<C64> {
        &self.amps
    }

    /// `⟨self|other⟩`.
    pub fn inner(&self, other: &Ket) -> Result<C64> {
        check_dim(self.dim(), other.dim())?;
        Ok(self.amps.dotc(&other.amps))
    }

    /// `|⟨self|other⟩|²`.
    pub fn overlap_sq(&self, other: &Ket) -> Result<f64> {
        Ok(self.inner(other)?.norm_sqr())
    }

    /// `|self⟩⟨self|`.
    pub fn projector(&self) -> DMatrix<C64> {
        &self.amps * self.amps.adjoint()
    }

    /// Same ray with the first non-negligible amplitude made real positive.
    pub fn phase_fixed(&self) -> Ket {
        let lead = self.amps.iter().find(|a| a.norm() > 1e-12).copied();
        match lead {
            Some(a) => {
                let phase = a / C64::from(a.norm());
                Ket { amps: self.amps.map(|x| x / phase) }
            }
            None => self.clone(),
        }
    }

    pub fn to_file(&self) -> StateFile {
        StateFile {
            dim: self.dim(),
            re: self.amps.iter().map(|a| a.re).collect(),
            im: self.amps.iter().map(|a| a.im).collect(),
        }
    }
}

/// A square complex matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Operator {
    m: DMatrix<C64>,
}

impl Operator {
    pub fn new(m: DMatrix<C64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Contract(format!(
                "operator must be square, got {}x{}",
                m.nrows(),
                m.ncols()
            )));
        }
        Ok(Operator { m })
    }

    pub fn identity(dim: usize) -> Self {
        Operator { m: DMatrix::identity(dim, dim) }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<C64> {
        self.m
    }

    pub fn adjoint(&self) -> Operator {
        Operator { m: self.m.adjoint() }
    }

    pub fn compose(&self, rhs: &Operator) -> Result<Operator> {
        check_dim(self.dim(), rhs.dim())?;
        Ok(Operator { m: &self.m * &rhs.m })
    }

    pub fn pow(&self, k: usize) -> Operator {
        let mut out = Operator::identity(self.dim());
        for _ in 0..k {
            out.m = &out.m * &self.m;
        }
        out
    }

    /// Applies the operator and renormalizes; errors if the image vanishes.
    pub fn apply(&self, ket: &Ket) -> Result<Ket> {
        check_dim(self.dim(), ket.dim())?;
        let v = &self.m * ket.amplitudes();
        Ket::normalized(v.iter().copied().collect())
    }

    /// Largest entry of `|M - M†|`.
    pub fn hermiticity_defect(&self) -> f64 {
        max_abs(&(&self.m - self.m.adjoint()))
    }

    pub fn trace(&self) -> C64 {
        self.m.trace()
    }

    /// Max-entry distance to another operator.
    pub fn max_distance(&self, other: &Operator) -> f64 {
        max_abs(&(&self.m - &other.m))
    }
}

/// A Hermitian, unit-trace, positive semidefinite matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityMatrix {
    m: DMatrix<C64>,
}

impl DensityMatrix {
    /// Validates Hermiticity and trace to 1e-12 and eigenvalues to -1e-10.
    pub fn new(m: DMatrix<C64>) -> Result<Self> {
        let op = Operator::new(m)?;
        if op.dim() < 2 {
            return Err(Error::DimensionTooSmall(op.dim()));
        }
        let defect = op.hermiticity_defect();
        if defect > ALGEBRAIC_TOL {
            return Err(Error::NotHermitian(defect));
        }
        let tr = op.trace();
        if (tr.re - 1.0).abs() > ALGEBRAIC_TOL || tr.im.abs() > ALGEBRAIC_TOL {
            return Err(Error::InvalidTrace(tr.re));
        }
        let m = hermitian_part(op.matrix());
        let (evals, _) = hermitian_eigen(&m);
        let min = evals.last().copied().unwrap_or(0.0);
        if min < EIGEN_FLOOR {
            return Err(Error::NotPositive(min));
        }
        Ok(DensityMatrix { m })
    }

    pub(crate) fn from_matrix_unchecked(m: DMatrix<C64>) -> Self {
        DensityMatrix { m }
    }

    pub fn pure(ket: &Ket) -> Self {
        DensityMatrix { m: ket.projector() }
    }

    pub fn maximally_mixed(dim: usize) -> Self {
        DensityMatrix { m: DMatrix::identity(dim, dim) / C64::from(dim as f64) }
    }

    pub fn dim(&self) -> usize {
        self.m.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.m
    }

    pub fn as_operator(&self) -> Operator {
        Operator { m: self.m.clone() }
    }

    /// `alpha * self + (1 - alpha) * other`.
    pub fn mix(&self, alpha: f64, other: &DensityMatrix) -> Result<DensityMatrix> {
        check_dim(self.dim(), other.dim())?;
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Contract(format!("mixing weight {alpha} outside [0, 1]")));
        }
        Ok(DensityMatrix {
            m: &self.m * C64::from(alpha) + &other.m * C64::from(1.0 - alpha),
        })
    }

    /// Eigenvalues in descending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        hermitian_eigen(&self.m).0
    }

    pub fn purity(&self) -> f64 {
        (&self.m * &self.m).trace().re
    }

    pub fn frobenius_distance(&self, other: &DensityMatrix) -> f64 {
        (&self.m - &other.m).norm()
    }

    pub fn to_file(&self) -> StateFile {
        let d = self.dim();
        let mut re = Vec::with_capacity(d * d);
        let mut im = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                re.push(self.m[(i, j)].re);
                im.push(self.m[(i, j)].im);
            }
        }
        StateFile { dim: d, re, im }
    }
}

impl fmt::Display for DensityMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in 0..self.dim() {
            for j in 0..self.dim() {
                let z = self.m[(i, j)];
                write!(f, "{:>9.5}{:+.5}i ", z.re, z.im)?;
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

/// Non-negative reals summing to one.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityVector {
    values: Vec<f64>,
}

impl ProbabilityVector {
    /// Accepts entries in [0, 1] (to 1e-12) summing to 1 within 1e-9. Entries
    /// within tolerance of the boundary are clipped.
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidProbabilities("empty".into()));
        }
        for (i, &p) in values.iter().enumerate() {
            if !p.is_finite() || !(-ALGEBRAIC_TOL..=1.0 + ALGEBRAIC_TOL).contains(&p) {
                return Err(Error::InvalidProbabilities(format!("entry {i} = {p}")));
            }
        }
        let sum: f64 = values.iter().sum();
        if (sum - 1.0).abs() > PIPELINE_TOL {
            return Err(Error::InvalidProbabilities(format!("sum = {sum}")));
        }
        Ok(ProbabilityVector {
            values: values.into_iter().map(|p| p.clamp(0.0, 1.0)).collect(),
        })
    }

    /// Rescales non-negative weights to sum to one.
    pub fn from_weights(weights: &[f64]) -> Result<Self> {
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidProbabilities("negative or non-finite weight".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidProbabilities("weights sum to zero".into()));
        }
        Ok(ProbabilityVector { values: weights.iter().map(|w| w / total).collect() })
    }

    pub fn uniform(n: usize) -> Self {
        ProbabilityVector { values: vec![1.0 / n as f64; n] }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Born rule `⟨b|ρ|b⟩`.
pub fn born_probability(rho: &DensityMatrix, b: &Ket) -> Result<f64> {
    check_dim(rho.dim(), b.dim())?;
    let v = b.amplitudes();
    let p = (v.adjoint() * rho.matrix() * v)[(0, 0)];
    if p.im.abs() > PIPELINE_TOL {
        return Err(Error::NotHermitian(p.im.abs()));
    }
    Ok(clip_unit(p.re))
}

/// Closest density matrix in Frobenius norm to a Hermitian operator.
///
/// The spectrum is projected onto the probability simplex by repeatedly
/// zeroing the smallest eigenvalue and spreading its deficit over the rest,
/// keeping the eigenvectors.
pub fn nearest_density_matrix(h: &Operator) -> Result<DensityMatrix> {
    let defect = h.hermiticity_defect();
    if defect > PIPELINE_TOL {
        return Err(Error::NotHermitian(defect));
    }
    if h.dim() < 2 {
        return Err(Error::DimensionTooSmall(h.dim()));
    }
    let herm = hermitian_part(h.matrix());
    let (evals, evecs) = hermitian_eigen(&herm);
    let clipped = project_onto_simplex(&evals);
    let d = h.dim();
    let mut m = DMatrix::<C64>::zeros(d, d);
    for (k, &lambda) in clipped.iter().enumerate() {
        if lambda == 0.0 {
            continue;
        }
        let v = evecs.column(k);
        m += (v * v.adjoint()) * C64::from(lambda);
    }
    Ok(DensityMatrix { m: hermitian_part(&m) })
}

/// Projects a descending spectrum onto `{μ ≥ 0, Σμ = 1}`, keeping the order.
fn project_onto_simplex(desc: &[f64]) -> Vec<f64> {
    let n = desc.len();
    let mut out = desc.to_vec();
    let excess = out.iter().sum::<f64>() - 1.0;
    out.iter_mut().for_each(|x| *x -= excess / n as f64);
    let mut active = n;
    let mut deficit = 0.0;
    while active > 0 {
        let i = active - 1;
        if out[i] + deficit / active as f64 >= 0.0 {
            break;
        }
        deficit += out[i];
        out[i] = 0.0;
        active -= 1;
    }
    if active == 0 {
        // unreachable for a unit-sum target; keep a valid fallback
        out.iter_mut().for_each(|x| *x = 1.0 / n as f64);
        return out;
    }
    for x in out.iter_mut().take(active) {
        *x += deficit / active as f64;
    }
    out
}

/// Uhlmann fidelity `(Tr √(√ρ σ √ρ))²`.
pub fn fidelity(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    check_dim(rho.dim(), sigma.dim())?;
    let sqrt_rho = psd_sqrt(rho.matrix());
    let inner = hermitian_part(&(&sqrt_rho * sigma.matrix() * &sqrt_rho));
    let (evals, _) = hermitian_eigen(&inner);
    let tr: f64 = evals.iter().map(|&l| l.max(0.0).sqrt()).sum();
    Ok((tr * tr).min(1.0))
}

fn psd_sqrt(m: &DMatrix<C64>) -> DMatrix<C64> {
    let (evals, evecs) = hermitian_eigen(m);
    let d = m.nrows();
    let mut out = DMatrix::<C64>::zeros(d, d);
    for (k, &l) in evals.iter().enumerate() {
        let v = evecs.column(k);
        out += (v * v.adjoint()) * C64::from(l.max(0.0).sqrt());
    }
    out
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues sorted descending
/// with ties broken by original index.
pub fn hermitian_eigen(m: &DMatrix<C64>) -> (Vec<f64>, DMatrix<C64>) {
    let eig = hermitian_part(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let evals = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let evecs = DMatrix::from_columns(
        &order.iter().map(|&k| eig.eigenvectors.column(k).into_owned()).collect::<Vec<_>>(),
    );
    (evals, evecs)
}

pub(crate) fn hermitian_part(m: &DMatrix<C64>) -> DMatrix<C64> {
    (m + m.adjoint()) * C64::from(0.5)
}

pub(crate) fn max_abs(m: &DMatrix<C64>) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub(crate) fn clip_unit(p: f64) -> f64 {
    if p < 0.0 && p > -PIPELINE_TOL {
        0.0
    } else if p > 1.0 && p < 1.0 + PIPELINE_TOL {
        1.0
    } else {
        p
    }
}

pub(crate) fn check_dim(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimensionMismatch { expected, got });
    }
    Ok(())
}

/// Haar-like random pure state from normalized Gaussian amplitudes.
pub fn random_ket<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Ket {
    let amps: Vec<C64> = (0..dim)
        .map(|_| c(rng.sample(StandardNormal), rng.sample(StandardNormal)))
        .collect();
    Ket::normalized(amps).expect("gaussian vector is nonzero")
}

/// Random full-rank mixed state `A A† / Tr(A A†)` with Gaussian `A`.
pub fn random_density<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> DensityMatrix {
    let a = DMatrix::<C64>::from_fn(dim, dim, |_, _| {
        c(rng.sample(StandardNormal), rng.sample(StandardNormal))
    });
    let aa = &a * a.adjoint();
    let tr = aa.trace().re;
    DensityMatrix { m: hermitian_part(&(aa / C64::from(tr))) }
}

/// On-disk form of a ket (`re`/`im` of length d) or a density matrix
/// (row-major `re`/`im` of length d²).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateFile {
    pub dim: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

/// Either form a state file can hold.
#[derive(Clone, Debug, PartialEq)]
pub enum LoadedState {
    Pure(Ket),
    Mixed(DensityMatrix),
}

impl LoadedState {
    pub fn density(&self) -> DensityMatrix {
        match self {
            LoadedState::Pure(k) => DensityMatrix::pure(k),
            LoadedState::Mixed(rho) => rho.clone(),
        }
    }

    pub fn ket(&self) -> Option<&Ket> {
        match self {
            LoadedState::Pure(k) => Some(k),
            LoadedState::Mixed(_) => None,
        }
    }
}

impl StateFile {
    pub fn into_state(self) -> Result<LoadedState> {
        let d = self.dim;
        if self.re.len() != self.im.len() {
            return Err(Error::Format(format!(
                "`re` has {} entries but `im` has {}",
                self.re.len(),
                self.im.len()
            )));
        }
        let z: Vec<C64> = self.re.iter().zip(&self.im).map(|(&r, &i)| c(r, i)).collect();
        if z.len() == d {
            Ok(LoadedState::Pure(Ket::new(z)?))
        } else if z.len() == d * d {
            Ok(LoadedState::Mixed(DensityMatrix::new(DMatrix::from_row_slice(d, d, &z))?))
        } else {
            Err(Error::Format(format!(
                "expected {d} (ket) or {} (density matrix) entries, found {}",
                d * d,
                z.len()
            )))
        }
    }

    pub fn load(path: &Path) -> Result<LoadedState> {
        let text = std::fs::read_to_string(path)?;
        let name = path.display().to_string();
        let file: StateFile = serde_json::from_str(&text).map_err(|e| json_parse_error(&name, e))?;
        file.into_state().map_err(|e| Error::Parse { file: name, line: 0, key: "re/im".into(), msg: e.to_string() })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("state file serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ket(v: &[(f64, f64)]) -> Ket {
        Ket::normalized(v.iter().map(|&(r, i)| c(r, i)).collect()).unwrap()
    }

    #[test]
    fn ket_rejects_unnormalized_and_tiny() {
        assert!(matches!(Ket::new(vec![c(1.0, 0.0), c(1.0, 0.0)]), Err(Error::NotNormalized(_))));
        assert!(matches!(Ket::new(vec![c(1.0, 0.0)]), Err(Error::DimensionTooSmall(1))));
    }

    #[test]
    fn born_basic_cases() {
        let zero = Ket::basis(3, 0).unwrap();
        let one = Ket::basis(3, 1).unwrap();
        let rho0 = DensityMatrix::pure(&zero);
        assert_eq!(born_probability(&rho0, &zero).unwrap(), 1.0);
        assert_eq!(born_probability(&rho0, &one).unwrap(), 0.0);

        // |⟨b|ψ⟩|² with ψ = (|0⟩+|2⟩)/√2, b = (|0⟩+i|2⟩)/√2: (1 + i)/2 has modulus² 1/2
        let psi = ket(&[(1.0, 0.0), (0.0, 0.0), (1.0, 0.0)]);
        let b = ket(&[(1.0, 0.0), (0.0, 0.0), (0.0, 1.0)]);
        let p = born_probability(&DensityMatrix::pure(&psi), &b).unwrap();
        assert!((p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn born_dimension_mismatch() {
        let rho = DensityMatrix::maximally_mixed(3);
        let b = Ket::basis(2, 0).unwrap();
        assert!(matches!(born_probability(&rho, &b), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn nearest_density_keeps_feasible_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let rho = random_density(3, &mut rng);
        let out = nearest_density_matrix(&rho.as_operator()).unwrap();
        assert!(out.frobenius_distance(&rho) < 1e-12);

        let diag = DMatrix::from_diagonal(&DVector::from_vec(vec![c(0.5, 0.0), c(0.5, 0.0), c(0.0, 0.0)]));
        let out = nearest_density_matrix(&Operator::new(diag.clone()).unwrap()).unwrap();
        assert!(max_abs(&(out.matrix() - diag)) < 1e-12);
    }

    #[test]
    fn nearest_density_clips_four_projector_minus_identity() {
        let psi = ket(&[(1.0, 0.0), (1.0, 0.0), (0.0, 0.0)]);
        let h = psi.projector() * C64::from(4.0) - DMatrix::identity(3, 3);
        // oracle: spectrum (3, -1, -1) projected onto the simplex is (1, 0, 0)
        let out = nearest_density_matrix(&Operator::new(h).unwrap()).unwrap();
        assert!(max_abs(&(out.matrix() - psi.projector())) < 1e-12);
    }

    #[test]
    fn nearest_density_rejects_non_hermitian() {
        let mut m = DMatrix::<C64>::identity(2, 2);
        m[(0, 1)] = c(0.3, 0.0);
        assert!(matches!(
            nearest_density_matrix(&Operator::new(m).unwrap()),
            Err(Error::NotHermitian(_))
        ));
    }

    #[test]
    fn simplex_projection_matches_brute_force() {
        // brute force: minimize Σ(μ-λ)² on a fine grid of the 2-simplex
        let lambda = [0.9, 0.4, -0.3];
        let proj = project_onto_simplex(&lambda);
        let n = 400;
        let mut best = (f64::INFINITY, [0.0; 3]);
        for i in 0..=n {
            for j in 0..=(n - i) {
                let mu = [i as f64 / n as f64, j as f64 / n as f64, (n - i - j) as f64 / n as f64];
                let cost: f64 = mu.iter().zip(&lambda).map(|(a, b)| (a - b) * (a - b)).sum();
                if cost < best.0 {
                    best = (cost, mu);
                }
            }
        }
        for k in 0..3 {
            assert!((proj[k] - best.1[k]).abs() < 2.0 / n as f64, "{proj:?} vs {:?}", best.1);
        }
    }

    #[test]
    fn fidelity_of_pure_states_is_overlap() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = random_ket(3, &mut rng);
        let b = random_ket(3, &mut rng);
        let f = fidelity(&DensityMatrix::pure(&a), &DensityMatrix::pure(&b)).unwrap();
        assert!((f - a.overlap_sq(&b).unwrap()).abs() < 1e-7);
        let rho = random_density(3, &mut rng);
        assert!((fidelity(&rho, &rho).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn state_file_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let rho = random_density(3, &mut rng);
        let back = serde_json::from_str::<StateFile>(&rho.to_file().to_json())
            .unwrap()
            .into_state()
            .unwrap();
        assert_eq!(back, LoadedState::Mixed(rho));
        let k = random_ket(3, &mut rng);
        let back = k.to_file().into_state().unwrap();
        assert_eq!(back, LoadedState::Pure(k));
    }

    #[test]
    fn density_matrix_validation() {
        let mut m = DMatrix::<C64>::identity(2, 2);
        assert!(matches!(DensityMatrix::new(m.clone()), Err(Error::InvalidTrace(_))));
        m[(1, 1)] = c(-0.5, 0.0);
        m[(0, 0)] = c(1.5, 0.0);
        assert!(matches!(DensityMatrix::new(m), Err(Error::NotPositive(_))));
    }
}
