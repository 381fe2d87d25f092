//! Weyl–Heisenberg SIC-POVMs.
//!
//! The d² elements are `X^m Z^n |φ⟩` for a fiducial `|φ⟩`, with `X|j⟩ = |j+1⟩`
//! and `Z|j⟩ = ω^j |j⟩`, `ω = e^{2πi/d}`. The orbit is a SIC exactly when every
//! pair of distinct elements has squared overlap `1/(d+1)`.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{json_parse_error, Error, Result};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::state::{c, check_dim, clip_unit, omega_pow, DensityMatrix, Ket, Operator, ProbabilityVector, C64};

/// Default tolerance for [`verify_sic`].
pub const SIC_TOL: f64 = 1e-9;

/// Qubit fiducial returned by `find_fiducial(2, 0, 100, 1e-12)`, frozen after
/// phase fixing. Its orbit is the regular tetrahedron on the Bloch sphere.
const QUBIT_FIDUCIAL: [(f64, f64); 2] = [
    (0.888_073_833_977_114_9, 0.0),
    (0.325_057_583_671_868_7, 0.325_057_583_671_868_4),
];

/// Shift operator `X|j⟩ = |j ⊕ 1⟩`.
pub fn shift(d: usize) -> Result<Operator> {
    if d < 2 {
        return Err(Error::DimensionTooSmall(d));
    }
    let mut m = DMatrix::<C64>::zeros(d, d);
    for j in 0..d {
        m[((j + 1) % d, j)] = C64::from(1.0);
    }
    Operator::new(m)
}

/// Clock operator `Z|j⟩ = ω^j |j⟩`.
pub fn clock(d: usize) -> Result<Operator> {
    if d < 2 {
        return Err(Error::DimensionTooSmall(d));
    }
    let diag = DVector::from_iterator(d, (0..d).map(|j| omega_pow(d, j as i64)));
    Operator::new(DMatrix::from_diagonal(&diag))
}

/// Displacement `X^m Z^n`; negative powers are reduced mod d.
pub fn wh_operator(d: usize, m: i64, n: i64) -> Result<Operator> {
    let x = shift(d)?.pow(m.rem_euclid(d as i64) as usize);
    let z = clock(d)?.pow(n.rem_euclid(d as i64) as usize);
    x.compose(&z)
}

/// Element index `(m, n)`, both reduced mod d.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SicElementLabel {
    pub m: usize,
    pub n: usize,
}

impl SicElementLabel {
    pub fn new(d: usize, m: i64, n: i64) -> Self {
        let d = d as i64;
        SicElementLabel { m: m.rem_euclid(d) as usize, n: n.rem_euclid(d) as usize }
    }

    fn row_major(&self, d: usize) -> usize {
        self.m * d + self.n
    }
}

impl fmt::Display for SicElementLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{})", self.m, self.n)
    }
}

/// Seed state of a Weyl–Heisenberg orbit.
#[derive(Clone, Debug, PartialEq)]
pub struct Fiducial {
    ket: Ket,
}

impl Fiducial {
    pub fn new(ket: Ket) -> Self {
        Fiducial { ket }
    }

    pub fn ket(&self) -> &Ket {
        &self.ket
    }

    pub fn dim(&self) -> usize {
        self.ket.dim()
    }
}

/// Fiducials with a closed form: `(|0⟩+|1⟩)/√2` for d = 3 and the frozen
/// tetrahedral fiducial for d = 2.
pub fn standard_fiducial(d: usize) -> Result<Fiducial> {
    match d {
        2 => Ok(Fiducial::new(Ket::normalized(
            QUBIT_FIDUCIAL.iter().map(|&(r, i)| c(r, i)).collect(),
        )?)),
        3 => {
            let s = std::f64::consts::FRAC_1_SQRT_2;
            Ok(Fiducial::new(Ket::new(vec![c(s, 0.0), c(s, 0.0), c(0.0, 0.0)])?))
        }
        _ => Err(Error::NoStoredFiducial(d)),
    }
}

/// Order in which the storage loop exits report SIC elements (d = 3 only).
///
/// Leaving after `g` clock gates on round trip `t` measures the fiducial in the
/// frame `Z^g X^{t-1}`, i.e. the element `X^{-(t-1)} Z^{-g} |φ⟩`.
pub fn canonical_loop_order(d: usize) -> Result<Vec<SicElementLabel>> {
    if d != 3 {
        return Err(Error::UnsupportedDimension(d));
    }
    Ok(loop_exit_labels(d))
}

pub(crate) fn loop_exit_labels(d: usize) -> Vec<SicElementLabel> {
    let mut out = Vec::with_capacity(d * d);
    for trip in 1..=d as i64 {
        for gate in 1..=d as i64 {
            out.push(SicElementLabel::new(d, -(trip - 1), -gate));
        }
    }
    out
}

/// Outcome of [`verify_sic`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SicCheck {
    /// `max_{i≠j} | |⟨ψ_i|ψ_j⟩|² − 1/(d+1) |`
    pub max_overlap_deviation: f64,
    /// Frobenius norm of `Σ (1/d)|ψ_i⟩⟨ψ_i| − I`.
    pub completeness_residual: f64,
    pub tol: f64,
    pub passed: bool,
}

/// The d² orbit kets of a fiducial with their labels.
#[derive(Clone, Debug)]
pub struct SicPovm {
    dim: usize,
    fiducial: Fiducial,
    /// Row-major in (m, n).
    elements: Vec<(SicElementLabel, Ket)>,
    loop_order: Vec<SicElementLabel>,
    check: SicCheck,
}

impl SicPovm {
    /// Builds the orbit. Whether it actually is a SIC is recorded in
    /// [`SicPovm::check`] (at [`SIC_TOL`]) but not enforced.
    pub fn from_fiducial(fiducial: &Fiducial) -> Result<Self> {
        let d = fiducial.dim();
        let mut elements = Vec::with_capacity(d * d);
        for m in 0..d {
            for n in 0..d {
                let op = wh_operator(d, m as i64, n as i64)?;
                let v = op.matrix() * fiducial.ket().amplitudes();
                elements.push((SicElementLabel { m, n }, Ket::from_vector_unchecked(v)));
            }
        }
        let loop_order = if d == 3 {
            loop_exit_labels(d)
        } else {
            elements.iter().map(|(l, _)| *l).collect()
        };
        let mut povm = SicPovm {
            dim: d,
            fiducial: fiducial.clone(),
            elements,
            loop_order,
            check: SicCheck {
                max_overlap_deviation: f64::NAN,
                completeness_residual: f64::NAN,
                tol: SIC_TOL,
                passed: false,
            },
        };
        povm.check = verify_sic(&povm, SIC_TOL);
        Ok(povm)
    }

    /// The SIC built on [`standard_fiducial`].
    pub fn standard(d: usize) -> Result<Self> {
        Self::from_fiducial(&standard_fiducial(d)?)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fiducial(&self) -> &Fiducial {
        &self.fiducial
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn check(&self) -> &SicCheck {
        &self.check
    }

    pub fn is_verified(&self) -> bool {
        self.check.passed
    }

    pub fn loop_order(&self) -> &[SicElementLabel] {
        &self.loop_order
    }

    pub fn element(&self, label: SicElementLabel) -> &Ket {
        &self.elements[label.row_major(self.dim)].1
    }

    /// Elements in row-major (m, n) order.
    pub fn elements(&self) -> impl Iterator<Item = (SicElementLabel, &Ket)> {
        self.elements.iter().map(|(l, k)| (*l, k))
    }

    /// Elements in loop order, the order every probability vector uses.
    pub fn ordered(&self) -> impl Iterator<Item = (SicElementLabel, &Ket)> + '_ {
        self.loop_order.iter().map(move |l| (*l, self.element(*l)))
    }

    pub(crate) fn require_verified(&self) -> Result<()> {
        if !self.check.passed {
            return Err(Error::Contract(format!(
                "orbit is not a SIC (overlap deviation {:e}, completeness residual {:e})",
                self.check.max_overlap_deviation, self.check.completeness_residual
            )));
        }
        Ok(())
    }

    pub fn to_file(&self) -> SicFile {
        let amps = self.fiducial.ket().amplitudes();
        SicFile {
            dim: self.dim,
            fiducial: ComplexArrays {
                re: amps.iter().map(|a| a.re).collect(),
                im: amps.iter().map(|a| a.im).collect(),
            },
            elements: self
                .elements()
                .map(|(l, k)| SicElementFile {
                    m: l.m,
                    n: l.n,
                    re: k.amplitudes().iter().map(|a| a.re).collect(),
                    im: k.amplitudes().iter().map(|a| a.im).collect(),
                })
                .collect(),
            loop_order: self.loop_order.iter().map(|l| [l.m, l.n]).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexArrays {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SicElementFile {
    pub m: usize,
    pub n: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

/// JSON export of a SIC.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SicFile {
    pub dim: usize,
    pub fiducial: ComplexArrays,
    pub elements: Vec<SicElementFile>,
    pub loop_order: Vec<[usize; 2]>,
}

impl SicFile {
    pub fn load(path: &std::path::Path) -> Result<Self> {
        serde_json::from_str(&std::fs::read_to_string(path)?)
            .map_err(|e| json_parse_error(&path.display().to_string(), e))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("SIC file serializes")
    }

    /// Rebuilds the SIC from the stored fiducial and checks the listed
    /// elements and loop order agree with it.
    pub fn into_povm(self) -> Result<SicPovm> {
        let amps: Vec<C64> = self.fiducial.re.iter().zip(&self.fiducial.im).map(|(&r, &i)| c(r, i)).collect();
        check_dim(self.dim, amps.len())?;
        let povm = SicPovm::from_fiducial(&Fiducial::new(Ket::new(amps)?))?;
        if self.elements.len() != povm.len() {
            return Err(Error::Format(format!("expected {} elements, found {}", povm.len(), self.elements.len())));
        }
        for e in &self.elements {
            let label = SicElementLabel::new(self.dim, e.m as i64, e.n as i64);
            let stored: Vec<C64> = e.re.iter().zip(&e.im).map(|(&r, &i)| c(r, i)).collect();
            let expected = povm.element(label).amplitudes();
            if stored.len() != self.dim
                || stored.iter().zip(expected.iter()).any(|(a, b)| (a - b).norm() > 1e-12)
            {
                return Err(Error::Format(format!("element {label} disagrees with the fiducial orbit")));
            }
        }
        let order: Vec<SicElementLabel> =
            self.loop_order.iter().map(|p| SicElementLabel::new(self.dim, p[0] as i64, p[1] as i64)).collect();
        if order != povm.loop_order {
            return Err(Error::Format("loop_order disagrees with the canonical order".into()));
        }
        Ok(povm)
    }
}

/// Checks equiangularity and completeness of an orbit.
pub fn verify_sic(povm: &SicPovm, tol: f64) -> SicCheck {
    let d = povm.dim;
    let target = 1.0 / (d as f64 + 1.0);
    let kets: Vec<&Ket> = povm.elements.iter().map(|(_, k)| k).collect();
    let mut max_dev: f64 = 0.0;
    for i in 0..kets.len() {
        for j in (i + 1)..kets.len() {
            let o = kets[i].amplitudes().dotc(kets[j].amplitudes()).norm_sqr();
            max_dev = max_dev.max((o - target).abs());
        }
    }
    let mut frame = DMatrix::<C64>::zeros(d, d);
    for k in &kets {
        frame += k.projector();
    }
    frame /= C64::from(d as f64);
    frame -= DMatrix::<C64>::identity(d, d);
    let completeness = frame.norm();
    SicCheck {
        max_overlap_deviation: max_dev,
        completeness_residual: completeness,
        tol,
        passed: max_dev <= tol && completeness <= tol,
    }
}

/// `⟨φ|X^m Z^n|φ⟩` for every (m, n), row-major.
fn orbit_overlaps(amps: &[C64]) -> Vec<C64> {
    let d = amps.len();
    let mut out = Vec::with_capacity(d * d);
    for m in 0..d {
        for n in 0..d {
            let mut s = C64::new(0.0, 0.0);
            for j in 0..d {
                s += amps[(j + m) % d].conj() * omega_pow(d, (n * j) as i64) * amps[j];
            }
            out.push(s);
        }
    }
    out
}

/// `Σ_{(m,n)≠(0,0)} |⟨φ|X^m Z^n φ⟩|⁴`. Bounded below by `(d−1)/(d+1)`, with
/// equality exactly for SIC fiducials.
pub fn frame_potential(fiducial: &Fiducial) -> f64 {
    let amps: Vec<C64> = fiducial.ket().amplitudes().iter().copied().collect();
    orbit_overlaps(&amps).iter().skip(1).map(|z| z.norm_sqr().powi(2)).sum()
}

/// Lower bound of [`frame_potential`] in dimension d.
pub fn frame_potential_bound(d: usize) -> f64 {
    (d as f64 - 1.0) / (d as f64 + 1.0)
}

/// Frame potential minus its lower bound, written as
/// `Σ (|⟨φ|D φ⟩|² − 1/(d+1))²` (the nontrivial overlaps always sum to d−1),
/// which keeps full relative precision near a SIC.
fn excess_frame_potential(amps: &[C64]) -> f64 {
    let d = amps.len();
    let target = 1.0 / (d as f64 + 1.0);
    orbit_overlaps(amps).iter().skip(1).map(|z| (z.norm_sqr() - target).powi(2)).sum()
}

fn max_overlap_residual(amps: &[C64]) -> f64 {
    let d = amps.len();
    let target = 1.0 / (d as f64 + 1.0);
    orbit_overlaps(amps).iter().skip(1).map(|z| (z.norm_sqr() - target).abs()).fold(0.0, f64::max)
}

/// Maps 2d−2 reals to a normalized ket with real positive first amplitude.
fn params_to_amps(d: usize, p: &[f64]) -> Vec<C64> {
    let mut amps = Vec::with_capacity(d);
    amps.push(C64::new(1.0, 0.0));
    for k in 1..d {
        amps.push(C64::new(p[k - 1], p[d - 1 + k - 1]));
    }
    let norm = amps.iter().map(|a| a.norm_sqr()).sum::<f64>().sqrt();
    amps.iter().map(|a| a / norm).collect()
}

/// Restarts per perturbation cycle of [`find_fiducial`].
pub const RESTART_CYCLE: usize = 6;

/// Outcome of [`find_fiducial`].
#[derive(Clone, Debug)]
pub struct FrameSearchReport {
    pub fiducial: Fiducial,
    /// Largest `| |⟨φ|D φ⟩|² − 1/(d+1) |` over nontrivial displacements.
    pub residual: f64,
    pub restarts_used: usize,
    pub converged: bool,
}

/// Multi-start simplex minimization of the frame potential.
///
/// Restarts run in cycles of [`RESTART_CYCLE`]. The first restart of a cycle
/// starts from a fresh random point; restart k of a cycle starts from the best
/// point so far perturbed with scale `0.3 · 2^{-(k-1)}`. Each restart draws
/// from its own RNG stream, so results depend only on `seed`.
pub fn find_fiducial(d: usize, seed: u64, restarts: usize, tol: f64) -> Result<FrameSearchReport> {
    if d < 2 {
        return Err(Error::DimensionTooSmall(d));
    }
    if restarts == 0 {
        return Err(Error::Contract("find_fiducial needs at least one restart".into()));
    }
    let nparams = 2 * d - 2;
    let objective = |p: &[f64]| excess_frame_potential(&params_to_amps(d, p));

    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut used = 0;
    for restart in 0..restarts {
        used = restart + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(restart as u64);
        let (start, step) = match &best {
            Some((x, _)) if restart % RESTART_CYCLE != 0 => {
                let scale = 0.3 * 0.5f64.powi((restart % RESTART_CYCLE) as i32 - 1);
                let start = x.iter().map(|v| v + scale * rng.sample::<f64, _>(StandardNormal)).collect();
                (start, scale.max(1e-4))
            }
            _ => ((0..nparams).map(|_| rng.sample::<f64, _>(StandardNormal)).collect::<Vec<_>>(), 0.3),
        };
        let result = nelder_mead(
            objective,
            &start,
            NelderMeadOptions { initial_step: step, max_iter: 4000 * nparams, f_tol: 1e-30, x_tol: 1e-14 },
        );
        let residual = max_overlap_residual(&params_to_amps(d, &result.x));
        // strict comparison keeps the lowest restart index on ties
        if best.as_ref().is_none_or(|(_, r)| residual < *r) {
            best = Some((result.x, residual));
        }
        if best.as_ref().is_some_and(|(_, r)| *r <= tol) {
            break;
        }
    }
    let (x, residual) = best.expect("at least one restart ran");
    let ket = Ket::normalized(params_to_amps(d, &x))?.phase_fixed();
    Ok(FrameSearchReport { fiducial: Fiducial::new(ket), residual, restarts_used: used, converged: residual <= tol })
}

/// SIC outcome probabilities `(1/d)⟨ψ_i|ρ|ψ_i⟩` in loop order.
pub fn sic_probabilities(rho: &DensityMatrix, povm: &SicPovm) -> Result<ProbabilityVector> {
    check_dim(povm.dim(), rho.dim())?;
    povm.require_verified()?;
    let d = povm.dim() as f64;
    let values: Vec<f64> = povm
        .ordered()
        .map(|(_, k)| {
            let v = k.amplitudes();
            clip_unit((v.adjoint() * rho.matrix() * v)[(0, 0)].re / d)
        })
        .collect();
    ProbabilityVector::new(values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{max_abs, random_density};

    fn approx_ket(k: &Ket, expected: &[C64]) -> bool {
        k.amplitudes().iter().zip(expected).all(|(a, b)| (a - b).norm() < 1e-12)
    }

    #[test]
    fn wh_operator_examples() {
        assert!(wh_operator(3, 0, 0).unwrap().max_distance(&Operator::identity(3)) < 1e-15);
        let x = wh_operator(3, 1, 0).unwrap();
        let out = x.matrix() * Ket::basis(3, 0).unwrap().amplitudes();
        assert!((out[1] - C64::from(1.0)).norm() < 1e-15);
        let z = wh_operator(3, 0, 1).unwrap();
        let out = z.matrix() * Ket::basis(3, 1).unwrap().amplitudes();
        assert!((out[1] - omega_pow(3, 1)).norm() < 1e-15);
        assert!(matches!(wh_operator(1, 0, 0), Err(Error::DimensionTooSmall(1))));
    }

    #[test]
    fn group_relations() {
        for d in 2..=8 {
            let x = shift(d).unwrap();
            let z = clock(d).unwrap();
            let id = Operator::identity(d);
            assert!(x.pow(d).max_distance(&id) < 1e-12);
            assert!(z.pow(d).max_distance(&id) < 1e-12);
            let zx = z.compose(&x).unwrap();
            let xz = x.compose(&z).unwrap();
            let wxz = Operator::new(xz.matrix() * omega_pow(d, 1)).unwrap();
            assert!(zx.max_distance(&wxz) < 1e-12, "d = {d}");
        }
    }

    #[test]
    fn qutrit_orbit_examples() {
        let povm = SicPovm::standard(3).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let zero = C64::new(0.0, 0.0);
        assert!(approx_ket(povm.element(SicElementLabel { m: 2, n: 0 }), &[c(s, 0.0), zero, c(s, 0.0)]));
        let w = omega_pow(3, 1) * s;
        assert!(approx_ket(povm.element(SicElementLabel { m: 0, n: 1 }), &[c(s, 0.0), w, zero]));
        assert_eq!(povm.element(SicElementLabel { m: 0, n: 0 }), povm.fiducial().ket());
    }

    #[test]
    fn standard_fiducials_are_sics() {
        let f3 = standard_fiducial(3).unwrap();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        assert!(approx_ket(f3.ket(), &[c(s, 0.0), c(s, 0.0), c(0.0, 0.0)]));
        let povm = SicPovm::standard(3).unwrap();
        let check = verify_sic(&povm, 1e-10);
        assert!(check.passed && check.max_overlap_deviation < 1e-12 && check.completeness_residual < 1e-10);

        let povm2 = SicPovm::standard(2).unwrap();
        assert_eq!(povm2.len(), 4);
        assert!(verify_sic(&povm2, 1e-10).passed, "{:?}", povm2.check());
        assert!(matches!(standard_fiducial(5), Err(Error::NoStoredFiducial(5))));
    }

    #[test]
    fn basis_state_is_not_a_fiducial() {
        let povm = SicPovm::from_fiducial(&Fiducial::new(Ket::basis(3, 0).unwrap())).unwrap();
        let check = verify_sic(&povm, 1e-10);
        assert!(!check.passed);
        assert!((check.max_overlap_deviation - 0.75).abs() < 1e-12);
        let rho = DensityMatrix::maximally_mixed(3);
        assert!(matches!(sic_probabilities(&rho, &povm), Err(Error::Contract(_))));
    }

    #[test]
    fn frame_potential_examples() {
        assert!((frame_potential(&standard_fiducial(3).unwrap()) - 0.5).abs() < 1e-12);
        assert!((frame_potential(&standard_fiducial(2).unwrap()) - 1.0 / 3.0).abs() < 1e-12);
        let basis = Fiducial::new(Ket::basis(3, 0).unwrap());
        assert!((frame_potential(&basis) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn excess_potential_equals_shifted_frame_potential() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for d in 2..=5 {
            let k = crate::state::random_ket(d, &mut rng);
            let amps: Vec<C64> = k.amplitudes().iter().copied().collect();
            let fp = frame_potential(&Fiducial::new(k));
            assert!((excess_frame_potential(&amps) - (fp - frame_potential_bound(d))).abs() < 1e-12);
        }
    }

    #[test]
    fn loop_order_anchors() {
        let order = canonical_loop_order(3).unwrap();
        let labels: Vec<(usize, usize)> = order.iter().map(|l| (l.m, l.n)).collect();
        assert_eq!(labels, vec![(0, 2), (0, 1), (0, 0), (2, 2), (2, 1), (2, 0), (1, 2), (1, 1), (1, 0)]);
        assert!(matches!(canonical_loop_order(4), Err(Error::UnsupportedDimension(4))));
        let mut sorted = order.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), 9);
    }

    #[test]
    fn probabilities_for_reference_inputs() {
        let povm = SicPovm::standard(3).unwrap();
        let p = sic_probabilities(&DensityMatrix::maximally_mixed(3), &povm).unwrap();
        assert!(p.values().iter().all(|v| (v - 1.0 / 9.0).abs() < 1e-12));

        let p = sic_probabilities(&DensityMatrix::pure(&Ket::basis(3, 0).unwrap()), &povm).unwrap();
        for (i, v) in p.values().iter().enumerate() {
            let want = if i < 6 { 1.0 / 6.0 } else { 0.0 };
            assert!((v - want).abs() < 1e-12, "port {i}: {v}");
        }

        let psi = Ket::normalized(vec![c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0)]).unwrap();
        let p = sic_probabilities(&DensityMatrix::pure(&psi), &povm).unwrap();
        for (i, v) in p.values().iter().enumerate() {
            let want = if i == 5 { 1.0 / 3.0 } else { 1.0 / 12.0 };
            assert!((v - want).abs() < 1e-12, "port {i}: {v}");
        }
    }

    #[test]
    fn completeness_of_random_state_probabilities() {
        let povm = SicPovm::standard(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let rho = random_density(3, &mut rng);
        let p = sic_probabilities(&rho, &povm).unwrap();
        assert!((p.values().iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn find_fiducial_small_dims() {
        for d in [2usize, 3] {
            let report = find_fiducial(d, 1, 100, 1e-9).unwrap();
            assert!(report.converged, "d = {d}: {report:?}");
            let povm = SicPovm::from_fiducial(&report.fiducial).unwrap();
            assert!(verify_sic(&povm, 1e-9).passed);
            let fp = frame_potential(&report.fiducial);
            assert!((fp - frame_potential_bound(d)).abs() < 1e-9);
        }
    }

    #[test]
    fn find_fiducial_is_deterministic() {
        let a = find_fiducial(3, 42, 20, 1e-9).unwrap();
        let b = find_fiducial(3, 42, 20, 1e-9).unwrap();
        assert_eq!(a.fiducial, b.fiducial);
        assert_eq!(a.restarts_used, b.restarts_used);
    }

    #[test]
    fn sic_file_round_trip() {
        let povm = SicPovm::standard(3).unwrap();
        let json = serde_json::to_string(&povm.to_file()).unwrap();
        let back: SicFile = serde_json::from_str(&json).unwrap();
        let povm2 = back.into_povm().unwrap();
        assert_eq!(povm2.loop_order(), povm.loop_order());
        for ((_, a), (_, b)) in povm.elements().zip(povm2.elements()) {
            assert!(max_abs(&(a.projector() - b.projector())) < 1e-15);
        }
    }
}
