//! The Born rule written over SIC outcome probabilities:
//!
//! ```text
//! p(B_j) = (d+1) Σ_i p(A_i) p(B_j | A_i) − 1
//! ```
//!
//! where `p(A_i)` are SIC probabilities and `p(B_j | A_i)` is the probability of
//! outcome `B_j` for a system prepared in the i-th SIC state. For exact inputs
//! this is an identity; [`compare_with_direct`] also runs it on simulated
//! finite-count data from the storage loop.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loopsim::{multinomial, simulate_single_pass, systematics_samples, LoopConfig};
use crate::reconstruct::{Corrector, Method};
use crate::sic::{sic_probabilities, SicPovm};
use crate::state::{born_probability, check_dim, DensityMatrix, Ket, ProbabilityVector};

/// `p(B_j | A_i)`: one row per SIC element (loop order), one column per outcome.
#[derive(Clone, Debug, PartialEq)]
pub struct ConditionalMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl ConditionalMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.len());
        if cols == 0 || rows.iter().any(|r| r.len() != cols) {
            return Err(Error::Contract("conditional matrix rows must be non-empty and equal length".into()));
        }
        if rows.iter().flatten().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Contract("conditional probabilities must lie in [0, 1]".into()));
        }
        Ok(ConditionalMatrix { rows: rows.len(), cols, data: rows.into_iter().flatten().collect() })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }
}

/// Exact conditionals `|⟨B_j|ψ_i⟩|²`, with the post-measurement state taken
/// to be the SIC ket itself.
pub fn conditional_matrix(povm: &SicPovm, outcomes: &[Ket]) -> Result<ConditionalMatrix> {
    if outcomes.is_empty() {
        return Err(Error::Contract("need at least one outcome".into()));
    }
    for b in outcomes {
        check_dim(povm.dim(), b.dim())?;
    }
    let rows = povm
        .ordered()
        .map(|(_, psi)| outcomes.iter().map(|b| b.overlap_sq(psi).map(|o| o.clamp(0.0, 1.0))).collect())
        .collect::<Result<Vec<Vec<f64>>>>()?;
    ConditionalMatrix::from_rows(rows)
}

/// `(d+1) Σ_i p_A(i) p(B_j|A_i) − 1`, unclipped.
pub fn qltp_predict(p_a: &ProbabilityVector, conditionals: &ConditionalMatrix, j: usize) -> Result<f64> {
    if p_a.len() != conditionals.rows() {
        return Err(Error::Contract(format!(
            "{} SIC probabilities but {} conditional rows",
            p_a.len(),
            conditionals.rows()
        )));
    }
    if j >= conditionals.cols() {
        return Err(Error::Contract(format!("outcome index {j} out of range")));
    }
    let d = (p_a.len() as f64).sqrt().round();
    if (d * d) as usize != p_a.len() {
        return Err(Error::Contract(format!("{} is not a square number of SIC outcomes", p_a.len())));
    }
    let s: f64 = p_a.values().iter().enumerate().map(|(i, p)| p * conditionals.get(i, j)).sum();
    Ok((d + 1.0) * s - 1.0)
}

/// Predicted and directly measured probability of one outcome.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QltpReport {
    pub predicted: f64,
    pub direct: f64,
    /// Statistical errors of (predicted, direct).
    pub stat: [f64; 2],
    /// Systematic errors of (predicted, direct).
    pub sys: [f64; 2],
}

impl QltpReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Settings for the simulated finite-count comparison.
#[derive(Clone, Debug)]
pub struct NoiseModel {
    /// Detected SIC coincidences.
    pub sic_total: u64,
    /// Coincidences per PVM setting, summed over both analyzer ports.
    pub pvm_total: u64,
    pub config: LoopConfig,
    pub method: Method,
    pub seed: u64,
    pub bootstrap: usize,
    pub systematics_samples: usize,
}

impl NoiseModel {
    /// 6×10⁴ SIC coincidences, 10⁵ per PVM, normalization correction.
    pub fn experimental(seed: u64) -> Self {
        NoiseModel {
            sic_total: 60_000,
            pvm_total: 100_000,
            config: LoopConfig { seed, ..LoopConfig::experimental() },
            method: Method::Normalization,
            seed,
            bootstrap: 500,
            systematics_samples: 200,
        }
    }
}

/// Exact mode (`noise = None`): predicted and direct are both computed from ρ
/// and agree to rounding. Noisy mode samples SIC counts from the loop model,
/// binomial PVM counts for every SIC preparation and for ρ, corrects the SIC
/// data, and attaches bootstrap and plate-misalignment errors.
pub fn compare_with_direct(rho: &DensityMatrix, b: &Ket, povm: &SicPovm, noise: Option<&NoiseModel>) -> Result<QltpReport> {
    check_dim(povm.dim(), rho.dim())?;
    check_dim(povm.dim(), b.dim())?;
    let conditionals = conditional_matrix(povm, std::slice::from_ref(b))?;
    let Some(noise) = noise else {
        let p_a = sic_probabilities(rho, povm)?;
        return Ok(QltpReport {
            predicted: qltp_predict(&p_a, &conditionals, 0)?,
            direct: born_probability(rho, b)?,
            stat: [0.0; 2],
            sys: [0.0; 2],
        });
    };
    noisy_comparison(rho, b, &conditionals, noise)
}

fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn binomial_fraction(n: u64, p: f64, rng: &mut ChaCha8Rng) -> f64 {
    if n == 0 {
        return 0.0;
    }
    Binomial::new(n, p.clamp(0.0, 1.0)).expect("valid binomial").sample(rng) as f64 / n as f64
}

fn noisy_comparison(rho: &DensityMatrix, b: &Ket, exact: &ConditionalMatrix, noise: &NoiseModel) -> Result<QltpReport> {
    if noise.sic_total == 0 || noise.pvm_total == 0 {
        return Err(Error::Contract("count totals must be positive".into()));
    }
    let sim = simulate_single_pass(rho, &noise.config)?;
    let mut rng = rng_for(noise.seed, 0);
    let sic_counts = multinomial(&sim.port_probabilities(), noise.sic_total, &mut rng)?;

    let mut rng = rng_for(noise.seed, 1);
    let cond_rows: Vec<Vec<f64>> =
        exact.column(0).iter().map(|&q| vec![binomial_fraction(noise.pvm_total, q, &mut rng)]).collect();
    let conditionals = ConditionalMatrix::from_rows(cond_rows)?;

    let mut rng = rng_for(noise.seed, 2);
    let direct = binomial_fraction(noise.pvm_total, born_probability(rho, b)?, &mut rng);

    let corrector = Corrector::new(noise.method, &noise.config, noise.seed)?;
    let (p_a, fitted) = corrector.correct(&sic_counts)?;
    let predicted = qltp_predict(&p_a, &conditionals, 0)?;
    let corrector = corrector.warm_started(&fitted);

    // parametric bootstrap of both the SIC counts and the PVM fractions
    let observed: Vec<f64> = sic_counts.iter().map(|&n| n as f64).collect();
    let cond_hat = conditionals.column(0);
    let stat_rows: Vec<Vec<f64>> = (0..noise.bootstrap)
        .into_par_iter()
        .map(|r| {
            let mut rng = rng_for(noise.seed, 1_000 + r as u64);
            let counts = multinomial(&observed, noise.sic_total, &mut rng)?;
            let rows = cond_hat.iter().map(|&q| vec![binomial_fraction(noise.pvm_total, q, &mut rng)]).collect();
            let cond = ConditionalMatrix::from_rows(rows)?;
            let (p, _) = corrector.correct(&counts)?;
            let direct_rep = binomial_fraction(noise.pvm_total, direct, &mut rng);
            Ok(vec![qltp_predict(&p, &cond, 0)?, direct_rep])
        })
        .collect::<Result<_>>()?;
    let stat = spread(&stat_rows);

    // plate misalignment: rerun the corrected prediction on every perturbed
    // apparatus at the expected counts
    let sys_predicted = if noise.systematics_samples > 1 && noise.config.hwp_sigma_deg > 0.0 {
        let runs = systematics_samples(rho, &noise.config, noise.systematics_samples)?;
        let rows: Vec<Vec<f64>> = runs
            .par_iter()
            .map(|run| {
                let counts: Vec<u64> =
                    run.normalized_ports().iter().map(|p| (p * noise.sic_total as f64).round() as u64).collect();
                let (p, _) = corrector.correct(&counts)?;
                Ok(vec![qltp_predict(&p, &conditionals, 0)?])
            })
            .collect::<Result<_>>()?;
        spread(&rows)[0]
    } else {
        0.0
    };

    Ok(QltpReport { predicted, direct, stat: [stat[0], stat[1]], sys: [sys_predicted, 0.0] })
}

fn spread(rows: &[Vec<f64>]) -> Vec<f64> {
    let width = rows.first().map_or(0, |r| r.len());
    if rows.len() < 2 {
        return vec![0.0; width];
    }
    crate::loopsim::welford(rows.iter().cloned(), width).1
}
