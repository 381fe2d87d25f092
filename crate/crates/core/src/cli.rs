//! Command-line front end. Every verb reads its inputs from files, writes
//! deterministic outputs, and reports failures as a single diagnostic line.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::loopsim::{simulate_recycled, simulate_single_pass, LoopConfig, PortCounts};
use crate::qltp::{compare_with_direct, NoiseModel};
use crate::reconstruct::{reconstruct, Method};
use crate::sic::{find_fiducial, verify_sic, SicPovm};
use crate::state::{LoadedState, StateFile};

/// Bootstrap replicates behind the `stat_err` column of `reconstruct`.
pub const RECONSTRUCT_REPLICATES: usize = 500;

#[derive(Debug, Parser)]
#[command(name = "sicpovm", version, about = "SIC-POVM construction, storage-loop simulation and QLTP checks")]
pub struct Scenario {
    #[command(subcommand)]
    pub verb: Verb,
}

#[derive(Debug, Subcommand)]
pub enum Verb {
    /// Check the Weyl-Heisenberg orbit of the stored fiducial.
    SicVerify {
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 1e-12)]
        tol: f64,
    },
    /// Search for a fiducial and print the SIC as JSON.
    SicFind {
        #[arg(long)]
        dim: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        restarts: usize,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
    },
    /// Propagate a qutrit through the loop and write port probabilities as CSV.
    Simulate {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Keep cycling the photon for up to N passes.
        #[arg(long, value_name = "N")]
        recycle: Option<usize>,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Reconstruct SIC probabilities and a state from port counts.
    Reconstruct {
        #[arg(long)]
        counts: PathBuf,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: u64,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Compare the SIC-based prediction of an outcome with its direct probability.
    Qltp {
        #[arg(long)]
        state: PathBuf,
        #[arg(long)]
        outcome: PathBuf,
        #[arg(long, conflicts_with_all = ["counts_sic", "counts_pvm", "config", "seed"])]
        noiseless: bool,
        #[arg(long, required_unless_present = "noiseless")]
        counts_sic: Option<u64>,
        #[arg(long, required_unless_present = "noiseless")]
        counts_pvm: Option<u64>,
        #[arg(long, required_unless_present = "noiseless")]
        config: Option<PathBuf>,
        #[arg(long, required_unless_present = "noiseless")]
        seed: Option<u64>,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Norm,
    Fit,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Norm => Method::Normalization,
            MethodArg::Fit => Method::ModelFit,
        }
    }
}

/// Config keys given on the command line; they are applied after the config
/// file, in order.
#[derive(Clone, Debug, Default, Args)]
pub struct Overrides {
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

impl Overrides {
    fn apply(&self, config: &mut LoopConfig) -> Result<()> {
        for item in &self.set {
            let (key, value) = item
                .split_once('=')
                .ok_or_else(|| Error::Contract(format!("--set expects KEY=VALUE, got `{item}`")))?;
            let key = key.trim();
            config.set(key, value.trim()).map_err(|msg| Error::Parse {
                file: "<command line>".into(),
                line: 0,
                key: key.into(),
                msg,
            })?;
        }
        Ok(())
    }
}

fn load_config(path: &Path, overrides: &Overrides, seed: Option<u64>) -> Result<LoopConfig> {
    let mut config = LoopConfig::load(path)?;
    overrides.apply(&mut config)?;
    if let Some(seed) = seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents)?;
    Ok(())
}

/// Runs one verb. Human-readable reports and JSON results for verbs without
/// `--out` go to `stdout`.
pub fn run_scenario<W: Write>(scenario: &Scenario, stdout: &mut W) -> Result<()> {
    match &scenario.verb {
        Verb::SicVerify { dim, tol } => {
            let povm = SicPovm::standard(*dim)?;
            let check = verify_sic(&povm, *tol);
            let verdict = if check.passed { "PASS" } else { "FAIL" };
            let cmp = if check.passed { "<" } else { ">=" };
            writeln!(
                stdout,
                "max overlap deviation {cmp} {tol:e}, {verdict} (deviation {:e}, completeness residual {:e})",
                check.max_overlap_deviation, check.completeness_residual
            )?;
            if !check.passed {
                return Err(Error::Contract(format!("d = {dim} orbit is not a SIC at tolerance {tol:e}")));
            }
        }
        Verb::SicFind { dim, seed, restarts, tol } => {
            let report = find_fiducial(*dim, *seed, *restarts, *tol)?;
            if !report.converged {
                return Err(Error::Contract(format!(
                    "no fiducial within {tol:e} after {} restarts (best residual {:e})",
                    report.restarts_used, report.residual
                )));
            }
            let povm = SicPovm::from_fiducial(&report.fiducial)?;
            writeln!(stdout, "{}", povm.to_file().to_json())?;
        }
        Verb::Simulate { state, config, out, recycle, overrides } => {
            let rho = StateFile::load(state)?.density();
            let config = load_config(config, overrides, None)?;
            let result = match recycle {
                Some(cycles) => simulate_recycled(&rho, &config, *cycles)?,
                None => simulate_single_pass(&rho, &config)?,
            };
            let mut w = BufWriter::new(File::create(out)?);
            result.write_csv(&mut w)?;
            w.flush()?;
        }
        Verb::Reconstruct { counts, config, method, out, seed, overrides } => {
            let file = File::open(counts)?;
            let counts = PortCounts::read_csv(file, &counts.display().to_string())?.counts();
            let config = load_config(config, overrides, Some(*seed))?;
            let rec = reconstruct(&counts, &config, (*method).into(), RECONSTRUCT_REPLICATES, *seed)?;
            let json = serde_json::to_string_pretty(&rec.to_file())?;
            write_file(out, &(json + "\n"))?;
        }
        Verb::Qltp { state, outcome, noiseless, counts_sic, counts_pvm, config, seed, overrides } => {
            let rho = StateFile::load(state)?.density();
            let b = match StateFile::load(outcome)? {
                LoadedState::Pure(k) => k,
                LoadedState::Mixed(_) => {
                    return Err(Error::Contract(format!("{}: the outcome must be a ket", outcome.display())))
                }
            };
            let povm = SicPovm::standard(rho.dim())?;
            let report = if *noiseless {
                compare_with_direct(&rho, &b, &povm, None)?
            } else {
                let (Some(sic), Some(pvm), Some(path), Some(seed)) = (counts_sic, counts_pvm, config, seed) else {
                    return Err(Error::Contract("noisy qltp needs --counts-sic, --counts-pvm, --config and --seed".into()));
                };
                let config = load_config(path, overrides, Some(*seed))?;
                let noise = NoiseModel { sic_total: *sic, pvm_total: *pvm, config, ..NoiseModel::experimental(*seed) };
                compare_with_direct(&rho, &b, &povm, Some(&noise))?
            };
            writeln!(stdout, "{}", report.to_json())?;
        }
    }
    Ok(())
}
