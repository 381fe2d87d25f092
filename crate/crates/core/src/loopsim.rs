//! Forward model of the storage-loop SIC measurement for a qutrit carried by
//! the path and polarization of a single photon.
//!
//! The photon lives in the four-mode space `{V₁, H₁, V₂, H₂}` (path × polarization)
//! with the qutrit encoded as `|0⟩ = V₁`, `|1⟩ = H₁`, `|2⟩ = V₂`. One round trip
//! is three repetitions of (Z̃ gate, measurement station) followed by the X gate.
//! Each station rotates the path-1 polarization so the fiducial lies along V,
//! reflects a small fraction of each polarization out of the loop (that is the
//! port click), and rotates back. Three round trips visit all nine SIC elements.
//!
//! Propagation is exact on 4×4 density matrices. The map from input state to
//! port probabilities is linear, which [`port_response`] exploits.

use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, Matrix4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sic::{loop_exit_labels, SicElementLabel};
use crate::state::{c, check_dim, omega_pow, DensityMatrix, Ket, C64};

/// Mode indices of the path ⊗ polarization space.
pub const V1: usize = 0;
pub const H1: usize = 1;
pub const V2: usize = 2;
pub const H2: usize = 3;

const QUTRIT: usize = 3;
const GATES_PER_TRIP: usize = 3;
/// Round trips needed to visit every element once.
pub const TRIPS_PER_PASS: usize = 3;
pub const PORTS: usize = GATES_PER_TRIP * TRIPS_PER_PASS;

type M4 = Matrix4<C64>;

/// Imperfection parameters of the apparatus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoopConfig {
    /// Intensity reflectivity of the slide for V.
    pub epsilon_v: f64,
    /// Intensity reflectivity of the slide for H.
    pub epsilon_h: f64,
    /// Path coherence kept at the X gate that ends each round trip.
    pub visibilities: [f64; 3],
    /// Fraction lost once per round trip.
    pub per_pass_loss: f64,
    /// Standard deviation of half-wave-plate angle errors, in degrees.
    pub hwp_sigma_deg: f64,
    pub num_trips: usize,
    pub seed: u64,
}

impl Default for LoopConfig {
    fn default() -> Self {
        LoopConfig::experimental()
    }
}

impl LoopConfig {
    /// The reported apparatus: 13 % / 3 % slide, visibilities 1, 0.74, 0.36,
    /// 1° plate misalignment, no extra loss.
    pub fn experimental() -> Self {
        LoopConfig {
            epsilon_v: 0.13,
            epsilon_h: 0.03,
            visibilities: [1.0, 0.74, 0.36],
            per_pass_loss: 0.0,
            hwp_sigma_deg: 1.0,
            num_trips: TRIPS_PER_PASS,
            seed: 0,
        }
    }

    /// Perfect gates and a V-only slide of reflectivity `epsilon_v`.
    pub fn ideal(epsilon_v: f64) -> Self {
        LoopConfig {
            epsilon_v,
            epsilon_h: 0.0,
            visibilities: [1.0; 3],
            per_pass_loss: 0.0,
            hwp_sigma_deg: 0.0,
            num_trips: TRIPS_PER_PASS,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::Contract(format!("{name} = {v} outside [0, 1]")))
            }
        };
        unit("epsilon_v", self.epsilon_v)?;
        unit("epsilon_h", self.epsilon_h)?;
        for (i, v) in self.visibilities.iter().enumerate() {
            unit(&format!("visibility_{}", i + 1), *v)?;
        }
        if !(0.0..1.0).contains(&self.per_pass_loss) {
            return Err(Error::Contract(format!("per_pass_loss = {} outside [0, 1)", self.per_pass_loss)));
        }
        if !(self.hwp_sigma_deg >= 0.0 && self.hwp_sigma_deg.is_finite()) {
            return Err(Error::Contract(format!("hwp_sigma_deg = {} must be non-negative", self.hwp_sigma_deg)));
        }
        if self.num_trips != TRIPS_PER_PASS {
            return Err(Error::Contract(format!(
                "num_trips = {}; the qutrit loop needs exactly {TRIPS_PER_PASS}",
                self.num_trips
            )));
        }
        Ok(())
    }

    /// Applies one `key = value` assignment.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn real(v: &str) -> std::result::Result<f64, String> {
            v.parse::<f64>().map_err(|e| format!("`{v}` is not a number ({e})"))
        }
        fn int(v: &str) -> std::result::Result<u64, String> {
            v.parse::<u64>().map_err(|e| format!("`{v}` is not a non-negative integer ({e})"))
        }
        match key {
            "epsilon_v" => self.epsilon_v = real(value)?,
            "epsilon_h" => self.epsilon_h = real(value)?,
            "visibility_1" => self.visibilities[0] = real(value)?,
            "visibility_2" => self.visibilities[1] = real(value)?,
            "visibility_3" => self.visibilities[2] = real(value)?,
            "per_pass_loss" => self.per_pass_loss = real(value)?,
            "hwp_sigma_deg" => self.hwp_sigma_deg = real(value)?,
            "num_trips" => self.num_trips = int(value)? as usize,
            "seed" => self.seed = int(value)?,
            _ => return Err("unknown key".into()),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment. Keys not given keep
    /// the values of [`LoopConfig::experimental`].
    pub fn parse(text: &str, file: &str) -> Result<Self> {
        let mut cfg = LoopConfig::experimental();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |key: &str, msg: String| Error::Parse {
                file: file.to_string(),
                line: i + 1,
                key: key.to_string(),
                msg,
            };
            let (key, value) = line.split_once('=').ok_or_else(|| err(line, "expected `key = value`".into()))?;
            let key = key.trim();
            cfg.set(key, value.trim()).map_err(|msg| err(key, msg))?;
        }
        cfg.validate().map_err(|e| Error::Parse {
            file: file.to_string(),
            line: 0,
            key: "<config>".into(),
            msg: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn to_text(&self) -> String {
        format!(
            "epsilon_v = {}\nepsilon_h = {}\nvisibility_1 = {}\nvisibility_2 = {}\nvisibility_3 = {}\n\
             per_pass_loss = {}\nhwp_sigma_deg = {}\nnum_trips = {}\nseed = {}\n",
            self.epsilon_v,
            self.epsilon_h,
            self.visibilities[0],
            self.visibilities[1],
            self.visibilities[2],
            self.per_pass_loss,
            self.hwp_sigma_deg,
            self.num_trips,
            self.seed
        )
    }
}

/// Angle errors of every half-wave plate in the loop, in degrees.
///
/// Each station has an analysis plate and a restoring plate; each X gate has
/// three plates. The same physical plates are reused on every cycle.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HwpOffsets {
    /// `[analysis, restore]` per station, indexed `trip * 3 + gate`.
    pub stations: [[f64; 2]; PORTS],
    /// Per X gate, indexed by the trip it ends.
    pub x_gates: [[f64; 3]; TRIPS_PER_PASS],
}

impl HwpOffsets {
    pub const PLATES: usize = 2 * PORTS + 3 * TRIPS_PER_PASS;

    pub fn sample<R: Rng + ?Sized>(sigma_deg: f64, rng: &mut R) -> Self {
        let mut out = HwpOffsets::default();
        if sigma_deg == 0.0 {
            return out;
        }
        let normal = Normal::new(0.0, sigma_deg).expect("finite sigma");
        for s in out.stations.iter_mut() {
            s[0] = normal.sample(rng);
            s[1] = normal.sample(rng);
        }
        for x in out.x_gates.iter_mut() {
            for a in x.iter_mut() {
                *a = normal.sample(rng);
            }
        }
        out
    }
}

/// Normalized four-mode state together with the probability the photon is
/// still in the loop.
#[derive(Clone, Debug, PartialEq)]
pub struct PhysicalState {
    rho: M4,
    survival: f64,
}

impl PhysicalState {
    fn from_unnormalized(m: M4) -> Self {
        let w = m.trace().re;
        if w > 0.0 {
            PhysicalState { rho: m / C64::from(w), survival: w }
        } else {
            PhysicalState { rho: M4::zeros(), survival: 0.0 }
        }
    }

    fn unnormalized(&self) -> M4 {
        self.rho * C64::from(self.survival)
    }

    pub fn matrix(&self) -> DMatrix<C64> {
        DMatrix::from_iterator(4, 4, self.rho.iter().copied())
    }

    pub fn survival(&self) -> f64 {
        self.survival
    }

    pub fn population(&self, mode: usize) -> f64 {
        self.rho[(mode, mode)].re
    }

    pub fn purity(&self) -> f64 {
        (self.rho * self.rho).trace().re
    }

    /// Logical qutrit block (`V₁, H₁, V₂`) of the normalized state.
    pub fn qutrit_block(&self) -> DMatrix<C64> {
        DMatrix::from_fn(QUTRIT, QUTRIT, |i, j| self.rho[(i, j)])
    }
}

/// Embeds a qutrit ket as `a₀ V₁ + a₁ H₁ + a₂ V₂`.
pub fn encode_qutrit(psi: &Ket) -> Result<PhysicalState> {
    check_dim(QUTRIT, psi.dim())?;
    encode_density(&DensityMatrix::pure(psi))
}

/// Embeds a qutrit density matrix into the `V₁, H₁, V₂` block.
pub fn encode_density(rho: &DensityMatrix) -> Result<PhysicalState> {
    check_dim(QUTRIT, rho.dim())?;
    Ok(PhysicalState { rho: embed(rho.matrix()), survival: 1.0 })
}

fn embed(m: &DMatrix<C64>) -> M4 {
    let mut out = M4::zeros();
    for i in 0..QUTRIT {
        for j in 0..QUTRIT {
            out[(i, j)] = m[(i, j)];
        }
    }
    out
}

fn conjugate(u: &M4, m: &M4) -> M4 {
    u * m * u.adjoint()
}

/// Half-wave plate at `angle_deg` on one path, in the (V, H) basis of that path.
fn hwp(path: usize, angle_deg: f64) -> M4 {
    let t = 2.0 * angle_deg.to_radians();
    let (s, co) = t.sin_cos();
    let mut u = M4::identity();
    let (v, h) = (2 * path, 2 * path + 1);
    u[(v, v)] = c(co, 0.0);
    u[(v, h)] = c(s, 0.0);
    u[(h, v)] = c(s, 0.0);
    u[(h, h)] = c(-co, 0.0);
    u
}

fn permutation(pairs: &[(usize, usize)]) -> M4 {
    let mut u = M4::identity();
    for &(a, b) in pairs {
        u[(a, a)] = C64::from(0.0);
        u[(b, b)] = C64::from(0.0);
        u[(a, b)] = C64::from(1.0);
        u[(b, a)] = C64::from(1.0);
    }
    u
}

fn z_tilde() -> M4 {
    let mut u = M4::identity();
    u[(H1, H1)] = omega_pow(QUTRIT, 1);
    u
}

/// Analysis plate angle mapping the fiducial `(V₁ + H₁)/√2` onto V₁.
const ANALYSIS_ANGLE_DEG: f64 = 22.5;
const X_PLATE_ANGLE_DEG: f64 = 45.0;

fn x_gate_unitary(offsets: &[f64; 3]) -> M4 {
    // polarization flip on path 2, beam displacer exchanging the H beams of
    // the two paths, then polarization flips on both paths
    let flip_in = hwp(1, X_PLATE_ANGLE_DEG + offsets[0]);
    let displacer = permutation(&[(H1, H2)]);
    let flip_out_1 = hwp(0, X_PLATE_ANGLE_DEG + offsets[1]);
    let flip_out_2 = hwp(1, X_PLATE_ANGLE_DEG + offsets[2]);
    // the paths leave the gate exchanged and mirrors put them back
    let swap = permutation(&[(V1, V2), (H1, H2)]);
    let restore = swap;
    restore * swap * flip_out_2 * flip_out_1 * displacer * flip_in
}

fn dephase_paths(m: &M4, visibility: f64) -> M4 {
    let mut out = *m;
    for i in 0..2 {
        for j in 2..4 {
            out[(i, j)] *= visibility;
            out[(j, i)] *= visibility;
        }
    }
    out
}

/// The Z̃ gate `diag(1, ω, 1)` on `(V₁, H₁, V₂)`, identity on `H₂`.
pub fn apply_z_tilde(state: &PhysicalState) -> PhysicalState {
    PhysicalState { rho: conjugate(&z_tilde(), &state.rho), survival: state.survival }
}

/// The X gate: path coherence scaled by `visibility`, then the plate and
/// displacer network that cycles `|0⟩ → |1⟩ → |2⟩ → |0⟩`.
pub fn apply_x_gate(state: &PhysicalState, visibility: f64, hwp_offsets: [f64; 3]) -> PhysicalState {
    let m = dephase_paths(&state.rho, visibility);
    PhysicalState { rho: conjugate(&x_gate_unitary(&hwp_offsets), &m), survival: state.survival }
}

struct Station {
    analysis: M4,
    restore: M4,
    reflect: M4,
    transmit: M4,
}

impl Station {
    fn new(config: &LoopConfig, analysis_offset: f64, restore_offset: f64) -> Self {
        let mut reflect = M4::zeros();
        reflect[(V1, V1)] = C64::from(config.epsilon_v.sqrt());
        reflect[(H1, H1)] = C64::from(config.epsilon_h.sqrt());
        let mut transmit = M4::identity();
        transmit[(V1, V1)] = C64::from((1.0 - config.epsilon_v).sqrt());
        transmit[(H1, H1)] = C64::from((1.0 - config.epsilon_h).sqrt());
        Station {
            analysis: hwp(0, ANALYSIS_ANGLE_DEG + analysis_offset),
            restore: hwp(0, ANALYSIS_ANGLE_DEG + restore_offset),
            reflect,
            transmit,
        }
    }

    /// Returns (click probability, surviving unnormalized state).
    fn apply(&self, m: &M4) -> (f64, M4) {
        let rotated = conjugate(&self.analysis, m);
        let click = conjugate(&self.reflect, &rotated).trace().re;
        let kept = conjugate(&(self.restore * self.transmit), &rotated);
        (click, kept)
    }
}

/// One measurement station acting on `state`. The click probability is
/// absolute (it includes the incoming survival weight).
pub fn partial_projector(state: &PhysicalState, config: &LoopConfig, analysis_offset: f64) -> (f64, PhysicalState) {
    let station = Station::new(config, analysis_offset, 0.0);
    let (click, kept) = station.apply(&state.unnormalized());
    (click, PhysicalState::from_unnormalized(kept))
}

/// Time-integrated probability at one exit port.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PortRecord {
    /// 1-based round trip.
    pub trip: usize,
    /// 1-based station within the trip.
    pub gate: usize,
    pub label: SicElementLabel,
    pub probability: f64,
}

/// Port probabilities plus where the rest of the photon went.
#[derive(Clone, Debug, PartialEq)]
pub struct SimulationResult {
    /// In loop order.
    pub ports: Vec<PortRecord>,
    pub lost: f64,
    pub residual_in_loop: f64,
}

impl SimulationResult {
    pub fn port_probabilities(&self) -> Vec<f64> {
        self.ports.iter().map(|p| p.probability).collect()
    }

    pub fn detected(&self) -> f64 {
        self.ports.iter().map(|p| p.probability).sum()
    }

    /// Port probabilities conditioned on a click.
    pub fn normalized_ports(&self) -> Vec<f64> {
        let total = self.detected();
        self.ports.iter().map(|p| p.probability / total).collect()
    }

    /// Summed click probability of each round trip.
    pub fn trip_totals(&self) -> Vec<f64> {
        self.ports.chunks(GATES_PER_TRIP).map(|c| c.iter().map(|p| p.probability).sum()).collect()
    }

    pub fn conservation_error(&self) -> f64 {
        (self.detected() + self.lost + self.residual_in_loop - 1.0).abs()
    }

    /// Port probabilities followed by `lost`, suitable for count sampling.
    pub fn outcome_distribution(&self) -> Vec<f64> {
        let mut v = self.port_probabilities();
        v.push(self.lost + self.residual_in_loop);
        v
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let rows: Vec<_> = self.ports.iter().map(|p| (p.trip, p.gate, p.label, fmt_real(p.probability))).collect();
        write_port_csv(out, "probability", &rows, &fmt_real(self.lost), &fmt_real(self.residual_in_loop))
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let headers = reader.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["trip", "gate", "m", "n", "probability"] {
            return Err(Error::Format(format!("unexpected CSV header {headers:?}")));
        }
        let mut ports = Vec::new();
        let (mut lost, mut residual) = (None, None);
        for (line, rec) in reader.records().enumerate() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec[i].parse::<f64>().map_err(|e| Error::Format(format!("row {}: {e}", line + 2)))
            };
            match &rec[0] {
                "lost" => lost = Some(num(4)?),
                "residual" => residual = Some(num(4)?),
                _ => {
                    let idx = |i: usize| -> Result<usize> {
                        rec[i].parse::<usize>().map_err(|e| Error::Format(format!("row {}: {e}", line + 2)))
                    };
                    ports.push(PortRecord {
                        trip: idx(0)?,
                        gate: idx(1)?,
                        label: SicElementLabel { m: idx(2)?, n: idx(3)? },
                        probability: num(4)?,
                    });
                }
            }
        }
        Ok(SimulationResult {
            ports,
            lost: lost.ok_or_else(|| Error::Format("missing `lost` row".into()))?,
            residual_in_loop: residual.ok_or_else(|| Error::Format("missing `residual` row".into()))?,
        })
    }
}

/// Shortest round-trip form, switching to exponent notation for tiny values.
fn fmt_real(x: f64) -> String {
    if x != 0.0 && x.abs() < 1e-4 {
        format!("{x:e}")
    } else {
        x.to_string()
    }
}

fn write_port_csv<W: Write>(
    out: W,
    value_column: &str,
    rows: &[(usize, usize, SicElementLabel, String)],
    lost: &str,
    residual: &str,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["trip", "gate", "m", "n", value_column])?;
    for (trip, gate, label, value) in rows {
        w.write_record([trip.to_string(), gate.to_string(), label.m.to_string(), label.n.to_string(), value.clone()])?;
    }
    w.write_record(["lost", "", "", "", lost])?;
    w.write_record(["residual", "", "", "", residual])?;
    w.flush()?;
    Ok(())
}

/// Sampled counts at each port.
#[derive(Clone, Debug, PartialEq)]
pub struct PortCounts {
    /// `(trip, gate, counts)` in loop order.
    pub ports: Vec<(usize, usize, u64)>,
}

impl PortCounts {
    pub fn counts(&self) -> Vec<u64> {
        self.ports.iter().map(|p| p.2).collect()
    }

    pub fn from_counts(counts: &[u64]) -> Result<Self> {
        if counts.len() != PORTS {
            return Err(Error::Contract(format!("expected {PORTS} port counts, got {}", counts.len())));
        }
        Ok(PortCounts {
            ports: counts.iter().enumerate().map(|(i, &n)| (i / GATES_PER_TRIP + 1, i % GATES_PER_TRIP + 1, n)).collect(),
        })
    }

    /// CSV with columns `trip, gate, counts`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["trip", "gate", "counts"])?;
        for (t, g, n) in &self.ports {
            w.write_record([t.to_string(), g.to_string(), n.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `trip, gate, counts` rows and returns them in loop order.
    pub fn read_csv<R: Read>(input: R, file: &str) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(input);
        let headers: Vec<String> = reader.headers()?.iter().map(|s| s.trim().to_string()).collect();
        let col = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| Error::Parse {
                file: file.to_string(),
                line: 1,
                key: name.to_string(),
                msg: "missing column".into(),
            })
        };
        let (ct, cg, cn) = (col("trip")?, col("gate")?, col("counts")?);
        let mut grid = [None; PORTS];
        for (i, rec) in reader.records().enumerate() {
            let rec = rec?;
            let line = i + 2;
            let field = |idx: usize, key: &str| -> Result<u64> {
                rec.get(idx).unwrap_or("").trim().parse::<u64>().map_err(|e| Error::Parse {
                    file: file.to_string(),
                    line,
                    key: key.to_string(),
                    msg: e.to_string(),
                })
            };
            let (t, g, n) = (field(ct, "trip")? as usize, field(cg, "gate")? as usize, field(cn, "counts")?);
            if !(1..=TRIPS_PER_PASS).contains(&t) || !(1..=GATES_PER_TRIP).contains(&g) {
                return Err(Error::Parse {
                    file: file.to_string(),
                    line,
                    key: "trip/gate".into(),
                    msg: format!("port ({t}, {g}) does not exist"),
                });
            }
            let slot = &mut grid[(t - 1) * GATES_PER_TRIP + g - 1];
            if slot.is_some() {
                return Err(Error::Parse { file: file.to_string(), line, key: "trip/gate".into(), msg: format!("duplicate port ({t}, {g})") });
            }
            *slot = Some(n);
        }
        let counts: Option<Vec<u64>> = grid.iter().copied().collect();
        let counts = counts.ok_or_else(|| Error::Parse {
            file: file.to_string(),
            line: 0,
            key: "trip/gate".into(),
            msg: "every one of the nine ports needs a row".into(),
        })?;
        Self::from_counts(&counts)
    }
}

/// Propagates an unnormalized four-mode matrix through `cycles` passes and
/// returns (per-port clicks, lost, residual matrix). Linear in `input`.
fn propagate(input: &M4, config: &LoopConfig, offsets: &HwpOffsets, cycles: usize) -> ([f64; PORTS], f64, M4) {
    let stations: Vec<Station> =
        offsets.stations.iter().map(|o| Station::new(config, o[0], o[1])).collect();
    let x_gates: Vec<M4> = offsets.x_gates.iter().map(x_gate_unitary).collect();
    let z = z_tilde();
    let keep = 1.0 - config.per_pass_loss;

    let mut ports = [0.0; PORTS];
    let mut lost = 0.0;
    let mut m = *input;
    for _ in 0..cycles {
        for trip in 0..TRIPS_PER_PASS {
            for gate in 0..GATES_PER_TRIP {
                let idx = trip * GATES_PER_TRIP + gate;
                m = conjugate(&z, &m);
                let (click, kept) = stations[idx].apply(&m);
                ports[idx] += click;
                m = kept;
            }
            let v = config.visibilities[trip];
            m = conjugate(&x_gates[trip], &dephase_paths(&m, v));
            lost += m.trace().re * config.per_pass_loss;
            m *= C64::from(keep);
        }
    }
    (ports, lost, m)
}

fn result_from(ports: [f64; PORTS], lost: f64, residual: f64) -> SimulationResult {
    let labels = loop_exit_labels(QUTRIT);
    SimulationResult {
        ports: ports
            .iter()
            .enumerate()
            .map(|(i, &p)| PortRecord {
                trip: i / GATES_PER_TRIP + 1,
                gate: i % GATES_PER_TRIP + 1,
                label: labels[i],
                probability: p,
            })
            .collect(),
        lost,
        residual_in_loop: residual,
    }
}

fn require_qutrit(rho: &DensityMatrix) -> Result<()> {
    if rho.dim() != QUTRIT {
        return Err(Error::UnsupportedDimension(rho.dim()));
    }
    Ok(())
}

/// One pass (three round trips) with the plates set exactly.
pub fn simulate_single_pass(rho: &DensityMatrix, config: &LoopConfig) -> Result<SimulationResult> {
    simulate_with_offsets(rho, config, &HwpOffsets::default(), 1)
}

/// `max_cycles` passes through the same plates, ports accumulated.
pub fn simulate_recycled(rho: &DensityMatrix, config: &LoopConfig, max_cycles: usize) -> Result<SimulationResult> {
    if max_cycles == 0 {
        return Err(Error::Contract("max_cycles must be at least 1".into()));
    }
    simulate_with_offsets(rho, config, &HwpOffsets::default(), max_cycles)
}

pub fn simulate_with_offsets(
    rho: &DensityMatrix,
    config: &LoopConfig,
    offsets: &HwpOffsets,
    cycles: usize,
) -> Result<SimulationResult> {
    require_qutrit(rho)?;
    config.validate()?;
    let (ports, lost, m) = propagate(&embed(rho.matrix()), config, offsets, cycles);
    Ok(result_from(ports, lost, m.trace().re))
}

/// Per-port effect operators `E_k` on the qutrit, with `p_k = Tr(E_k ρ)` for
/// every input ρ, obtained by pushing matrix units through the loop.
pub fn port_response(config: &LoopConfig, offsets: &HwpOffsets) -> Result<Vec<DMatrix<C64>>> {
    config.validate()?;
    let mut effects = vec![DMatrix::<C64>::zeros(QUTRIT, QUTRIT); PORTS];
    for a in 0..QUTRIT {
        let mut unit = M4::zeros();
        unit[(a, a)] = C64::from(1.0);
        let (ports, _, _) = propagate(&unit, config, offsets, 1);
        for (k, p) in ports.iter().enumerate() {
            effects[k][(a, a)] = C64::from(*p);
        }
    }
    // off-diagonal entries from the two Hermitian combinations of |a⟩⟨b|
    for a in 0..QUTRIT {
        for b in (a + 1)..QUTRIT {
            let mut re = M4::zeros();
            re[(a, b)] = C64::from(1.0);
            re[(b, a)] = C64::from(1.0);
            let mut im = M4::zeros();
            im[(a, b)] = c(0.0, 1.0);
            im[(b, a)] = c(0.0, -1.0);
            let (pr, _, _) = propagate(&re, config, offsets, 1);
            let (pi, _, _) = propagate(&im, config, offsets, 1);
            // Tr(E (|a⟩⟨b| + |b⟩⟨a|)) = 2 Re E[b,a]; Tr(E (i|a⟩⟨b| − i|b⟩⟨a|)) = −2 Im E[b,a]
            for k in 0..PORTS {
                let e_ba = c(pr[k] / 2.0, -pi[k] / 2.0);
                effects[k][(b, a)] = e_ba;
                effects[k][(a, b)] = e_ba.conj();
            }
        }
    }
    Ok(effects)
}

/// Per-port mean and spread under random plate misalignment.
#[derive(Clone, Debug, PartialEq)]
pub struct SystematicsReport {
    pub nominal: Vec<f64>,
    pub mean: Vec<f64>,
    pub std_dev: Vec<f64>,
    pub samples: usize,
}

/// Port probabilities for `samples` independent draws of every plate angle
/// error. Sample `i` uses RNG stream `i` of `config.seed`.
pub fn systematics_samples(rho: &DensityMatrix, config: &LoopConfig, samples: usize) -> Result<Vec<SimulationResult>> {
    if samples == 0 {
        return Err(Error::Contract("need at least one Monte-Carlo sample".into()));
    }
    require_qutrit(rho)?;
    config.validate()?;
    (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
            rng.set_stream(i as u64);
            let offsets = HwpOffsets::sample(config.hwp_sigma_deg, &mut rng);
            simulate_with_offsets(rho, config, &offsets, 1)
        })
        .collect()
}

/// Mean and sample standard deviation of every port probability under
/// Gaussian plate errors of `config.hwp_sigma_deg`.
pub fn monte_carlo_systematics(rho: &DensityMatrix, config: &LoopConfig, samples: usize) -> Result<SystematicsReport> {
    let runs = systematics_samples(rho, config, samples)?;
    let nominal = simulate_single_pass(rho, config)?.port_probabilities();
    let (mean, std_dev) = welford(runs.iter().map(|r| r.port_probabilities()), PORTS);
    Ok(SystematicsReport { nominal, mean, std_dev, samples })
}

/// Running mean and sample standard deviation; identical inputs give an
/// exactly zero spread.
pub(crate) fn welford<I: IntoIterator<Item = Vec<f64>>>(rows: I, width: usize) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0.0; width];
    let mut m2 = vec![0.0; width];
    let mut n = 0usize;
    for row in rows {
        n += 1;
        for k in 0..width {
            let delta = row[k] - mean[k];
            mean[k] += delta / n as f64;
            m2[k] += delta * (row[k] - mean[k]);
        }
    }
    let std = m2.iter().map(|v| if n > 1 { (v / (n - 1) as f64).sqrt() } else { 0.0 }).collect();
    (mean, std)
}

/// One multinomial draw of `total` events over `probabilities` (rescaled to
/// sum to one).
pub fn sample_counts(probabilities: &[f64], total: i64, seed: u64) -> Result<Vec<u64>> {
    if total < 0 {
        return Err(Error::Contract(format!("count total must be non-negative, got {total}")));
    }
    if probabilities.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::Contract("count probabilities must be finite and non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    multinomial(probabilities, total as u64, &mut rng)
}

pub(crate) fn multinomial<R: Rng + ?Sized>(probabilities: &[f64], total: u64, rng: &mut R) -> Result<Vec<u64>> {
    // suffix sums keep the conditional probabilities exact for trailing zeros
    let mut suffix = vec![0.0; probabilities.len() + 1];
    for i in (0..probabilities.len()).rev() {
        suffix[i] = suffix[i + 1] + probabilities[i];
    }
    if total > 0 && suffix[0] <= 0.0 {
        return Err(Error::Contract("count probabilities sum to zero".into()));
    }
    let mut remaining = total;
    let mut out = Vec::with_capacity(probabilities.len());
    for (i, &p) in probabilities.iter().enumerate() {
        if i + 1 == probabilities.len() {
            out.push(remaining);
            break;
        }
        let k = if remaining == 0 || suffix[i] <= 0.0 {
            0
        } else {
            let q = (p / suffix[i]).clamp(0.0, 1.0);
            Binomial::new(remaining, q).expect("valid binomial").sample(rng)
        };
        out.push(k);
        remaining -= k;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sic::{sic_probabilities, SicPovm};
    use crate::state::{max_abs, random_density};

    fn qutrit(v: &[(f64, f64)]) -> Ket {
        Ket::normalized(v.iter().map(|&(r, i)| c(r, i)).collect()).unwrap()
    }

    fn fiducial() -> Ket {
        qutrit(&[(1.0, 0.0), (1.0, 0.0), (0.0, 0.0)])
    }

    #[test]
    fn encoding_maps_componentwise() {
        let s = encode_qutrit(&Ket::basis(3, 0).unwrap()).unwrap();
        assert_eq!(s.population(V1), 1.0);
        assert_eq!(s.survival(), 1.0);
        let uniform = qutrit(&[(1.0, 0.0), (1.0, 0.0), (1.0, 0.0)]);
        let s = encode_qutrit(&uniform).unwrap();
        for mode in [V1, H1, V2] {
            assert!((s.population(mode) - 1.0 / 3.0).abs() < 1e-15);
        }
        assert_eq!(s.population(H2), 0.0);
        assert!(encode_qutrit(&Ket::basis(2, 0).unwrap()).is_err());
    }

    #[test]
    fn z_tilde_phases_and_order_three() {
        let uniform = qutrit(&[(1.0, 0.0), (1.0, 0.0), (1.0, 0.0)]);
        let s = encode_qutrit(&uniform).unwrap();
        let out = apply_z_tilde(&s);
        // ρ[V1,H1] = a0 conj(a1) picks up conj(ω); ρ[V1,V2] untouched
        assert!((out.rho[(V1, H1)] - s.rho[(V1, H1)] * omega_pow(3, -1)).norm() < 1e-15);
        assert!((out.rho[(V1, V2)] - s.rho[(V1, V2)]).norm() < 1e-15);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let s = encode_density(&random_density(3, &mut rng)).unwrap();
        let thrice = apply_z_tilde(&apply_z_tilde(&apply_z_tilde(&s)));
        assert!(max_abs(&(thrice.matrix() - s.matrix())) < 1e-12);
    }

    #[test]
    fn ideal_x_gate_cycles_basis() {
        for j in 0..3 {
            let s = encode_qutrit(&Ket::basis(3, j).unwrap()).unwrap();
            let out = apply_x_gate(&s, 1.0, [0.0; 3]);
            let want = encode_qutrit(&Ket::basis(3, (j + 1) % 3).unwrap()).unwrap();
            assert!(max_abs(&(out.matrix() - want.matrix())) < 1e-12, "j = {j}");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let s = encode_density(&random_density(3, &mut rng)).unwrap();
        let mut out = s.clone();
        for _ in 0..3 {
            out = apply_x_gate(&out, 1.0, [0.0; 3]);
        }
        assert!(max_abs(&(out.matrix() - s.matrix())) < 1e-12);
    }

    #[test]
    fn zero_visibility_matches_dephased_mixture() {
        let psi = qutrit(&[(1.0, 0.0), (0.0, 0.0), (1.0, 0.0)]);
        let out = apply_x_gate(&encode_qutrit(&psi).unwrap(), 0.0, [0.0; 3]);
        // explicit mixture: half |0⟩ (path 1), half |2⟩ (path 2), each sent through the gate
        let a = apply_x_gate(&encode_qutrit(&Ket::basis(3, 0).unwrap()).unwrap(), 1.0, [0.0; 3]);
        let b = apply_x_gate(&encode_qutrit(&Ket::basis(3, 2).unwrap()).unwrap(), 1.0, [0.0; 3]);
        let mix = (a.matrix() + b.matrix()) * C64::from(0.5);
        assert!(max_abs(&(out.matrix() - mix)) < 1e-12);
    }

    #[test]
    fn station_examples() {
        let cfg = LoopConfig { epsilon_h: 0.0, ..LoopConfig::experimental() };
        let (p, _) = partial_projector(&encode_qutrit(&fiducial()).unwrap(), &cfg, 0.0);
        assert!((p - 0.13).abs() < 1e-12);

        let orth = qutrit(&[(1.0, 0.0), (-1.0, 0.0), (0.0, 0.0)]);
        let (p, _) = partial_projector(&encode_qutrit(&orth).unwrap(), &cfg, 0.0);
        assert!(p.abs() < 1e-15);

        let (p, kept) = partial_projector(&encode_qutrit(&Ket::basis(3, 2).unwrap()).unwrap(), &LoopConfig::experimental(), 0.0);
        assert_eq!(p, 0.0);
        assert!((kept.survival() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn station_click_matches_effect_operator() {
        // independent 4x4 model: click = ε_V |⟨f|ψ⟩|² + ε_H |⟨f⊥|ψ⟩|² on path 1
        let cfg = LoopConfig::experimental();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rho = random_density(3, &mut rng);
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let f = [s, s, 0.0];
        let fp = [s, -s, 0.0];
        let proj = |v: &[f64; 3]| -> f64 {
            let mut acc = C64::from(0.0);
            for i in 0..3 {
                for j in 0..3 {
                    acc += rho.matrix()[(i, j)] * v[i] * v[j];
                }
            }
            acc.re
        };
        let want = cfg.epsilon_v * proj(&f) + cfg.epsilon_h * proj(&fp);
        let (p, kept) = partial_projector(&encode_density(&rho).unwrap(), &cfg, 0.0);
        assert!((p - want).abs() < 1e-14);
        assert!((p + kept.survival() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn loop_labels_follow_accumulated_frames() {
        // with a tiny V-only slide the click of each port is ε_V |⟨ψ_label|ψ⟩|²
        let cfg = LoopConfig::ideal(1e-9);
        let povm = SicPovm::standard(3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let rho = random_density(3, &mut rng);
        let res = simulate_single_pass(&rho, &cfg).unwrap();
        let expected = sic_probabilities(&rho, &povm).unwrap();
        for (port, want) in res.ports.iter().zip(expected.values()) {
            assert!((port.probability / (3.0 * 1e-9) - want).abs() < 1e-6, "{port:?} vs {want}");
        }
        assert_eq!(res.ports[5].label, SicElementLabel { m: 2, n: 0 });
        assert_eq!((res.ports[5].trip, res.ports[5].gate), (2, 3));
    }

    #[test]
    fn conservation_and_monotone_depletion() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let rho = random_density(3, &mut rng);
        let cfg = LoopConfig { per_pass_loss: 0.1, ..LoopConfig::experimental() };
        let res = simulate_single_pass(&rho, &cfg).unwrap();
        assert!(res.conservation_error() < 1e-12);
        let mut prev = 1.0;
        for cycles in 1..5 {
            let r = simulate_recycled(&rho, &cfg, cycles).unwrap();
            assert!(r.residual_in_loop <= prev + 1e-15);
            prev = r.residual_in_loop;
        }
    }

    #[test]
    fn lossless_transparent_loop_is_unitary() {
        let cfg = LoopConfig::ideal(0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let psi = crate::state::random_ket(3, &mut rng);
        let res = simulate_recycled(&DensityMatrix::pure(&psi), &cfg, 4).unwrap();
        assert!((res.residual_in_loop - 1.0).abs() < 1e-12);
        assert!(res.detected() == 0.0);
    }

    #[test]
    fn experimental_config_trip_envelope_decays() {
        let res = simulate_single_pass(&DensityMatrix::maximally_mixed(3), &LoopConfig::experimental()).unwrap();
        let trips = res.trip_totals();
        assert!(trips[0] > trips[1] && trips[1] > trips[2], "{trips:?}");
    }

    #[test]
    fn response_operators_reproduce_simulation() {
        let cfg = LoopConfig { per_pass_loss: 0.05, ..LoopConfig::experimental() };
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let offsets = HwpOffsets::sample(2.0, &mut rng);
        let effects = port_response(&cfg, &offsets).unwrap();
        for _ in 0..5 {
            let rho = random_density(3, &mut rng);
            let res = simulate_with_offsets(&rho, &cfg, &offsets, 1).unwrap();
            for (k, e) in effects.iter().enumerate() {
                let p = (e * rho.matrix()).trace();
                assert!((p.re - res.ports[k].probability).abs() < 1e-14 && p.im.abs() < 1e-14);
            }
        }
    }

    #[test]
    fn monte_carlo_zero_sigma_has_zero_spread() {
        let cfg = LoopConfig { hwp_sigma_deg: 0.0, ..LoopConfig::experimental() };
        let rep = monte_carlo_systematics(&DensityMatrix::maximally_mixed(3), &cfg, 50).unwrap();
        assert!(rep.std_dev.iter().all(|s| *s == 0.0));
        assert_eq!(rep.mean, rep.nominal);
    }

    #[test]
    fn monte_carlo_is_deterministic() {
        let cfg = LoopConfig { seed: 77, ..LoopConfig::experimental() };
        let rho = DensityMatrix::pure(&Ket::basis(3, 0).unwrap());
        let a = monte_carlo_systematics(&rho, &cfg, 64).unwrap();
        let b = monte_carlo_systematics(&rho, &cfg, 64).unwrap();
        assert_eq!(a, b);
        assert!(a.std_dev.iter().all(|s| *s > 0.0));
    }

    #[test]
    fn counts_examples() {
        assert_eq!(sample_counts(&[0.5, 0.5], 0, 1).unwrap(), vec![0, 0]);
        assert!(matches!(sample_counts(&[1.0], -1, 1), Err(Error::Contract(_))));
        let uniform = vec![1.0 / 9.0; 9];
        let counts = sample_counts(&uniform, 100_000, 3).unwrap();
        assert_eq!(counts.iter().sum::<u64>(), 100_000);
        let mean = 100_000.0 / 9.0;
        let sd = (100_000.0 * (1.0 / 9.0) * (8.0 / 9.0f64)).sqrt();
        assert!(counts.iter().all(|&n| (n as f64 - mean).abs() < 5.0 * sd), "{counts:?}");
        assert_eq!(counts, sample_counts(&uniform, 100_000, 3).unwrap());
        assert_eq!(sample_counts(&[0.0, 1.0, 0.0], 10, 9).unwrap(), vec![0, 10, 0]);
    }

    #[test]
    fn config_text_round_trip_and_errors() {
        let cfg = LoopConfig { epsilon_v: 0.2, seed: 5, ..LoopConfig::experimental() };
        assert_eq!(LoopConfig::parse(&cfg.to_text(), "x.cfg").unwrap(), cfg);
        let err = LoopConfig::parse("epsilon_v = 0.1\nepsilon_q = 3\n", "bad.cfg").unwrap_err();
        match err {
            Error::Parse { file, line, key, .. } => {
                assert_eq!((file.as_str(), line, key.as_str()), ("bad.cfg", 2, "epsilon_q"));
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(LoopConfig::parse("epsilon_v = 1.5\n", "r.cfg"), Err(Error::Parse { .. })));
    }

    #[test]
    fn csv_round_trips() {
        let res = simulate_single_pass(&DensityMatrix::maximally_mixed(3), &LoopConfig::experimental()).unwrap();
        let mut buf = Vec::new();
        res.write_csv(&mut buf).unwrap();
        assert_eq!(SimulationResult::read_csv(buf.as_slice()).unwrap(), res);

        let counts = PortCounts::from_counts(&[5, 4, 3, 2, 1, 0, 7, 8, 9]).unwrap();
        let mut buf = Vec::new();
        counts.write_csv(&mut buf).unwrap();
        assert_eq!(PortCounts::read_csv(buf.as_slice(), "c.csv").unwrap(), counts);
        let bad = "trip,gate,counts\n1,1,5\n1,1,6\n";
        assert!(matches!(PortCounts::read_csv(bad.as_bytes(), "c.csv"), Err(Error::Parse { line: 3, .. })));
    }
}
