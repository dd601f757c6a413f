//! Exact statevector toolkit for the discrete examples: CNOT chains, emission
//! contrast, matched-basis tomography, CHSH and the polymer-assembly game.

use crate::error::{Error, Result};
use crate::rng::substream;
use num_complex::Complex64 as C64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const MAX_QUBITS: usize = 20;
const SHOT_CHUNK: u64 = 4096;

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

/// Qubit 0 is the most significant bit of the basis index.
#[derive(Clone, Debug, PartialEq)]
pub struct Statevector {
    pub qubits: usize,
    pub amps: Vec<C64>,
}

impl Statevector {
    pub fn zero(qubits: usize) -> Result<Self> {
        Self::basis(qubits, 0)
    }

    pub fn basis(qubits: usize, index: usize) -> Result<Self> {
        if qubits == 0 || qubits > MAX_QUBITS || index >= 1 << qubits {
            return Err(Error::Target(format!("basis state {index} on {qubits} qubits")));
        }
        let mut amps = vec![C64::new(0.0, 0.0); 1 << qubits];
        amps[index] = c(1.0);
        Ok(Self { qubits, amps })
    }

    pub fn from_amps(amps: Vec<C64>) -> Result<Self> {
        let n = amps.len();
        if n < 2 || !n.is_power_of_two() || n > 1 << MAX_QUBITS {
            return Err(Error::Target(format!("{n} amplitudes")));
        }
        let s = Self { qubits: n.trailing_zeros() as usize, amps };
        let norm = s.norm_sq();
        if (norm - 1.0).abs() > 1e-12 {
            return Err(Error::NotNormalized(norm));
        }
        Ok(s)
    }

    /// (|00⟩ + |11⟩)/√2
    pub fn phi_plus() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self { qubits: 2, amps: vec![c(h), c(0.0), c(0.0), c(h)] }
    }

    /// (|01⟩ − |10⟩)/√2
    pub fn singlet() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self { qubits: 2, amps: vec![c(0.0), c(h), c(-h), c(0.0)] }
    }

    pub fn norm_sq(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn probabilities(&self) -> Vec<f64> {
        self.amps.iter().map(|a| a.norm_sqr()).collect()
    }

    fn mask(&self, q: usize) -> usize {
        1 << (self.qubits - 1 - q)
    }

    fn apply_single(&mut self, q: usize, m: &[[C64; 2]; 2]) {
        let bit = self.mask(q);
        for i in 0..self.amps.len() {
            if i & bit == 0 {
                let (a0, a1) = (self.amps[i], self.amps[i | bit]);
                self.amps[i] = m[0][0] * a0 + m[0][1] * a1;
                self.amps[i | bit] = m[1][0] * a0 + m[1][1] * a1;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Gate {
    H,
    X,
    Z,
    /// targets = [control, target]
    Cnot,
}

pub fn apply_gate(state: &Statevector, gate: Gate, targets: &[usize]) -> Result<Statevector> {
    let arity = if gate == Gate::Cnot { 2 } else { 1 };
    if targets.len() != arity || targets.iter().any(|&t| t >= state.qubits) || (arity == 2 && targets[0] == targets[1]) {
        return Err(Error::Target(format!("{gate:?} on {targets:?} with {} qubits", state.qubits)));
    }
    let mut s = state.clone();
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let z0 = c(0.0);
    match gate {
        Gate::H => s.apply_single(targets[0], &[[c(h), c(h)], [c(h), c(-h)]]),
        Gate::X => s.apply_single(targets[0], &[[z0, c(1.0)], [c(1.0), z0]]),
        Gate::Z => s.apply_single(targets[0], &[[c(1.0), z0], [z0, c(-1.0)]]),
        Gate::Cnot => {
            let (cb, tb) = (s.mask(targets[0]), s.mask(targets[1]));
            for i in 0..s.amps.len() {
                if i & cb != 0 && i & tb == 0 {
                    s.amps.swap(i, i | tb);
                }
            }
        }
    }
    Ok(s)
}

/// Single-qubit observable with spectrum {+1, −1}.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observable {
    pub m: [[C64; 2]; 2],
}

impl Observable {
    pub fn new(m: [[C64; 2]; 2]) -> Result<Self> {
        let adjoint = (m[0][1] - m[1][0].conj()).norm() < 1e-10 && m[0][0].im.abs() < 1e-10 && m[1][1].im.abs() < 1e-10;
        // Self-adjoint with M² = I means eigenvalues ±1; zero trace excludes ±I.
        let sq = |i: usize, j: usize| m[i][0] * m[0][j] + m[i][1] * m[1][j];
        let involution = (sq(0, 0) - 1.0).norm() < 1e-10 && (sq(1, 1) - 1.0).norm() < 1e-10 && sq(0, 1).norm() < 1e-10;
        let traceless = (m[0][0] + m[1][1]).norm() < 1e-10;
        if !(adjoint && involution && traceless) {
            return Err(Error::Config(format!("observable {m:?} is not a ±1 self-adjoint operator")));
        }
        Ok(Self { m })
    }

    pub fn sigma_x() -> Self {
        Self { m: [[c(0.0), c(1.0)], [c(1.0), c(0.0)]] }
    }

    pub fn sigma_z() -> Self {
        Self { m: [[c(1.0), c(0.0)], [c(0.0), c(-1.0)]] }
    }

    /// x·σ_x + z·σ_z for a unit vector (x, z).
    pub fn xz(x: f64, z: f64) -> Result<Self> {
        Self::new([[c(z), c(x)], [c(x), c(-z)]])
    }

    /// (I + sign·M)/2
    fn projector(&self, sign: i8) -> [[C64; 2]; 2] {
        let s = sign as f64;
        let mut p = [[c(0.0); 2]; 2];
        for (i, row) in p.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = self.m[i][j] * (s / 2.0) + if i == j { c(0.5) } else { c(0.0) };
            }
        }
        p
    }
}

/// Born probabilities of the joint outcomes (+,+), (+,−), (−,+), (−,−).
pub fn pair_distribution(state: &Statevector, o1: &Observable, o2: &Observable) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (k, (s1, s2)) in [(1, 1), (1, -1), (-1, 1), (-1, -1)].into_iter().enumerate() {
        let mut t = state.clone();
        t.apply_single(0, &o1.projector(s1));
        t.apply_single(1, &o2.projector(s2));
        out[k] = state.amps.iter().zip(&t.amps).map(|(a, b)| a.conj() * b).sum::<C64>().re.max(0.0);
    }
    out
}

fn outcome(k: usize) -> (i8, i8) {
    [(1, 1), (1, -1), (-1, 1), (-1, -1)][k]
}

fn draw<R: Rng + ?Sized>(dist: &[f64; 4], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * dist.iter().sum::<f64>();
    let mut acc = 0.0;
    for (k, p) in dist.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    3
}

pub fn measure_pair<R: Rng + ?Sized>(state: &Statevector, o1: &Observable, o2: &Observable, rng: &mut R) -> (i8, i8) {
    outcome(draw(&pair_distribution(state, o1, o2), rng))
}

/// ⟨O1 ⊗ O2⟩
pub fn correlation(state: &Statevector, o1: &Observable, o2: &Observable) -> f64 {
    let d = pair_distribution(state, o1, o2);
    d[0] - d[1] - d[2] + d[3]
}

/// Detector settings at the two assembly points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChshSettings {
    pub a1: Observable,
    pub b1: Observable,
    pub a2: Observable,
    pub b2: Observable,
}

impl Default for ChshSettings {
    fn default() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self {
            a1: Observable::sigma_x(),
            b1: Observable::sigma_z(),
            a2: Observable::xz(-h, h).unwrap(),
            b2: Observable::xz(-h, -h).unwrap(),
        }
    }
}

impl ChshSettings {
    /// The four terms (site-1 observable, site-2 observable, weight) of a₁b₂ + b₁b₂ + a₁a₂ − b₁a₂.
    fn terms(&self) -> [(Observable, Observable, f64); 4] {
        [(self.a1, self.b2, 1.0), (self.b1, self.b2, 1.0), (self.a1, self.a2, 1.0), (self.b1, self.a2, -1.0)]
    }
}

pub fn chsh_exact(state: &Statevector, s: &ChshSettings) -> f64 {
    s.terms().iter().map(|(o1, o2, w)| w * correlation(state, o1, o2)).sum()
}

/// Sampled CHSH combination with shots/4 fresh pairs per term; returns (value, standard error).
pub fn chsh_sampled(state: &Statevector, s: &ChshSettings, shots: u64, seed: u64) -> (f64, f64) {
    let per = shots / 4;
    let mut value = 0.0;
    let mut var = 0.0;
    for (t, (o1, o2, w)) in s.terms().iter().enumerate() {
        let dist = pair_distribution(state, o1, o2);
        let sum = chunked(per, seed, t as u64 * (1 << 20), |rng, n| {
            (0..n).map(|_| { let (a, b) = outcome(draw(&dist, rng)); (a * b) as f64 }).sum::<f64>()
        });
        let mean = sum / per as f64;
        value += w * mean;
        var += (1.0 - mean * mean) / per as f64;
    }
    (value, var.sqrt())
}

/// Sum of `f` over `shots` split into fixed chunks, each with its own stream.
fn chunked(shots: u64, seed: u64, stream0: u64, f: impl Fn(&mut crate::rng::SimRng, u64) -> f64 + Sync) -> f64 {
    let chunks = shots.div_ceil(SHOT_CHUNK);
    let parts: Vec<f64> = (0..chunks)
        .into_par_iter()
        .map(|k| {
            let n = SHOT_CHUNK.min(shots - k * SHOT_CHUNK);
            f(&mut substream(seed, stream0 + k, 0), n)
        })
        .collect();
    parts.iter().sum()
}

/// Brute force over the 16 deterministic assignments of a₁, b₁, a₂, b₂.
pub fn classical_chsh_values() -> Vec<f64> {
    (0..16)
        .map(|bits: u32| {
            let v = |k: u32| if bits >> k & 1 == 1 { -1.0_f64 } else { 1.0 };
            let (a1, b1, a2, b2) = (v(0), v(1), v(2), v(3));
            (a1 * b2 + b1 * b2 + a1 * a2 - b1 * a2).abs()
        })
        .collect()
}

pub fn chsh_classical_bound() -> f64 {
    classical_chsh_values().into_iter().fold(0.0, f64::max)
}

/// Which EPR pair feeds the detectors.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EprSource {
    #[default]
    Singlet,
    PhiPlus,
}

impl EprSource {
    pub fn state(self) -> Statevector {
        match self {
            EprSource::Singlet => Statevector::singlet(),
            EprSource::PhiPlus => Statevector::phi_plus(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Strategy {
    /// table[site][type] with type 0 = a, 1 = b.
    Classical([[i8; 2]; 2]),
    Epr { source: EprSource, settings: ChshSettings },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AssemblyConfig {
    /// Probability of drawing type a at each site.
    pub p_a: [f64; 2],
    pub strategy: Strategy,
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct AssemblyStats {
    pub mean_noncr: f64,
    pub stderr: f64,
    pub shots: u64,
}

/// Weight of the sign product for the type pair: −1 only for (b at site 1, a at site 2).
fn cr_weight(t1: usize, t2: usize) -> i8 {
    if t1 == 1 && t2 == 0 { -1 } else { 1 }
}

/// All 16 sign tables.
pub fn classical_tables() -> Vec<[[i8; 2]; 2]> {
    (0..16u32)
        .map(|bits| {
            let v = |k: u32| if bits >> k & 1 == 1 { -1 } else { 1 };
            [[v(0), v(1)], [v(2), v(3)]]
        })
        .collect()
}

/// Expected NonCr of a table under equiprobable type pairs.
pub fn table_noncr(t: &[[i8; 2]; 2]) -> f64 {
    let mut cr = 0.0;
    for t1 in 0..2 {
        for t2 in 0..2 {
            cr += 0.25 * (cr_weight(t1, t2) * t[0][t1] * t[1][t2]) as f64;
        }
    }
    0.5 * (1.0 + cr)
}

pub fn best_classical_table() -> [[i8; 2]; 2] {
    let tables = classical_tables();
    *tables.iter().max_by(|a, b| table_noncr(a).total_cmp(&table_noncr(b))).unwrap()
}

pub fn run_assembly(config: &AssemblyConfig, shots: u64) -> AssemblyStats {
    // Joint outcome distributions per (type₁, type₂), computed once.
    let dists: Option<[[[f64; 4]; 2]; 2]> = match config.strategy {
        Strategy::Epr { source, settings } => {
            let st = source.state();
            let obs = [[settings.a1, settings.b1], [settings.a2, settings.b2]];
            let mut d = [[[0.0; 4]; 2]; 2];
            for (t1, row) in d.iter_mut().enumerate() {
                for (t2, cell) in row.iter_mut().enumerate() {
                    *cell = pair_distribution(&st, &obs[0][t1], &obs[1][t2]);
                }
            }
            Some(d)
        }
        Strategy::Classical(_) => None,
    };
    let p_a = config.p_a;
    let noncr = chunked(shots, config.seed, 0, |rng, n| {
        let mut hits = 0u64;
        for _ in 0..n {
            let t1 = usize::from(rng.random::<f64>() >= p_a[0]);
            let t2 = usize::from(rng.random::<f64>() >= p_a[1]);
            let (s1, s2) = match (&config.strategy, &dists) {
                (Strategy::Classical(t), _) => (t[0][t1], t[1][t2]),
                (_, Some(d)) => outcome(draw(&d[t1][t2], rng)),
                _ => unreachable!(),
            };
            hits += u64::from(cr_weight(t1, t2) * s1 * s2 == 1);
        }
        hits as f64
    });
    let mean = noncr / shots as f64;
    AssemblyStats { mean_noncr: mean, stderr: (mean * (1.0 - mean) / shots as f64).sqrt(), shots }
}

/// (P_distinguishable, P_indistinguishable) = (n|α|², n²|α|²) for n atoms with equal amplitude α.
pub fn emission_contrast(n_atoms: u64, alpha: f64) -> Result<(f64, f64)> {
    let n = n_atoms as f64;
    if n_atoms == 0 || alpha.abs() > 1.0 / n.sqrt() + 1e-15 {
        return Err(Error::Config(format!("{n_atoms} atoms with amplitude {alpha}")));
    }
    Ok((n * alpha * alpha, n * n * alpha * alpha))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TomographyPrep {
    Epr,
    /// ½(|00⟩⟨00| + |11⟩⟨11|)
    DiagonalMixture,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Basis {
    Z,
    X,
}

/// Mean outcome product when both qubits are measured in the same basis.
pub fn tomography_correlation(prep: TomographyPrep, basis: Basis, shots: u64, seed: u64) -> f64 {
    let obs = match basis {
        Basis::Z => Observable::sigma_z(),
        Basis::X => Observable::sigma_x(),
    };
    let pure = |k| pair_distribution(&Statevector::basis(2, k).unwrap(), &obs, &obs);
    let (epr, d00, d11) = (pair_distribution(&Statevector::phi_plus(), &obs, &obs), pure(0), pure(3));
    let sum = chunked(shots, seed, 0, |rng, n| {
        (0..n)
            .map(|_| {
                let d = match prep {
                    TomographyPrep::Epr => &epr,
                    TomographyPrep::DiagonalMixture => if rng.random::<bool>() { &d00 } else { &d11 },
                };
                let (a, b) = outcome(draw(d, rng));
                (a * b) as f64
            })
            .sum()
    });
    sum / shots as f64
}
