//! Static diffusion: position-only walkers with random jumps and
//! potential-driven birth/death, relaxing in imaginary time to the ground state.
//!
//! The stationary walker density follows Ψ₀ itself (the module of the ground
//! state), not |Ψ₀|².

use crate::error::{Error, Result};
use crate::lattice::SimUnits;
use crate::rng::{substream, tags};
use crate::stats;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;

#[derive(Clone, Debug, PartialEq)]
pub struct Walker {
    pub id: u64,
    pub pos: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DmcConfig {
    /// Probability of a jump in each of the 2·dim directions.
    pub jump_probability: f64,
    pub jump_length: f64,
    /// λ in the branching probability λ|V − E_T|δτ.
    pub coupling: f64,
    /// Initial reference energy.
    pub reference_energy: f64,
    pub target_population: usize,
    pub imaginary_step: f64,
    /// Population-control gain η.
    pub gain: f64,
    pub seed: u64,
}

impl DmcConfig {
    /// Diffusion matched to the kinetic term, p·Δx²/δτ = ħ/(2M), and λ = 1/ħ.
    pub fn matched(units: &SimUnits, jump_length: f64, jump_probability: f64, target_population: usize, seed: u64) -> Self {
        let d = units.hbar / (2.0 * units.mass);
        Self {
            jump_probability,
            jump_length,
            coupling: 1.0 / units.hbar,
            reference_energy: 0.0,
            target_population,
            imaginary_step: jump_probability * jump_length * jump_length / d,
            gain: 0.1,
            seed,
        }
    }

    pub fn validate(&self, dim: usize) -> Result<()> {
        let p = self.jump_probability;
        if !(p > 0.0 && 2.0 * dim as f64 * p <= 1.0) {
            return Err(Error::Config(format!("jump probability {p} invalid in {dim} dimensions")));
        }
        if !(self.jump_length > 0.0 && self.imaginary_step > 0.0 && self.coupling >= 0.0 && self.target_population > 0) {
            return Err(Error::Config("jump length, step, coupling and population must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Domain {
    Free,
    Periodic { lower: f64, upper: f64 },
    /// Walkers leaving [lower, upper] are absorbed (hard walls, Ψ₀ = 0 outside).
    Absorbing { lower: f64, upper: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct DmcState {
    pub walkers: Vec<Walker>,
    pub e_t: f64,
    pub step: u64,
    pub next_id: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: u64,
    pub population: usize,
    pub e_t: f64,
}

impl DmcState {
    pub fn uniform(n: usize, dim: usize, lower: f64, upper: f64, config: &DmcConfig) -> Self {
        let mut rng = substream(config.seed, tags::SAMPLING, 0);
        let walkers = (0..n as u64)
            .map(|id| Walker { id, pos: (0..dim).map(|_| rng.random_range(lower..upper)).collect() })
            .collect();
        Self { walkers, e_t: config.reference_energy, step: 0, next_id: n as u64 }
    }
}

enum Fate {
    Keep,
    Absorbed,
    Birth,
    Death(f64),
}

fn bin_key(pos: &[f64], width: f64) -> u64 {
    pos.iter().enumerate().fold(0u64, |h, (k, x)| {
        let c = (x / width).floor() as i64 as u64;
        (h ^ c.wrapping_mul(0x9E37_79B9_7F4A_7C15)).rotate_left(17).wrapping_add(k as u64)
    })
}

/// One imaginary-time step. Walker ids stay sorted; births get fresh ids.
pub fn dmc_step<V>(state: &mut DmcState, potential: &V, domain: &Domain, config: &DmcConfig) -> Result<StepRecord>
where
    V: Fn(&[f64]) -> f64 + Sync,
{
    if state.walkers.is_empty() {
        return Err(Error::Extinct(state.step));
    }
    let dim = state.walkers[0].pos.len();
    let (p, dx, e_t, step) = (config.jump_probability, config.jump_length, state.e_t, state.step);
    let fates: Vec<Fate> = state
        .walkers
        .par_iter_mut()
        .map(|w| {
            let mut rng = substream(config.seed, w.id, step);
            let k = (rng.random::<f64>() / p) as usize;
            if k < 2 * dim {
                w.pos[k / 2] += if k % 2 == 0 { dx } else { -dx };
            }
            match *domain {
                Domain::Free => {}
                Domain::Periodic { lower, upper } => {
                    w.pos.iter_mut().for_each(|x| *x = lower + (*x - lower).rem_euclid(upper - lower));
                }
                Domain::Absorbing { lower, upper } => {
                    if w.pos.iter().any(|&x| x < lower || x > upper) {
                        return Fate::Absorbed;
                    }
                }
            }
            let v = potential(&w.pos);
            if !v.is_finite() {
                return Fate::Absorbed;
            }
            let prob = (config.coupling * (v - e_t).abs() * config.imaginary_step).min(1.0);
            let (u, pick): (f64, f64) = (rng.random(), rng.random());
            if u >= prob {
                Fate::Keep
            } else if v < e_t {
                Fate::Birth
            } else {
                Fate::Death(pick)
            }
        })
        .collect();

    let n = state.walkers.len();
    let mut alive: Vec<bool> = fates.iter().map(|f| !matches!(f, Fate::Absorbed)).collect();
    let dying: Vec<(usize, f64)> =
        fates.iter().enumerate().filter_map(|(i, f)| if let Fate::Death(u) = f { Some((i, *u)) } else { None }).collect();
    if !dying.is_empty() {
        let mut bins: HashMap<u64, Vec<usize>> = HashMap::new();
        for (i, w) in state.walkers.iter().enumerate() {
            if alive[i] {
                bins.entry(bin_key(&w.pos, dx)).or_default().push(i);
            }
        }
        let offsets: Vec<Vec<f64>> = (0..3usize.pow(dim as u32))
            .map(|mut c| (0..dim).map(|_| { let o = (c % 3) as f64 - 1.0; c /= 3; o * dx }).collect())
            .collect();
        let mut probe = vec![0.0; dim];
        let mut near = Vec::new();
        for (i, u) in dying {
            if !alive[i] {
                continue;
            }
            near.clear();
            let me = &state.walkers[i].pos;
            for off in &offsets {
                probe.iter_mut().zip(me.iter().zip(off)).for_each(|(q, (x, o))| *q = x + o);
                if let Some(cands) = bins.get(&bin_key(&probe, dx)) {
                    for &j in cands {
                        let d2: f64 = state.walkers[j].pos.iter().zip(me).map(|(a, b)| (a - b) * (a - b)).sum();
                        if j != i && alive[j] && d2 <= dx * dx {
                            near.push(j);
                        }
                    }
                }
            }
            near.sort_unstable();
            near.dedup();
            let victim = if near.is_empty() { i } else { near[((u * near.len() as f64) as usize).min(near.len() - 1)] };
            alive[victim] = false;
        }
    }
    let mut next = Vec::with_capacity(n + n / 8);
    let mut births = Vec::new();
    for (i, w) in std::mem::take(&mut state.walkers).into_iter().enumerate() {
        if alive[i] {
            if matches!(fates[i], Fate::Birth) {
                births.push(w.pos.clone());
            }
            next.push(w);
        }
    }
    for pos in births {
        next.push(Walker { id: state.next_id, pos });
        state.next_id += 1;
    }
    state.walkers = next;
    state.step += 1;
    if state.walkers.is_empty() {
        return Err(Error::Extinct(step));
    }
    let pop = state.walkers.len();
    state.e_t += config.gain * (config.target_population as f64 / pop as f64).ln();
    Ok(StepRecord { step: state.step, population: pop, e_t: state.e_t })
}

/// The same rules in the joint configuration space: each walker's position is
/// the concatenation of its particles' coordinates.
pub fn dmc_step_nparticle<V>(state: &mut DmcState, joint_potential: &V, domain: &Domain, config: &DmcConfig) -> Result<StepRecord>
where
    V: Fn(&[f64]) -> f64 + Sync,
{
    dmc_step(state, joint_potential, domain, config)
}

/// Fixed-width histogram along one coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct Histogram {
    pub lower: f64,
    pub width: f64,
    pub counts: Vec<f64>,
}

impl Histogram {
    pub fn new(lower: f64, upper: f64, bins: usize) -> Self {
        Self { lower, width: (upper - lower) / bins as f64, counts: vec![0.0; bins] }
    }

    pub fn centers(&self) -> Vec<f64> {
        (0..self.counts.len()).map(|i| self.lower + (i as f64 + 0.5) * self.width).collect()
    }

    pub fn add(&mut self, x: f64) {
        let k = ((x - self.lower) / self.width).floor();
        if k >= 0.0 && (k as usize) < self.counts.len() {
            self.counts[k as usize] += 1.0;
        }
    }

    pub fn add_walkers(&mut self, walkers: &[Walker], axis: usize) {
        walkers.iter().for_each(|w| self.add(w.pos[axis]));
    }

    /// Bin masses of exp(−x²/(2s²)), normalized on the histogram range.
    pub fn gaussian_masses(&self, s: f64) -> Vec<f64> {
        let cdf = |x: f64| 0.5 * (1.0 + libm::erf(x / (s * std::f64::consts::SQRT_2)));
        let m: Vec<f64> =
            (0..self.counts.len()).map(|i| { let a = self.lower + i as f64 * self.width; cdf(a + self.width) - cdf(a) }).collect();
        let t: f64 = m.iter().sum();
        m.iter().map(|x| x / t).collect()
    }

    /// L1 distance to the normalized Gaussian profile exp(−x²/(2s²)).
    pub fn l1_to_gaussian(&self, s: f64) -> f64 {
        stats::l1_normalized(&self.counts, &self.gaussian_masses(s))
    }

    /// Slope of ln(count) against x² over bins holding at least `min_count`.
    pub fn log_slope(&self, min_count: f64) -> LogSlope {
        let (mut x2, mut y, mut w) = (vec![], vec![], vec![]);
        for (c, h) in self.centers().iter().zip(&self.counts) {
            if *h >= min_count {
                x2.push(c * c);
                y.push(h.ln());
                w.push(*h);
            }
        }
        let (slope, _, se) = stats::linear_fit(&x2, &y, Some(&w));
        LogSlope { slope, se }
    }
}

/// Fit of ln h = a + slope·x². The module of the SHO ground state has slope −½,
/// its square −1.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogSlope {
    pub slope: f64,
    pub se: f64,
}

impl LogSlope {
    pub fn prefers_module(&self) -> bool {
        (self.slope + 0.5).abs() < (self.slope + 1.0).abs()
    }

    /// Whether the |Ψ₀|² law (slope −1) lies outside `z` standard errors.
    pub fn rejects_square(&self, z: f64) -> bool {
        (self.slope + 1.0).abs() > z * self.se
    }
}

/// First step after which block means of E_T stay on the plateau set by the
/// second half of the run.
pub fn detect_burn_in(history: &[StepRecord], block: usize) -> Result<usize> {
    let need = 4 * block;
    if history.len() < need {
        return Err(Error::History { need, have: history.len() });
    }
    let means: Vec<f64> = history.chunks_exact(block).map(|c| stats::mean(&c.iter().map(|r| r.e_t).collect::<Vec<_>>())).collect();
    let tail = &means[means.len() / 2..];
    let (m, s) = (stats::mean(tail), stats::std_dev(tail));
    let k = means.iter().position(|x| (x - m).abs() <= 3.0 * s).unwrap_or(means.len() / 2);
    Ok(k * block)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct EnergyEstimate {
    pub mean: f64,
    pub stderr: f64,
    /// Population drifts by more than 10% between the first and last quarter.
    pub trend: bool,
}

/// Time-averaged E_T over the stationary segment, with a block-averaged error.
pub fn ground_energy_estimate(history: &[StepRecord], burn_in: usize) -> Result<EnergyEstimate> {
    let seg = history.get(burn_in..).unwrap_or(&[]);
    if seg.len() < 16 {
        return Err(Error::History { need: burn_in + 16, have: history.len() });
    }
    let e: Vec<f64> = seg.iter().map(|r| r.e_t).collect();
    let blocks: Vec<f64> = e.chunks(seg.len().div_ceil(16)).map(stats::mean).collect();
    let q = seg.len() / 4;
    let pop = |s: &[StepRecord]| stats::mean(&s.iter().map(|r| r.population as f64).collect::<Vec<_>>());
    let (first, last) = (pop(&seg[..q]), pop(&seg[seg.len() - q..]));
    Ok(EnergyEstimate { mean: stats::mean(&e), stderr: stats::std_err(&blocks), trend: (last - first).abs() > 0.1 * first })
}

/// Result of [`run`]: the step history and a post-burn-in histogram of axis 0.
pub struct DmcRun {
    pub history: Vec<StepRecord>,
    pub histogram: Histogram,
    pub burn_in: usize,
}

/// Run `steps` steps; the histogram accumulates every step after `burn_in`.
pub fn run<V>(
    state: &mut DmcState,
    potential: &V,
    domain: &Domain,
    config: &DmcConfig,
    steps: usize,
    burn_in: usize,
    mut histogram: Histogram,
) -> Result<DmcRun>
where
    V: Fn(&[f64]) -> f64 + Sync,
{
    config.validate(state.walkers.first().map_or(1, |w| w.pos.len()))?;
    let mut history = Vec::with_capacity(steps);
    for k in 0..steps {
        history.push(dmc_step(state, potential, domain, config)?);
        if k >= burn_in {
            histogram.add_walkers(&state.walkers, 0);
        }
    }
    Ok(DmcRun { history, histogram, burn_in })
}
