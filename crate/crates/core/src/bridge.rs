//! Wave ↔ swarm conversion: Born sampling with Madelung velocities, and
//! restoration of ψ from cell counts plus a line integral of the mean velocity.

use crate::error::{Error, Result};
use crate::lattice::{CellGrid, CellTally, Speed, Swarm};
use crate::oracle::WaveField;
use crate::rng::{substream, tags};
use crate::stats::wrap_angle;
use num_complex::Complex64 as C64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeConfig {
    /// Phases are pinned to zero here (or at the most populated cell of a
    /// component that does not contain it).
    pub reference_cell: usize,
    pub contour_tolerance: f64,
    /// Use the arcsin form of the face increment instead of its linearization.
    pub arcsin: bool,
    /// Estimate face velocities from samples within dx/4 of the face when at
    /// least `subcell_min` of them are available.
    pub subcell: bool,
    pub subcell_min: usize,
}

impl Default for BridgeConfig {
    fn default() -> Self {
        Self { reference_cell: 0, contour_tolerance: 0.1, arcsin: false, subcell: false, subcell_min: 64 }
    }
}

/// Madelung velocity (ħ/M)∇φ per cell, from phase differences of neighbours.
pub fn madelung_velocity(wave: &WaveField) -> Vec<[f64; 3]> {
    let g = &wave.grid;
    let scale = wave.units.hbar / wave.units.mass;
    let phase_step = |a: usize, b: usize| {
        let z = wave.psi[b] * wave.psi[a].conj();
        if z.norm() == 0.0 { 0.0 } else { z.arg() }
    };
    (0..g.len())
        .map(|i| {
            let mut v = [0.0; 3];
            for (a, va) in v.iter_mut().enumerate().take(g.dim) {
                *va = scale
                    * match (g.neighbor(i, a, -1), g.neighbor(i, a, 1)) {
                        (Some(d), Some(u)) => phase_step(d, u) / (2.0 * g.dx),
                        (None, Some(u)) => phase_step(i, u) / g.dx,
                        (Some(d), None) => phase_step(d, i) / g.dx,
                        (None, None) => 0.0,
                    };
            }
            v
        })
        .collect()
}

/// Draw `n` samples from |ψ|², uniformly placed inside their cells, and give
/// each cell round(N·v̄/c) movers per axis in the direction of the Madelung
/// velocity (the rest stay at REST). Movers are capped by the cell count.
pub fn sample_swarm(wave: &WaveField, n: usize, seed: u64) -> Result<Swarm> {
    let norm = wave.norm_sq();
    if (norm - 1.0).abs() > 1e-6 {
        return Err(Error::NotNormalized(norm));
    }
    let g = &wave.grid;
    let c = wave.units.c;
    let mut cdf = wave.probabilities();
    for i in 1..cdf.len() {
        cdf[i] += cdf[i - 1];
    }
    let total = *cdf.last().unwrap();
    let mut rng = substream(seed, tags::SAMPLING, 0);
    let mut counts = vec![0usize; g.len()];
    for _ in 0..n {
        let u = rng.random::<f64>() * total;
        counts[cdf.partition_point(|&x| x <= u).min(g.len() - 1)] += 1;
    }
    let vel = madelung_velocity(wave);
    let mut swarm = Swarm::new(g.clone(), wave.units);
    for (cell, &count) in counts.iter().enumerate() {
        let corner = g.coords(cell);
        let mut movers = Vec::new();
        let mut budget = count;
        for a in 0..g.dim {
            let m = ((count as f64 * vel[cell][a].abs() / c).round() as usize).min(budget);
            budget -= m;
            movers.extend(std::iter::repeat_n(Speed::Move { axis: a as u8, positive: vel[cell][a] > 0.0 }, m));
        }
        for k in 0..count {
            let mut pos = [0.0; 3];
            for a in 0..g.dim {
                pos[a] = g.lower + (corner[a] as f64 + rng.random::<f64>()) * g.dx;
            }
            swarm.push(pos, movers.get(k).copied().unwrap_or(Speed::Rest));
        }
    }
    Ok(swarm)
}

/// Per-cell census used for restoration.
struct Census {
    tally: Vec<CellTally>,
    /// Sub-cell face velocities: for each cell and axis, (count, net) of samples
    /// within dx/4 of the upper face on either side.
    faces: Option<Vec<[(u64, i64); 3]>>,
}

impl Census {
    fn new(swarm: &Swarm, config: &BridgeConfig) -> Self {
        let g = &swarm.grid;
        let faces = config.subcell.then(|| {
            let mut f = vec![[(0u64, 0i64); 3]; g.len()];
            for s in &swarm.samples {
                let cell = g.cell_of(&s.pos);
                let c = g.coords(cell);
                let k = s.speed.counts();
                for a in 0..g.dim {
                    let frac = (s.pos[a] - g.lower) / g.dx - c[a] as f64;
                    let owner = if frac >= 0.75 { Some(cell) } else if frac < 0.25 { g.neighbor(cell, a, -1) } else { None };
                    if let Some(o) = owner {
                        f[o][a].0 += 1;
                        f[o][a].1 += k[a];
                    }
                }
            }
            f
        });
        Self { tally: swarm.tallies(), faces }
    }

    fn velocity(&self, cell: usize, axis: usize, c: f64) -> f64 {
        let t = &self.tally[cell];
        c * t.net()[axis] as f64 / t.total() as f64
    }
}

/// Phase increment from `from` to its neighbour `to` along `axis` (step ±1).
fn face_increment(swarm: &Swarm, census: &Census, config: &BridgeConfig, from: usize, to: usize, axis: usize, step: isize) -> f64 {
    let g = &swarm.grid;
    let u = &swarm.units;
    let k = u.mass / u.hbar * g.dx;
    // The face lies on the upper side of `lower`.
    let lower = if step > 0 { from } else { to };
    if let Some(faces) = &census.faces {
        let (count, net) = faces[lower][axis];
        if count as usize >= config.subcell_min {
            return step as f64 * k * u.c * net as f64 / count as f64;
        }
    }
    let (va, vb) = (census.velocity(from, axis, u.c), census.velocity(to, axis, u.c));
    let inc = if config.arcsin {
        let (ra, rb) = (census.tally[from].total() as f64, census.tally[to].total() as f64);
        (k * (ra * va + rb * vb) / (2.0 * (ra * rb).sqrt())).clamp(-1.0, 1.0).asin()
    } else {
        k * 0.5 * (va + vb)
    };
    step as f64 * inc
}

#[derive(Clone, Debug, PartialEq)]
pub struct Restored {
    pub wave: WaveField,
    /// Connected non-empty components; each has its own zero-phase reference.
    pub components: usize,
    pub component_of: Vec<Option<usize>>,
    /// Reference cell of each component.
    pub references: Vec<usize>,
}

/// |ψ| = √(count/(n·dx^dim)), phase by breadth-first line integration over
/// face-adjacent non-empty cells. Empty cells carry ψ = 0.
pub fn restore_wave(swarm: &Swarm, config: &BridgeConfig) -> Result<Restored> {
    let g = &swarm.grid;
    if config.reference_cell >= g.len() {
        return Err(Error::Config(format!("reference cell {} outside the grid", config.reference_cell)));
    }
    if swarm.n() == 0 {
        return Err(Error::EmptyCell(config.reference_cell));
    }
    let census = Census::new(swarm, config);
    let count = |i: usize| census.tally[i].total();
    let mut phase = vec![0.0; g.len()];
    let mut comp: Vec<Option<usize>> = vec![None; g.len()];
    let mut references = Vec::new();
    let mut order: Vec<usize> = (0..g.len()).filter(|&i| count(i) > 0).collect();
    // Seed the first component at the reference cell if it is occupied,
    // later components at their most populated cell.
    order.sort_by_key(|&i| (i != config.reference_cell, std::cmp::Reverse(count(i)), i));
    let mut queue = VecDeque::new();
    for &seed in &order {
        if comp[seed].is_some() {
            continue;
        }
        let id = references.len();
        references.push(seed);
        comp[seed] = Some(id);
        queue.push_back(seed);
        while let Some(i) = queue.pop_front() {
            for a in 0..g.dim {
                for step in [-1isize, 1] {
                    if let Some(j) = g.neighbor(i, a, step) {
                        if comp[j].is_none() && count(j) > 0 {
                            comp[j] = Some(id);
                            phase[j] = phase[i] + face_increment(swarm, &census, config, i, j, a, step);
                            queue.push_back(j);
                        }
                    }
                }
            }
        }
    }
    let denom = swarm.n() as f64 * g.volume();
    let psi = (0..g.len()).map(|i| C64::from_polar((count(i) as f64 / denom).sqrt(), phase[i])).collect();
    let mut wave = WaveField { psi, grid: g.clone(), units: swarm.units };
    wave.normalize();
    Ok(Restored { wave, components: references.len(), component_of: comp, references })
}

/// Σ of phase increments around a closed loop of face-adjacent cells (the
/// first cell is not repeated at the end). ≈ 0 without vortices, ≈ 2π·w around
/// a vortex of winding w.
pub fn contour_residual(swarm: &Swarm, cells: &[usize], config: &BridgeConfig) -> Result<f64> {
    let g = &swarm.grid;
    let census = Census::new(swarm, config);
    let mut total = 0.0;
    for k in 0..cells.len() {
        let (i, j) = (cells[k], cells[(k + 1) % cells.len()]);
        for c in [i, j] {
            if census.tally[c].total() == 0 {
                return Err(Error::EmptyCell(c));
            }
        }
        let (a, step) = face_between(g, i, j).ok_or_else(|| Error::Lattice(format!("cells {i} and {j} are not face neighbours")))?;
        total += face_increment(swarm, &census, config, i, j, a, step);
    }
    Ok(total)
}

fn face_between(g: &CellGrid, i: usize, j: usize) -> Option<(usize, isize)> {
    (0..g.dim).flat_map(|a| [(a, -1), (a, 1)]).find(|&(a, s)| g.neighbor(i, a, s) == Some(j))
}

/// Axis-aligned rectangle of cells with corners (x0, y0) and (x1, y1) in the
/// first two axes, traversed counter-clockwise.
pub fn rectangle_loop(g: &CellGrid, (x0, y0): (usize, usize), (x1, y1): (usize, usize)) -> Vec<usize> {
    let at = |x: usize, y: usize| g.index([x, y, 0]);
    let mut v = Vec::new();
    v.extend((x0..x1).map(|x| at(x, y0)));
    v.extend((y0..y1).map(|y| at(x1, y)));
    v.extend((x0 + 1..=x1).rev().map(|x| at(x, y1)));
    v.extend((y0 + 1..=y1).rev().map(|y| at(x0, y)));
    v
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RoundTrip {
    pub n: usize,
    pub cells: usize,
    pub phase_rms: f64,
    pub fidelity: f64,
    pub contour_residual_max: f64,
}

/// |ψ_in|²-weighted RMS of the phase error, gauge-fixed at `reference`.
pub fn phase_rms(original: &WaveField, restored: &WaveField, reference: usize) -> f64 {
    let gauge = (restored.psi[reference] * original.psi[reference].conj()).arg();
    let (mut num, mut den) = (0.0, 0.0);
    for (a, b) in original.psi.iter().zip(&restored.psi) {
        if b.norm() > 0.0 {
            let w = a.norm_sqr();
            num += w * wrap_angle((b * a.conj()).arg() - gauge).powi(2);
            den += w;
        }
    }
    (num / den).sqrt()
}

pub fn fidelity(a: &WaveField, b: &WaveField) -> f64 {
    a.overlap(b).norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{density, Boundary, SimUnits};

    fn units(c: f64) -> SimUnits {
        SimUnits { c, ..SimUnits::default() }
    }

    #[test]
    fn real_wave_gives_rest_swarm() {
        let g = CellGrid::centered(1, 32, 0.25, 0.0, Boundary::Periodic);
        let w = WaveField::gaussian(&g, &units(4.0), &[0.0], 1.0, &[0.0]);
        let s = sample_swarm(&w, 5000, 1).unwrap();
        assert!(s.samples.iter().all(|x| x.speed.is_rest()));
        let r = restore_wave(&s, &BridgeConfig::default()).unwrap();
        assert!(r.wave.psi.iter().all(|z| z.im == 0.0 && z.re >= 0.0));
    }

    #[test]
    fn unnormalized_rejected() {
        let g = CellGrid::new(1, 8, 1.0, 0.0, Boundary::Periodic);
        let w = WaveField::from_fn(&g, &SimUnits::default(), |_| C64::new(1.0, 0.0));
        assert!(matches!(sample_swarm(&w, 1000, 0), Err(Error::NotNormalized(_))));
    }

    #[test]
    fn two_cell_occupancy() {
        let g = CellGrid::new(1, 2, 1.0, 0.0, Boundary::Reflecting);
        let w = WaveField { psi: vec![C64::new(0.5, 0.0), C64::new(0.75f64.sqrt(), 0.0)], grid: g, units: SimUnits::default() };
        let n = 100_000;
        let d = density(&sample_swarm(&w, n, 2).unwrap());
        let sd = (n as f64 * 0.25 * 0.75).sqrt();
        assert!((d.counts[0] as f64 - 0.25 * n as f64).abs() < 4.0 * sd);
    }

    #[test]
    fn boosted_velocity() {
        let g = CellGrid::centered(1, 64, 0.25, 0.0, Boundary::Periodic);
        let w = WaveField::gaussian(&g, &units(4.0), &[0.0], 1.5, &[2.0]);
        let s = sample_swarm(&w, 200_000, 3).unwrap();
        let t = s.tallies();
        for cell in 0..64 {
            let n = t[cell].total() as f64;
            if n > 100.0 {
                let v = 4.0 * t[cell].net()[0] as f64 / n;
                // rounding to whole movers bounds the error by c/(2N)
                assert!((v - 2.0).abs() <= 4.0 / (2.0 * n) + 1e-12, "cell {cell}: {v}");
            }
        }
    }

    #[test]
    fn density_is_exact_after_restore() {
        let g = CellGrid::centered(1, 32, 0.25, 0.0, Boundary::Periodic);
        let w = WaveField::gaussian(&g, &units(4.0), &[0.0], 1.0, &[1.0]);
        let s = sample_swarm(&w, 20_000, 4).unwrap();
        let r = restore_wave(&s, &BridgeConfig::default()).unwrap();
        let d = density(&s);
        for (z, k) in r.wave.density().iter().zip(&d.counts) {
            assert!((z - *k as f64 / (20_000.0 * g.volume())).abs() < 1e-12);
        }
    }

    #[test]
    fn boosted_round_trip() {
        let g = CellGrid::centered(1, 64, 0.25, 0.0, Boundary::Periodic);
        let w = WaveField::gaussian(&g, &units(4.0), &[0.0], 1.5, &[2.0]);
        let s = sample_swarm(&w, 200_000, 5).unwrap();
        let cfg = BridgeConfig { reference_cell: 32, ..Default::default() };
        let r = restore_wave(&s, &cfg).unwrap();
        assert!(phase_rms(&w, &r.wave, 32) < 0.1);
        assert!(fidelity(&w, &r.wave) > 0.99);
        // arcsin u ≥ u: the unlinearized form turns faster than the Madelung phase.
        let arc = restore_wave(&s, &BridgeConfig { arcsin: true, ..cfg }).unwrap();
        let turn = |z: &WaveField| (z.psi[33] * z.psi[32].conj()).arg();
        assert!(turn(&arc.wave) > turn(&r.wave) && turn(&arc.wave) < 1.1 * turn(&r.wave));
    }

    #[test]
    fn disconnected_support_gets_two_references() {
        let g = CellGrid::new(1, 10, 1.0, 0.0, Boundary::Reflecting);
        let mut s = Swarm::new(g, SimUnits::default());
        for x in [0.5, 1.5, 7.5, 8.2] {
            s.push([x, 0.0, 0.0], Speed::Rest);
        }
        let r = restore_wave(&s, &BridgeConfig::default()).unwrap();
        assert_eq!(r.components, 2);
        assert_eq!(r.references[0], 0);
        assert_eq!(r.component_of[8], Some(1));
        assert_eq!(r.component_of[4], None);
    }

    #[test]
    fn rest_swarm_contour_is_zero() {
        let g = CellGrid::new(2, 6, 1.0, 0.0, Boundary::Periodic);
        let mut s = Swarm::new(g.clone(), SimUnits::default());
        for i in 0..g.len() {
            s.push(g.center(i), Speed::Rest);
        }
        let lp = rectangle_loop(&g, (1, 1), (4, 3));
        assert_eq!(lp.len(), 10);
        assert_eq!(contour_residual(&s, &lp, &BridgeConfig::default()).unwrap(), 0.0);
    }

    #[test]
    fn vortex_winding() {
        let g = CellGrid::centered(2, 32, 0.25, 0.0, Boundary::Reflecting);
        let mut w = WaveField::from_fn(&g, &units(8.0), |x| {
            let r2 = x[0] * x[0] + x[1] * x[1];
            C64::new(x[0], x[1]) * (-r2 / 4.0).exp()
        });
        w.normalize();
        let s = sample_swarm(&w, 1_000_000, 6).unwrap();
        let cfg = BridgeConfig::default();
        for (lo, hi) in [(10, 21), (8, 23)] {
            let r = contour_residual(&s, &rectangle_loop(&g, (lo, lo), (hi, hi)), &cfg).unwrap();
            assert!((r - std::f64::consts::TAU).abs() < 0.2, "{r}");
        }
        let off = contour_residual(&s, &rectangle_loop(&g, (18, 18), (24, 24)), &cfg).unwrap();
        assert!(off.abs() < 0.1, "{off}");
    }
}
