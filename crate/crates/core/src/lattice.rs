//! Cell lattice, samples, swarms and the exchange reaction.

use crate::error::{Error, Result};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub const MAX_DIM: usize = 3;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimUnits {
    pub hbar: f64,
    /// Mass M of the real particle.
    pub mass: f64,
    pub charge: f64,
    /// Limit speed c: every moving sample travels at exactly this speed.
    pub c: f64,
}

impl Default for SimUnits {
    fn default() -> Self {
        Self { hbar: 1.0, mass: 1.0, charge: 1.0, c: 1.0 }
    }
}

impl SimUnits {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("hbar", self.hbar), ("mass", self.mass), ("charge", self.charge), ("c", self.c)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Boundary {
    #[default]
    Periodic,
    Reflecting,
}

/// Cubic lattice of `cells^dim` cells of side `dx`, starting at `lower` on every axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellGrid {
    pub dim: usize,
    pub cells: usize,
    pub dx: f64,
    pub dt: f64,
    pub boundary: Boundary,
    pub lower: f64,
}

impl CellGrid {
    pub fn new(dim: usize, cells: usize, dx: f64, dt: f64, boundary: Boundary) -> Self {
        Self { dim, cells, dx, dt, boundary, lower: 0.0 }
    }

    /// Grid symmetric about the origin.
    pub fn centered(dim: usize, cells: usize, dx: f64, dt: f64, boundary: Boundary) -> Self {
        Self { lower: -0.5 * cells as f64 * dx, ..Self::new(dim, cells, dx, dt, boundary) }
    }

    pub fn validate_shape(&self) -> Result<()> {
        if !(1..=MAX_DIM).contains(&self.dim) {
            return Err(Error::Config(format!("dimension must be 1..=3, got {}", self.dim)));
        }
        if self.cells < 4 {
            return Err(Error::Config(format!("need at least 4 cells per axis, got {}", self.cells)));
        }
        if !(self.dx > 0.0 && self.dx.is_finite()) || !(self.dt >= 0.0 && self.dt.is_finite()) {
            return Err(Error::Config("dx must be positive and dt non-negative".into()));
        }
        Ok(())
    }

    /// Shape checks plus the scale separation dx ≥ 10·c·dt.
    pub fn validate(&self, units: &SimUnits) -> Result<()> {
        self.validate_shape()?;
        units.validate()?;
        if self.dx < 10.0 * units.c * self.dt {
            return Err(Error::Config(format!(
                "scale separation violated: dx = {} < 10·c·dt = {}",
                self.dx,
                10.0 * units.c * self.dt
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.cells.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn volume(&self) -> f64 {
        self.dx.powi(self.dim as i32)
    }

    pub fn extent(&self) -> f64 {
        self.cells as f64 * self.dx
    }

    pub fn upper(&self) -> f64 {
        self.lower + self.extent()
    }

    pub fn coords(&self, idx: usize) -> [usize; 3] {
        let n = self.cells;
        let mut c = [0; 3];
        let mut r = idx;
        for slot in c.iter_mut().take(self.dim) {
            *slot = r % n;
            r /= n;
        }
        c
    }

    pub fn index(&self, c: [usize; 3]) -> usize {
        let mut idx = 0;
        for a in (0..self.dim).rev() {
            idx = idx * self.cells + c[a];
        }
        idx
    }

    pub fn axis_cell(&self, x: f64) -> usize {
        let k = ((x - self.lower) / self.dx).floor();
        if k <= 0.0 {
            0
        } else {
            (k as usize).min(self.cells - 1)
        }
    }

    pub fn cell_of(&self, pos: &[f64; 3]) -> usize {
        let mut c = [0; 3];
        for a in 0..self.dim {
            c[a] = self.axis_cell(pos[a]);
        }
        self.index(c)
    }

    pub fn center(&self, idx: usize) -> [f64; 3] {
        let c = self.coords(idx);
        let mut p = [0.0; 3];
        for a in 0..self.dim {
            p[a] = self.lower + (c[a] as f64 + 0.5) * self.dx;
        }
        p
    }

    /// Face neighbour along `axis`; `None` across a reflecting wall.
    pub fn neighbor(&self, idx: usize, axis: usize, step: isize) -> Option<usize> {
        let mut c = self.coords(idx);
        let k = c[axis] as isize + step;
        let n = self.cells as isize;
        c[axis] = match self.boundary {
            Boundary::Periodic => k.rem_euclid(n) as usize,
            Boundary::Reflecting if (0..n).contains(&k) => k as usize,
            Boundary::Reflecting => return None,
        };
        Some(self.index(c))
    }

    /// Central-difference gradient of a per-cell field (one-sided at walls).
    pub fn gradient(&self, values: &[f64], idx: usize) -> [f64; 3] {
        let mut g = [0.0; 3];
        for (a, ga) in g.iter_mut().enumerate().take(self.dim) {
            let up = self.neighbor(idx, a, 1);
            let down = self.neighbor(idx, a, -1);
            *ga = match (up, down) {
                (Some(u), Some(d)) => (values[u] - values[d]) / (2.0 * self.dx),
                (Some(u), None) => (values[u] - values[idx]) / self.dx,
                (None, Some(d)) => (values[idx] - values[d]) / self.dx,
                (None, None) => 0.0,
            };
        }
        g
    }

    /// Apply the boundary to a position; reflecting walls flip the normal speed.
    pub fn confine(&self, pos: &mut [f64; 3], speed: &mut Speed) {
        let (lo, hi, len) = (self.lower, self.upper(), self.extent());
        for (a, x) in pos.iter_mut().enumerate().take(self.dim) {
            match self.boundary {
                Boundary::Periodic => {
                    if *x < lo || *x >= hi {
                        *x = lo + (*x - lo).rem_euclid(len);
                        if *x >= hi {
                            *x = lo;
                        }
                    }
                }
                Boundary::Reflecting => {
                    let mut flipped = false;
                    while *x < lo || *x >= hi {
                        *x = if *x < lo { 2.0 * lo - *x } else { 2.0 * hi - *x };
                        flipped = !flipped;
                        if *x == hi {
                            *x = hi.next_down();
                        }
                    }
                    if flipped {
                        if let Speed::Move { axis, positive } = *speed {
                            if axis as usize == a {
                                *speed = Speed::Move { axis, positive: !positive };
                            }
                        }
                    }
                }
            }
        }
    }

    /// b − a, using the minimum image on periodic grids.
    pub fn displacement(&self, a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
        let mut d = [0.0; 3];
        let len = self.extent();
        for k in 0..self.dim {
            d[k] = b[k] - a[k];
            if self.boundary == Boundary::Periodic {
                d[k] -= len * (d[k] / len).round();
            }
        }
        d
    }

    /// Max-norm distance: two points of one cell are always within dx.
    pub fn distance(&self, a: &[f64; 3], b: &[f64; 3]) -> f64 {
        self.displacement(a, b).iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum Speed {
    #[default]
    Rest,
    Move { axis: u8, positive: bool },
}

impl Speed {
    pub fn is_rest(self) -> bool {
        self == Speed::Rest
    }

    pub fn opposite(self) -> Speed {
        match self {
            Speed::Rest => Speed::Rest,
            Speed::Move { axis, positive } => Speed::Move { axis, positive: !positive },
        }
    }

    /// Unit direction counts: +1/−1 on the moving axis.
    pub fn counts(self) -> [i64; 3] {
        let mut v = [0; 3];
        if let Speed::Move { axis, positive } = self {
            v[axis as usize] = if positive { 1 } else { -1 };
        }
        v
    }

    pub fn velocity(self, c: f64) -> [f64; 3] {
        let k = self.counts();
        [k[0] as f64 * c, k[1] as f64 * c, k[2] as f64 * c]
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sample {
    pub id: u64,
    pub pos: [f64; 3],
    pub speed: Speed,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Swarm {
    pub samples: Vec<Sample>,
    pub grid: CellGrid,
    pub units: SimUnits,
    next_id: u64,
}

impl Swarm {
    pub fn new(grid: CellGrid, units: SimUnits) -> Self {
        Self { samples: Vec::new(), grid, units, next_id: 0 }
    }

    pub fn push(&mut self, pos: [f64; 3], speed: Speed) -> u64 {
        let id = self.next_id;
        self.next_id += 1;
        self.samples.push(Sample { id, pos, speed });
        id
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    /// m = M/n
    pub fn sample_mass(&self) -> f64 {
        self.units.mass / self.n() as f64
    }

    /// q = Q/n
    pub fn sample_charge(&self) -> f64 {
        self.units.charge / self.n() as f64
    }

    /// The momentum quantum m·c.
    pub fn momentum_quantum(&self) -> f64 {
        self.sample_mass() * self.units.c
    }

    /// Net direction counts over the whole swarm (exact).
    pub fn net_counts(&self) -> [i64; 3] {
        self.samples
            .par_iter()
            .fold(|| [0i64; 3], |mut acc, s| {
                let k = s.speed.counts();
                for a in 0..3 {
                    acc[a] += k[a];
                }
                acc
            })
            .reduce(|| [0; 3], |a, b| [a[0] + b[0], a[1] + b[1], a[2] + b[2]])
    }

    pub fn total_momentum(&self) -> [f64; 3] {
        let q = self.momentum_quantum();
        self.net_counts().map(|k| k as f64 * q)
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = (self.grid.lower, self.grid.upper());
        for s in &self.samples {
            if s.pos.iter().take(self.grid.dim).any(|&x| !(lo..hi).contains(&x)) {
                return Err(Error::Config(format!("sample {} outside the domain", s.id)));
            }
            if let Speed::Move { axis, .. } = s.speed {
                if axis as usize >= self.grid.dim {
                    return Err(Error::Config(format!("sample {} moves along a missing axis", s.id)));
                }
            }
        }
        Ok(())
    }

    /// Stable counting sort of samples by cell; returns cell offsets (len + 1 entries).
    pub fn sort_by_cell(&mut self) -> Vec<usize> {
        let grid = &self.grid;
        let keys: Vec<usize> = self.samples.par_iter().map(|s| grid.cell_of(&s.pos)).collect();
        let mut offsets = vec![0usize; grid.len() + 1];
        for &k in &keys {
            offsets[k + 1] += 1;
        }
        for i in 0..grid.len() {
            offsets[i + 1] += offsets[i];
        }
        let mut cursor = offsets.clone();
        let mut sorted = self.samples.clone();
        for (s, &k) in self.samples.iter().zip(&keys) {
            sorted[cursor[k]] = *s;
            cursor[k] += 1;
        }
        self.samples = sorted;
        offsets
    }

    pub fn tallies(&self) -> Vec<CellTally> {
        let grid = &self.grid;
        self.samples
            .par_chunks(1 << 15)
            .map(|chunk| {
                let mut t = vec![CellTally::default(); grid.len()];
                for s in chunk {
                    t[grid.cell_of(&s.pos)].add(s.speed);
                }
                t
            })
            .reduce(
                || vec![CellTally::default(); grid.len()],
                |mut a, b| {
                    for (x, y) in a.iter_mut().zip(&b) {
                        x.merge(y);
                    }
                    a
                },
            )
    }
}

/// Per-cell speed census: REST count and movers per axis and sign.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CellTally {
    pub rest: u64,
    pub plus: [u64; 3],
    pub minus: [u64; 3],
}

impl CellTally {
    pub fn add(&mut self, s: Speed) {
        match s {
            Speed::Rest => self.rest += 1,
            Speed::Move { axis, positive: true } => self.plus[axis as usize] += 1,
            Speed::Move { axis, positive: false } => self.minus[axis as usize] += 1,
        }
    }

    pub fn merge(&mut self, o: &CellTally) {
        self.rest += o.rest;
        for a in 0..3 {
            self.plus[a] += o.plus[a];
            self.minus[a] += o.minus[a];
        }
    }

    pub fn total(&self) -> u64 {
        self.rest + self.plus.iter().sum::<u64>() + self.minus.iter().sum::<u64>()
    }

    /// Size s of a maximal zero-sum subset of movers: opposite pairs per axis.
    pub fn paired(&self) -> u64 {
        (0..3).map(|a| 2 * self.plus[a].min(self.minus[a])).sum()
    }

    pub fn net(&self) -> [i64; 3] {
        [0, 1, 2].map(|a| self.plus[a] as i64 - self.minus[a] as i64)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DensityField {
    pub counts: Vec<u64>,
    pub volume: f64,
    pub n: usize,
}

impl DensityField {
    /// ρ = count/(dx)^dim
    pub fn rho(&self, cell: usize) -> f64 {
        self.counts[cell] as f64 / self.volume
    }

    pub fn values(&self) -> Vec<f64> {
        self.counts.iter().map(|&k| k as f64 / self.volume).collect()
    }

    /// ρ/n, the estimate of |Ψ|².
    pub fn probability_density(&self) -> Vec<f64> {
        let norm = self.volume * self.n as f64;
        self.counts.iter().map(|&k| k as f64 / norm).collect()
    }

    /// Σ ρ·(dx)^dim, which equals n.
    pub fn sum_rule(&self) -> f64 {
        self.counts.iter().map(|&k| k as f64).sum()
    }
}

pub fn density(swarm: &Swarm) -> DensityField {
    let grid = &swarm.grid;
    let counts = swarm
        .samples
        .par_chunks(1 << 15)
        .map(|chunk| {
            let mut h = vec![0u64; grid.len()];
            for s in chunk {
                h[grid.cell_of(&s.pos)] += 1;
            }
            h
        })
        .reduce(
            || vec![0u64; grid.len()],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(&b) {
                    *x += y;
                }
                a
            },
        );
    DensityField { counts, volume: grid.volume(), n: swarm.n() }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MomentumField {
    /// Net direction counts per cell and axis.
    pub net: Vec<[i64; 3]>,
    /// m·c
    pub quantum: f64,
}

impl MomentumField {
    pub fn value(&self, cell: usize) -> [f64; 3] {
        self.net[cell].map(|k| k as f64 * self.quantum)
    }
}

pub fn momentum_field(swarm: &Swarm) -> MomentumField {
    let net = swarm.tallies().iter().map(|t| t.net()).collect();
    MomentumField { net, quantum: swarm.momentum_quantum() }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExchangeKind {
    Annihilation,
    Creation { axis: u8 },
}

/// The exchange reaction between two samples within dx of each other.
///
/// Opposite movers come to rest; two resting samples leave in opposite
/// directions along a uniformly chosen axis. Pair momentum is unchanged.
pub fn exchange<R: Rng + ?Sized>(grid: &CellGrid, a: &mut Sample, b: &mut Sample, rng: &mut R) -> Result<ExchangeKind> {
    if a.id == b.id {
        return Err(Error::InvalidExchange("a sample cannot exchange with itself".into()));
    }
    let dist = grid.distance(&a.pos, &b.pos);
    if dist > grid.dx {
        return Err(Error::InvalidExchange(format!("samples {} and {} are {dist} apart", a.id, b.id)));
    }
    match (a.speed, b.speed) {
        (Speed::Rest, Speed::Rest) => {
            let axis = rng.random_range(0..grid.dim) as u8;
            let positive = rng.random::<bool>();
            a.speed = Speed::Move { axis, positive };
            b.speed = Speed::Move { axis, positive: !positive };
            Ok(ExchangeKind::Creation { axis })
        }
        (sa, sb) if !sa.is_rest() && sb == sa.opposite() => {
            a.speed = Speed::Rest;
            b.speed = Speed::Rest;
            Ok(ExchangeKind::Annihilation)
        }
        (sa, sb) => Err(Error::InvalidExchange(format!("speeds {sa:?} and {sb:?} are not opposite"))),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Stationary {
    /// Size of a maximal zero-sum subset of movers.
    pub s: u64,
    /// Number of resting samples.
    pub n_s: u64,
    pub n: u64,
}

impl Stationary {
    pub fn ratio(&self) -> f64 {
        self.n_s as f64 / self.n as f64
    }
}

pub fn stationary_fraction(swarm: &Swarm, cell: usize) -> Result<Stationary> {
    let mut t = CellTally::default();
    for s in swarm.samples.iter().filter(|s| swarm.grid.cell_of(&s.pos) == cell) {
        t.add(s.speed);
    }
    if t.total() == 0 {
        return Err(Error::EmptyCell(cell));
    }
    Ok(Stationary { s: t.paired(), n_s: t.rest, n: t.total() })
}

/// Scalar field proportional to the external potential energy, sampled at cell centres.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialField {
    pub values: Vec<f64>,
    pub grid: CellGrid,
}

impl PotentialField {
    pub fn from_fn(grid: &CellGrid, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.center(i)[..grid.dim])).collect();
        Self { values, grid: grid.clone() }
    }

    pub fn constant(grid: &CellGrid, v: f64) -> Self {
        Self { values: vec![v; grid.len()], grid: grid.clone() }
    }

    pub fn gradient(&self, cell: usize) -> [f64; 3] {
        self.grid.gradient(&self.values, cell)
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self { values: self.values.iter().map(|v| v * factor).collect(), grid: self.grid.clone() }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn grid3() -> CellGrid {
        CellGrid::new(3, 10, 1.0, 0.01, Boundary::Periodic)
    }

    #[test]
    fn index_roundtrip() {
        let g = grid3();
        for i in [0, 7, 123, 999] {
            assert_eq!(g.index(g.coords(i)), i);
            assert_eq!(g.cell_of(&g.center(i)), i);
        }
    }

    #[test]
    fn eight_samples_in_one_cell() {
        let mut s = Swarm::new(grid3(), SimUnits::default());
        for _ in 0..8 {
            s.push([0.5, 0.5, 0.5], Speed::Rest);
        }
        let d = density(&s);
        assert_eq!(d.rho(0), 8.0);
        assert_eq!(d.rho(1), 0.0);
        assert_eq!(d.sum_rule(), 8.0);
    }

    #[test]
    fn momentum_counts() {
        let mut s = Swarm::new(CellGrid::new(1, 4, 1.0, 0.01, Boundary::Periodic), SimUnits::default());
        for _ in 0..3 {
            s.push([0.5, 0.0, 0.0], Speed::Move { axis: 0, positive: true });
        }
        s.push([0.5, 0.0, 0.0], Speed::Move { axis: 0, positive: false });
        // n = 4, M = 4 → m·c = 1
        s.units.mass = 4.0;
        let p = momentum_field(&s);
        assert_eq!(p.value(0), [2.0, 0.0, 0.0]);
        assert_eq!(p.value(1), [0.0; 3]);
    }

    #[test]
    fn exchange_rules() {
        let g = CellGrid::new(2, 4, 1.0, 0.01, Boundary::Periodic);
        let mut rng = substream(1, 0, 0);
        let mut a = Sample { id: 0, pos: [0.1, 0.1, 0.0], speed: Speed::Move { axis: 0, positive: true } };
        let mut b = Sample { id: 1, pos: [0.9, 0.9, 0.0], speed: Speed::Move { axis: 0, positive: false } };
        assert_eq!(exchange(&g, &mut a, &mut b, &mut rng), Ok(ExchangeKind::Annihilation));
        assert!(a.speed.is_rest() && b.speed.is_rest());
        let k = exchange(&g, &mut a, &mut b, &mut rng).unwrap();
        assert!(matches!(k, ExchangeKind::Creation { .. }));
        assert_eq!(a.speed, b.speed.opposite());
        assert!(!a.speed.is_rest());
        // same direction: invalid
        b.speed = a.speed;
        assert!(exchange(&g, &mut a, &mut b, &mut rng).is_err());
        // too far apart
        let mut c = Sample { id: 2, pos: [2.5, 0.1, 0.0], speed: Speed::Rest };
        a.speed = Speed::Rest;
        assert!(exchange(&g, &mut a, &mut c, &mut rng).is_err());
    }

    #[test]
    fn stationary_example() {
        let mut s = Swarm::new(CellGrid::new(1, 4, 1.0, 0.01, Boundary::Periodic), SimUnits::default());
        for positive in [true, true, false, false] {
            s.push([0.5, 0.0, 0.0], Speed::Move { axis: 0, positive });
        }
        s.push([0.5, 0.0, 0.0], Speed::Rest);
        assert_eq!(stationary_fraction(&s, 0), Ok(Stationary { s: 4, n_s: 1, n: 5 }));
        assert_eq!(stationary_fraction(&s, 1), Err(Error::EmptyCell(1)));
    }

    #[test]
    fn confine_modes() {
        let mut g = CellGrid::new(1, 4, 1.0, 0.01, Boundary::Periodic);
        let mut p = [4.25, 0.0, 0.0];
        let mut v = Speed::Move { axis: 0, positive: true };
        g.confine(&mut p, &mut v);
        assert!((p[0] - 0.25).abs() < 1e-12);
        assert_eq!(v, Speed::Move { axis: 0, positive: true });
        g.boundary = Boundary::Reflecting;
        let mut p = [4.25, 0.0, 0.0];
        g.confine(&mut p, &mut v);
        assert!((p[0] - 3.75).abs() < 1e-12);
        assert_eq!(v, Speed::Move { axis: 0, positive: false });
        let mut p = [-0.5, 0.0, 0.0];
        g.confine(&mut p, &mut v);
        assert!((p[0] - 0.5).abs() < 1e-12);
        assert_eq!(v, Speed::Move { axis: 0, positive: true });
    }

    #[test]
    fn gradient_of_constant_is_zero() {
        let g = CellGrid::new(2, 6, 0.5, 0.01, Boundary::Reflecting);
        let v = PotentialField::constant(&g, 3.0);
        for i in 0..g.len() {
            assert_eq!(v.gradient(i), [0.0; 3]);
        }
    }

    #[test]
    fn scale_separation_enforced() {
        let units = SimUnits { c: 10.0, ..Default::default() };
        assert!(CellGrid::new(1, 8, 1.0, 0.01, Boundary::Periodic).validate(&units).is_ok());
        assert!(CellGrid::new(1, 8, 1.0, 0.02, Boundary::Periodic).validate(&units).is_err());
        assert!(CellGrid::new(1, 3, 1.0, 0.001, Boundary::Periodic).validate(&units).is_err());
    }
}
