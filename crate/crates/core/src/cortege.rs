//! Many-particle swarms: corteges bind one sample from each particle's swarm
//! into a point of configuration space. Joint statistics of corteges give the
//! Born rule; exchanges and grants happen inside the joint lattice.

use crate::bridge::sample_swarm;
use crate::dds::{calibrated_speed, coefficients, oscillator_potential_scale, DdsConfig, ErrorPoint};
use crate::error::{Error, Result};
use crate::lattice::{Boundary, CellGrid, PotentialField, SimUnits, Speed, Swarm};
use crate::oracle::{evolve, WaveField};
use crate::rng::{substream, tags};
use crate::stats::{l1_normalized, round_even};
use num_complex::Complex64 as C64;
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// One sample id per particle swarm.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct Cortege {
    pub id: u64,
    pub members: Vec<u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CortegeNet {
    /// Samples are kept in id order, so a member id is also its index.
    pub swarms: Vec<Swarm>,
    pub corteges: Vec<Cortege>,
    pub l_max: f64,
    pub theta: f64,
}

impl CortegeNet {
    pub fn new(swarms: Vec<Swarm>, corteges: Vec<Cortege>) -> Result<Self> {
        let net = Self { swarms, corteges, l_max: f64::INFINITY, theta: 0.01 };
        net.validate()?;
        Ok(net)
    }

    pub fn n(&self) -> usize {
        self.corteges.len()
    }

    pub fn particles(&self) -> usize {
        self.swarms.len()
    }

    /// Perfect matching: every sample of every swarm sits in exactly one cortege.
    pub fn validate(&self) -> Result<()> {
        let n = check_swarms(&self.swarms)?;
        if self.corteges.len() != n {
            return Err(Error::SizeMismatch(self.corteges.len(), n));
        }
        for k in 0..self.particles() {
            let mut seen = vec![false; n];
            for c in &self.corteges {
                let id = *c.members.get(k).ok_or(Error::SizeMismatch(c.members.len(), self.particles()))? as usize;
                if id >= n || seen[id] {
                    return Err(Error::Config(format!("sample {id} of swarm {k} is not matched exactly once")));
                }
                seen[id] = true;
            }
        }
        Ok(())
    }

    /// Configuration-space lattice: the per-particle grid repeated once per particle.
    pub fn joint_grid(&self) -> Result<CellGrid> {
        joint_grid(&self.swarms[0].grid, self.particles())
    }

    pub fn joint_cell(&self, c: &Cortege) -> usize {
        let g = &self.swarms[0].grid;
        let len = g.len();
        let mut idx = 0;
        for k in (0..self.particles()).rev() {
            idx = idx * len + g.cell_of(&self.swarms[k].samples[c.members[k] as usize].pos);
        }
        idx
    }

    pub fn joint_density(&self) -> Result<JointDensity> {
        let grid = self.joint_grid()?;
        let mut counts = vec![0u64; grid.len()];
        for c in &self.corteges {
            counts[self.joint_cell(c)] += 1;
        }
        Ok(JointDensity { counts, grid })
    }

    /// Largest distance between two members of the cortege.
    pub fn spread(&self, c: &Cortege) -> f64 {
        let g = &self.swarms[0].grid;
        let mut s: f64 = 0.0;
        for a in 0..c.members.len() {
            for b in a + 1..c.members.len() {
                let pa = &self.swarms[a].samples[c.members[a] as usize].pos;
                let pb = &self.swarms[b].samples[c.members[b] as usize].pos;
                s = s.max(g.distance(pa, pb));
            }
        }
        s
    }
}

fn check_swarms(swarms: &[Swarm]) -> Result<usize> {
    let first = swarms.first().ok_or_else(|| Error::Config("a cortege net needs at least one swarm".into()))?;
    let n = first.n();
    for s in swarms {
        if s.n() != n {
            return Err(Error::SizeMismatch(s.n(), n));
        }
        if s.grid != first.grid {
            return Err(Error::Lattice("all particle swarms must share one grid".into()));
        }
        if s.samples.iter().enumerate().any(|(i, x)| x.id != i as u64) {
            return Err(Error::Config("swarm samples must be stored in id order".into()));
        }
    }
    Ok(n)
}

fn joint_grid(g: &CellGrid, particles: usize) -> Result<CellGrid> {
    let dim = g.dim * particles;
    if dim > 3 {
        return Err(Error::Lattice(format!("joint lattice of dimension {dim} is not supported")));
    }
    Ok(CellGrid { dim, ..g.clone() })
}

/// Cortege counts on the joint lattice.
#[derive(Clone, Debug, PartialEq)]
pub struct JointDensity {
    pub counts: Vec<u64>,
    pub grid: CellGrid,
}

impl JointDensity {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn fractions(&self) -> Vec<f64> {
        let n = self.total() as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }

    /// count/(n·dx^{joint dim})
    pub fn density(&self) -> Vec<f64> {
        let s = 1.0 / (self.total() as f64 * self.grid.volume());
        self.counts.iter().map(|&c| c as f64 * s).collect()
    }
}

/// Uniform random perfect matching: swarm 0 in id order against random
/// permutations of the others.
pub fn pair_product_state<R: Rng>(swarms: &[Swarm], rng: &mut R) -> Result<Vec<Cortege>> {
    let n = check_swarms(swarms)?;
    let mut perms: Vec<Vec<u64>> = Vec::with_capacity(swarms.len());
    for k in 0..swarms.len() {
        let mut p: Vec<u64> = (0..n as u64).collect();
        if k > 0 {
            p.shuffle(rng);
        }
        perms.push(p);
    }
    Ok((0..n).map(|i| Cortege { id: i as u64, members: perms.iter().map(|p| p[i]).collect() }).collect())
}

/// Born-rule pairing: corteges are placed so that their joint-cell fractions
/// follow |λ|². Joint cell index = Σ_k cell_k·len^k (particle 0 fastest).
///
/// Swarm marginals must already agree with those of λ to sampling accuracy;
/// the few samples needed to hit the drawn marginal counts exactly are moved
/// to uniform positions in the deficit cells.
pub fn pair_entangled_state<R: Rng>(lambda: &[C64], swarms: &mut [Swarm], rng: &mut R) -> Result<Vec<Cortege>> {
    let n = check_swarms(swarms)?;
    let g = swarms[0].grid.clone();
    let (len, parts) = (g.len(), swarms.len());
    if lambda.len() != len.pow(parts as u32) {
        return Err(Error::Config(format!("λ has {} entries, joint lattice {}", lambda.len(), len.pow(parts as u32))));
    }
    let probs: Vec<f64> = lambda.iter().map(|z| z.norm_sqr()).collect();
    let norm: f64 = probs.iter().sum();
    if (norm - 1.0).abs() > 1e-9 {
        return Err(Error::NotNormalized(norm));
    }
    let digit = |j: usize, k: usize| (j / len.pow(k as u32)) % len;
    for (k, swarm) in swarms.iter().enumerate() {
        let mut want = vec![0.0; len];
        for (j, p) in probs.iter().enumerate() {
            want[digit(j, k)] += p;
        }
        let mut have = vec![0usize; len];
        for s in &swarm.samples {
            have[g.cell_of(&s.pos)] += 1;
        }
        for c in 0..len {
            let tol = 5.0 * (want[c] * (1.0 - want[c]) / n as f64).sqrt() + 2.0 / n as f64;
            if (have[c] as f64 / n as f64 - want[c]).abs() > tol {
                return Err(Error::Marginals(format!(
                    "swarm {k} cell {c}: fraction {:.4}, λ gives {:.4}",
                    have[c] as f64 / n as f64,
                    want[c]
                )));
            }
        }
    }
    let mut cdf = probs.clone();
    for j in 1..cdf.len() {
        cdf[j] += cdf[j - 1];
    }
    let mut joint = vec![0usize; probs.len()];
    for _ in 0..n {
        let u = rng.random::<f64>() * norm;
        joint[cdf.partition_point(|&x| x <= u).min(probs.len() - 1)] += 1;
    }
    let mut pools: Vec<Vec<Vec<u64>>> = Vec::with_capacity(parts);
    for (k, swarm) in swarms.iter_mut().enumerate() {
        let mut need = vec![0usize; len];
        for (j, &count) in joint.iter().enumerate() {
            need[digit(j, k)] += count;
        }
        let mut pool: Vec<Vec<u64>> = vec![Vec::new(); len];
        for s in &swarm.samples {
            pool[g.cell_of(&s.pos)].push(s.id);
        }
        pool.iter_mut().for_each(|p| p.shuffle(rng));
        let mut spare = Vec::new();
        for c in 0..len {
            while pool[c].len() > need[c] {
                spare.push(pool[c].pop().unwrap());
            }
        }
        for c in 0..len {
            while pool[c].len() < need[c] {
                let id = spare.pop().expect("surplus matches deficit");
                swarm.samples[id as usize].pos = uniform_in_cell(&g, c, rng);
                pool[c].push(id);
            }
        }
        pools.push(pool);
    }
    let mut corteges = Vec::with_capacity(n);
    for (j, &count) in joint.iter().enumerate() {
        for _ in 0..count {
            let members = (0..parts).map(|k| pools[k][digit(j, k)].pop().unwrap()).collect();
            corteges.push(Cortege { id: corteges.len() as u64, members });
        }
    }
    Ok(corteges)
}

fn uniform_in_cell<R: Rng>(g: &CellGrid, cell: usize, rng: &mut R) -> [f64; 3] {
    let c = g.center(cell);
    let mut p = [0.0; 3];
    for a in 0..g.dim {
        p[a] = c[a] + (rng.random::<f64>() - 0.5) * g.dx;
    }
    p
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct CortegeStepReport {
    pub step: u64,
    pub exchanges: u64,
    /// Net quanta granted per joint axis (particle k, axis a) → k·dim + a.
    pub granted: [i64; 3],
    pub saturation: u64,
    /// Grants that changed a sample outside the cortege they were issued to.
    pub cross_cortege_grants: u64,
}

/// Speed change requested for sample `id` of swarm `particle` on behalf of `cortege`.
struct Update {
    particle: usize,
    id: u64,
    cortege: usize,
    speed: Speed,
}

/// Stepper for a cortege net: the exchange/grant rules of the one-particle
/// mechanism applied in joint cells, then ballistic flight of every sample.
#[derive(Clone, Debug)]
pub struct CortegeEngine {
    pub config: DdsConfig,
    pub step: u64,
    carry: Vec<[f64; 3]>,
}

impl CortegeEngine {
    pub fn new(config: DdsConfig, net: &CortegeNet) -> Result<Self> {
        config.validate()?;
        Ok(Self { config, step: 0, carry: vec![[0.0; 3]; net.joint_grid()?.len()] })
    }

    pub fn step(&mut self, net: &mut CortegeNet, joint_potential: &PotentialField) -> Result<CortegeStepReport> {
        let r = cortege_exchange_step(net, joint_potential, &self.config, self.step, &mut self.carry)?;
        self.step += 1;
        Ok(r)
    }
}

/// One step of the joint mechanism. Exchanges pair corteges that share a
/// joint cell and act on one uniformly chosen component; grants act on a
/// single member of a single cortege. Joint cells run in parallel, each on its
/// own stream; updates are applied afterwards in cell order.
pub fn cortege_exchange_step(
    net: &mut CortegeNet,
    joint_potential: &PotentialField,
    config: &DdsConfig,
    step: u64,
    carry: &mut [[f64; 3]],
) -> Result<CortegeStepReport> {
    let jg = net.joint_grid()?;
    if joint_potential.grid.len() != jg.len() || carry.len() != jg.len() {
        return Err(Error::Lattice(format!("joint potential has {} cells, lattice {}", joint_potential.grid.len(), jg.len())));
    }
    let g = net.swarms[0].grid.clone();
    let units = net.swarms[0].units;
    let (_, kappa) = coefficients(&units, &g);
    let quanta = kappa * g.dt / (units.mass * units.c);
    let ramp = config.ramp(step);
    let d = config.stationary_ratio;
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); jg.len()];
    for (i, c) in net.corteges.iter().enumerate() {
        buckets[net.joint_cell(c)].push(i);
    }
    let net_ref = &*net;
    let results: Vec<(Vec<Update>, u64, [i64; 3], u64)> = buckets
        .par_iter()
        .zip(carry.par_iter_mut())
        .enumerate()
        .map(|(cell, (members, carry))| {
            let mut rng = substream(config.seed, cell as u64, step);
            let grad = joint_potential.gradient(cell).map(|x| x * ramp);
            joint_cell_update(net_ref, members, grad, quanta, d, carry, &mut rng)
        })
        .collect();
    let mut report = CortegeStepReport { step: step + 1, ..Default::default() };
    let owner = owners(net);
    for (updates, exchanges, granted, saturation) in results {
        report.exchanges += exchanges;
        report.saturation += saturation;
        for a in 0..3 {
            report.granted[a] += granted[a];
        }
        for u in updates {
            if u.cortege != usize::MAX && owner[u.particle][u.id as usize] != u.cortege {
                report.cross_cortege_grants += 1;
            }
            net.swarms[u.particle].samples[u.id as usize].speed = u.speed;
        }
    }
    let (c, dt) = (units.c, g.dt);
    for swarm in &mut net.swarms {
        swarm.samples.par_iter_mut().for_each(|s| {
            if let Speed::Move { axis, positive } = s.speed {
                s.pos[axis as usize] += if positive { c * dt } else { -c * dt };
                g.confine(&mut s.pos, &mut s.speed);
            }
        });
    }
    Ok(report)
}

fn owners(net: &CortegeNet) -> Vec<Vec<usize>> {
    let mut o = vec![vec![usize::MAX; net.n()]; net.particles()];
    for (i, c) in net.corteges.iter().enumerate() {
        for (k, &id) in c.members.iter().enumerate() {
            o[k][id as usize] = i;
        }
    }
    o
}

fn joint_cell_update<R: Rng>(
    net: &CortegeNet,
    members: &[usize],
    grad: [f64; 3],
    quanta: f64,
    d: f64,
    carry: &mut [f64; 3],
    rng: &mut R,
) -> (Vec<Update>, u64, [i64; 3], u64) {
    let mut updates = Vec::new();
    let (mut exchanges, mut granted, mut saturation) = (0u64, [0i64; 3], 0u64);
    if members.is_empty() {
        return (updates, exchanges, granted, saturation);
    }
    let parts = net.particles();
    let dim = net.swarms[0].grid.dim;
    // Working copy of the member speeds: speeds[i][k] for cortege members[i].
    let mut speeds: Vec<Vec<Speed>> = members
        .iter()
        .map(|&ci| (0..parts).map(|k| net.swarms[k].samples[net.corteges[ci].members[k] as usize].speed).collect())
        .collect();
    let mut rest: Vec<Vec<usize>> = vec![Vec::new(); parts];
    // movers[k·dim + a][0 = positive, 1 = negative]
    let mut movers: Vec<[Vec<usize>; 2]> = vec![[Vec::new(), Vec::new()]; parts * dim];
    for (i, sp) in speeds.iter().enumerate() {
        for (k, s) in sp.iter().enumerate() {
            match *s {
                Speed::Rest => rest[k].push(i),
                Speed::Move { axis, positive } => movers[k * dim + axis as usize][usize::from(!positive)].push(i),
            }
        }
    }
    let n_s: usize = rest.iter().map(Vec::len).sum();
    let paired: usize = movers.iter().map(|m| 2 * m[0].len().min(m[1].len())).sum();
    let delta = round_even((d * n_s as f64 - paired as f64) / (2.0 * (1.0 + d)));
    let pick = |pool: &mut Vec<usize>, rng: &mut R| pool.swap_remove(rng.random_range(0..pool.len()));
    if delta > 0 {
        for _ in 0..delta {
            let open: Vec<usize> = (0..parts).filter(|&k| rest[k].len() >= 2).collect();
            if open.is_empty() {
                break;
            }
            let k = open[rng.random_range(0..open.len())];
            let a = rng.random_range(0..dim);
            let (i, j) = (pick(&mut rest[k], rng), pick(&mut rest[k], rng));
            let positive = rng.random::<bool>();
            speeds[i][k] = Speed::Move { axis: a as u8, positive };
            speeds[j][k] = Speed::Move { axis: a as u8, positive: !positive };
            exchanges += 1;
        }
    } else {
        for _ in 0..-delta {
            let weights: Vec<usize> = movers.iter().map(|m| m[0].len().min(m[1].len())).collect();
            let total: usize = weights.iter().sum();
            if total == 0 {
                break;
            }
            let mut u = rng.random_range(0..total);
            let comp = weights.iter().position(|&w| if u < w { true } else { u -= w; false }).unwrap();
            let k = comp / dim;
            let i = pick(&mut movers[comp][0], rng);
            let j = pick(&mut movers[comp][1], rng);
            speeds[i][k] = Speed::Rest;
            speeds[j][k] = Speed::Rest;
            rest[k].push(i);
            rest[k].push(j);
            exchanges += 1;
        }
    }
    for i in 0..members.len() {
        for k in 0..parts {
            let id = net.corteges[members[i]].members[k];
            if speeds[i][k] != net.swarms[k].samples[id as usize].speed {
                updates.push(Update { particle: k, id, cortege: usize::MAX, speed: speeds[i][k] });
            }
        }
    }
    for comp in 0..parts * dim {
        let (k, a) = (comp / dim, comp % dim);
        let demand = -quanta * members.len() as f64 * grad[comp] + carry[comp];
        let q = round_even(demand);
        carry[comp] = demand - q as f64;
        let positive = q > 0;
        for _ in 0..q.unsigned_abs() {
            if rest[k].is_empty() {
                saturation += 1;
                continue;
            }
            let i = pick(&mut rest[k], rng);
            let id = net.corteges[members[i]].members[k];
            updates.push(Update { particle: k, id, cortege: members[i], speed: Speed::Move { axis: a as u8, positive } });
            granted[comp] += if positive { 1 } else { -1 };
        }
    }
    (updates, exchanges, granted, saturation)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct RebindReport {
    pub dissolved_groups: usize,
    pub moved_corteges: usize,
    /// Every group fell below θ; nothing was changed.
    pub all_below_threshold: bool,
}

/// Group selection: corteges are bucketed by joint cell, buckets holding less
/// than a fraction θ are dissolved, and their corteges move (members placed
/// uniformly) into the nearest surviving joint cell. Ties go to the lowest cell.
pub fn select_and_rebind<R: Rng>(net: &mut CortegeNet, theta: f64, rng: &mut R) -> Result<RebindReport> {
    let jd = net.joint_density()?;
    let jg = &jd.grid;
    let n = net.n() as f64;
    let survives: Vec<bool> = jd.counts.iter().map(|&c| c > 0 && c as f64 / n >= theta).collect();
    let alive: Vec<usize> = (0..jg.len()).filter(|&j| survives[j]).collect();
    let mut report = RebindReport::default();
    if alive.is_empty() {
        report.all_below_threshold = true;
        return Ok(report);
    }
    let mut target = vec![usize::MAX; jg.len()];
    for j in 0..jg.len() {
        if jd.counts[j] > 0 && !survives[j] {
            report.dissolved_groups += 1;
            let cj = jg.center(j);
            let mut best = (f64::INFINITY, usize::MAX);
            for &s in &alive {
                let dist = jg.distance(&cj, &jg.center(s));
                if dist < best.0 {
                    best = (dist, s);
                }
            }
            target[j] = best.1;
        }
    }
    let g = net.swarms[0].grid.clone();
    let len = g.len();
    for ci in 0..net.corteges.len() {
        let j = net.joint_cell(&net.corteges[ci]);
        if target[j] == usize::MAX {
            continue;
        }
        report.moved_corteges += 1;
        for k in 0..net.particles() {
            let cell = (target[j] / len.pow(k as u32)) % len;
            let id = net.corteges[ci].members[k] as usize;
            net.swarms[k].samples[id].pos = uniform_in_cell(&g, cell, rng);
        }
    }
    Ok(report)
}

/// Corteges whose members lie further apart than `l_max` are dissolved and
/// re-paired uniformly among themselves. Returns the number broken.
pub fn break_long_bonds<R: Rng>(net: &mut CortegeNet, l_max: f64, rng: &mut R) -> usize {
    let broken: Vec<usize> = (0..net.n()).filter(|&i| net.spread(&net.corteges[i]) > l_max).collect();
    for k in 1..net.particles() {
        let mut ids: Vec<u64> = broken.iter().map(|&i| net.corteges[i].members[k]).collect();
        ids.shuffle(rng);
        for (&i, id) in broken.iter().zip(ids) {
            net.corteges[i].members[k] = id;
        }
    }
    broken.len()
}

/// Per-record L1 distance between cortege fractions and the reference |Ψ|² cell probabilities.
pub fn decoherence_divergence(net_run: &[JointDensity], oracle_run: &[Vec<f64>]) -> Result<Vec<f64>> {
    if net_run.len() != oracle_run.len() {
        return Err(Error::History { need: net_run.len(), have: oracle_run.len() });
    }
    net_run
        .iter()
        .zip(oracle_run)
        .map(|(j, o)| {
            if j.counts.len() != o.len() {
                return Err(Error::Lattice(format!("joint lattice {} vs reference {}", j.counts.len(), o.len())));
            }
            let c: Vec<f64> = j.counts.iter().map(|&x| x as f64).collect();
            Ok(l1_normalized(&c, o))
        })
        .collect()
}

/// Two independent particles in one harmonic well each, started in the
/// product ground state with product pairing.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoherenceSetup {
    pub cells: usize,
    pub dx: f64,
    pub omega: f64,
    pub n: usize,
    pub steps: u64,
    pub record_every: u64,
    pub dds: DdsConfig,
    pub units: SimUnits,
}

impl Default for DecoherenceSetup {
    fn default() -> Self {
        Self {
            cells: 32,
            dx: 0.5,
            omega: 1.0,
            n: 100_000,
            steps: 100,
            record_every: 10,
            dds: DdsConfig { ramp_steps: 5, ..DdsConfig::default() },
            units: SimUnits::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecoherenceRun {
    pub errors: Vec<ErrorPoint>,
    pub reports: Vec<CortegeStepReport>,
    pub final_joint: JointDensity,
}

impl DecoherenceRun {
    pub fn final_error(&self) -> f64 {
        self.errors.last().map_or(f64::NAN, |e| e.l1)
    }
}

pub fn run_decoherence(setup: &DecoherenceSetup) -> Result<DecoherenceRun> {
    setup.dds.validate()?;
    let mut units = setup.units;
    let probe = CellGrid::centered(1, setup.cells, setup.dx, 0.0, Boundary::Reflecting);
    units.c = calibrated_speed(&units, &probe, setup.dds.stationary_ratio, 1);
    let dt = setup.dx / (10.0 * units.c);
    let grid = CellGrid { dt, ..probe };
    grid.validate(&units)?;
    let (m, w, h) = (units.mass, setup.omega, units.hbar);
    let ground = |x: f64| (-m * w * x * x / (2.0 * h)).exp();
    let mut one = WaveField::from_fn(&grid, &units, |x| C64::new(ground(x[0]), 0.0));
    one.normalize();
    let swarms = vec![sample_swarm(&one, setup.n, setup.dds.seed)?, sample_swarm(&one, setup.n, setup.dds.seed ^ 0x5eed)?];
    let mut rng = substream(setup.dds.seed, tags::PAIRING, 0);
    let corteges = pair_product_state(&swarms, &mut rng)?;
    let mut net = CortegeNet::new(swarms, corteges)?;
    let jg = net.joint_grid()?;
    let v_phys = PotentialField::from_fn(&jg, |x| 0.5 * m * w * w * (x[0] * x[0] + x[1] * x[1]));
    let v_engine = v_phys.scaled(oscillator_potential_scale(&units, &grid, w));
    let mut wave = WaveField::from_fn(&jg, &units, |x| C64::new(ground(x[0]) * ground(x[1]), 0.0));
    wave.normalize();
    let mut engine = CortegeEngine::new(setup.dds, &net)?;
    let record = |net: &CortegeNet, wave: &WaveField, step: u64| -> Result<ErrorPoint> {
        let jd = net.joint_density()?;
        let l1 = decoherence_divergence(&[jd], &[wave.probabilities()])?[0];
        Ok(ErrorPoint { step, t: step as f64 * dt, l1 })
    };
    let mut errors = vec![record(&net, &wave, 0)?];
    let mut reports = Vec::with_capacity(setup.steps as usize);
    for step in 0..setup.steps {
        let ramp = setup.dds.ramp(step);
        reports.push(engine.step(&mut net, &v_engine)?);
        evolve(&mut wave, &v_phys.scaled(ramp).values, dt, 1)?;
        if (step + 1) % setup.record_every.max(1) == 0 || step + 1 == setup.steps {
            errors.push(record(&net, &wave, step + 1)?);
        }
    }
    Ok(DecoherenceRun { errors, reports, final_joint: net.joint_density()? })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_cell_swarm(n: usize, upper_fraction: f64, seed: u64) -> Swarm {
        let g = CellGrid::new(1, 2, 1.0, 0.01, Boundary::Reflecting);
        let mut s = Swarm::new(g, SimUnits::default());
        let mut rng = substream(seed, tags::SAMPLING, 0);
        for _ in 0..n {
            let x = if rng.random::<f64>() < upper_fraction { 1.0 } else { 0.0 } + rng.random::<f64>();
            s.push([x, 0.0, 0.0], Speed::Rest);
        }
        s
    }

    fn within_4_sigma(fractions: &[f64], probs: &[f64], n: usize) -> bool {
        fractions.iter().zip(probs).all(|(f, p)| (f - p).abs() <= 4.0 * (p * (1.0 - p) / n as f64).sqrt() + 1e-12)
    }

    #[test]
    fn product_pairing_factorizes() {
        let n = 100_000;
        let swarms = vec![two_cell_swarm(n, 0.75, 1), two_cell_swarm(n, 0.5, 2)];
        let marg: Vec<f64> = swarms
            .iter()
            .map(|s| s.samples.iter().filter(|x| x.pos[0] >= 1.0).count() as f64 / n as f64)
            .collect();
        let corteges = pair_product_state(&swarms, &mut substream(3, tags::PAIRING, 0)).unwrap();
        let net = CortegeNet::new(swarms, corteges).unwrap();
        let f = net.joint_density().unwrap().fractions();
        // joint index = c0 + 2·c1
        let p = [(1.0 - marg[0]) * (1.0 - marg[1]), marg[0] * (1.0 - marg[1]), (1.0 - marg[0]) * marg[1], marg[0] * marg[1]];
        assert!(within_4_sigma(&f, &p, n), "{f:?} vs {p:?}");
    }

    #[test]
    fn bell_pairing_follows_born_rule() {
        let n = 100_000;
        let mut swarms = vec![two_cell_swarm(n, 0.5, 1), two_cell_swarm(n, 0.5, 2)];
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let lambda = [C64::new(s, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(s, 0.0)];
        let corteges = pair_entangled_state(&lambda, &mut swarms, &mut substream(4, tags::PAIRING, 0)).unwrap();
        let net = CortegeNet::new(swarms, corteges).unwrap();
        let f = net.joint_density().unwrap().fractions();
        assert_eq!((f[1], f[2]), (0.0, 0.0));
        assert!(within_4_sigma(&f, &[0.5, 0.0, 0.0, 0.5], n), "{f:?}");
    }

    #[test]
    fn ghz_pairing_fills_only_the_diagonal() {
        let n = 20_000;
        let mut swarms: Vec<Swarm> = (0..3).map(|k| two_cell_swarm(n, 0.5, k)).collect();
        let mut lambda = vec![C64::new(0.0, 0.0); 8];
        lambda[0] = C64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
        lambda[7] = lambda[0];
        let corteges = pair_entangled_state(&lambda, &mut swarms, &mut substream(5, tags::PAIRING, 0)).unwrap();
        let net = CortegeNet::new(swarms, corteges).unwrap();
        let f = net.joint_density().unwrap().fractions();
        assert!((1..7).all(|j| f[j] == 0.0));
        assert!((f[0] - 0.5).abs() < 4.0 * (0.25 / n as f64).sqrt());
    }

    #[test]
    fn inconsistent_marginals_are_rejected() {
        let mut swarms = vec![two_cell_swarm(10_000, 0.9, 1), two_cell_swarm(10_000, 0.5, 2)];
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let lambda = [C64::new(s, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(s, 0.0)];
        assert!(matches!(pair_entangled_state(&lambda, &mut swarms, &mut substream(1, 0, 0)), Err(Error::Marginals(_))));
        assert!(pair_product_state(&[two_cell_swarm(3, 0.5, 1), two_cell_swarm(4, 0.5, 1)], &mut substream(1, 0, 0)).is_err());
    }

    #[test]
    fn single_sample_swarms_form_one_cortege() {
        let swarms = vec![two_cell_swarm(1, 0.5, 1), two_cell_swarm(1, 0.5, 2)];
        let c = pair_product_state(&swarms, &mut substream(1, 0, 0)).unwrap();
        assert_eq!(c, vec![Cortege { id: 0, members: vec![0, 0] }]);
    }

    fn line_net(n: usize, seed: u64) -> CortegeNet {
        let g = CellGrid::centered(1, 16, 0.5, 0.01, Boundary::Reflecting);
        let mut rng = substream(seed, tags::SAMPLING, 0);
        let swarms: Vec<Swarm> = (0..2)
            .map(|_| {
                let mut s = Swarm::new(g.clone(), SimUnits { c: 5.0, ..SimUnits::default() });
                for _ in 0..n {
                    s.push([rng.random_range(-3.0..3.0), 0.0, 0.0], Speed::Rest);
                }
                s
            })
            .collect();
        let c = pair_product_state(&swarms, &mut rng).unwrap();
        CortegeNet::new(swarms, c).unwrap()
    }

    #[test]
    fn joint_step_conserves_momentum_and_locality() {
        // Periodic walls: reflections would change the momentum on their own.
        let mut net = line_net(20_000, 1);
        net.swarms.iter_mut().for_each(|s| s.grid.boundary = Boundary::Periodic);
        let jg = net.joint_grid().unwrap();
        let v = PotentialField::from_fn(&jg, |x| x[0] * x[0] + 0.5 * x[1]);
        let mut e = CortegeEngine::new(DdsConfig { seed: 9, ..Default::default() }, &net).unwrap();
        let mut expect = [0i64; 2];
        for _ in 0..50 {
            let r = e.step(&mut net, &v).unwrap();
            expect[0] += r.granted[0];
            expect[1] += r.granted[1];
            assert_eq!(r.cross_cortege_grants, 0);
            net.validate().unwrap();
            assert_eq!([net.swarms[0].net_counts()[0], net.swarms[1].net_counts()[0]], expect);
        }
        assert!(expect[1] < 0);
    }

    #[test]
    fn joint_step_is_deterministic() {
        let run = || {
            let mut net = line_net(5_000, 2);
            let jg = net.joint_grid().unwrap();
            let v = PotentialField::from_fn(&jg, |x| x[0] * x[0] + x[1] * x[1]);
            let mut e = CortegeEngine::new(DdsConfig { seed: 3, ..Default::default() }, &net).unwrap();
            for _ in 0..20 {
                e.step(&mut net, &v).unwrap();
            }
            net.swarms.iter().flat_map(|s| s.samples.iter().map(|x| (x.pos[0].to_bits(), x.speed))).collect::<Vec<_>>()
        };
        let a = run();
        let b = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap().install(run);
        assert_eq!(a, b);
    }

    #[test]
    fn selection_keeps_the_dominant_group() {
        let n = 1000;
        let g = CellGrid::new(1, 4, 1.0, 0.01, Boundary::Reflecting);
        let mut swarms = vec![Swarm::new(g.clone(), SimUnits::default()), Swarm::new(g, SimUnits::default())];
        for i in 0..n {
            let x = if i < 900 { 0.5 } else { 3.5 };
            swarms[0].push([x, 0.0, 0.0], Speed::Rest);
            swarms[1].push([x, 0.0, 0.0], Speed::Rest);
        }
        let c = (0..n as u64).map(|i| Cortege { id: i, members: vec![i, i] }).collect();
        let mut net = CortegeNet::new(swarms, c).unwrap();
        let before = net.clone();
        select_and_rebind(&mut net, 0.0, &mut substream(1, 0, 0)).unwrap();
        assert_eq!(net, before);
        let r = select_and_rebind(&mut net, 0.2, &mut substream(1, 0, 0)).unwrap();
        assert_eq!((r.dissolved_groups, r.moved_corteges), (1, 100));
        assert_eq!(net.joint_density().unwrap().counts[0], n as u64);
        net.validate().unwrap();
        let r = select_and_rebind(&mut net, 1.5, &mut substream(1, 0, 0)).unwrap();
        assert!(r.all_below_threshold);
    }

    #[test]
    fn selection_removes_uniform_background() {
        let mut left = Vec::new();
        for seed in 0..5 {
            let g = CellGrid::centered(1, 16, 0.5, 0.01, Boundary::Reflecting);
            let mut rng = substream(seed, tags::SAMPLING, 0);
            let mut swarms = vec![Swarm::new(g.clone(), SimUnits::default()), Swarm::new(g.clone(), SimUnits::default())];
            let n = 20_000;
            for _ in 0..n {
                let background = rng.random::<f64>() < 0.01;
                for s in swarms.iter_mut() {
                    let x = if background {
                        rng.random_range(g.lower..g.upper())
                    } else {
                        let (u1, u2): (f64, f64) = (rng.random(), rng.random());
                        0.6 * (-2.0 * (1.0 - u1).ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
                    };
                    s.push([x.clamp(g.lower, g.upper() - 1e-9), 0.0, 0.0], Speed::Rest);
                }
            }
            let c = (0..n as u64).map(|i| Cortege { id: i, members: vec![i, i] }).collect();
            let mut net = CortegeNet::new(swarms, c).unwrap();
            select_and_rebind(&mut net, 0.02, &mut rng).unwrap();
            let far = net
                .corteges
                .iter()
                .filter(|c| (0..2).any(|k| net.swarms[k].samples[c.members[k] as usize].pos[0].abs() > 1.8))
                .count();
            left.push(far as f64 / n as f64);
        }
        assert!(left.iter().sum::<f64>() / 5.0 < 0.002, "{left:?}");
    }

    #[test]
    fn long_bonds_break() {
        let mut net = line_net(200, 3);
        let before = net.clone();
        assert_eq!(break_long_bonds(&mut net, f64::INFINITY, &mut substream(1, 0, 0)), 0);
        assert_eq!(net, before);
        // Make every cortege compact, then stretch one.
        for i in 0..200 {
            let x = net.swarms[0].samples[net.corteges[i].members[0] as usize].pos;
            let id = net.corteges[i].members[1] as usize;
            net.swarms[1].samples[id].pos = x;
        }
        assert_eq!(break_long_bonds(&mut net, 1.0, &mut substream(1, 0, 0)), 0);
        let id = net.corteges[7].members[1] as usize;
        net.swarms[1].samples[id].pos[0] = 3.9;
        net.swarms[0].samples[net.corteges[7].members[0] as usize].pos[0] = -3.9;
        assert_eq!(break_long_bonds(&mut net, 1.0, &mut substream(1, 0, 0)), 1);
        net.validate().unwrap();
    }
}
