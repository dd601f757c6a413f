//! Feynman-picture tools: the free kernel, short-time Gaussian integrals, the
//! wave-swarm propagator, the classicality criterion and slit widening.

use crate::error::{Error, Result};
use crate::lattice::{Boundary, CellGrid, SimUnits};
use crate::oracle::WaveField;
use crate::rng::substream;
use num_complex::Complex64 as C64;
use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::f64::consts::PI;

const I: C64 = C64::new(0.0, 1.0);

/// Normalization of one time slice.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KernelSpec {
    pub mass: f64,
    pub hbar: f64,
}

impl KernelSpec {
    pub fn new(units: &SimUnits) -> Self {
        Self { mass: units.mass, hbar: units.hbar }
    }

    /// A = (2πiħε/m)^{1/2}, principal branch.
    pub fn normalization(&self, eps: f64) -> C64 {
        (2.0 * PI * I * self.hbar * eps / self.mass).sqrt()
    }
}

/// (2πiħt/m)^{−1/2}·exp(imx²/2ħt)
pub fn free_kernel(x: f64, t: f64, units: &SimUnits) -> Result<C64> {
    if !(t > 0.0) {
        return Err(Error::Config(format!("kernel time must be positive, got {t}")));
    }
    let a = KernelSpec::new(units).normalization(t);
    Ok((I * units.mass * x * x / (2.0 * units.hbar * t)).exp() / a)
}

/// ∫ δ^power · exp(imδ²/2ħε) dδ by quadrature.
///
/// The contour is turned by π/4 (δ = e^{iπ/4}s), where the integrand is a
/// decaying real Gaussian, and summed with the trapezoid rule (spectrally
/// accurate for it). The rotation plays the role of the usual m → m(1 + iη)
/// regulator without biasing the result by O(η).
fn gaussian_moment(spec: &KernelSpec, eps: f64, power: i32) -> C64 {
    let rot = C64::from_polar(1.0, PI / 4.0);
    let scale = (spec.hbar * eps / spec.mass).sqrt();
    let (half, n) = (14.0 * scale, 4000);
    let h = 2.0 * half / n as f64;
    let mut sum = C64::new(0.0, 0.0);
    for j in 0..=n {
        let s = -half + j as f64 * h;
        let d = rot * s;
        let w = if j == 0 || j == n { 0.5 } else { 1.0 };
        sum += w * d.powi(power) * (I * spec.mass * d * d / (2.0 * spec.hbar * eps)).exp();
    }
    sum * h * rot
}

/// Numeric value of ∫ exp(imδ²/2ħε) dδ; closed form A.
pub fn gaussian_integral(spec: &KernelSpec, eps: f64) -> C64 {
    gaussian_moment(spec, eps, 0)
}

/// Numeric value of (1/A)∫ δ²·exp(imδ²/2ħε) dδ; closed form iħε/m.
pub fn gaussian_second_moment(spec: &KernelSpec, eps: f64) -> C64 {
    gaussian_moment(spec, eps, 2) / spec.normalization(eps)
}

/// ψ(x, t) = ∫ K(x − y, t) ψ(y) dy by direct quadrature on a 1D grid.
pub fn kernel_propagate(wave: &WaveField, t: f64) -> Result<WaveField> {
    let g = &wave.grid;
    if g.dim != 1 {
        return Err(Error::Config("kernel quadrature is one-dimensional".into()));
    }
    free_kernel(0.0, t, &wave.units)?;
    let xs: Vec<f64> = (0..g.len()).map(|i| g.center(i)[0]).collect();
    let psi = xs
        .par_iter()
        .map(|&x| {
            xs.iter()
                .zip(&wave.psi)
                .map(|(&y, &p)| free_kernel(x - y, t, &wave.units).unwrap() * p)
                .sum::<C64>()
                * g.dx
        })
        .collect();
    Ok(WaveField { psi, grid: g.clone(), units: wave.units })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AmplitudeSample {
    pub position: [f64; 3],
    pub velocity: [f64; 3],
    pub amplitude: C64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WaveSwarmConfig {
    /// Target number of samples created per step (n(x)·cells summed).
    pub samples: usize,
    /// Half-width of the velocity cube as a fraction of the grid Nyquist speed πħ/(m dx).
    pub velocity_fraction: f64,
    /// |v|/v_max beyond which amplitudes are rolled off with a raised cosine.
    pub taper_start: f64,
    /// Rescale ψ to unit norm after every step.
    pub renormalize: bool,
    pub seed: u64,
}

impl Default for WaveSwarmConfig {
    fn default() -> Self {
        Self { samples: 100_000, velocity_fraction: 0.75, taper_start: 0.3, renormalize: true, seed: 0 }
    }
}

impl WaveSwarmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.samples == 0 {
            return Err(Error::Config("wave swarm needs samples > 0".into()));
        }
        if !(self.velocity_fraction > 0.0 && self.velocity_fraction <= 1.0) {
            return Err(Error::Config("velocity_fraction must lie in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.taper_start) {
            return Err(Error::Config("taper_start must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn v_max(&self, grid: &CellGrid, units: &SimUnits) -> f64 {
        self.velocity_fraction * PI * units.hbar / (units.mass * grid.dx)
    }

    fn window(&self, u: f64) -> f64 {
        let a = u.abs();
        if a <= self.taper_start {
            1.0
        } else if a >= 1.0 {
            0.0
        } else {
            0.5 * (1.0 + (PI * (a - self.taper_start) / (1.0 - self.taper_start)).cos())
        }
    }
}

/// One wave-swarm step of duration ε: resample n(x) ∝ |ψ(x)| samples per cell
/// with equal modulus α and the cell's phase, fly them straight with the
/// factor e^{iΔS/ħ}, and sum the amplitudes landing in each cell.
///
/// Samples leaving a reflecting grid are lost; a periodic grid wraps them.
pub fn wave_swarm_step(
    wave: &WaveField,
    potential: &[f64],
    eps: f64,
    config: &WaveSwarmConfig,
    step: u64,
) -> Result<(Vec<AmplitudeSample>, WaveField)> {
    config.validate()?;
    let g = &wave.grid;
    let u = &wave.units;
    if potential.len() != g.len() {
        return Err(Error::Config(format!("potential has {} cells, grid {}", potential.len(), g.len())));
    }
    let total: f64 = wave.psi.iter().map(|z| z.norm()).sum();
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::Underflow(step));
    }
    let alpha = total / config.samples as f64;
    let vmax = config.v_max(g, u);
    let per_cell: Vec<Vec<AmplitudeSample>> = (0..g.len())
        .into_par_iter()
        .map(|cell| {
            let mut rng = substream(config.seed, cell as u64, step);
            let psi = wave.psi[cell];
            let k = (psi.norm() / alpha + rng.random::<f64>()).floor() as usize;
            let start = g.center(cell);
            let base = C64::from_polar(alpha, psi.arg());
            (0..k)
                .map(|j| {
                    let mut velocity = [0.0; 3];
                    let mut weight = 1.0;
                    let mut kinetic = 0.0;
                    for (a, v) in velocity.iter_mut().enumerate().take(g.dim) {
                        // Stratified along the first axis, plain uniform on the others.
                        let r: f64 = rng.random();
                        let s = if a == 0 { (j as f64 + r) / k as f64 } else { r };
                        *v = vmax * (2.0 * s - 1.0);
                        weight *= config.window(*v / vmax);
                        kinetic += *v * *v;
                    }
                    let mut position = start;
                    for a in 0..g.dim {
                        position[a] += velocity[a] * eps;
                    }
                    let landing = land(g, &mut position);
                    let v_end = landing.map_or(potential[cell], |c| potential[c]);
                    let action = (0.5 * u.mass * kinetic - 0.5 * (potential[cell] + v_end)) * eps;
                    let amplitude = base * weight * C64::from_polar(1.0, action / u.hbar);
                    AmplitudeSample { position, velocity, amplitude }
                })
                .collect()
        })
        .collect();
    let spec = KernelSpec::new(u);
    let scale = (C64::new(2.0 * vmax * eps, 0.0) / spec.normalization(eps)).powi(g.dim as i32);
    let mut psi = vec![C64::new(0.0, 0.0); g.len()];
    let samples: Vec<AmplitudeSample> = per_cell.into_iter().flatten().collect();
    for s in &samples {
        let mut p = s.position;
        if let Some(c) = land(g, &mut p) {
            psi[c] += s.amplitude * scale;
        }
    }
    let mut next = WaveField { psi, grid: g.clone(), units: *u };
    if next.norm_sq() == 0.0 {
        return Err(Error::Underflow(step));
    }
    if config.renormalize {
        next.normalize();
    }
    Ok((samples, next))
}

fn land(g: &CellGrid, pos: &mut [f64; 3]) -> Option<usize> {
    let upper = g.upper();
    for x in pos.iter_mut().take(g.dim) {
        match g.boundary {
            Boundary::Periodic => *x = g.lower + (*x - g.lower).rem_euclid(g.extent()),
            Boundary::Reflecting => {
                if *x < g.lower || *x >= upper {
                    return None;
                }
            }
        }
    }
    Some(g.cell_of(pos))
}

/// Runs `steps` wave-swarm steps and returns the position spread after each.
pub fn wave_swarm_run(
    wave: &mut WaveField,
    potential: &[f64],
    eps: f64,
    steps: u64,
    config: &WaveSwarmConfig,
) -> Result<Vec<f64>> {
    let mut widths = Vec::with_capacity(steps as usize);
    for step in 0..steps {
        let (_, next) = wave_swarm_step(wave, potential, eps, config, step)?;
        *wave = next;
        widths.push(wave.moments(0).1);
    }
    Ok(widths)
}

/// σ(t) of a free Gaussian packet with initial position spread σ₀.
pub fn gaussian_width(sigma0: f64, t: f64, units: &SimUnits) -> f64 {
    let s = units.hbar * t / (2.0 * units.mass * sigma0);
    (sigma0 * sigma0 + s * s).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Dynamics {
    Quantum,
    Classical,
}

/// Quantum iff the typical action M·ΔX²/ΔT is below ħ; the tie goes to classical.
pub fn classicality(mass: f64, length: f64, time: f64, units: &SimUnits) -> Dynamics {
    if mass * length * length / time < units.hbar {
        Dynamics::Quantum
    } else {
        Dynamics::Classical
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SlitWidening {
    /// Extra support width ħt/(mb) after time t.
    pub widening: f64,
    /// Impulse spread ħ/b imparted by the slit.
    pub impulse_spread: f64,
    pub half_width: f64,
}

impl SlitWidening {
    /// δp·(2b), equal to 2ħ.
    pub fn uncertainty_product(&self) -> f64 {
        self.impulse_spread * 2.0 * self.half_width
    }
}

pub fn slit_widening(b: f64, mass: f64, t: f64, units: &SimUnits) -> Result<SlitWidening> {
    if !(b > 0.0 && t > 0.0) {
        return Err(Error::Config("slit half-width and time must be positive".into()));
    }
    Ok(SlitWidening { widening: units.hbar * t / (mass * b), impulse_spread: units.hbar / b, half_width: b })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SlitRun {
    pub times: Vec<f64>,
    /// Effective support width √2·σ(t).
    pub widths: Vec<f64>,
    /// Least-squares slope of the width over the far-field window.
    pub rate: f64,
    /// ħ/(mb)
    pub analytic_rate: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SlitSetup {
    pub half_width: f64,
    pub cells: usize,
    pub dx: f64,
    pub eps: f64,
    pub steps: u64,
    /// Rate is fitted over t ≥ far_field.
    pub far_field: f64,
    pub swarm: WaveSwarmConfig,
}

impl Default for SlitSetup {
    fn default() -> Self {
        Self {
            half_width: std::f64::consts::SQRT_2,
            cells: 384,
            dx: 0.125,
            eps: 0.16,
            steps: 50,
            far_field: 4.0,
            swarm: WaveSwarmConfig::default(),
        }
    }
}

/// A Gaussian slit of half-width b (σ₀ = b/√2, so √2·σ₀ = b) released at t = 0.
pub fn run_slit(setup: &SlitSetup, units: &SimUnits) -> Result<SlitRun> {
    let grid = CellGrid::centered(1, setup.cells, setup.dx, setup.eps, Boundary::Periodic);
    let sigma0 = setup.half_width / std::f64::consts::SQRT_2;
    let mut wave = WaveField::gaussian(&grid, units, &[0.0], sigma0, &[0.0]);
    let v = vec![0.0; grid.len()];
    let sd = wave_swarm_run(&mut wave, &v, setup.eps, setup.steps, &setup.swarm)?;
    let times: Vec<f64> = (1..=setup.steps).map(|s| s as f64 * setup.eps).collect();
    let widths: Vec<f64> = sd.iter().map(|s| std::f64::consts::SQRT_2 * s).collect();
    let (t, w): (Vec<f64>, Vec<f64>) =
        times.iter().zip(&widths).filter(|(t, _)| **t >= setup.far_field).map(|(t, w)| (*t, *w)).unzip();
    if t.len() < 2 {
        return Err(Error::Config("far-field window holds fewer than two steps".into()));
    }
    let (rate, _, _) = crate::stats::linear_fit(&t, &w, None);
    Ok(SlitRun { times, widths, rate, analytic_rate: units.hbar / (units.mass * setup.half_width) })
}
