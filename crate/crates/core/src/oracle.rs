//! Reference Schrödinger integrator on the swarm lattice, and the two-cell
//! locality diagnostic.

use crate::error::{Error, Result};
use crate::lattice::{Boundary, CellGrid, SimUnits};
use num_complex::Complex64 as C64;
use rayon::prelude::*;

const I: C64 = C64::new(0.0, 1.0);

#[derive(Clone, Debug, PartialEq)]
pub struct WaveField {
    pub psi: Vec<C64>,
    pub grid: CellGrid,
    pub units: SimUnits,
}

impl WaveField {
    pub fn from_fn(grid: &CellGrid, units: &SimUnits, f: impl Fn(&[f64]) -> C64) -> Self {
        let psi = (0..grid.len()).map(|i| f(&grid.center(i)[..grid.dim])).collect();
        Self { psi, grid: grid.clone(), units: *units }
    }

    /// Normalized Gaussian packet with position spread σ and wave vector k.
    pub fn gaussian(grid: &CellGrid, units: &SimUnits, center: &[f64], sigma: f64, k: &[f64]) -> Self {
        let mut w = Self::from_fn(grid, units, |x| {
            let mut arg = C64::new(0.0, 0.0);
            for a in 0..x.len() {
                arg += C64::new(-(x[a] - center[a]).powi(2) / (4.0 * sigma * sigma), k[a] * x[a]);
            }
            arg.exp()
        });
        w.normalize();
        w
    }

    pub fn norm_sq(&self) -> f64 {
        self.psi.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.volume()
    }

    /// Scale to unit norm; returns the previous norm².
    pub fn normalize(&mut self) -> f64 {
        let n = self.norm_sq();
        let s = 1.0 / n.sqrt();
        self.psi.iter_mut().for_each(|z| *z *= s);
        n
    }

    /// |ψ|² per cell.
    pub fn density(&self) -> Vec<f64> {
        self.psi.iter().map(|z| z.norm_sqr()).collect()
    }

    /// Cell probabilities |ψ|²·(dx)^dim.
    pub fn probabilities(&self) -> Vec<f64> {
        let v = self.grid.volume();
        self.psi.iter().map(|z| z.norm_sqr() * v).collect()
    }

    /// ⟨self|other⟩
    pub fn overlap(&self, other: &WaveField) -> C64 {
        self.psi.iter().zip(&other.psi).map(|(a, b)| a.conj() * b).sum::<C64>() * self.grid.volume()
    }

    /// Mean and standard deviation of the position along `axis`.
    pub fn moments(&self, axis: usize) -> (f64, f64) {
        let p = self.probabilities();
        let total: f64 = p.iter().sum();
        let x: Vec<f64> = (0..self.grid.len()).map(|i| self.grid.center(i)[axis]).collect();
        let m = p.iter().zip(&x).map(|(w, x)| w * x).sum::<f64>() / total;
        let var = p.iter().zip(&x).map(|(w, x)| w * (x - m).powi(2)).sum::<f64>() / total;
        (m, var.sqrt())
    }

    /// (H ψ) with the second-order stencil; walls of a reflecting grid are hard (ψ = 0 outside).
    pub fn apply_hamiltonian(&self, potential: &[f64]) -> Vec<C64> {
        let g = &self.grid;
        let a = hopping(g, &self.units);
        (0..g.len())
            .into_par_iter()
            .map(|i| {
                let mut h = self.psi[i] * (potential[i] + 2.0 * a * g.dim as f64);
                for ax in 0..g.dim {
                    for step in [-1, 1] {
                        if let Some(j) = g.neighbor(i, ax, step) {
                            h -= self.psi[j] * a;
                        }
                    }
                }
                h
            })
            .collect()
    }
}

/// ħ²/(2M dx²), the nearest-neighbour hopping energy.
fn hopping(grid: &CellGrid, units: &SimUnits) -> f64 {
    units.hbar * units.hbar / (2.0 * units.mass * grid.dx * grid.dx)
}

/// Largest |dt| accepted by [`evolve`]: dt·E_max ≤ 2ħ, with E_max the top of the
/// lattice spectrum. Beyond it the Crank–Nicolson phase of the fastest modes is
/// off by more than π/2.
pub fn stability_limit(grid: &CellGrid, units: &SimUnits, potential: &[f64]) -> f64 {
    let vmax = potential.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let emax = 4.0 * hopping(grid, units) * grid.dim as f64 + vmax;
    2.0 * units.hbar / emax
}

/// ⟨ψ|H|ψ⟩ for a normalized wave.
pub fn energy(wave: &WaveField, potential: &[f64]) -> f64 {
    let h = wave.apply_hamiltonian(potential);
    let e: C64 = wave.psi.iter().zip(&h).map(|(a, b)| a.conj() * b).sum::<C64>() * wave.grid.volume();
    e.re
}

/// Advance ψ by `steps` Crank–Nicolson steps of length `dt` (negative dt runs backwards).
///
/// One dimension uses the full implicit scheme with the potential inside the
/// tridiagonal solve; higher dimensions use a symmetric split — half potential
/// phase, implicit kinetic sweeps per axis, half potential phase. Both are unitary.
pub fn evolve(wave: &mut WaveField, potential: &[f64], dt: f64, steps: usize) -> Result<()> {
    let limit = stability_limit(&wave.grid, &wave.units, potential);
    if dt.abs() > limit {
        return Err(Error::Unstable { dt, limit });
    }
    if potential.len() != wave.psi.len() {
        return Err(Error::Lattice(format!("potential has {} cells, wave {}", potential.len(), wave.psi.len())));
    }
    let tau = dt / (2.0 * wave.units.hbar);
    let a = hopping(&wave.grid, &wave.units);
    let periodic = wave.grid.boundary == Boundary::Periodic;
    if wave.grid.dim == 1 {
        for _ in 0..steps {
            cn_line(&mut wave.psi, a, Some(potential), tau, periodic);
        }
        return Ok(());
    }
    let half: Vec<C64> = potential.iter().map(|v| (-I * v * tau).exp()).collect();
    for _ in 0..steps {
        wave.psi.iter_mut().zip(&half).for_each(|(z, p)| *z *= p);
        for axis in 0..wave.grid.dim {
            kinetic_sweep(wave, axis, a, tau, periodic);
        }
        wave.psi.iter_mut().zip(&half).for_each(|(z, p)| *z *= p);
    }
    Ok(())
}

fn kinetic_sweep(wave: &mut WaveField, axis: usize, a: f64, tau: f64, periodic: bool) {
    let g = &wave.grid;
    let n = g.cells;
    let stride = n.pow(axis as u32);
    let starts: Vec<usize> = (0..g.len()).filter(|&i| g.coords(i)[axis] == 0).collect();
    let psi = &wave.psi;
    let lines: Vec<Vec<C64>> = starts
        .par_iter()
        .map(|&s| {
            let mut line: Vec<C64> = (0..n).map(|k| psi[s + k * stride]).collect();
            cn_line(&mut line, a, None, tau, periodic);
            line
        })
        .collect();
    for (s, line) in starts.iter().zip(lines) {
        for (k, z) in line.into_iter().enumerate() {
            wave.psi[s + k * stride] = z;
        }
    }
}

/// (1 + iτH) ψ' = (1 − iτH) ψ on one line.
fn cn_line(psi: &mut [C64], a: f64, potential: Option<&[f64]>, tau: f64, periodic: bool) {
    let n = psi.len();
    let v = |j: usize| potential.map_or(0.0, |p| p[j]);
    let off = -I * tau * (-a);
    let mut rhs = vec![C64::new(0.0, 0.0); n];
    let mut diag = vec![C64::new(0.0, 0.0); n];
    for j in 0..n {
        let h = 2.0 * a + v(j);
        let left = if j > 0 { psi[j - 1] } else if periodic { psi[n - 1] } else { C64::new(0.0, 0.0) };
        let right = if j + 1 < n { psi[j + 1] } else if periodic { psi[0] } else { C64::new(0.0, 0.0) };
        rhs[j] = psi[j] * (1.0 - I * tau * h) + off * (left + right);
        diag[j] = 1.0 + I * tau * h;
    }
    let sub = -off;
    let sol = if periodic { solve_cyclic(&diag, sub, sub, &rhs) } else { solve_tridiagonal(&diag, sub, sub, &rhs) };
    psi.copy_from_slice(&sol);
}

/// Thomas algorithm with constant off-diagonals.
fn solve_tridiagonal(diag: &[C64], sub: C64, sup: C64, rhs: &[C64]) -> Vec<C64> {
    let n = diag.len();
    let mut c = vec![C64::new(0.0, 0.0); n];
    let mut d = vec![C64::new(0.0, 0.0); n];
    c[0] = sup / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let m = diag[i] - sub * c[i - 1];
        c[i] = sup / m;
        d[i] = (rhs[i] - sub * d[i - 1]) / m;
    }
    let mut x = d;
    for i in (0..n - 1).rev() {
        let next = x[i + 1];
        x[i] -= c[i] * next;
    }
    x
}

/// Periodic tridiagonal system via the Sherman–Morrison correction.
fn solve_cyclic(diag: &[C64], sub: C64, sup: C64, rhs: &[C64]) -> Vec<C64> {
    let n = diag.len();
    let (alpha, beta) = (sup, sub);
    let gamma = -diag[0];
    let mut d = diag.to_vec();
    d[0] -= gamma;
    d[n - 1] -= alpha * beta / gamma;
    let x = solve_tridiagonal(&d, sub, sup, rhs);
    let mut u = vec![C64::new(0.0, 0.0); n];
    u[0] = gamma;
    u[n - 1] = alpha;
    let z = solve_tridiagonal(&d, sub, sup, &u);
    let fact = (x[0] + beta * x[n - 1] / gamma) / (1.0 + z[0] + beta * z[n - 1] / gamma);
    x.iter().zip(&z).map(|(xi, zi)| xi - fact * zi).collect()
}

/// Two neighbouring cells x, x₁ exchanging samples in the direction x → x₁.
///
/// Potentials are in rate units, (V_pot + α)/ħ. The state obeys
/// Ψ_t(x) = iγΨ(x₁) − iVΨ(x) and the mirrored equation for x₁.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TwoCell {
    pub psi: [C64; 2],
    pub v: [f64; 2],
    pub gamma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LocalityReport {
    /// (dρ(x)/dt, dρ(x₁)/dt) from the equations of motion.
    pub rates: (f64, f64),
    /// 2γ(Ψⁱ(x)Ψʳ(x₁) − Ψʳ(x)Ψⁱ(x₁))
    pub closed_form: f64,
    /// Central differences of ρ over ±h.
    pub numeric: (f64, f64),
}

/// γ = ħ/(2M dx²)
pub fn two_cell_gamma(units: &SimUnits, dx: f64) -> f64 {
    units.hbar / (2.0 * units.mass * dx * dx)
}

/// (V_pot + α)/ħ with α = −dim·ħ²/(M dx²), the shift that removes the diagonal stencil term.
pub fn shifted_rates(v_pot: [f64; 2], units: &SimUnits, dx: f64, dim: usize) -> [f64; 2] {
    let alpha = -(dim as f64) * units.hbar * units.hbar / (units.mass * dx * dx);
    v_pot.map(|v| (v + alpha) / units.hbar)
}

impl TwoCell {
    pub fn derivative(&self, psi: [C64; 2]) -> [C64; 2] {
        let g = self.gamma;
        [I * g * psi[1] - I * self.v[0] * psi[0], I * g * psi[0] - I * self.v[1] * psi[1]]
    }

    pub fn rk4(&self, psi: [C64; 2], h: f64) -> [C64; 2] {
        let add = |p: [C64; 2], k: [C64; 2], s: f64| [p[0] + k[0] * s, p[1] + k[1] * s];
        let k1 = self.derivative(psi);
        let k2 = self.derivative(add(psi, k1, h / 2.0));
        let k3 = self.derivative(add(psi, k2, h / 2.0));
        let k4 = self.derivative(add(psi, k3, h));
        [0, 1].map(|j| psi[j] + (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]) * (h / 6.0))
    }

    fn rho_at(&self, t: f64) -> [f64; 2] {
        let s = self.rk4(self.psi, t);
        [s[0].norm_sqr(), s[1].norm_sqr()]
    }

    pub fn locality_check(&self, h: f64) -> LocalityReport {
        let d = self.derivative(self.psi);
        let rate = |j: usize| 2.0 * (self.psi[j].conj() * d[j]).re;
        let (p, q) = (self.psi[0], self.psi[1]);
        let closed_form = 2.0 * self.gamma * (p.im * q.re - p.re * q.im);
        let (fwd, bwd) = (self.rho_at(h), self.rho_at(-h));
        LocalityReport {
            rates: (rate(0), rate(1)),
            closed_form,
            numeric: ((fwd[0] - bwd[0]) / (2.0 * h), (fwd[1] - bwd[1]) / (2.0 * h)),
        }
    }

    /// Closed-form ∂²ρ(x)/∂t²: 2γ²(ρ(x₁) − ρ(x)) + 2γ(V(x₁) − V(x))ρ(x) + 2γ·o, with
    /// o = (ΨʳΨʳ₁ + ΨⁱΨⁱ₁ − ρ(x))(V(x₁) − V(x)).
    pub fn second_derivative(&self) -> f64 {
        let (p, q) = (self.psi[0], self.psi[1]);
        let (r0, r1) = (p.norm_sqr(), q.norm_sqr());
        let dv = self.v[1] - self.v[0];
        let o = (p.re * q.re + p.im * q.im - r0) * dv;
        2.0 * self.gamma * self.gamma * (r1 - r0) + 2.0 * self.gamma * (dv * r0 + o)
    }

    /// (closed form, second central difference of ρ(x) over ±h)
    pub fn second_derivative_check(&self, h: f64) -> (f64, f64) {
        let r0 = self.psi[0].norm_sqr();
        let numeric = (self.rho_at(h)[0] - 2.0 * r0 + self.rho_at(-h)[0]) / (h * h);
        (self.second_derivative(), numeric)
    }
}
