//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use num_complex::Complex64 as C64;
use rand::Rng;
use std::f64::consts::{PI, SQRT_2};
use std::time::Instant;
use swarmlab::bridge::{contour_residual, fidelity, phase_rms, rectangle_loop, restore_wave, sample_swarm, BridgeConfig};
use swarmlab::cortege::{
    break_long_bonds, pair_entangled_state, pair_product_state, run_decoherence, select_and_rebind, CortegeEngine, CortegeNet,
    DecoherenceSetup,
};
use swarmlab::dds::{run_oscillator, DdsConfig, OscillatorSetup};
use swarmlab::dmc::{detect_burn_in, ground_energy_estimate, run, DmcConfig, DmcState, Domain, Histogram};
use swarmlab::lattice::{exchange, Boundary, CellGrid, PotentialField, SimUnits, Speed, Swarm};
use swarmlab::oracle::{evolve, WaveField};
use swarmlab::pathint::{
    free_kernel, gaussian_integral, gaussian_second_moment, gaussian_width, run_slit, wave_swarm_run, KernelSpec, SlitSetup,
    WaveSwarmConfig,
};
use swarmlab::qtoy::{
    best_classical_table, chsh_classical_bound, chsh_sampled, run_assembly, table_noncr, AssemblyConfig, ChshSettings, EprSource,
    Statevector, Strategy,
};
use swarmlab::rng::{substream, tags};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap().install(f)
}

fn chsh() -> Outcome {
    let (v, se) = chsh_sampled(&Statevector::singlet(), &ChshSettings::default(), 1_000_000, 7);
    let bound = chsh_classical_bound();
    let pass = (v - 2.0 * SQRT_2).abs() <= 0.02 && bound == 2.0;
    outcome(pass, format!("sampled {v:.4} ± {se:.4} (target 2√2 = {:.4}), classical max {bound}", 2.0 * SQRT_2))
}

fn assembly() -> Outcome {
    let epr = Strategy::Epr { source: EprSource::Singlet, settings: ChshSettings::default() };
    let q = run_assembly(&AssemblyConfig { p_a: [0.5, 0.5], strategy: epr, seed: 7 }, 100_000);
    let table = best_classical_table();
    let exact = table_noncr(&table);
    let sampled = run_assembly(&AssemblyConfig { p_a: [0.5, 0.5], strategy: Strategy::Classical(table), seed: 7 }, 100_000);
    let pass = (q.mean_noncr - 0.8536).abs() <= 0.005 && (exact - 0.75).abs() <= 0.005 && (sampled.mean_noncr - 0.75).abs() <= 0.005;
    outcome(
        pass,
        format!("epr NonCr {:.4} ± {:.4}; best classical table {exact:.3} (sampled {:.4})", q.mean_noncr, q.stderr, sampled.mean_noncr),
    )
}

fn dmc_sho() -> Outcome {
    let c = DmcConfig::matched(&SimUnits::default(), 0.1, 0.25, 10_000, 11);
    let mut s = DmcState::uniform(10_000, 1, -2.0, 2.0, &c);
    let v = |x: &[f64]| 0.5 * x[0] * x[0];
    let r = match run(&mut s, &v, &Domain::Free, &c, 10_000, 1000, Histogram::new(-5.0, 5.0, 100)) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("run aborted: {e}")),
    };
    let burn = detect_burn_in(&r.history, 250).unwrap_or(1000).max(1000);
    let e = ground_energy_estimate(&r.history, burn).unwrap();
    let l1 = r.histogram.l1_to_gaussian(1.0);
    let slope = r.histogram.log_slope(100.0);
    let pass = l1 < 0.05 && (e.mean - 0.5).abs() <= 0.05 && slope.rejects_square(5.0);
    outcome(
        pass,
        format!(
            "E0 {:.4} ± {:.4}, L1 to exp(-x²/2) {l1:.4}, log-slope {:.4} ± {:.4} (square law would give -1)",
            e.mean, e.stderr, slope.slope, slope.se
        ),
    )
}

fn oracle() -> Outcome {
    let u = SimUnits::default();
    let g = CellGrid::centered(1, 256, 1.0 / 16.0, 0.0, Boundary::Reflecting);
    let v = PotentialField::from_fn(&g, |x| 0.5 * x[0] * x[0]).values;
    let mut w = WaveField::from_fn(&g, &u, |x| C64::new((-x[0] * x[0] / 2.0).exp(), 0.0));
    w.normalize();
    let rho0 = w.density();
    let peak = rho0.iter().cloned().fold(0.0, f64::max);
    let mut drift: f64 = 0.0;
    let mut dev: f64 = 0.0;
    for _ in 0..1000 {
        evolve(&mut w, &v, 0.002, 1).unwrap();
        drift = drift.max((w.norm_sq() - 1.0).abs());
        dev = dev.max(w.density().iter().zip(&rho0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / peak);
    }
    let fg = CellGrid::centered(1, 512, 1.0 / 16.0, 0.0, Boundary::Periodic);
    let mut f = WaveField::gaussian(&fg, &u, &[0.0], 1.0, &[0.0]);
    evolve(&mut f, &vec![0.0; fg.len()], 0.002, 1000).unwrap();
    let spread = f.moments(0).1 / gaussian_width(1.0, 2.0, &u) - 1.0;
    let pass = drift < 1e-8 && dev < 1e-3 && spread.abs() < 0.01;
    outcome(pass, format!("norm drift {drift:.1e}, ground-state max deviation {dev:.1e} of peak, spreading error {:.3}%", spread * 100.0))
}

fn dds_vs_oracle() -> Outcome {
    let sizes = [50_000usize, 100_000, 200_000];
    let mut means = Vec::new();
    let mut headline = None;
    for &n in &sizes {
        let mut sum = 0.0;
        for seed in 1..=5 {
            let setup = OscillatorSetup { n, dds: DdsConfig { seed, ..OscillatorSetup::default().dds }, ..Default::default() };
            let r = run_oscillator(&setup).unwrap();
            sum += r.final_error();
            if n == 200_000 && seed == 1 {
                headline = Some(r.max_error());
            }
        }
        means.push(sum / 5.0);
    }
    let max = headline.unwrap();
    let trend = means.windows(2).all(|w| w[1] <= w[0]);
    outcome(
        max < 0.1 && trend,
        format!(
            "max L1 over 1000 steps at n=2e5: {max:.4}; mean final L1 for n = 5e4, 1e5, 2e5: {:.4}, {:.4}, {:.4}",
            means[0], means[1], means[2]
        ),
    )
}

fn bridge() -> Outcome {
    let u = SimUnits { c: 4.0, ..SimUnits::default() };
    let g = CellGrid::centered(1, 64, 0.25, 0.0, Boundary::Periodic);
    let w = WaveField::gaussian(&g, &u, &[0.0], 1.5, &[2.0]);
    let s = sample_swarm(&w, 1_000_000, 5).unwrap();
    let cfg = BridgeConfig { reference_cell: 32, ..Default::default() };
    let r = restore_wave(&s, &cfg).unwrap();
    let (rms, fid) = (phase_rms(&w, &r.wave, 32), fidelity(&w, &r.wave));
    // Closed contours need a plane: the same packet boosted along x on a 2D lattice.
    let g2 = CellGrid::centered(2, 32, 0.5, 0.0, Boundary::Periodic);
    let w2 = WaveField::gaussian(&g2, &u, &[0.0, 0.0], 1.5, &[2.0, 0.0]);
    let s2 = sample_swarm(&w2, 1_000_000, 5).unwrap();
    let loops = [((12, 12), (19, 19)), ((14, 14), (17, 17)), ((10, 13), (16, 18)), ((15, 10), (21, 15))];
    let contour = loops
        .iter()
        .map(|&(lo, hi)| contour_residual(&s2, &rectangle_loop(&g2, lo, hi), &BridgeConfig::default()).unwrap().abs())
        .fold(0.0, f64::max);
    outcome(rms < 0.1 && fid >= 0.99 && contour < 0.1, format!("phase RMS {rms:.4} rad, fidelity {fid:.5}, max contour residual {contour:.4} rad"))
}

fn path_integral() -> Outcome {
    let u = SimUnits::default();
    let modulus = [-4.0, -1.0, 0.0, 0.5, 3.0]
        .iter()
        .map(|&x| (free_kernel(x, 1.0, &u).unwrap().norm() - (1.0 / (2.0 * PI)).sqrt()).abs())
        .fold(0.0, f64::max);
    let spec = KernelSpec::new(&u);
    let mut gauss: f64 = 0.0;
    for eps in [0.01, 0.1, 1.0] {
        let a = spec.normalization(eps);
        gauss = gauss.max((gaussian_integral(&spec, eps) - a).norm() / a.norm());
        let m2 = C64::new(0.0, eps);
        gauss = gauss.max((gaussian_second_moment(&spec, eps) - m2).norm() / m2.norm());
    }
    let g = CellGrid::centered(1, 192, 1.0 / 16.0, 0.0, Boundary::Periodic);
    let mut w = WaveField::gaussian(&g, &u, &[0.0], 1.0, &[0.0]);
    let cfg = WaveSwarmConfig { seed: 1, ..Default::default() };
    let widths = wave_swarm_run(&mut w, &vec![0.0; g.len()], 0.04, 50, &cfg).unwrap();
    let packet = widths[49] / gaussian_width(1.0, 2.0, &u) - 1.0;
    let slit = run_slit(&SlitSetup { swarm: WaveSwarmConfig { seed: 1, ..Default::default() }, ..Default::default() }, &u).unwrap();
    let ratio = slit.rate / slit.analytic_rate;
    let pass = modulus < 1e-12 && gauss < 1e-6 && packet.abs() < 0.05 && (ratio - 1.0).abs() < 0.2;
    outcome(
        pass,
        format!(
            "|K| error {modulus:.1e}, Gaussian integrals rel. error {gauss:.1e}, packet width error {:.2}%, slit rate/(ħ/mb) {ratio:.3}",
            packet * 100.0
        ),
    )
}

fn two_cell_swarm(n: usize, upper: f64, seed: u64) -> Swarm {
    let g = CellGrid::new(1, 2, 1.0, 0.01, Boundary::Reflecting);
    let mut s = Swarm::new(g, SimUnits::default());
    let mut rng = substream(seed, tags::SAMPLING, 0);
    for _ in 0..n {
        let x = if rng.random::<f64>() < upper { 1.0 } else { 0.0 } + rng.random::<f64>();
        s.push([x, 0.0, 0.0], Speed::Rest);
    }
    s
}

fn worst_sigma(f: &[f64], p: &[f64], n: usize) -> f64 {
    f.iter()
        .zip(p)
        .map(|(f, p)| {
            let sd = (p * (1.0 - p) / n as f64).sqrt();
            if sd == 0.0 { if *f == *p { 0.0 } else { f64::INFINITY } } else { (f - p).abs() / sd }
        })
        .fold(0.0, f64::max)
}

fn born_rule() -> Outcome {
    let n = 100_000;
    let mut swarms = vec![two_cell_swarm(n, 0.5, 1), two_cell_swarm(n, 0.5, 2)];
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let lambda = [C64::new(h, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), C64::new(h, 0.0)];
    let c = pair_entangled_state(&lambda, &mut swarms, &mut substream(1, tags::PAIRING, 0)).unwrap();
    let bell = CortegeNet::new(swarms, c).unwrap().joint_density().unwrap().fractions();
    let z_bell = worst_sigma(&bell, &[0.5, 0.0, 0.0, 0.5], n);
    let swarms = vec![two_cell_swarm(n, 0.75, 3), two_cell_swarm(n, 0.5, 4)];
    let m: Vec<f64> =
        swarms.iter().map(|s| s.samples.iter().filter(|x| x.pos[0] >= 1.0).count() as f64 / n as f64).collect();
    let c = pair_product_state(&swarms, &mut substream(2, tags::PAIRING, 0)).unwrap();
    let prod = CortegeNet::new(swarms, c).unwrap().joint_density().unwrap().fractions();
    let want = [(1.0 - m[0]) * (1.0 - m[1]), m[0] * (1.0 - m[1]), (1.0 - m[0]) * m[1], m[0] * m[1]];
    let z_prod = worst_sigma(&prod, &want, n);
    outcome(
        z_bell <= 4.0 && z_prod <= 4.0,
        format!("Bell fractions {:.4?} (worst {z_bell:.2}σ); product pairing worst {z_prod:.2}σ", bell),
    )
}

fn decoherence() -> Outcome {
    let mut means = Vec::new();
    for n in [100_000usize, 50_000] {
        let mut sum = 0.0;
        for seed in 1..=5 {
            let setup = DecoherenceSetup { n, dds: DdsConfig { seed, ..DecoherenceSetup::default().dds }, ..Default::default() };
            sum += run_decoherence(&setup).unwrap().final_error();
        }
        means.push(sum / 5.0);
    }
    outcome(means[1] >= means[0], format!("mean final joint L1: n=1e5 {:.4}, n=5e4 {:.4}", means[0], means[1]))
}

fn conservation() -> Outcome {
    // Momentum under 1e5 random same-cell exchanges.
    let g = CellGrid::new(2, 4, 1.0, 0.01, Boundary::Periodic);
    let mut s = Swarm::new(g.clone(), SimUnits::default());
    let mut rng = substream(3, 0, 0);
    for i in 0..4000 {
        let speed = match i % 5 {
            0 => Speed::Move { axis: 0, positive: true },
            1 => Speed::Move { axis: 1, positive: false },
            _ => Speed::Rest,
        };
        let cell = i % g.len();
        s.push(g.center(cell), speed);
    }
    let before = s.net_counts();
    let mut momentum_ok = true;
    let mut done = 0;
    while done < 100_000 {
        let i = rng.random_range(0..s.n());
        let j = i % g.len() + g.len() * rng.random_range(0..s.n() / g.len());
        if i == j {
            continue;
        }
        let (lo, hi) = (i.min(j), i.max(j));
        let (a, b) = s.samples.split_at_mut(hi);
        if exchange(&g, &mut a[lo], &mut b[0], &mut rng).is_ok() {
            done += 1;
        }
        momentum_ok &= s.net_counts() == before;
    }
    // Matching after every cortege operation.
    let line = CellGrid::centered(1, 16, 0.5, 0.01, Boundary::Reflecting);
    let units = SimUnits { c: 5.0, ..SimUnits::default() };
    let swarms: Vec<Swarm> = (0..2)
        .map(|_| {
            let mut s = Swarm::new(line.clone(), units);
            for _ in 0..20_000 {
                s.push([rng.random_range(-3.0..3.0), 0.0, 0.0], Speed::Rest);
            }
            s
        })
        .collect();
    let c = pair_product_state(&swarms, &mut rng).unwrap();
    let mut net = CortegeNet::new(swarms, c).unwrap();
    let jg = net.joint_grid().unwrap();
    let v = PotentialField::from_fn(&jg, |x| x[0] * x[0] + x[1] * x[1]);
    let mut engine = CortegeEngine::new(DdsConfig { seed: 4, ..DdsConfig::default() }, &net).unwrap();
    let mut matching_ok = true;
    let mut local_ok = true;
    for k in 0..20 {
        let r = engine.step(&mut net, &v).unwrap();
        local_ok &= r.cross_cortege_grants == 0;
        matching_ok &= net.validate().is_ok();
        break_long_bonds(&mut net, 2.0, &mut substream(4, tags::REBIND, k));
        matching_ok &= net.validate().is_ok();
        select_and_rebind(&mut net, 0.001, &mut substream(4, tags::REBIND, k)).unwrap();
        matching_ok &= net.validate().is_ok();
    }
    // Determinism across thread counts.
    let small = OscillatorSetup { n: 20_000, steps: 100, ..Default::default() };
    let a = in_pool(1, || run_oscillator(&small).unwrap().final_density);
    let b = in_pool(4, || run_oscillator(&small).unwrap().final_density);
    let wg = CellGrid::centered(1, 128, 1.0 / 16.0, 0.0, Boundary::Periodic);
    let wave = |threads| {
        in_pool(threads, || {
            let mut w = WaveField::gaussian(&wg, &SimUnits::default(), &[0.0], 1.0, &[1.0]);
            wave_swarm_run(&mut w, &vec![0.0; wg.len()], 0.04, 10, &WaveSwarmConfig::default()).unwrap();
            w.psi
        })
    };
    let shots = |threads| in_pool(threads, || chsh_sampled(&Statevector::singlet(), &ChshSettings::default(), 100_000, 3));
    let deterministic = a == b && wave(1) == wave(3) && shots(1) == shots(3);
    outcome(
        momentum_ok && matching_ok && local_ok && deterministic,
        format!(
            "momentum exact over {done} exchanges: {momentum_ok}; matching kept: {matching_ok}; grants local: {local_ok}; thread-count invariant: {deterministic}"
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome, f64); 10] = [
        ("CHSH expectation and classical bound", chsh, 30.0),
        ("assembly NonCr bounds", assembly, 30.0),
        ("DMC oscillator", dmc_sho, 120.0),
        ("reference integrator", oracle, 60.0),
        ("DDS vs reference integrator", dds_vs_oracle, 300.0),
        ("bridge round trip", bridge, 60.0),
        ("path integral", path_integral, 120.0),
        ("cortege Born rule", born_rule, 30.0),
        ("decoherence monotonicity", decoherence, 300.0),
        ("exact conservation and determinism", conservation, 120.0),
    ];
    let mut failed = 0;
    for (k, (name, f, budget)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = f();
        let secs = t.elapsed().as_secs_f64();
        let pass = o.pass && secs < *budget;
        if !pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {}: {} — {} [{secs:.1} s, budget {budget:.0} s]",
            k + 1,
            if pass { "PASS" } else { "FAIL" },
            name,
            o.detail
        );
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
