use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::PathBuf;

pub const EXPERIMENTS: [(&str, &str, &str); 9] = [
    ("dds-sho", "dds", "dynamical diffusion in a harmonic well against the reference integrator"),
    ("oracle-sho", "oracle", "Crank–Nicolson norm, stationarity and free spreading checks"),
    ("dmc-sho", "dmc", "diffusion Monte Carlo ground state of the harmonic oscillator"),
    ("bridge-roundtrip", "bridge", "wave → swarm → wave reconstruction of a boosted Gaussian"),
    ("pathint-kernel", "pathint", "free kernel modulus and Gaussian integrals"),
    ("pathint-packet", "pathint", "wave-swarm free packet and slit widening"),
    ("cortege-born", "cortege", "joint cell statistics of paired two-particle swarms"),
    ("cortege-decoherence", "decoherence", "two-particle cortege net against the product of exact evolutions"),
    ("chsh-assembly", "qtoy", "CHSH sampling and the assembly game"),
];

/// Section that bare `--key value` flags address for an experiment.
pub fn home_section(experiment: &str) -> Option<&'static str> {
    EXPERIMENTS.iter().find(|e| e.0 == experiment).map(|e| e.1)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: String,
    pub seed: u64,
    /// Output directory; falls back to $SWARMLAB_OUT, then ./swarmlab-out/<experiment>.
    pub output: Option<PathBuf>,
    /// Recording interval in steps; 0 keeps each experiment's default.
    pub snapshot_every: u64,
    pub units: Units,
    pub dds: DdsSection,
    pub oracle: OracleSection,
    pub dmc: DmcSection,
    pub bridge: BridgeSection,
    pub pathint: PathintSection,
    pub cortege: CortegeSection,
    pub decoherence: DecoherenceSection,
    pub qtoy: QtoySection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Units {
    pub hbar: f64,
    pub mass: f64,
}

impl Default for Units {
    fn default() -> Self {
        Self { hbar: 1.0, mass: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DdsSection {
    pub cells: usize,
    pub dx: f64,
    pub omega: f64,
    pub n: usize,
    pub steps: u64,
    pub stationary_ratio: f64,
    pub ramp_steps: u64,
}

impl Default for DdsSection {
    fn default() -> Self {
        Self { cells: 64, dx: 0.25, omega: 1.0, n: 200_000, steps: 1000, stationary_ratio: 0.2, ramp_steps: 5 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleSection {
    pub cells: usize,
    pub dx: f64,
    pub omega: f64,
    pub dt: f64,
    pub steps: usize,
    /// Initial width of the free packet.
    pub sigma: f64,
}

impl Default for OracleSection {
    fn default() -> Self {
        Self { cells: 256, dx: 0.0625, omega: 1.0, dt: 0.002, steps: 1000, sigma: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DmcSection {
    pub omega: f64,
    pub walkers: usize,
    pub steps: usize,
    pub jump_length: f64,
    pub jump_probability: f64,
    pub gain: f64,
    /// Histogram starts after max(this, detected burn-in).
    pub burn_in: usize,
    pub block: usize,
    pub start: [f64; 2],
    pub histogram: [f64; 2],
    pub bins: usize,
}

impl Default for DmcSection {
    fn default() -> Self {
        Self {
            omega: 1.0,
            walkers: 10_000,
            steps: 10_000,
            jump_length: 0.1,
            jump_probability: 0.25,
            gain: 0.1,
            burn_in: 1000,
            block: 250,
            start: [-2.0, 2.0],
            histogram: [-5.0, 5.0],
            bins: 100,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BridgeSection {
    pub cells: usize,
    pub dx: f64,
    pub sigma: f64,
    pub k0: f64,
    pub c: f64,
    pub n: usize,
    pub arcsin: bool,
    /// Also run closed-contour residuals on a 2D companion lattice.
    pub contours: bool,
}

impl Default for BridgeSection {
    fn default() -> Self {
        Self { cells: 64, dx: 0.25, sigma: 1.5, k0: 2.0, c: 4.0, n: 1_000_000, arcsin: false, contours: true }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathintSection {
    pub kernel_time: f64,
    pub kernel_extent: f64,
    pub kernel_points: usize,
    pub epsilons: Vec<f64>,
    pub samples: usize,
    pub velocity_fraction: f64,
    pub taper_start: f64,
    pub packet_cells: usize,
    pub packet_dx: f64,
    pub packet_sigma: f64,
    pub packet_eps: f64,
    pub packet_steps: u64,
    pub slit_half_width: f64,
    pub slit_cells: usize,
    pub slit_dx: f64,
    pub slit_eps: f64,
    pub slit_steps: u64,
    pub far_field: f64,
}

impl Default for PathintSection {
    fn default() -> Self {
        Self {
            kernel_time: 1.0,
            kernel_extent: 5.0,
            kernel_points: 101,
            epsilons: vec![0.01, 0.1, 1.0],
            samples: 100_000,
            velocity_fraction: 0.75,
            taper_start: 0.3,
            packet_cells: 192,
            packet_dx: 0.0625,
            packet_sigma: 1.0,
            packet_eps: 0.04,
            packet_steps: 50,
            slit_half_width: std::f64::consts::SQRT_2,
            slit_cells: 384,
            slit_dx: 0.125,
            slit_eps: 0.16,
            slit_steps: 50,
            far_field: 4.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PairState {
    Entangled,
    Product,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CortegeSection {
    pub n: usize,
    pub state: PairState,
    /// Real amplitudes over the two-cell joint basis, particle 0 fastest.
    pub lambda: [f64; 4],
    /// Upper-cell probability of each particle in the product state.
    pub upper: [f64; 2],
    /// Largest accepted deviation in multinomial standard errors.
    pub sigmas: f64,
}

impl Default for CortegeSection {
    fn default() -> Self {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        Self { n: 100_000, state: PairState::Entangled, lambda: [h, 0.0, 0.0, h], upper: [0.75, 0.5], sigmas: 4.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecoherenceSection {
    pub cells: usize,
    pub dx: f64,
    pub omega: f64,
    pub n: usize,
    pub steps: u64,
    pub stationary_ratio: f64,
    pub ramp_steps: u64,
    /// Seeds per size in the n versus n/2 comparison; 0 skips it (`--check` uses at least 5).
    pub trend_seeds: u64,
}

impl Default for DecoherenceSection {
    fn default() -> Self {
        Self { cells: 32, dx: 0.5, omega: 1.0, n: 100_000, steps: 100, stationary_ratio: 0.2, ramp_steps: 5, trend_seeds: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StrategyName {
    Epr,
    Classical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Singlet,
    PhiPlus,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QtoySection {
    pub strategy: StrategyName,
    pub source: Source,
    pub shots: u64,
    pub p_a: [f64; 2],
    /// Classical answer table [site][type]; the best of the sixteen when absent.
    pub table: Option<[[i8; 2]; 2]>,
}

impl Default for QtoySection {
    fn default() -> Self {
        Self { strategy: StrategyName::Epr, source: Source::Singlet, shots: 100_000, p_a: [0.5, 0.5], table: None }
    }
}

#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

fn err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// Values that are not valid TOML are taken as bare strings, so `--strategy epr` works.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").unwrap(),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

fn set_path(table: &mut toml::Table, path: &[&str], value: toml::Value) -> Result<(), ConfigError> {
    let (last, parents) = path.split_last().unwrap();
    let mut t = table;
    for p in parents {
        let entry = t.entry(p.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        t = entry.as_table_mut().ok_or_else(|| err(format!("`{p}` is not a section")))?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}

/// Split `--key=value`, `--key value` and bare `--flag` tokens into pairs.
pub fn split_flags(args: &[String]) -> Result<Vec<(String, String)>, ConfigError> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < args.len() {
        let a = &args[i];
        let body = a.strip_prefix("--").ok_or_else(|| err(format!("unexpected argument `{a}`")))?;
        if let Some((k, v)) = body.split_once('=') {
            out.push((k.to_string(), v.to_string()));
            i += 1;
        } else if i + 1 < args.len() && !args[i + 1].starts_with("--") {
            out.push((body.to_string(), args[i + 1].clone()));
            i += 2;
        } else {
            out.push((body.to_string(), "true".to_string()));
            i += 1;
        }
    }
    Ok(out)
}

/// Build the resolved config: file, then experiment name, then overrides in order.
pub fn resolve(file: Option<&str>, experiment: Option<&str>, overrides: &[(String, String)]) -> Result<RunConfig, ConfigError> {
    let mut table = match file {
        Some(text) => toml::from_str::<toml::Table>(text).map_err(|e| err(format!("config: {e}")))?,
        None => toml::Table::new(),
    };
    if let Some(name) = experiment {
        match table.get("experiment").and_then(|v| v.as_str()) {
            Some(existing) if existing != name => {
                return Err(err(format!("config names experiment `{existing}` but `{name}` was requested")))
            }
            _ => {
                table.insert("experiment".into(), toml::Value::String(name.into()));
            }
        }
    }
    let name = table.get("experiment").and_then(|v| v.as_str()).map(str::to_string).ok_or_else(|| err("no experiment given"))?;
    let home = home_section(&name).ok_or_else(|| err(format!("unknown experiment `{name}` (see list-experiments)")))?;
    for (key, raw) in overrides {
        let key = match key.replace('-', "_") {
            k if k == "out" => "output".to_string(),
            k => k,
        };
        let path: Vec<&str> = key.split('.').collect();
        let top = ["seed", "output", "snapshot_every", "experiment"];
        let path = if path.len() == 1 && !top.contains(&path[0]) { vec![home, path[0]] } else { path };
        let value = if path == ["output"] { toml::Value::String(raw.clone()) } else { parse_value(raw) };
        set_path(&mut table, &path, value)?;
    }
    let cfg: RunConfig = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| err(format!("config: {}", e.message())))?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = |name: &str, v: f64| if v > 0.0 && v.is_finite() { Ok(()) } else { Err(err(format!("{name} must be positive"))) };
        positive("units.hbar", self.units.hbar)?;
        positive("units.mass", self.units.mass)?;
        let ratio = |name: &str, v: f64| if (0.0..=1.0).contains(&v) { Ok(()) } else { Err(err(format!("{name} must lie in [0, 1]"))) };
        match self.experiment.as_str() {
            "dds-sho" => {
                positive("dds.dx", self.dds.dx)?;
                ratio("dds.stationary_ratio", self.dds.stationary_ratio)?;
            }
            "oracle-sho" => {
                positive("oracle.dx", self.oracle.dx)?;
                positive("oracle.dt", self.oracle.dt)?;
            }
            "dmc-sho" => {
                positive("dmc.omega", self.dmc.omega)?;
                ratio("dmc.jump_probability", self.dmc.jump_probability)?;
                if self.dmc.histogram[0] >= self.dmc.histogram[1] || self.dmc.start[0] >= self.dmc.start[1] {
                    return Err(err("dmc ranges must be increasing"));
                }
            }
            "cortege-born" => {
                ratio("cortege.upper[0]", self.cortege.upper[0])?;
                ratio("cortege.upper[1]", self.cortege.upper[1])?;
            }
            "chsh-assembly" => {
                ratio("qtoy.p_a[0]", self.qtoy.p_a[0])?;
                ratio("qtoy.p_a[1]", self.qtoy.p_a[1])?;
                if let Some(t) = self.qtoy.table {
                    if t.iter().flatten().any(|v| v.abs() != 1) {
                        return Err(err("qtoy.table entries must be ±1"));
                    }
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// Everything that can change results; the output location is left out.
    pub fn canonical(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        toml::to_string(&c).expect("config serializes")
    }

    pub fn hash(&self) -> String {
        let d = Sha256::digest(self.canonical().as_bytes());
        d.iter().map(|b| format!("{b:02x}")).collect()
    }
}
