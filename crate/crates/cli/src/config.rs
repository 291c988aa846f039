use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use lnared_core::balance::Method;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "lnared", version, about = "Structured reduction of linear noise approximations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Steady state, drift matrix and matrix-class report.
    Analyze(RunArgs),
    /// Structured reduction of the linearization at steady state.
    Reduce(RunArgs),
    /// Compare full and reduced models from an initial perturbation.
    Validate(RunArgs),
    /// Time-scale ε-sweep.
    Sweep(RunArgs),
}

impl Command {
    pub fn args(&self) -> &RunArgs {
        match self {
            Command::Analyze(a) | Command::Reduce(a) | Command::Validate(a) | Command::Sweep(a) => a,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Command::Analyze(_) => "analyze",
            Command::Reduce(_) => "reduce",
            Command::Validate(_) => "validate",
            Command::Sweep(_) => "sweep",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    StructuredBt,
    StructuredBsp,
    H2,
    Timescale,
}

impl MethodArg {
    pub fn method(self) -> Method {
        match self {
            MethodArg::StructuredBt => Method::StructuredBt,
            MethodArg::StructuredBsp => Method::StructuredBsp,
            MethodArg::H2 => Method::H2,
            MethodArg::Timescale => Method::Timescale,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Model file (JSON).
    #[arg(long)]
    pub model: PathBuf,
    /// Species kept in physical coordinates, comma separated.
    #[arg(long)]
    pub preserve: Option<String>,
    /// Lumped regions: species comma separated, regions separated by `;`.
    #[arg(long)]
    pub lump: Option<String>,
    /// States kept per lumped region, comma separated.
    #[arg(long)]
    pub keep: Option<String>,
    /// Reduction methods (comma separated).
    #[arg(long, value_enum, value_delimiter = ',', default_value = "structured-bsp")]
    pub method: Vec<MethodArg>,
    /// Fast species for the time-scale method (defaults to all lumped species).
    #[arg(long)]
    pub fast: Option<String>,
    /// ε values for the sweep, comma separated.
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.03,0.01,0.003,0.001")]
    pub epsilon: Vec<f64>,
    #[arg(long, default_value_t = 50.0)]
    pub horizon: f64,
    /// Number of grid intervals over the horizon.
    #[arg(long, default_value_t = 2000)]
    pub grid: usize,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    /// Sample paths for the Euler–Maruyama demonstration output.
    #[arg(long, default_value_t = 200)]
    pub paths: usize,
    /// Initial state, comma separated in model species order.
    #[arg(long)]
    pub x0: Option<String>,
    /// Initial state as the steady state under these parameter values, e.g. `ATP=3,GLCo=0.25`.
    #[arg(long)]
    pub x0_params: Option<String>,
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub verbose: bool,
}

/// Validated run configuration; everything that influences output content.
#[derive(Debug, Clone, Serialize)]
pub struct RunConfig {
    pub command: String,
    pub model_sha256: String,
    pub species: Vec<String>,
    pub preserved: Vec<String>,
    pub groups: Vec<Vec<String>>,
    pub keep: Vec<usize>,
    pub methods: Vec<MethodArg>,
    pub fast: Vec<String>,
    pub epsilon: Vec<f64>,
    pub horizon: f64,
    pub grid: usize,
    pub seed: u64,
    pub paths: usize,
    pub x0: Option<Vec<f64>>,
    pub x0_params: Vec<(String, f64)>,
}

fn names(list: &str) -> Vec<String> {
    list.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

fn numbers<T: std::str::FromStr>(list: &str, what: &str) -> Result<Vec<T>, CliError> {
    list.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| CliError::Config(format!("{what}: cannot parse `{s}`"))))
        .collect()
}

impl RunConfig {
    pub fn new(command: &str, args: &RunArgs, species: &[String], model_text: &str) -> Result<Self, CliError> {
        let known = |s: &String| -> Result<(), CliError> {
            if species.contains(s) {
                Ok(())
            } else {
                Err(CliError::Config(format!("unknown species `{s}`")))
            }
        };
        let groups: Vec<Vec<String>> = match &args.lump {
            Some(l) => l.split(';').map(names).filter(|g| !g.is_empty()).collect(),
            None => Vec::new(),
        };
        let lumped: Vec<&String> = groups.iter().flatten().collect();
        let preserved = match &args.preserve {
            Some(p) => names(p),
            None => species.iter().filter(|s| !lumped.contains(s)).cloned().collect(),
        };
        let mut seen: Vec<&String> = Vec::new();
        for s in preserved.iter().chain(lumped.iter().copied()) {
            known(s)?;
            if seen.contains(&s) {
                return Err(CliError::Config(format!("species `{s}` appears more than once")));
            }
            seen.push(s);
        }
        if seen.len() != species.len() {
            let missing: Vec<&str> = species.iter().filter(|s| !seen.contains(s)).map(String::as_str).collect();
            return Err(CliError::Config(format!(
                "preserved and lumped species must cover the model; missing {}",
                missing.join(",")
            )));
        }
        let keep: Vec<usize> = match &args.keep {
            Some(k) => numbers(k, "--keep")?,
            None => Vec::new(),
        };
        let needs_keep = matches!(command, "reduce" | "validate")
            && args.method.iter().any(|m| *m != MethodArg::Timescale);
        if needs_keep && keep.len() != groups.len() {
            return Err(CliError::Config(format!("{} keep counts for {} lumped regions", keep.len(), groups.len())));
        }
        for (k, g) in keep.iter().zip(&groups) {
            if *k > g.len() {
                return Err(CliError::Config(format!("keep count {k} exceeds region size {}", g.len())));
            }
        }
        let fast = match &args.fast {
            Some(f) => names(f),
            None => lumped.iter().map(|s| s.to_string()).collect(),
        };
        for s in &fast {
            known(s)?;
        }
        if command == "sweep" && fast.is_empty() {
            return Err(CliError::Config("sweep needs fast species (--fast or --lump)".into()));
        }
        if args.epsilon.iter().any(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(CliError::Config("ε values must be positive".into()));
        }
        if !(args.horizon > 0.0 && args.horizon.is_finite()) {
            return Err(CliError::Config("horizon must be positive".into()));
        }
        if args.grid == 0 || args.paths == 0 {
            return Err(CliError::Config("grid and paths must be positive".into()));
        }
        if args.method.is_empty() {
            return Err(CliError::Config("at least one method is required".into()));
        }
        let x0 = match &args.x0 {
            Some(s) => {
                let v: Vec<f64> = numbers(s, "--x0")?;
                if v.len() != species.len() {
                    return Err(CliError::Config(format!("--x0 has {} entries for {} species", v.len(), species.len())));
                }
                Some(v)
            }
            None => None,
        };
        let mut x0_params = Vec::new();
        if let Some(s) = &args.x0_params {
            for item in s.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                let (k, v) = item
                    .split_once('=')
                    .ok_or_else(|| CliError::Config(format!("--x0-params: expected name=value, got `{item}`")))?;
                let v: f64 = v.trim().parse().map_err(|_| CliError::Config(format!("--x0-params: bad value in `{item}`")))?;
                x0_params.push((k.trim().to_string(), v));
            }
        }
        if x0.is_some() && !x0_params.is_empty() {
            return Err(CliError::Config("--x0 and --x0-params are mutually exclusive".into()));
        }
        Ok(RunConfig {
            command: command.to_string(),
            model_sha256: hex(&Sha256::digest(model_text.as_bytes())),
            species: species.to_vec(),
            preserved,
            groups,
            keep,
            methods: args.method.clone(),
            fast,
            epsilon: args.epsilon.clone(),
            horizon: args.horizon,
            grid: args.grid,
            seed: args.seed,
            paths: args.paths,
            x0,
            x0_params,
        })
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }

    /// Model species indices in reduction order: preserved first, then each
    /// lumped region contiguously.
    pub fn permutation(&self) -> Vec<usize> {
        self.preserved
            .iter()
            .chain(self.groups.iter().flatten())
            .map(|s| self.species.iter().position(|t| t == s).expect("validated"))
            .collect()
    }

    pub fn lumped_label(&self) -> String {
        self.groups.iter().map(|g| format!("{{{}}}", g.join(","))).collect::<Vec<_>>().join(";")
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}
