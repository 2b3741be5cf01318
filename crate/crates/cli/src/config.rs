//! Command-line surface, key=value config files and config echo.

use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(
    name = "ckn",
    version,
    about = "Weighted CKN numerical laboratory",
    args_override_self = true
)]
pub struct Cli {
    /// key=value file with default flag values; explicit flags win.
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct Output {
    #[arg(long, value_enum, default_value_t = Format::Json)]
    pub format: Format,
    /// Write to this file instead of stdout.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct Point {
    #[arg(long)]
    pub d: u32,
    #[arg(long, default_value_t = 0.0)]
    pub gamma: f64,
    #[arg(long)]
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Subcommand, Serialize)]
#[serde(tag = "subcommand", rename_all = "kebab-case")]
pub enum Command {
    /// Derived exponents and constants of (d, γ, p).
    Params(ParamsArgs),
    /// Samples an explicit optimizer on a geometric grid.
    Profile(ProfileArgs),
    /// Ground state by shooting in the flat variable.
    Shoot(ShootArgs),
    /// Radial best constant by constrained minimization.
    Minimize(MinimizeArgs),
    /// Hardy–Poincaré gap, or a sector eigenvalue when --ell is given.
    Spectrum(SpectrumArgs),
    /// Entropy decay along the weighted Fokker–Planck flow.
    Flow(FlowArgs),
    /// Selection integrals and sampled curves at γ = 0.
    Selection(SelectionArgs),
    /// Parallel γ-sweep of the minimizer or of a spectral sector.
    Sweep(SweepArgs),
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Params(_) => "params",
            Command::Profile(_) => "profile",
            Command::Shoot(_) => "shoot",
            Command::Minimize(_) => "minimize",
            Command::Spectrum(_) => "spectrum",
            Command::Flow(_) => "flow",
            Command::Selection(_) => "selection",
            Command::Sweep(_) => "sweep",
        }
    }

    pub fn output(&self) -> &Output {
        match self {
            Command::Params(a) => &a.out,
            Command::Profile(a) => &a.out,
            Command::Shoot(a) => &a.out,
            Command::Minimize(a) => &a.out,
            Command::Spectrum(a) => &a.out,
            Command::Flow(a) => &a.out,
            Command::Selection(a) => &a.out,
            Command::Sweep(a) => &a.out,
        }
    }

    pub fn schema(&self) -> String {
        format!("ckn.{}.v{SCHEMA_VERSION}", self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Args, Serialize)]
pub struct ParamsArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub point: Point,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileKind {
    /// `(1 + r^{2−γ})^{−1/(p−1)}`.
    WStar,
    /// The Euler–Lagrange normalized optimizer.
    WGammaStar,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ProfileArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub point: Point,
    #[arg(long, value_enum, default_value_t = ProfileKind::WGammaStar)]
    pub kind: ProfileKind,
    #[arg(long, default_value_t = 1e-4)]
    pub r_min: f64,
    #[arg(long, default_value_t = 1e4)]
    pub r_max: f64,
    #[arg(long, default_value_t = 64)]
    pub per_decade: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: Output,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct ShootArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub point: Point,
    /// Relative bisection tolerance on v0.
    #[arg(long, default_value_t = 1e-8)]
    pub tol: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitKind {
    Barenblatt,
    Gaussian,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct MinimizeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub point: Point,
    /// Number of grid intervals on [r-min, r-max].
    #[arg(long, default_value_t = 512)]
    pub grid: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub r_min: f64,
    #[arg(long, default_value_t = 1e4)]
    pub r_max: f64,
    /// Largest accepted two-grid discrepancy of J.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[arg(long, value_enum, default_value_t = InitKind::Barenblatt)]
    pub init: InitKind,
    /// Amplitude factor of the Barenblatt start.
    #[arg(long, default_value_t = 1.2)]
    pub init_factor: f64,
    #[arg(long, default_value_t = 1.0)]
    pub mass: f64,
    #[arg(long, default_value_t = 500)]
    pub max_iter: usize,
    /// Repeat the solve on the doubled grid.
    #[arg(long, default_value_t = true, action = clap::ArgAction::Set)]
    pub richardson: bool,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: Output,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SpectralGridArgs {
    #[arg(long, default_value_t = 4097)]
    pub nodes: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub r_min: f64,
    #[arg(long, default_value_t = 1e4)]
    pub r_max: f64,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SpectrumArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub point: Point,
    /// Spherical-harmonic sector of the transported operator.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ell: Option<u32>,
    #[command(flatten)]
    #[serde(flatten)]
    pub grid: SpectralGridArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: Output,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct FlowArgs {
    #[arg(long)]
    pub d: u32,
    #[arg(long, default_value_t = 0.0)]
    pub gamma: f64,
    #[arg(long)]
    pub m: f64,
    /// Final time.
    #[arg(long = "T", default_value_t = 3.0)]
    #[serde(rename = "T")]
    pub t_final: f64,
    #[arg(long, default_value_t = 400)]
    pub cells: usize,
    #[arg(long, default_value_t = 100.0)]
    pub r_max: f64,
    /// Radius below which the mesh is uniform.
    #[arg(long, default_value_t = 0.5)]
    pub core: f64,
    #[arg(long, default_value_t = 1.0)]
    pub dt_max: f64,
    /// Amplitude ε of the initial datum 𝔅(1 + ε cos log r).
    #[arg(long, default_value_t = 0.1)]
    pub epsilon: f64,
    /// Constant C of the unperturbed initial profile.
    #[arg(long, default_value_t = 1.0)]
    pub c: f64,
    /// Profile file (JSON or CSV) used as initial datum instead.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: Output,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SelectionArgs {
    #[arg(long)]
    pub d: u32,
    #[arg(long)]
    pub p: f64,
    /// Sample points of the curves on [1e-2, 1e2].
    #[arg(long, default_value_t = 17)]
    pub samples: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepKind {
    Minimize,
    Spectral,
}

#[derive(Debug, Clone, PartialEq, Args, Serialize)]
#[serde(rename_all = "kebab-case")]
pub struct SweepArgs {
    #[arg(long, value_enum, default_value_t = SweepKind::Spectral)]
    pub kind: SweepKind,
    #[arg(long)]
    pub d: u32,
    #[arg(long)]
    pub p: f64,
    /// Explicit γ values; overrides the range flags.
    #[arg(long, value_delimiter = ',')]
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub gammas: Vec<f64>,
    #[arg(long, default_value_t = 0.0)]
    pub gamma_min: f64,
    #[arg(long, default_value_t = 0.1)]
    pub gamma_max: f64,
    #[arg(long, default_value_t = 20)]
    pub points: usize,
    #[arg(long, default_value_t = 1)]
    pub ell: u32,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    pub workers: usize,
    /// Directory for the per-point JSON files.
    #[arg(long)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    pub spectral: SpectralGridArgs,
    /// Grid intervals of each minimization.
    #[arg(long, default_value_t = 512)]
    pub grid: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    #[command(flatten)]
    #[serde(flatten)]
    pub out: Output,
}

impl SweepArgs {
    pub fn gamma_values(&self) -> Vec<f64> {
        if !self.gammas.is_empty() {
            return self.gammas.clone();
        }
        if self.points < 2 {
            return vec![self.gamma_min];
        }
        let h = (self.gamma_max - self.gamma_min) / (self.points - 1) as f64;
        (0..self.points)
            .map(|i| self.gamma_min + h * i as f64)
            .collect()
    }
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_config_file(text: &str) -> Result<Vec<(String, String)>, String> {
    let mut pairs = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| format!("config line {}: expected key=value", no + 1))?;
        pairs.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(pairs)
}

const SUBCOMMANDS: [&str; 8] = [
    "params",
    "profile",
    "shoot",
    "minimize",
    "spectrum",
    "flow",
    "selection",
    "sweep",
];

/// Splices the pairs of every `--config` file in front of the explicit flags.
pub fn expand_args(raw: Vec<String>) -> Result<Vec<String>, String> {
    let mut rest = Vec::new();
    let mut files = Vec::new();
    let mut it = raw.into_iter();
    let program = it.next().unwrap_or_else(|| "ckn".into());
    while let Some(arg) = it.next() {
        if arg == "--config" {
            files.push(it.next().ok_or("--config needs a path")?);
        } else if let Some(path) = arg.strip_prefix("--config=") {
            files.push(path.to_string());
        } else {
            rest.push(arg);
        }
    }
    if files.is_empty() {
        let mut out = vec![program];
        out.extend(rest);
        return Ok(out);
    }
    let mut sub = None;
    let mut flags = Vec::new();
    for path in files {
        let text = std::fs::read_to_string(&path).map_err(|e| format!("config {path}: {e}"))?;
        for (k, v) in parse_config_file(&text)? {
            match k.as_str() {
                "subcommand" => sub = Some(v),
                "schema" | "version" => {}
                _ => flags.push(format!("--{k}={v}")),
            }
        }
    }
    let pos = rest.iter().position(|a| SUBCOMMANDS.contains(&a.as_str()));
    let mut out = vec![program];
    match pos {
        Some(i) => {
            out.extend(rest[..=i].iter().cloned());
            out.extend(flags);
            out.extend(rest[i + 1..].iter().cloned());
        }
        None => {
            out.push(sub.ok_or("no subcommand on the command line or in the config file")?);
            out.extend(flags);
            out.extend(rest);
        }
    }
    Ok(out)
}

/// Resolved configuration as sorted `key=value` pairs, `subcommand` first.
pub fn config_pairs(cmd: &Command) -> Vec<(String, String)> {
    let value = serde_json::to_value(cmd).expect("config serializes");
    let obj = value.as_object().expect("config is an object");
    let mut out = vec![("subcommand".to_string(), cmd.name().to_string())];
    for (k, v) in obj {
        if k == "subcommand" {
            continue;
        }
        let text = match v {
            serde_json::Value::Null => continue,
            serde_json::Value::String(s) => s.clone(),
            serde_json::Value::Array(items) => items
                .iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(","),
            other => other.to_string(),
        };
        out.push((k.clone(), text));
    }
    out
}

pub fn parse_from(args: Vec<String>) -> Result<Cli, clap::Error> {
    Cli::try_parse_from(args)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Command {
        let raw = args.iter().map(|s| s.to_string()).collect();
        parse_from(expand_args(raw).unwrap()).unwrap().command
    }

    fn header_round_trip(cmd: &Command) -> Command {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("echo.cfg");
        let text: String = config_pairs(cmd)
            .iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect();
        std::fs::write(&path, text).unwrap();
        parse(&["ckn", "--config", path.to_str().unwrap()])
    }

    #[test]
    fn config_echo_parses_back() {
        for args in [
            vec!["ckn", "params", "--d", "3", "--gamma", "0.5", "--p", "2"],
            vec![
                "ckn", "flow", "--d", "3", "--m", "0.75", "--T", "0.5", "--format", "csv",
            ],
            vec![
                "ckn",
                "sweep",
                "--d",
                "3",
                "--p",
                "2",
                "--gammas",
                "0,0.05,0.1",
                "--workers",
                "2",
            ],
            vec![
                "ckn",
                "minimize",
                "--d",
                "3",
                "--p",
                "2",
                "--richardson",
                "false",
            ],
            vec![
                "ckn", "spectrum", "--d", "3", "--p", "2", "--ell", "1", "--nodes", "801",
            ],
        ] {
            let cmd = parse(&args);
            assert_eq!(header_round_trip(&cmd), cmd, "{args:?}");
        }
    }

    #[test]
    fn explicit_flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(
            &path,
            "# comment\nsubcommand=params\nd=4\np=1.5\ngamma=0.25\n",
        )
        .unwrap();
        let p = path.to_str().unwrap();
        match parse(&["ckn", "--config", p, "--gamma", "0.5"]) {
            Command::Params(a) => {
                assert_eq!(a.point.d, 4);
                assert_eq!(a.point.gamma, 0.5);
            }
            other => panic!("{other:?}"),
        }
        match parse(&["ckn", "params", "--config", p, "--d", "5"]) {
            Command::Params(a) => assert_eq!((a.point.d, a.point.p), (5, 1.5)),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_config_line() {
        assert!(parse_config_file("d 3").is_err());
        assert_eq!(
            parse_config_file(" d = 3 \n\n").unwrap(),
            vec![("d".into(), "3".into())]
        );
    }

    #[test]
    fn sweep_range() {
        match parse(&[
            "ckn",
            "sweep",
            "--d",
            "3",
            "--p",
            "2",
            "--gamma-max",
            "0.1",
            "--points",
            "3",
        ]) {
            Command::Sweep(a) => {
                let g = a.gamma_values();
                assert_eq!(g.len(), 3);
                assert!((g[1] - 0.05).abs() < 1e-15);
            }
            other => panic!("{other:?}"),
        }
    }
}
