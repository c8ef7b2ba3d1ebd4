//! `granular` command line: goal generation, benchmark runs, significance
//! tests, map rendering and plan export.
//!
//! Every flag can also come from a `--config` file with one `key = value`
//! per line (keys are the long flag names). Flags on the command line win
//! over the file, the file wins over built-in defaults.

use std::collections::HashMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::baselines::{plan_bcpp, write_plan_csv, Approach};
use crate::env::{EnvConfig, ObservationMode};
use crate::error::Error;
use crate::evaluation::{format_summary, mann_whitney_u, read_column, run_benchmark, stars, summarize, write_results, Stat};
use crate::goals::{gen_goal, goal_path, load_goal, load_goal_dir, parse_goal, save_goal, GridSpec, ShapeFamily};
use crate::heightfield::{parse_ghm, write_pgm16, HeightMap};
use crate::world::ContactModel;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "granular", version, about = "Granular media shaping benchmark")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate goal height maps into <out-dir>/<family>/ plus a manifest.
    GenGoals(GenGoalsArgs),
    /// Run a baseline over a goal directory and write a results CSV.
    Run(RunArgs),
    /// Compare one metric of two results CSVs with a Mann-Whitney U test.
    Eval(EvalArgs),
    /// Render a GHM or goal file as a 16-bit PGM.
    Render(RenderArgs),
    /// Export the B-CPP waypoint plan of a goal as CSV.
    Plan(PlanArgs),
}

#[derive(Debug, Args)]
pub struct GenGoalsArgs {
    /// Comma-separated families: rectangle, l_shape, polygon [default: all three]
    #[arg(long)]
    pub families: Option<String>,
    /// Goals per family, at least 1 [default: 100]
    #[arg(long)]
    pub per_family: Option<usize>,
    /// Base seed; goal i of a family uses seed + i [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory [default: goals]
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Key-value config file
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// rand or bcpp (required)
    #[arg(long)]
    pub policy: Option<String>,
    /// Goal directory [default: goals]
    #[arg(long)]
    pub goals: Option<PathBuf>,
    /// Number of episodes [default: 100]
    #[arg(long)]
    pub episodes: Option<usize>,
    /// Observation mode, priv or recon [default: priv]
    #[arg(long)]
    pub obs: Option<String>,
    /// Base seed; episode i uses seed + i [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Results CSV path [default: results.csv]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// RAND episode length [default: 40]
    #[arg(long)]
    pub steps: Option<usize>,
    /// Angle of repose in degrees [default: 35]
    #[arg(long)]
    pub angle_repose: Option<f64>,
    /// Contact model, bow or ring [default: bow]
    #[arg(long)]
    pub contact: Option<String>,
    /// Depth noise standard deviation in reconstructed mode, meters [default: 0]
    #[arg(long)]
    pub depth_noise: Option<f64>,
    /// Key-value config file
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// First results CSV (required)
    #[arg(long)]
    pub a: Option<PathBuf>,
    /// Second results CSV (required)
    #[arg(long)]
    pub b: Option<PathBuf>,
    /// Column to compare [default: height_diff_mm]
    #[arg(long)]
    pub metric: Option<String>,
    /// Key-value config file
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// GHM or goal file (required)
    #[arg(long)]
    pub map: Option<PathBuf>,
    /// Output image path (required)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Image format; only pgm [default: pgm]
    #[arg(long)]
    pub format: Option<String>,
    /// Key-value config file
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlanArgs {
    /// Goal file (required)
    #[arg(long)]
    pub goal: Option<PathBuf>,
    /// Output CSV path [default: plan.csv]
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Tool start x,y,z in meters [default: workspace center, 0.10 m up]
    #[arg(long)]
    pub start: Option<String>,
    /// Key-value config file
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Runtime(e) => write!(f, "error: {e}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Runtime(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// `key = value` pairs from a config file.
#[derive(Debug, Default)]
pub struct ConfigFile {
    values: HashMap<String, String>,
}

impl ConfigFile {
    pub fn parse(text: &str, allowed: &[&str]) -> CliResult<Self> {
        let mut values = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (k, v) = t
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`", i + 1)))?;
            let key = k.trim().replace('_', "-");
            if !allowed.contains(&key.as_str()) {
                return Err(CliError::Usage(format!("config line {}: unknown key `{key}`", i + 1)));
            }
            values.insert(key, v.trim().to_string());
        }
        Ok(Self { values })
    }

    fn load(path: Option<&Path>, allowed: &[&str]) -> CliResult<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|e| CliError::Runtime(Error::io(p, e)))?;
                Self::parse(&text, allowed)
            }
        }
    }

    /// Command-line value, else file value, else `None`.
    fn pick<T: FromStr>(&self, cli: Option<T>, key: &str) -> CliResult<Option<T>> {
        if cli.is_some() {
            return Ok(cli);
        }
        self.values
            .get(key)
            .map(|v| {
                v.parse::<T>()
                    .map_err(|_| CliError::Usage(format!("invalid value `{v}` for `{key}`")))
            })
            .transpose()
    }

    fn get<T: FromStr>(&self, cli: Option<T>, key: &str, default: T) -> CliResult<T> {
        Ok(self.pick(cli, key)?.unwrap_or(default))
    }

    fn require<T: FromStr>(&self, cli: Option<T>, key: &str) -> CliResult<T> {
        self.pick(cli, key)?
            .ok_or_else(|| CliError::Usage(format!("missing required `--{key}`")))
    }
}

fn parse_with<T>(value: &str, what: &str, f: impl Fn(&str) -> crate::Result<T>) -> CliResult<T> {
    f(value).map_err(|e| CliError::Usage(format!("{what}: {e}")))
}

fn gen_goals(args: GenGoalsArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = ConfigFile::load(args.config.as_deref(), &["families", "per-family", "seed", "out-dir"])?;
    let families = cfg.get(args.families, "families", "rectangle,l_shape,polygon".to_string())?;
    let per_family = cfg.get(args.per_family, "per-family", 100)?;
    let seed = cfg.get(args.seed, "seed", 0u64)?;
    let out_dir = cfg.get(args.out_dir, "out-dir", PathBuf::from("goals"))?;
    if per_family == 0 {
        return Err(CliError::Usage("--per-family must be at least 1".into()));
    }
    let families: Vec<ShapeFamily> = families
        .split(',')
        .map(|f| parse_with(f.trim(), "--families", |s| s.parse::<ShapeFamily>()))
        .collect::<CliResult<_>>()?;

    let mut manifest = String::from("id,family,seed,path\n");
    for family in families {
        let dir = out_dir.join(family.as_str());
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for i in 0..per_family {
            let goal = gen_goal(family, seed.wrapping_add(i as u64), GridSpec::default(), 0.06)?;
            let path = goal_path(&out_dir, &goal);
            save_goal(&goal, &path)?;
            let rel = path.strip_prefix(&out_dir).unwrap_or(&path);
            manifest.push_str(&format!("{},{},{},{}\n", goal.id, family, goal.seed, rel.display()));
        }
    }
    let manifest_path = out_dir.join("manifest.csv");
    std::fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    let _ = writeln!(out, "wrote goals and {}", manifest_path.display());
    Ok(())
}

fn run(args: RunArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = ConfigFile::load(
        args.config.as_deref(),
        &[
            "policy",
            "goals",
            "episodes",
            "obs",
            "seed",
            "out",
            "steps",
            "angle-repose",
            "contact",
            "depth-noise",
        ],
    )?;
    let policy: String = cfg.require(args.policy, "policy")?;
    let approach = parse_with(&policy, "--policy", |s| s.parse::<Approach>())?;
    let goals_dir = cfg.get(args.goals, "goals", PathBuf::from("goals"))?;
    let episodes = cfg.get(args.episodes, "episodes", 100usize)?;
    let obs = cfg.get(args.obs, "obs", "priv".to_string())?;
    let mode = parse_with(&obs, "--obs", |s| s.parse::<ObservationMode>())?;
    let seed = cfg.get(args.seed, "seed", 0u64)?;
    let out_path = cfg.get(args.out, "out", PathBuf::from("results.csv"))?;
    let steps = cfg.get(args.steps, "steps", 40usize)?;
    let angle = cfg.get(args.angle_repose, "angle-repose", 35.0f64)?;
    let contact = cfg.get(args.contact, "contact", "bow".to_string())?;
    let depth_noise = cfg.get(args.depth_noise, "depth-noise", 0.0f64)?;
    if episodes == 0 {
        return Err(CliError::Usage("--episodes must be at least 1".into()));
    }
    if steps == 0 {
        return Err(CliError::Usage("--steps must be at least 1".into()));
    }

    let mut env_cfg = EnvConfig {
        max_steps: Some(steps),
        observation_mode: mode,
        depth_noise,
        ..EnvConfig::default()
    };
    env_cfg.repose.angle_repose = angle.to_radians();
    env_cfg.workspace.contact = match contact.as_str() {
        "bow" => ContactModel::BowWave,
        "ring" => ContactModel::Ring,
        other => return Err(CliError::Usage(format!("unknown contact model `{other}` (expected bow or ring)"))),
    };
    env_cfg
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;

    let goals = load_goal_dir(&goals_dir)?;
    let results = run_benchmark(approach, &goals, episodes, seed, &env_cfg)?;
    write_results(&out_path, &results, mode)?;
    let _ = write!(out, "{}", format_summary(&[(approach.as_str(), summarize(&results))]));
    if mode == ObservationMode::Reconstructed {
        let errs: Vec<f64> = results.iter().filter_map(|r| r.recon_error).map(|e| e * 1000.0).collect();
        let s = Stat::of(&errs);
        let _ = writeln!(out, "{:<20}{:>16}", "Recon error [mm]", format!("{:.2} ± {:.2}", s.mean, s.std));
    }
    let _ = writeln!(out, "results: {}", out_path.display());
    Ok(())
}

fn eval(args: EvalArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = ConfigFile::load(args.config.as_deref(), &["a", "b", "metric"])?;
    let a: PathBuf = cfg.require(args.a, "a")?;
    let b: PathBuf = cfg.require(args.b, "b")?;
    let metric = cfg.get(args.metric, "metric", "height_diff_mm".to_string())?;
    let xa = read_column(&a, &metric)?;
    let xb = read_column(&b, &metric)?;
    let test = mann_whitney_u(&xa, &xb)?;
    let (sa, sb) = (Stat::of(&xa), Stat::of(&xb));
    let _ = writeln!(out, "metric: {metric}");
    let _ = writeln!(out, "a: {} (n = {}) mean {:.3} std {:.3}", a.display(), xa.len(), sa.mean, sa.std);
    let _ = writeln!(out, "b: {} (n = {}) mean {:.3} std {:.3}", b.display(), xb.len(), sb.mean, sb.std);
    let mark = stars(test.p);
    let _ = writeln!(
        out,
        "U = {}, p = {:.6e} ({}){}{}",
        test.u,
        test.p,
        if test.exact { "exact" } else { "normal approximation" },
        if mark.is_empty() { String::new() } else { format!(" {mark}") },
        if test.degenerate { " [degenerate: constant samples]" } else { "" }
    );
    Ok(())
}

/// Reads a GHM file, or the map part of a goal file.
fn read_map(path: &Path) -> crate::Result<HeightMap> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let parsed = if text.lines().any(|l| l.trim() == "MASK") {
        parse_goal(&text, "render").map(|g| g.goal_map)
    } else {
        parse_ghm(&text).map(|g| g.map)
    };
    parsed.map_err(|e| e.in_file(path))
}

fn render(args: RenderArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = ConfigFile::load(args.config.as_deref(), &["map", "out", "format"])?;
    let map_path: PathBuf = cfg.require(args.map, "map")?;
    let out_path: PathBuf = cfg.require(args.out, "out")?;
    let format = cfg.get(args.format, "format", "pgm".to_string())?;
    if format != "pgm" {
        return Err(CliError::Usage(format!("unsupported format `{format}` (only pgm)")));
    }
    let map = read_map(&map_path)?;
    std::fs::write(&out_path, write_pgm16(&map)).map_err(|e| Error::io(&out_path, e))?;
    let _ = writeln!(out, "wrote {}", out_path.display());
    Ok(())
}

fn plan(args: PlanArgs, out: &mut dyn Write) -> CliResult<()> {
    let cfg = ConfigFile::load(args.config.as_deref(), &["goal", "out", "start"])?;
    let goal_path: PathBuf = cfg.require(args.goal, "goal")?;
    let out_path = cfg.get(args.out, "out", PathBuf::from("plan.csv"))?;
    let goal = load_goal(&goal_path)?;
    let (w, h) = goal.goal_map.extent();
    let start = match cfg.pick(args.start, "start")? {
        None => [w / 2.0, h / 2.0, 0.10],
        Some(s) => {
            let v: Vec<f64> = s
                .split(',')
                .map(|p| p.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|_| CliError::Usage(format!("invalid --start `{s}` (expected x,y,z)")))?;
            <[f64; 3]>::try_from(v).map_err(|_| CliError::Usage(format!("invalid --start `{s}` (expected x,y,z)")))?
        }
    };
    let plan = plan_bcpp(&goal, EnvConfig::default().footprint, start)?;
    write_plan_csv(&out_path, &plan)?;
    let _ = writeln!(
        out,
        "{} waypoints in {} regions -> {}",
        plan.waypoints.len(),
        plan.region_count(),
        out_path.display()
    );
    Ok(())
}

pub fn execute(cli: Cli, out: &mut dyn Write) -> CliResult<()> {
    match cli.command {
        Command::GenGoals(a) => gen_goals(a, out),
        Command::Run(a) => run(a, out),
        Command::Eval(a) => eval(a, out),
        Command::Render(a) => render(a, out),
        Command::Plan(a) => plan(a, out),
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code. Messages go to `out` and `err`.
pub fn main_with_args<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let text = e.render().to_string();
            if e.use_stderr() {
                let _ = write!(err, "{text}");
            } else {
                let _ = write!(out, "{text}");
            }
            return code;
        }
    };
    match execute(cli, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "{e}");
            e.exit_code()
        }
    }
}
