mod config;

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use coag_core::bbgky::{hierarchy_report, write_hierarchy_report_csv, HierarchyReportConfig};
use coag_core::experiment::{chaos_charts, read_chaos_csv, run_ladder, write_chaos_csv, ReferenceKind, RunManifest};
use coag_core::marcus_lushnikov::{run_ensemble, write_summary_csv, EnsembleConfig, F0Spec};
use coag_core::model::io::write_field_csv;
use coag_core::model::MassGrid;
use coag_core::moments::{death_chain_laws, factorial_moment_laws, write_moments_csv, write_number_laws_csv};
use coag_core::smoluchowski::{solve_exact, write_states_csv};
use coag_core::CoagError;

const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "coag", version, about = "Constant-kernel coalescence: particle ensembles, PDE, hierarchy and chaos checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a particle ensemble and write its summary statistics.
    Simulate(SimulateArgs),
    /// Solve the mean-field equation on a mass grid.
    SolvePde(SolvePdeArgs),
    /// Compare truncated hierarchy series against the PDE.
    Hierarchy(HierarchyArgs),
    /// Exact particle-number laws and factorial moments.
    Moments(MomentsArgs),
    /// Run the volume ladder and report correlation distances.
    VerifyChaos(VerifyChaosArgs),
    /// Draw SVG charts from an existing chaos report CSV.
    Plot(PlotArgs),
}

#[derive(Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateArgs {
    /// Initial particle count.
    #[arg(long)]
    n0: Option<usize>,
    #[arg(long)]
    volume: Option<f64>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated output times.
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<f64>>,
    /// `exp`, `exp:MEAN` or `file:PATH`.
    #[arg(long)]
    f0: Option<String>,
    /// Mass histogram grid `m_max:n_cells`; omitted means no histograms.
    #[arg(long)]
    hist_grid: Option<String>,
    /// Highest histogram order.
    #[arg(long)]
    jmax: Option<usize>,
    #[arg(long)]
    batches: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON file keyed by flag names; flags given here win.
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SolvePdeArgs {
    #[arg(long)]
    rho0: Option<f64>,
    #[arg(long)]
    f0: Option<String>,
    #[arg(long)]
    grid: Option<String>,
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<f64>>,
    /// Largest time step.
    #[arg(long)]
    dt: Option<f64>,
    /// Also write every output state as a field file.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    dump_fields: Option<bool>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct HierarchyArgs {
    #[arg(long)]
    rho0: Option<f64>,
    #[arg(long)]
    f0: Option<String>,
    #[arg(long)]
    grid: Option<String>,
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<f64>>,
    #[arg(long)]
    jmax: Option<usize>,
    /// Fixed series depth instead of the per-time default.
    #[arg(long)]
    nmax: Option<usize>,
    #[arg(long)]
    tail_tol: Option<f64>,
    /// Series terms per restart window.
    #[arg(long)]
    window_terms: Option<usize>,
    #[arg(long)]
    pde_dt: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MomentsArgs {
    #[arg(long)]
    n0: Option<usize>,
    #[arg(long)]
    volume: Option<f64>,
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<f64>>,
    #[arg(long)]
    jmax: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct VerifyChaosArgs {
    #[arg(long)]
    rho0: Option<f64>,
    /// Comma-separated volumes.
    #[arg(long, value_delimiter = ',')]
    ladder: Option<Vec<f64>>,
    #[arg(long)]
    replicas: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    times: Option<Vec<f64>>,
    #[arg(long)]
    jmax: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Reference solve grid.
    #[arg(long)]
    grid: Option<String>,
    /// Histogram grid; the reference grid must refine it by an even factor.
    #[arg(long)]
    hist_grid: Option<String>,
    #[arg(long)]
    f0: Option<String>,
    #[arg(long)]
    batches: Option<usize>,
    #[arg(long)]
    bootstrap: Option<usize>,
    /// `pde` or `closed_form`.
    #[arg(long)]
    reference: Option<String>,
    #[arg(long)]
    pde_dt: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Manifest of an earlier run to start from.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

#[derive(Args, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PlotArgs {
    /// Chaos report CSV.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let kind = e.downcast_ref::<CoagError>().map_or("cli", CoagError::kind);
            let report = json!({ "error": { "kind": kind, "message": format!("{e:#}") } });
            eprintln!("{report}");
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate(a) => simulate(config::merge(&a, a.config.as_deref())?),
        Command::SolvePde(a) => solve_pde(config::merge(&a, a.config.as_deref())?),
        Command::Hierarchy(a) => hierarchy(config::merge(&a, a.config.as_deref())?),
        Command::Moments(a) => moments(config::merge(&a, a.config.as_deref())?),
        Command::VerifyChaos(a) => verify_chaos(config::merge(&a, a.config.as_deref())?),
        Command::Plot(a) => plot(config::merge(&a, a.config.as_deref())?),
    }
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T> {
    value.with_context(|| format!("--{flag} is required (on the command line or in --config)"))
}

fn out_dir(out: &Option<PathBuf>) -> Result<PathBuf> {
    let dir = out.clone().unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir)
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    println!("{}", path.display());
    Ok(BufWriter::new(f))
}

fn write_json(dir: &Path, name: &str, value: &impl Serialize) -> Result<()> {
    let mut w = create(dir, name)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Resolved flags plus the tool version. Output locations are left out so a
/// manifest reproduces the run wherever it is replayed.
fn write_manifest(dir: &Path, command: &str, args: &impl Serialize, extra: Value) -> Result<()> {
    let mut flags = serde_json::to_value(args)?;
    if let Value::Object(map) = &mut flags {
        map.remove("out");
        map.retain(|_, v| !v.is_null());
    }
    let mut manifest = json!({ "command": command, "tool_version": VERSION, "args": flags });
    if let (Value::Object(m), Value::Object(x)) = (&mut manifest, extra) {
        m.extend(x);
    }
    write_json(dir, "manifest.json", &manifest)
}

fn parse_f0(text: &Option<String>) -> Result<F0Spec> {
    Ok(text.as_deref().map(F0Spec::parse).transpose()?.unwrap_or_default())
}

fn parse_grid(text: &Option<String>, default: &str) -> Result<MassGrid> {
    Ok(MassGrid::parse(text.as_deref().unwrap_or(default))?)
}

fn simulate(mut a: SimulateArgs) -> Result<()> {
    let times = required(a.times.clone(), "times")?;
    let mut cfg = EnsembleConfig::new(
        required(a.n0, "n0")?,
        required(a.volume, "volume")?,
        *a.replicas.get_or_insert(1000),
        *a.seed.get_or_insert(42),
        times,
    )
    .with_f0(parse_f0(&a.f0)?);
    if let Some(g) = &a.hist_grid {
        cfg = cfg.with_histograms(MassGrid::parse(g)?, *a.jmax.get_or_insert(2));
    }
    if let Some(b) = a.batches {
        cfg.batches = b;
    }
    cfg.validate()?;
    let summary = run_ensemble(&cfg)?;
    let dir = out_dir(&a.out)?;
    write_summary_csv(&summary, create(&dir, "summary.csv")?)?;
    write_manifest(&dir, "simulate", &a, json!({ "ensemble": cfg }))
}

fn solve_pde(mut a: SolvePdeArgs) -> Result<()> {
    let times = required(a.times.clone(), "times")?;
    let rho0 = *a.rho0.get_or_insert(1.0);
    let grid = parse_grid(&a.grid, "40:2000")?;
    a.grid = Some(format!("{}:{}", grid.m_max(), grid.n_cells()));
    let dt = *a.dt.get_or_insert(1e-3);
    let f0 = parse_f0(&a.f0)?.cell_average(grid).scaled(rho0);
    let sol = solve_exact(&f0, dt, &times)?;
    let dir = out_dir(&a.out)?;
    write_states_csv(&sol.states, create(&dir, "states.csv")?)?;
    if a.dump_fields == Some(true) {
        let fields = dir.join("fields");
        fs::create_dir_all(&fields)?;
        for (i, s) in sol.states.iter().enumerate() {
            write_field_csv(&s.f, create(&fields, &format!("f_{i:03}.csv"))?)?;
        }
    }
    write_manifest(&dir, "solve-pde", &a, json!({ "clamp_events": sol.clamp_events }))
}

fn hierarchy(mut a: HierarchyArgs) -> Result<()> {
    let times = required(a.times.clone(), "times")?;
    let grid = parse_grid(&a.grid, "40:2000")?;
    a.grid = Some(format!("{}:{}", grid.m_max(), grid.n_cells()));
    let mut cfg = HierarchyReportConfig::new(*a.rho0.get_or_insert(1.0), *a.jmax.get_or_insert(2), times);
    cfg.n_max = a.nmax;
    cfg.tail_tolerance = *a.tail_tol.get_or_insert(cfg.tail_tolerance);
    cfg.window_terms = *a.window_terms.get_or_insert(cfg.window_terms);
    cfg.pde_dt = *a.pde_dt.get_or_insert(cfg.pde_dt);
    let f0 = parse_f0(&a.f0)?.cell_average(grid);
    let rows = hierarchy_report(&f0, &cfg)?;
    let dir = out_dir(&a.out)?;
    write_hierarchy_report_csv(&rows, create(&dir, "hierarchy.csv")?)?;
    write_manifest(&dir, "hierarchy", &a, json!({}))
}

fn moments(mut a: MomentsArgs) -> Result<()> {
    let n0 = required(a.n0, "n0")?;
    let volume = *a.volume.get_or_insert(1.0);
    let times = required(a.times.clone(), "times")?;
    let j_max = *a.jmax.get_or_insert(4);
    let laws = death_chain_laws(n0, volume, &times)?;
    let fm = factorial_moment_laws(n0, volume, &times)?;
    let dir = out_dir(&a.out)?;
    write_number_laws_csv(&laws, create(&dir, "number_laws.csv")?)?;
    write_moments_csv(&fm, volume, j_max, create(&dir, "moments.csv")?)?;
    write_manifest(&dir, "moments", &a, json!({}))
}

fn verify_chaos(a: VerifyChaosArgs) -> Result<()> {
    let mut m = match &a.manifest {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading manifest {}", path.display()))?;
            serde_json::from_str::<RunManifest>(&text).with_context(|| format!("parsing manifest {}", path.display()))?
        }
        None => RunManifest::default(),
    };
    if let Some(v) = a.rho0 {
        m.rho0 = v;
    }
    if let Some(v) = &a.ladder {
        m.ladder = v.clone();
    }
    if let Some(v) = a.replicas {
        m.replicas = v;
    }
    if let Some(v) = &a.times {
        m.output_times = v.clone();
    }
    if let Some(v) = a.jmax {
        m.j_max = v;
    }
    if let Some(v) = a.seed {
        m.seed = v;
    }
    if let Some(v) = &a.grid {
        m.grid = MassGrid::parse(v)?;
    }
    if let Some(v) = &a.hist_grid {
        m.hist_grid = MassGrid::parse(v)?;
    }
    if a.f0.is_some() {
        m.f0 = parse_f0(&a.f0)?;
    }
    if let Some(v) = a.batches {
        m.batches = v;
    }
    if let Some(v) = a.bootstrap {
        m.bootstrap_resamples = v;
    }
    if let Some(v) = &a.reference {
        m.reference = match v.as_str() {
            "pde" => ReferenceKind::Pde,
            "closed_form" | "closed-form" => ReferenceKind::ClosedForm,
            other => bail!("unknown reference `{other}` (expected pde or closed_form)"),
        };
    }
    if let Some(v) = a.pde_dt {
        m.pde_dt = v;
    }
    m.tool_version = VERSION.to_string();
    m.validate()?;
    let report = run_ladder(&m)?;
    let dir = out_dir(&a.out)?;
    write_chaos_csv(&report, create(&dir, "chaos_report.csv")?)?;
    write_json(&dir, "chaos_report.json", &report)?;
    write_json(&dir, "manifest.json", &m)?;
    for f in &report.failures {
        eprintln!("rung failure: {}", serde_json::to_string(f)?);
    }
    Ok(())
}

fn plot(a: PlotArgs) -> Result<()> {
    let input = required(a.input.clone(), "input")?;
    let file = File::open(&input).with_context(|| format!("opening {}", input.display()))?;
    let rows = read_chaos_csv(file)?;
    if rows.is_empty() {
        bail!("{} holds no report rows", input.display());
    }
    let dir = out_dir(&a.out)?;
    for chart in chaos_charts(&rows) {
        let name = format!("d{}_t{}.svg", chart.j, chart.t);
        let path = dir.join(&name);
        fs::write(&path, chart.svg).with_context(|| format!("writing {}", path.display()))?;
        println!("{}", path.display());
    }
    write_manifest(&dir, "plot", &a, json!({}))
}
