//! `flatsim` command-line driver.
//!
//! Subcommands:
//!
//! - `run`: plan and simulate one layer, print a summary and optionally
//!   write a JSON report, an NDJSON event trace and a plan dump.
//! - `sweep`: simulate a TOML-described grid and write CSV.
//! - `oracle-check`: replay dataflows numerically against the reference.
//! - `io-model`: closed-form HBM traffic table.
//! - `trace`: simulate one layer and emit its event trace.
//!
//! Exit codes: 0 success, 1 verification failure, 2 input error.
//!
//! Architecture fields can be overridden through `SECTION__FIELD`
//! environment variables, e.g. `HBM__CHANNELS_WEST=8` or
//! `TILE__GEMM_FILL_CYCLES=16`.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use flatsim::analytics::{self, fa_io_bytes, flat_io_bytes, summarize, IoModelResult, Metrics, SweepOptions};
use flatsim::arch::{ArchConfig, MhaLayer, Preset};
use flatsim::dataflow::{
    choose_slice_plan, execute_functional_heads, max_relative_error, plan_with_mode, random_heads,
    reference_attention, DataflowKind, FunctionalOptions, FunctionalSchedule, GroupShape, PlanOptions, SlicePlan,
};
use flatsim::noc::CollectiveMode;
use flatsim::sim::{simulate_traced, write_trace, SimReport};

pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY: i32 = 1;
pub const EXIT_INPUT: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "flatsim", version, about = "Attention dataflow simulator for tiled many-PE accelerators")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Plan and simulate one attention layer.
    Run(RunArgs),
    /// Simulate every point of a grid file and write CSV.
    Sweep(SweepArgs),
    /// Check dataflow replays against reference attention.
    OracleCheck(OracleArgs),
    /// Print closed-form HBM traffic for FlashAttention vs FlatAttention.
    IoModel(IoArgs),
    /// Simulate one layer and write the per-task event trace (NDJSON).
    Trace(TraceArgs),
}

#[derive(Debug, Clone, Args)]
pub struct ArchArgs {
    /// Architecture TOML file.
    #[arg(long, conflicts_with = "preset")]
    pub arch: Option<PathBuf>,
    /// Built-in architecture: table1, fabric32x32, fabric16x16, fabric8x8.
    #[arg(long)]
    pub preset: Option<String>,
}

#[derive(Debug, Clone, Args)]
pub struct LayerArgs {
    #[arg(long, default_value_t = 4096)]
    pub seq: u64,
    #[arg(long, default_value_t = 128)]
    pub dim: u64,
    #[arg(long, default_value_t = 2)]
    pub batch: u64,
    #[arg(long, default_value_t = 32)]
    pub heads: u64,
    #[arg(long, default_value_t = 2)]
    pub elem_bytes: u64,
}

impl LayerArgs {
    fn layer(&self) -> anyhow::Result<MhaLayer> {
        Ok(MhaLayer::with_elem_bytes(self.batch, self.heads, self.seq, self.dim, self.elem_bytes)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CollectivesArg {
    Sw,
    Hw,
}

impl From<CollectivesArg> for CollectiveMode {
    fn from(c: CollectivesArg) -> Self {
        match c {
            CollectivesArg::Sw => CollectiveMode::Software,
            CollectivesArg::Hw => CollectiveMode::Hardware,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    #[command(flatten)]
    pub arch: ArchArgs,
    #[command(flatten)]
    pub layer: LayerArgs,
    /// fa2, fa3, flat, flatcoll or flatasyn.
    #[arg(long, default_value = "flatasyn")]
    pub dataflow: DataflowKind,
    /// Group shape `GxxGy` (Flat variants only).
    #[arg(long, default_value = "32x32")]
    pub group: GroupShape,
    /// Override the collective implementation of Flat variants.
    #[arg(long, value_enum)]
    pub collectives: Option<CollectivesArg>,
    /// Add one K read+write per head for transposition in HBM.
    #[arg(long)]
    pub account_transpose: bool,
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    /// Write the NDJSON event trace here.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Write the JSON report here.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Write a per-tile task listing here.
    #[arg(long)]
    pub plan_dump: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TraceArgs {
    #[command(flatten)]
    pub sim: SimArgs,
    /// Output file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SweepArgs {
    /// Grid file (TOML).
    pub spec: PathBuf,
    /// CSV output; printed to stdout when omitted.
    #[arg(long)]
    pub csv: Option<PathBuf>,
    /// JSON report with every row and the per-cell best groups.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Worker threads (1 = sequential).
    #[arg(long, default_value_t = 1)]
    pub parallel: usize,
}

#[derive(Debug, Clone, Args)]
pub struct OracleArgs {
    #[command(flatten)]
    pub arch: ArchArgs,
    #[arg(long, default_value_t = 128)]
    pub seq: u64,
    #[arg(long, default_value_t = 64)]
    pub dim: u64,
    /// Heads replayed per variant (two-stream variants pair them).
    #[arg(long, default_value_t = 2)]
    pub heads: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated subset of fa2,fa3,flat,flatcoll,flatasyn.
    #[arg(long, value_delimiter = ',')]
    pub variants: Vec<DataflowKind>,
    /// Group for Flat variants; defaults to 2x2 when it divides the
    /// sequence, else 1x1.
    #[arg(long)]
    pub group: Option<GroupShape>,
    #[arg(long, default_value_t = 1e-3)]
    pub tolerance: f64,
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Drop the output rescale (negative control).
    #[arg(long, hide = true)]
    pub corrupt: bool,
}

#[derive(Debug, Clone, Args)]
pub struct IoArgs {
    #[command(flatten)]
    pub layer: LayerArgs,
    /// Per-tile block edge M.
    #[arg(long, default_value_t = 128)]
    pub block: u64,
    /// Group sizes N (perfect squares), comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "1,4,16,64,256,1024")]
    pub tiles: Vec<u64>,
    #[arg(long)]
    pub report: Option<PathBuf>,
}

/// Failure with its exit code.
#[derive(Debug)]
pub enum CliError {
    Input(anyhow::Error),
    Verify(String),
}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Input(e)
    }
}

impl From<flatsim::Error> for CliError {
    fn from(e: flatsim::Error) -> Self {
        CliError::Input(e.into())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

/// Parse `args` (including the program name) and execute. `env` supplies
/// the variables consulted for config overrides.
pub fn run_cli<I, T>(args: I, env: &[(String, String)], out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let text = e.render().to_string();
            if code == EXIT_OK {
                let _ = write!(out, "{text}");
            } else {
                let _ = write!(err, "{text}");
            }
            return code;
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a, env, out, err),
        Command::Sweep(a) => cmd_sweep(&a, env, out, err),
        Command::OracleCheck(a) => cmd_oracle_check(&a, env, out),
        Command::IoModel(a) => cmd_io_model(&a, out),
        Command::Trace(a) => cmd_trace(&a, env, out),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(CliError::Input(e)) => {
            let _ = writeln!(err, "error: {e:#}");
            EXIT_INPUT
        }
        Err(CliError::Verify(msg)) => {
            let _ = writeln!(err, "verification failed: {msg}");
            EXIT_VERIFY
        }
    }
}

/// Resolve `--arch`/`--preset` (default: table1) and apply overrides.
pub fn load_arch(args: &ArchArgs, env: &[(String, String)]) -> anyhow::Result<ArchConfig> {
    let (text, origin) = match (&args.arch, &args.preset) {
        (Some(path), _) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            (text, path.display().to_string())
        }
        (None, Some(name)) => {
            let p = Preset::from_name(name).ok_or_else(|| anyhow!("unknown preset `{name}`"))?;
            (p.document().to_string(), name.clone())
        }
        (None, None) => (Preset::Table1.document().to_string(), "table1".into()),
    };
    ArchConfig::from_toml_str_with_env(&text, env.iter().map(|(k, v)| (k.as_str(), v.as_str())))
        .with_context(|| format!("loading architecture {origin}"))
}

#[derive(Debug, Serialize)]
pub struct RunReport {
    pub schema_version: u32,
    pub command: &'static str,
    pub arch: ArchConfig,
    pub layer: MhaLayer,
    pub dataflow: DataflowKind,
    pub group: String,
    pub collectives: Option<CollectiveMode>,
    pub account_transpose: bool,
    pub slice: SlicePlan,
    pub warnings: Vec<String>,
    pub task_count: u64,
    pub predicted_hbm_bytes: u64,
    pub hbm_bytes_read_per_channel: Vec<u64>,
    pub hbm_bytes_written_per_channel: Vec<u64>,
    pub metrics: Metrics,
}

/// Plan and simulate; shared by `run` and `trace`.
pub fn simulate_spec(
    sim: &SimArgs,
    env: &[(String, String)],
) -> anyhow::Result<(RunReport, Vec<flatsim::sim::TraceRecord>, flatsim::dataflow::Plan)> {
    let cfg = load_arch(&sim.arch, env)?;
    let layer = sim.layer.layer()?;
    let opts = PlanOptions { account_transpose: sim.account_transpose };
    let plan = plan_with_mode(sim.dataflow, &layer, &cfg, sim.group, sim.collectives.map(Into::into), opts)?;
    let (report, trace) = simulate_traced(&cfg, &plan.graph)?;
    let rr = build_report(&cfg, &layer, &plan, &report);
    Ok((rr, trace, plan))
}

fn build_report(cfg: &ArchConfig, layer: &MhaLayer, plan: &flatsim::dataflow::Plan, report: &SimReport) -> RunReport {
    RunReport {
        schema_version: SCHEMA_VERSION,
        command: "run",
        arch: cfg.clone(),
        layer: *layer,
        dataflow: plan.kind,
        group: plan.slice.group.to_string(),
        collectives: plan.collectives,
        account_transpose: plan.options.account_transpose,
        slice: plan.slice,
        warnings: plan.warnings.clone(),
        task_count: report.task_count,
        predicted_hbm_bytes: plan.predicted_hbm_bytes(),
        hbm_bytes_read_per_channel: report.hbm_bytes_read.clone(),
        hbm_bytes_written_per_channel: report.hbm_bytes_written.clone(),
        metrics: summarize(report, cfg, layer),
    }
}

fn write_json(path: &Path, value: &impl Serialize) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create(path: &Path) -> anyhow::Result<std::io::BufWriter<fs::File>> {
    let f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    Ok(std::io::BufWriter::new(f))
}

fn cmd_run(a: &RunArgs, env: &[(String, String)], out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let (rr, trace, plan) = simulate_spec(&a.sim, env)?;
    for w in &rr.warnings {
        let _ = writeln!(err, "warning: {w}");
    }
    print_summary(&rr, out).map_err(anyhow::Error::from)?;
    if let Some(path) = &a.report {
        write_json(path, &rr)?;
    }
    if let Some(path) = &a.trace {
        let mut f = create(path)?;
        write_trace(&trace, &mut f).and_then(|_| f.flush()).context("writing trace")?;
    }
    if let Some(path) = &a.plan_dump {
        let mut f = create(path)?;
        plan.graph.dump(&mut f).and_then(|_| f.flush()).context("writing plan dump")?;
    }
    if rr.metrics.hbm_bytes != rr.predicted_hbm_bytes {
        return Err(CliError::Verify(format!(
            "simulated HBM bytes {} differ from closed form {}",
            rr.metrics.hbm_bytes, rr.predicted_hbm_bytes
        )));
    }
    Ok(())
}

fn print_summary(rr: &RunReport, out: &mut dyn Write) -> std::io::Result<()> {
    let m = &rr.metrics;
    let l = &rr.layer;
    writeln!(out, "arch        {}", rr.arch.label())?;
    writeln!(out, "layer       B={} H={} S={} D={} ({} B/elem)", l.batch, l.heads, l.seq_len, l.head_dim, l.bytes_per_elem)?;
    let coll = match rr.collectives {
        Some(CollectiveMode::Hardware) => "hw",
        Some(CollectiveMode::Software) => "sw",
        None => "none",
    };
    writeln!(
        out,
        "dataflow    {} group={} slice={} streams={} collectives={coll}",
        rr.dataflow, rr.group, rr.slice.slice, rr.slice.streams
    )?;
    writeln!(out, "cycles      {}", m.cycles)?;
    writeln!(out, "utilization {:.4} (active {:.4})", m.utilization, m.active_utilization)?;
    writeln!(out, "hbm         {} bytes, bw utilization {:.4}", m.hbm_bytes, m.hbm_bw_utilization)?;
    writeln!(
        out,
        "exposed     hbm={:.0} inter_tile={:.0} matmul={:.0} softmax={:.0} sync={:.0}",
        m.exposed.hbm, m.exposed.inter_tile, m.exposed.matmul, m.exposed.softmax, m.exposed.sync
    )
}

fn cmd_trace(a: &TraceArgs, env: &[(String, String)], out: &mut dyn Write) -> CliResult {
    let (_, trace, _) = simulate_spec(&a.sim, env)?;
    match &a.out {
        Some(path) => {
            let mut f = create(path)?;
            write_trace(&trace, &mut f).and_then(|_| f.flush()).context("writing trace")?;
        }
        None => write_trace(&trace, out).context("writing trace")?,
    }
    Ok(())
}

/// Sweep grid file. Missing keys take the defaults below; an explicitly
/// empty list yields no points.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Preset names or TOML paths (relative to the grid file).
    #[serde(default = "default_archs")]
    pub archs: Vec<String>,
    #[serde(default = "default_dataflows")]
    pub dataflows: Vec<String>,
    #[serde(default = "default_groups")]
    pub groups: Vec<String>,
    #[serde(default = "default_seq")]
    pub seq: Vec<u64>,
    #[serde(default = "default_dim")]
    pub dim: Vec<u64>,
    #[serde(default = "default_batch")]
    pub batch: Vec<u64>,
    #[serde(default = "default_heads")]
    pub heads: Vec<u64>,
    #[serde(default = "default_elem_bytes")]
    pub elem_bytes: u64,
    #[serde(default)]
    pub account_transpose: bool,
}

fn default_archs() -> Vec<String> {
    ["fabric32x32", "fabric16x16", "fabric8x8"].map(String::from).to_vec()
}
fn default_dataflows() -> Vec<String> {
    vec!["flatasyn".into()]
}
fn default_groups() -> Vec<String> {
    ["4x4", "8x8", "16x16", "32x32"].map(String::from).to_vec()
}
fn default_seq() -> Vec<u64> {
    vec![512, 1024, 2048, 4096]
}
fn default_dim() -> Vec<u64> {
    vec![64, 128]
}
fn default_batch() -> Vec<u64> {
    vec![4]
}
fn default_heads() -> Vec<u64> {
    vec![32]
}
fn default_elem_bytes() -> u64 {
    2
}

#[derive(Debug, Serialize)]
pub struct SweepReport<'a> {
    pub schema_version: u32,
    pub command: &'static str,
    pub archs: Vec<ArchConfig>,
    pub result: &'a analytics::SweepResult,
}

fn cmd_sweep(a: &SweepArgs, env: &[(String, String)], out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let text = fs::read_to_string(&a.spec).with_context(|| format!("reading {}", a.spec.display()))?;
    let grid: GridSpec = toml::from_str(&text).with_context(|| format!("parsing {}", a.spec.display()))?;
    let base = a.spec.parent().unwrap_or(Path::new("."));

    let mut archs = Vec::new();
    for name in &grid.archs {
        let args = if Preset::from_name(name).is_some() {
            ArchArgs { arch: None, preset: Some(name.clone()) }
        } else {
            ArchArgs { arch: Some(base.join(name)), preset: None }
        };
        archs.push(load_arch(&args, env)?);
    }
    let kinds = grid
        .dataflows
        .iter()
        .map(|d| d.parse::<DataflowKind>().map_err(|e| anyhow!("dataflows: {e}")))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let groups = grid
        .groups
        .iter()
        .map(|g| g.parse::<GroupShape>().map_err(|e| anyhow!("groups: {e}")))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut layers = Vec::new();
    for &b in &grid.batch {
        for &h in &grid.heads {
            for &d in &grid.dim {
                for &s in &grid.seq {
                    layers.push(MhaLayer::with_elem_bytes(b, h, s, d, grid.elem_bytes).map_err(anyhow::Error::from)?);
                }
            }
        }
    }
    let opts = SweepOptions { plan: PlanOptions { account_transpose: grid.account_transpose }, parallel: a.parallel };
    let result = analytics::sweep(&archs, &layers, &kinds, &groups, opts)?;

    let csv_text = sweep_csv(&result)?;
    match &a.csv {
        Some(path) => fs::write(path, &csv_text).with_context(|| format!("writing {}", path.display()))?,
        None => out.write_all(csv_text.as_bytes()).map_err(anyhow::Error::from)?,
    }
    if let Some(path) = &a.report {
        write_json(path, &SweepReport { schema_version: SCHEMA_VERSION, command: "sweep", archs, result: &result })?;
    }

    let summary: &mut dyn Write = if a.csv.is_some() { out } else { err };
    for c in &result.best {
        let l = &c.layer;
        let _ = writeln!(
            summary,
            "best {} {} B={} H={} S={} D={}: group {} util {:.4}",
            c.arch, c.dataflow, l.batch, l.heads, l.seq_len, l.head_dim, c.group, c.utilization
        );
    }
    if let Some(best) = &result.best_arch {
        let _ = writeln!(summary, "best arch: {best}");
    }
    let failed = result.rows.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        let _ = writeln!(summary, "{failed} of {} points failed (see error column)", result.rows.len());
    }
    if failed == result.rows.len() {
        return Err(CliError::Input(anyhow!("every sweep point failed")));
    }
    Ok(())
}

/// CSV with the fixed column order of [`analytics::CSV_COLUMNS`].
pub fn sweep_csv(result: &analytics::SweepResult) -> anyhow::Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &result.rows {
        w.serialize(row.csv_row())?;
    }
    if result.rows.is_empty() {
        w.write_record(analytics::CSV_COLUMNS)?;
    }
    Ok(String::from_utf8(w.into_inner().map_err(|e| anyhow!("{e}"))?)?)
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleRow {
    pub variant: DataflowKind,
    pub group: String,
    pub slice: u64,
    pub streams: u32,
    pub max_relative_error: f64,
    pub finite: bool,
    pub pass: bool,
}

#[derive(Debug, Serialize)]
pub struct OracleReport {
    pub schema_version: u32,
    pub command: &'static str,
    pub seq: u64,
    pub dim: u64,
    pub heads: u64,
    pub seed: u64,
    pub tolerance: f64,
    pub rows: Vec<OracleRow>,
}

/// Replay every requested variant. Slices come from the slice planner for
/// the chosen architecture, so the replay tiles exactly like the plan.
pub fn oracle_check(a: &OracleArgs, cfg: &ArchConfig) -> anyhow::Result<OracleReport> {
    if a.seq == 0 || a.dim == 0 || a.heads == 0 {
        bail!("seq, dim and heads must be positive");
    }
    let layer = MhaLayer::with_elem_bytes(1, a.heads, a.seq, a.dim, 2)?;
    let variants = if a.variants.is_empty() { DataflowKind::ALL.to_vec() } else { a.variants.clone() };
    let group = a.group.unwrap_or_else(|| {
        [2u32, 1]
            .into_iter()
            .map(GroupShape::square)
            .find(|g| a.seq.is_multiple_of(u64::from(g.gx)) && g.validate(cfg).is_ok())
            .unwrap_or(GroupShape::SINGLE)
    });
    let heads = random_heads(a.heads as usize, a.seq as usize, a.dim as usize, a.seed);
    let scale = 1.0 / (a.dim as f64).sqrt();
    let refs: Vec<_> = heads.iter().map(|h| reference_attention(&h.q, &h.k, &h.v, scale)).collect();
    let opts = FunctionalOptions { scale: Some(scale), check_invariants: !a.corrupt, corrupt_rescale: a.corrupt };

    let mut rows = Vec::new();
    for kind in variants {
        let sp = choose_slice_plan(&layer, cfg, group, kind).with_context(|| format!("planning {kind}"))?;
        let sched = FunctionalSchedule::from_slice_plan(&sp);
        let outs = execute_functional_heads(&heads, &sched, &opts).with_context(|| format!("replaying {kind}"))?;
        let err = outs.iter().zip(&refs).map(|(o, r)| max_relative_error(o, r)).fold(0.0, f64::max);
        let finite = outs.iter().all(|o| o.data.iter().all(|x| x.is_finite()));
        rows.push(OracleRow {
            variant: kind,
            group: sp.group.to_string(),
            slice: sp.slice,
            streams: sp.streams,
            max_relative_error: err,
            finite,
            pass: finite && err <= a.tolerance,
        });
    }
    Ok(OracleReport {
        schema_version: SCHEMA_VERSION,
        command: "oracle-check",
        seq: a.seq,
        dim: a.dim,
        heads: a.heads,
        seed: a.seed,
        tolerance: a.tolerance,
        rows,
    })
}

fn cmd_oracle_check(a: &OracleArgs, env: &[(String, String)], out: &mut dyn Write) -> CliResult {
    let cfg = load_arch(&a.arch, env)?;
    let report = oracle_check(a, &cfg)?;
    for r in &report.rows {
        let _ = writeln!(
            out,
            "{:<9} group={:<6} slice={:<4} streams={} max_rel_err={:.3e} {}",
            r.variant.name(),
            r.group,
            r.slice,
            r.streams,
            r.max_relative_error,
            if r.pass { "PASS" } else { "FAIL" }
        );
    }
    if let Some(path) = &a.report {
        write_json(path, &report)?;
    }
    let failed: Vec<&str> = report.rows.iter().filter(|r| !r.pass).map(|r| r.variant.name()).collect();
    if !failed.is_empty() {
        return Err(CliError::Verify(format!("{} exceeded tolerance {}", failed.join(", "), a.tolerance)));
    }
    Ok(())
}

#[derive(Debug, Serialize)]
pub struct IoRow {
    pub tiles: u64,
    pub group: String,
    pub block_rows: u64,
    pub flat: IoModelResult,
}

#[derive(Debug, Serialize)]
pub struct IoReport {
    pub schema_version: u32,
    pub command: &'static str,
    pub layer: MhaLayer,
    pub block: u64,
    pub fa: IoModelResult,
    pub rows: Vec<IoRow>,
}

pub fn io_model(a: &IoArgs) -> anyhow::Result<IoReport> {
    let layer = a.layer.layer()?;
    let fa = fa_io_bytes(&layer, a.block)?;
    let mut rows = Vec::new();
    for &n in &a.tiles {
        let flat = flat_io_bytes(&layer, a.block, n)?;
        let side = (n as f64).sqrt().round() as u64;
        rows.push(IoRow { tiles: n, group: format!("{side}x{side}"), block_rows: side * a.block, flat });
    }
    Ok(IoReport { schema_version: SCHEMA_VERSION, command: "io-model", layer, block: a.block, fa, rows })
}

fn cmd_io_model(a: &IoArgs, out: &mut dyn Write) -> CliResult {
    let r = io_model(a)?;
    let l = &r.layer;
    let mut text = format!(
        "B={} H={} S={} D={} M={}\nFA bytes: {}\n{:>6} {:>7} {:>8} {:>16} {:>14}\n",
        l.batch, l.heads, l.seq_len, l.head_dim, r.block, r.fa.total_bytes, "N", "group", "B_r", "flat bytes", "FA:Flat"
    );
    for row in &r.rows {
        let ratio = row.flat.ratio_vs_baseline.expect("flat rows carry a ratio");
        text.push_str(&format!(
            "{:>6} {:>7} {:>8} {:>16} {:>14}\n",
            row.tiles,
            row.group,
            row.block_rows,
            row.flat.total_bytes,
            format!("{}/{} = {}", ratio.num, ratio.den, ratio.value())
        ));
    }
    out.write_all(text.as_bytes()).map_err(anyhow::Error::from)?;
    if let Some(path) = &a.report {
        write_json(path, &r)?;
    }
    Ok(())
}
