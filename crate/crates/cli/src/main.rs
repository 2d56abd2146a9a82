use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use mech_search_core::harness::{
    emit_reports, generate_manifest, load_manifest, parse_records, resolution_from_env, run_experiment, summarize, Execution,
    RolloutConfig,
};
use mech_search_core::planners::{PlannerParams, PlanningContext, Primitive};
use mech_search_core::policies::{GraspSelection, PolicyConfig};
use mech_search_core::scene::{rasterize_scene, ObjectId, SceneSnapshot};
use mech_search_core::session::SessionManager;

#[derive(Parser)]
#[command(name = "mech-search", version, about = "Mechanical search benchmark in a simulated bin")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate heaps and a manifest.
    Gen(GenArgs),
    /// Run policies over a heap manifest.
    Run(RunArgs),
    /// Summarize a record file.
    Report(ReportArgs),
    /// Plan one action on a scene snapshot and print it as JSON.
    Plan(PlanArgs),
    /// Serve interactive sessions over HTTP.
    Serve(ServeArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Heap sizes, e.g. `--n 10,15,20`.
    #[arg(long, value_delimiter = ',', required = true)]
    n: Vec<u32>,
    /// Heaps per size (default 200, or 1000 with --full).
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Generate the full 1000-heap dataset per size.
    #[arg(long)]
    full: bool,
}

#[derive(Args)]
struct RunArgs {
    /// Manifest file or the directory holding it.
    #[arg(long)]
    heaps: PathBuf,
    /// Policy names, comma separated: random, prandom, prandom-push, largest, largest-push.
    #[arg(long, value_delimiter = ',', required = true)]
    policy: Vec<String>,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 1)]
    workers: usize,
    /// Policy seed, mixed with each heap's seed.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    t_thresh: Option<f64>,
    #[arg(long)]
    t_high: Option<f64>,
    #[arg(long)]
    recognition_threshold: Option<f64>,
    #[arg(long)]
    push_cap: Option<u32>,
    #[arg(long)]
    timestep_factor: Option<u32>,
    /// first-fit or global-argmax.
    #[arg(long)]
    grasp_selection: Option<GraspSelection>,
}

#[derive(Args)]
struct ReportArgs {
    /// Record file written by `run`.
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PlanArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    goal: ObjectId,
    /// parallel_jaw, suction or push.
    #[arg(long, value_parser = parse_primitive)]
    primitive: Primitive,
    /// Write occupancy, wall and per-object masks as PNGs here.
    #[arg(long)]
    dump_masks: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, default_value_t = 8080)]
    port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    /// Manifest whose heaps sessions may start from.
    #[arg(long)]
    heaps: Option<PathBuf>,
    /// Append finished session records here.
    #[arg(long)]
    records: Option<PathBuf>,
}

fn parse_primitive(s: &str) -> Result<Primitive, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string()))
        .map_err(|_| format!("unknown primitive {s:?} (expected parallel_jaw, suction or push)"))
}

fn gen(a: GenArgs) -> Result<()> {
    let count = a.count.unwrap_or(if a.full { 1000 } else { 200 });
    let m = generate_manifest(&a.n, count, a.seed, &a.out)?;
    println!("wrote {} heaps to {}", m.heaps.len(), a.out.display());
    Ok(())
}

fn policy_config(name: &str, a: &RunArgs) -> Result<RolloutConfig> {
    let mut p = PolicyConfig::from_name(name)?;
    p.seed = a.seed;
    if let Some(v) = a.t_thresh {
        p.t_thresh = v;
    }
    if let Some(v) = a.t_high {
        p.t_high = v;
    }
    if let Some(v) = a.recognition_threshold {
        p.recognition_visibility_threshold = v;
    }
    if let Some(v) = a.push_cap {
        p.push_consecutive_cap = v;
    }
    if let Some(v) = a.timestep_factor {
        p.timestep_factor = v;
    }
    if let Some(v) = a.grasp_selection {
        p.grasp_selection = v;
    }
    p.validate()?;
    let mut c = RolloutConfig::new(p);
    c.resolution = resolution_from_env()?;
    Ok(c)
}

fn run(a: RunArgs) -> Result<()> {
    if a.workers == 0 {
        bail!("--workers must be at least 1");
    }
    let heaps = load_manifest(&a.heaps).with_context(|| format!("loading {}", a.heaps.display()))?;
    let configs = a.policy.iter().map(|p| policy_config(p, &a)).collect::<Result<Vec<_>>>()?;
    let out = run_experiment(&heaps, &configs, Execution::with_workers(a.workers), &a.out)?;
    let files = emit_reports(&out.summary, &a.out)?;
    println!("{} rollouts -> {}", out.records.len(), out.records_path.display());
    print_reports(&files)
}

fn report(a: ReportArgs) -> Result<()> {
    let text = fs::read_to_string(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let summary = summarize(&parse_records(&text)?)?;
    let files = emit_reports(&summary, &a.out)?;
    print_reports(&files)
}

fn print_reports(files: &[PathBuf]) -> Result<()> {
    if let Some(txt) = files.iter().find(|p| p.file_name().is_some_and(|n| n == "summary.txt")) {
        print!("{}", fs::read_to_string(txt)?);
    }
    Ok(())
}

fn dump_masks(masks: &mech_search_core::scene::SegMasks, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    masks.occupancy.write_png(&dir.join("occupancy.png"))?;
    masks.walls.write_png(&dir.join("walls.png"))?;
    for e in &masks.entries {
        e.modal.write_png(&dir.join(format!("modal_{}.png", e.object_id)))?;
        e.amodal.write_png(&dir.join(format!("amodal_{}.png", e.object_id)))?;
    }
    Ok(())
}

fn plan(a: PlanArgs) -> Result<()> {
    let text = fs::read_to_string(&a.scene).with_context(|| format!("reading {}", a.scene.display()))?;
    let scene = SceneSnapshot::from_json(&text)?.scene;
    let masks = rasterize_scene(&scene, resolution_from_env()?)?;
    if let Some(dir) = &a.dump_masks {
        dump_masks(&masks, dir)?;
    }
    let params = PlannerParams::default();
    let ctx = PlanningContext::new(&scene, &masks, &params);
    let plan = ctx.plan(a.primitive, a.goal)?;
    println!("{}", serde_json::to_string_pretty(&plan)?);
    Ok(())
}

fn serve(a: ServeArgs) -> Result<()> {
    let heaps = match &a.heaps {
        Some(p) => load_manifest(p).with_context(|| format!("loading {}", p.display()))?,
        None => Vec::new(),
    };
    let mut manager = SessionManager::new(heaps, resolution_from_env()?);
    if let Some(p) = a.records {
        manager = manager.with_records_path(p);
    }
    let addr: SocketAddr = format!("{}:{}", a.host, a.port).parse().context("bad --host/--port")?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        println!("listening on http://{}", listener.local_addr()?);
        mech_search_server::serve_on(listener, Arc::new(manager)).await
    })?;
    Ok(())
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Gen(a) => gen(a),
        Command::Run(a) => run(a),
        Command::Report(a) => report(a),
        Command::Plan(a) => plan(a),
        Command::Serve(a) => serve(a),
    }
}
