use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;
use swinggrid::io::{self, DatasetId, RunManifest};
use swinggrid::scenario::{self, PerturbationSchedule, RunOutcome, ScanWindow, SweepSpec};
use swinggrid::topology::validate_layer;
use swinggrid::{
    derive_extended, derive_local, gen_er, Adjacency, ControlLayer, ControlLayers, IntegralForm, MetricsScope,
    ParameterPreset, Pinning, PowerBalance, PowerGrid, SimConfig,
};

#[derive(Parser)]
#[command(
    name = "swinggrid",
    version,
    about = "Swing-equation grid simulations with overload cascades and PI control layers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Relax, remove one node, reconnect it, and record the trajectory.
    Simulate(SimulateArgs),
    /// Remove every node in turn from the uncontrolled grid and count trips.
    CriticalScan(CriticalScanArgs),
    /// Trips for one faulted node as a function of the proportional gain.
    GpCurve(GpCurveArgs),
    /// Dense sweep over proportional and integral gains.
    Sweep(SweepArgs),
    /// Build a local or extended control layer from a base graph.
    DeriveTopology(DeriveArgs),
    /// Write an Erdos-Renyi control layer.
    GenEr(GenErArgs),
    /// Check a grid file and optional layer files.
    Validate(ValidateArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    ControlledDefault,
    CriticalScan,
}

impl PresetArg {
    fn preset(self) -> ParameterPreset {
        match self {
            PresetArg::ControlledDefault => ParameterPreset::ControlledDefault,
            PresetArg::CriticalScan => ParameterPreset::CriticalScan,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum BalanceArg {
    Exact,
    Literal,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormArg {
    Frequency,
    Phase,
}

#[derive(Clone, Copy, ValueEnum)]
enum ScopeArg {
    Active,
    All,
}

#[derive(Clone, Copy, ValueEnum)]
enum PinningArg {
    All,
    Generators,
    None,
}

impl PinningArg {
    fn pinning(self) -> Pinning {
        match self {
            PinningArg::All => Pinning::All,
            PinningArg::Generators => Pinning::Generators,
            PinningArg::None => Pinning::None,
        }
    }

    fn name(self) -> &'static str {
        match self {
            PinningArg::All => "all",
            PinningArg::Generators => "generators",
            PinningArg::None => "none",
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DeriveKind {
    Local,
    Extended,
}

#[derive(Args)]
struct Common {
    /// Replace node and line parameters of the grid with a named preset.
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    /// Generator power used with --preset: exact balance or the literal 2.735.
    #[arg(long, value_enum, default_value = "exact")]
    balance: BalanceArg,
    /// Integration step.
    #[arg(long, default_value_t = 0.01, allow_negative_numbers = true)]
    dt: f64,
    /// Random seed (recorded in the manifest; drives gen-er).
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the run manifest as a JSON file.
    #[arg(long, value_name = "PATH")]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct Dynamics {
    /// Length of the relaxation window before the fault.
    #[arg(long, default_value_t = 200.0)]
    relax_time: f64,
    /// Largest frequency spread accepted at the end of relaxation.
    #[arg(long, default_value_t = 1e-3)]
    relax_tolerance: f64,
    #[arg(long, value_enum, default_value = "frequency")]
    integral_form: FormArg,
    /// Nodes entering R and delta-omega.
    #[arg(long, value_enum, default_value = "active")]
    scope: ScopeArg,
}

#[derive(Args)]
struct Fault {
    /// Faulted node (1-based).
    #[arg(long)]
    node: usize,
    #[arg(long, default_value_t = 200.0)]
    t_on: f64,
    #[arg(long, default_value_t = 1200.0)]
    t_off: f64,
    #[arg(long, default_value_t = 2000.0)]
    t_end: f64,
    /// Also drop the node from both control layers while it is out.
    #[arg(long)]
    cyber_cofail: bool,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    grid: PathBuf,
    /// Proportional layer file; defaults to the physical graph with every node actuated.
    #[arg(long)]
    prop_layer: Option<PathBuf>,
    /// Integral layer file; defaults to the local topology of the physical graph on generators.
    #[arg(long)]
    int_layer: Option<PathBuf>,
    #[arg(long, default_value_t = 0.0)]
    gp: f64,
    #[arg(long, default_value_t = 0.0)]
    gi: f64,
    #[command(flatten)]
    fault: Fault,
    #[command(flatten)]
    dynamics: Dynamics,
    /// Steps between recorded samples.
    #[arg(long, default_value_t = 100)]
    record_stride: usize,
    /// Time-series CSV.
    #[arg(long)]
    out: PathBuf,
    /// JSON event log.
    #[arg(long)]
    events: Option<PathBuf>,
}

#[derive(Args)]
struct CriticalScanArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    grid: PathBuf,
    #[command(flatten)]
    dynamics: Dynamics,
    /// Time each node stays removed.
    #[arg(long, default_value_t = 1000.0)]
    duration: f64,
    /// Observation after reconnection.
    #[arg(long, default_value_t = 200.0)]
    observe_after: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GpCurveArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    prop_layer: Option<PathBuf>,
    /// Comma-separated proportional gains.
    #[arg(long, value_delimiter = ',', required = true)]
    gp_values: Vec<f64>,
    #[command(flatten)]
    fault: Fault,
    #[command(flatten)]
    dynamics: Dynamics,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    grid: PathBuf,
    #[arg(long)]
    prop_layer: Option<PathBuf>,
    #[arg(long)]
    int_layer: Option<PathBuf>,
    /// Comma-separated, strictly increasing proportional gains.
    #[arg(long, value_delimiter = ',', required = true)]
    gp_values: Vec<f64>,
    /// Comma-separated, strictly increasing integral gains.
    #[arg(long, value_delimiter = ',', required = true)]
    gi_values: Vec<f64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long)]
    workers: Option<usize>,
    #[command(flatten)]
    fault: Fault,
    #[command(flatten)]
    dynamics: Dynamics,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct DeriveArgs {
    #[arg(value_enum)]
    kind: DeriveKind,
    #[command(flatten)]
    common: Common,
    /// Grid supplying the generator set (and the base graph unless --base is given).
    #[arg(long)]
    grid: PathBuf,
    /// Layer file to derive from instead of the physical graph.
    #[arg(long)]
    base: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "generators")]
    pinning: PinningArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("size").required(true).args(["nodes", "grid"])))]
struct GenErArgs {
    #[command(flatten)]
    common: Common,
    /// Number of nodes.
    #[arg(long)]
    nodes: Option<usize>,
    /// Take the node count (and generator pinning) from a grid.
    #[arg(long)]
    grid: Option<PathBuf>,
    /// Link probability.
    #[arg(long)]
    p: f64,
    #[arg(long, value_enum, default_value = "all")]
    pinning: PinningArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    grid: PathBuf,
    /// Layer file to check against the grid; may be repeated.
    #[arg(long = "layer")]
    layers: Vec<PathBuf>,
}

enum Failure {
    Usage(String),
    Invalid(String),
    Numerical(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Usage(_) => 1,
            Failure::Invalid(_) => 2,
            Failure::Numerical(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Invalid(m) | Failure::Numerical(m) => m,
        }
    }
}

impl From<swinggrid::Error> for Failure {
    fn from(e: swinggrid::Error) -> Self {
        use swinggrid::Error as E;
        match e {
            E::Io(_) => Failure::Usage(e.to_string()),
            E::NonFinite { .. } | E::RelaxationTrip { .. } => Failure::Numerical(e.to_string()),
            other => Failure::Invalid(other.to_string()),
        }
    }
}

fn with_path(path: &Path) -> impl Fn(swinggrid::Error) -> Failure + '_ {
    move |e| {
        let f = Failure::from(e);
        let msg = format!("{}: {}", path.display(), f.message());
        match f {
            Failure::Usage(_) => Failure::Usage(msg),
            Failure::Invalid(_) => Failure::Invalid(msg),
            Failure::Numerical(_) => Failure::Numerical(msg),
        }
    }
}

type CliResult = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::CriticalScan(a) => critical_scan(a),
        Command::GpCurve(a) => gp_curve(a),
        Command::Sweep(a) => sweep(a),
        Command::DeriveTopology(a) => derive_topology(a),
        Command::GenEr(a) => generate_er(a),
        Command::Validate(a) => validate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

/// Loaded grid together with its provenance.
struct Input {
    grid: PowerGrid,
    datasets: Vec<DatasetId>,
}

fn load_input(path: &Path, common: &Common) -> Result<Input, Failure> {
    let mut grid = io::load_grid(path).map_err(with_path(path))?;
    if let Some(p) = common.preset {
        let balance = match common.balance {
            BalanceArg::Exact => PowerBalance::Exact,
            BalanceArg::Literal => PowerBalance::Literal,
        };
        grid = p.preset().apply(&grid, balance);
    }
    let datasets = vec![DatasetId::from_file("grid", path).map_err(with_path(path))?];
    Ok(Input { grid, datasets })
}

fn load_layer(path: &Path, n: usize, role: &str, datasets: &mut Vec<DatasetId>) -> Result<ControlLayer, Failure> {
    let layer = io::load_layer(path).map_err(with_path(path))?;
    let problems = validate_layer(&layer, n);
    if !problems.is_empty() {
        let list: Vec<String> = problems.iter().map(|p| p.to_string()).collect();
        return Err(Failure::Invalid(format!("{}: {}", path.display(), list.join("; "))));
    }
    datasets.push(DatasetId::from_file(role, path).map_err(with_path(path))?);
    Ok(layer)
}

fn generator_set(grid: &PowerGrid) -> BTreeSet<usize> {
    grid.generators().into_iter().collect()
}

fn default_proportional(grid: &PowerGrid) -> ControlLayer {
    ControlLayer::new(Adjacency::from_grid(grid), vec![true; grid.node_count()], 0.0)
}

fn default_integral(grid: &PowerGrid) -> Result<ControlLayer, Failure> {
    let local = derive_local(&Adjacency::from_grid(grid), &generator_set(grid))?;
    Ok(ControlLayer::new(local, Pinning::Generators.mask(grid), 0.0))
}

fn layers(
    input: &mut Input,
    prop: Option<&Path>,
    int: Option<&Path>,
) -> Result<(ControlLayer, ControlLayer, String), Failure> {
    let n = input.grid.node_count();
    let mut source = Vec::new();
    let p = match prop {
        Some(path) => {
            source.push("proportional=file");
            load_layer(path, n, "proportional-layer", &mut input.datasets)?
        }
        None => {
            source.push("proportional=physical/all");
            default_proportional(&input.grid)
        }
    };
    let i = match int {
        Some(path) => {
            source.push("integral=file");
            load_layer(path, n, "integral-layer", &mut input.datasets)?
        }
        None => {
            source.push("integral=local(physical)/generators");
            default_integral(&input.grid)?
        }
    };
    Ok((p, i, source.join(",")))
}

fn sim_config(common: &Common, dynamics: &Dynamics, t_end: f64, record_stride: usize) -> SimConfig {
    SimConfig {
        dt: common.dt,
        t_end,
        record_stride,
        integral_form: match dynamics.integral_form {
            FormArg::Frequency => IntegralForm::FrequencyIntegral,
            FormArg::Phase => IntegralForm::PhaseDifference,
        },
        metrics_scope: match dynamics.scope {
            ScopeArg::Active => MetricsScope::ActiveNodesOnly,
            ScopeArg::All => MetricsScope::AllNodes,
        },
        relax_time: dynamics.relax_time,
        relax_tolerance: dynamics.relax_tolerance,
        record_states: false,
    }
}

fn schedule(fault: &Fault, n: usize) -> Result<PerturbationSchedule, Failure> {
    if fault.node == 0 || fault.node > n {
        return Err(Failure::Usage(format!(
            "--node must lie in 1..={n}, got {}",
            fault.node
        )));
    }
    Ok(PerturbationSchedule::window(fault.node - 1, fault.t_on, fault.t_off).with_cyber_cofail(fault.cyber_cofail))
}

const AGGREGATION: &str = "during=(t_on,t_off], after=(t_off,t_end]; delta_omega time-averaged over every step";

fn manifest(
    command: &str,
    common: &Common,
    params: serde_json::Value,
    datasets: Vec<DatasetId>,
    meta: &[(&str, &str)],
) -> Result<RunManifest, Failure> {
    let hashed = json!({ "command": command, "params": params });
    let mut m = RunManifest::new(&hashed)?
        .with_preset(common.preset.map(|p| p.preset().name()))
        .with_seed(common.seed)
        .with_meta("command", command)
        .with_meta("params", params.to_string());
    for d in datasets {
        m = m.with_dataset(d);
    }
    for (k, v) in meta {
        m = m.with_meta(k, *v);
    }
    if let Some(path) = &common.manifest {
        fs::write(path, m.to_json() + "\n").map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))?;
    }
    Ok(m)
}

fn write(path: &Path, text: String) -> CliResult {
    fs::write(path, text).map_err(|e| Failure::Usage(format!("{}: {e}", path.display())))
}

fn outcome_json(o: &RunOutcome) -> String {
    serde_json::to_string(o).expect("outcome serializes")
}

fn simulate(a: SimulateArgs) -> CliResult {
    let mut input = load_input(&a.grid, &a.common)?;
    let (prop, int, source) = layers(&mut input, a.prop_layer.as_deref(), a.int_layer.as_deref())?;
    let config = sim_config(&a.common, &a.dynamics, a.fault.t_end, a.record_stride);
    let sched = schedule(&a.fault, input.grid.node_count())?;
    let params = json!({ "config": config, "schedule": sched, "gp": a.gp, "gi": a.gi, "layers": source });
    let m = manifest(
        "simulate",
        &a.common,
        params,
        input.datasets,
        &[("aggregation", AGGREGATION)],
    )?;
    let run = scenario::run_scenario(
        &input.grid,
        &prop.with_gain(a.gp),
        &int.with_gain(a.gi),
        &sched,
        &config,
    )?;

    write(&a.out, io::format_timeseries(&m, &run.series))?;
    if let Some(path) = &a.events {
        write(path, io::format_events(&m, &input.grid, &run.events))?;
    }
    println!("{}", outcome_json(&run.outcome));
    check_outcome(&run.outcome)
}

fn check_outcome(o: &RunOutcome) -> CliResult {
    match &o.failure {
        Some(why) if !o.ok() => Err(Failure::Numerical(why.clone())),
        _ => Ok(()),
    }
}

/// Batch commands keep going past failed runs; only a batch where nothing
/// succeeded is an error.
fn check_batch<'a>(outcomes: impl Iterator<Item = &'a RunOutcome>) -> CliResult {
    let (mut total, mut failed, mut first) = (0, 0, None);
    for o in outcomes {
        total += 1;
        if !o.ok() {
            failed += 1;
            first = first.or(o.failure.clone());
        }
    }
    if failed > 0 {
        eprintln!("warning: {failed} of {total} runs failed");
    }
    match first {
        Some(why) if failed == total => Err(Failure::Numerical(why)),
        _ => Ok(()),
    }
}

fn critical_scan(a: CriticalScanArgs) -> CliResult {
    let input = load_input(&a.grid, &a.common)?;
    let config = sim_config(&a.common, &a.dynamics, 0.0, 100);
    let window = ScanWindow {
        duration: a.duration,
        observe_after: a.observe_after,
    };
    let params = json!({ "config": config, "window": window });
    let meta = [("n_c", "overload trips while the node is removed")];
    let m = manifest("critical-scan", &a.common, params, input.datasets, &meta)?;
    let scan = scenario::critical_scan(&input.grid, &config, window)?;
    write(&a.out, io::format_critical_scan(&m, &scan))?;
    let critical: Vec<usize> = scan.critical().iter().map(|i| i + 1).collect();
    println!("{} critical node(s): {critical:?}", critical.len());
    check_batch(scan.nodes.iter().map(|s| &s.outcome))
}

fn gp_curve(a: GpCurveArgs) -> CliResult {
    let mut input = load_input(&a.grid, &a.common)?;
    let (prop, _, source) = layers(&mut input, a.prop_layer.as_deref(), None)?;
    let config = sim_config(&a.common, &a.dynamics, a.fault.t_end, 100);
    let sched = schedule(&a.fault, input.grid.node_count())?;
    let params = json!({ "config": config, "schedule": sched, "gp_values": a.gp_values, "layers": source });
    let m = manifest(
        "gp-curve",
        &a.common,
        params,
        input.datasets,
        &[("aggregation", AGGREGATION)],
    )?;
    let curve = scenario::gp_curve(&input.grid, &prop, &sched, &a.gp_values, &config)?;
    write(&a.out, io::format_gp_curve(&m, &curve))?;
    for (gp, o) in &curve {
        println!("gp {gp}: n_c {}", o.n_c_during);
    }
    check_batch(curve.iter().map(|(_, o)| o))
}

fn sweep(a: SweepArgs) -> CliResult {
    let mut input = load_input(&a.grid, &a.common)?;
    let (prop, int, source) = layers(&mut input, a.prop_layer.as_deref(), a.int_layer.as_deref())?;
    let config = sim_config(&a.common, &a.dynamics, a.fault.t_end, 100);
    let sched = schedule(&a.fault, input.grid.node_count())?;
    let workers = a
        .workers
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
    if workers == 0 {
        return Err(Failure::Usage("--workers must be at least 1".into()));
    }
    let params = json!({
        "config": config, "schedule": sched, "gp_values": a.gp_values, "gi_values": a.gi_values, "layers": source,
    });
    let m = manifest(
        "sweep",
        &a.common,
        params,
        input.datasets,
        &[("aggregation", AGGREGATION)],
    )?;
    let spec = SweepSpec {
        gp_values: a.gp_values,
        gi_values: a.gi_values,
        grid: input.grid,
        layers: ControlLayers::new(prop, int),
        schedule: sched,
        config,
    };
    let result = scenario::sweep_gains(&spec, workers)?;
    io::write_sweep(&a.out, &m, &result).map_err(with_path(&a.out))?;
    let recovered = result.cells.iter().filter(|o| o.ok() && o.n_c_after == 0).count();
    println!(
        "{} cells, {recovered} with no trips after reconnection",
        result.cells.len()
    );
    check_batch(result.cells.iter())
}

fn derive_topology(a: DeriveArgs) -> CliResult {
    let mut input = load_input(&a.grid, &a.common)?;
    let n = input.grid.node_count();
    let base = match &a.base {
        Some(path) => load_layer(path, n, "base-layer", &mut input.datasets)?.adjacency,
        None => Adjacency::from_grid(&input.grid),
    };
    let gens = generator_set(&input.grid);
    let (name, adjacency) = match a.kind {
        DeriveKind::Local => ("local", derive_local(&base, &gens)?),
        DeriveKind::Extended => ("extended", derive_extended(&base, &gens)?),
    };
    let params = json!({ "kind": name, "pinning": a.pinning.name(), "base": if a.base.is_some() { "file" } else { "physical" } });
    let m = manifest("derive-topology", &a.common, params, input.datasets, &[])?;
    let layer = ControlLayer::new(adjacency, a.pinning.pinning().mask(&input.grid), 0.0);
    write(&a.out, m.comment_block("layer") + &io::format_layer(&layer))?;
    println!("{name} topology: {} links", layer.adjacency.edge_count());
    Ok(())
}

fn generate_er(a: GenErArgs) -> CliResult {
    let (n, pinning, datasets) = match (&a.grid, a.nodes) {
        (Some(path), _) => {
            let input = load_input(path, &a.common)?;
            (
                input.grid.node_count(),
                a.pinning.pinning().mask(&input.grid),
                input.datasets,
            )
        }
        (None, Some(n)) => {
            let mask = match a.pinning {
                PinningArg::All => vec![true; n],
                PinningArg::None => vec![false; n],
                PinningArg::Generators => {
                    return Err(Failure::Usage("--pinning generators needs --grid".into()));
                }
            };
            (n, mask, Vec::new())
        }
        (None, None) => unreachable!("clap enforces --nodes or --grid"),
    };
    let adjacency = gen_er(n, a.p, a.common.seed)?;
    let params = json!({ "n": n, "p": a.p, "pinning": a.pinning.name(), "rng": swinggrid::topology::ER_RNG });
    let m = manifest("gen-er", &a.common, params, datasets, &[])?;
    let layer = ControlLayer::new(adjacency, pinning, 0.0);
    write(&a.out, m.comment_block("layer") + &io::format_layer(&layer))?;
    println!(
        "ER({n}, {}) seed {}: {} links",
        a.p,
        a.common.seed,
        layer.adjacency.edge_count()
    );
    Ok(())
}

fn validate(a: ValidateArgs) -> CliResult {
    let input = load_input(&a.grid, &a.common)?;
    let g = &input.grid;
    let mut datasets = input.datasets.clone();
    let mut problems = Vec::new();
    for path in &a.layers {
        match load_layer(path, g.node_count(), "layer", &mut datasets) {
            Ok(_) => {}
            Err(Failure::Usage(m)) => return Err(Failure::Usage(m)),
            Err(f) => problems.push(f.message().to_string()),
        }
    }
    let params = json!({ "layers": a.layers.len() });
    let m = manifest("validate", &a.common, params, datasets, &[])?;
    print!("{}", m.comment_block("validate"));
    println!(
        "grid: {} nodes ({} generators), {} lines, power imbalance {:e}",
        g.node_count(),
        g.generator_count(),
        g.line_count(),
        g.power_imbalance()
    );
    if !problems.is_empty() {
        return Err(Failure::Invalid(problems.join("\n")));
    }
    println!("ok");
    Ok(())
}
