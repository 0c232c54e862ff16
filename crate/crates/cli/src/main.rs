//! `irp`: dataset generation, predictor building, episodes, experiments.
//!
//! Every option can also come from a config file (`--config`); keys are the
//! long flag names with `-` replaced by `_`. Flags given on the command line
//! override the file.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};

use irp_core::baselines::{run_controller, DeltaRegConfig, DeltaRegModel, SysIdModel};
use irp_core::config::Config;
use irp_core::dataset::{generate, split_labels, Dataset, GenConfig, Split};
use irp_core::eval::{
    base_cell, run_cloth_eval, run_embodiment, run_matrix, run_online_adaptation, summarize, EvalConfig, Method,
    MethodKit, ResultsTable, CLOTH_GOAL_RANGE,
};
use irp_core::params::{WorldMode, WorldVariant};
use irp_core::predictor::{KnnConfig, KnnMode, KnnPredictor, MlpPredictor, ModelBlob, Predictor, TrainConfig};
use irp_core::raster::{rasterize, write_pgm};
use irp_core::rng::derive_seed;
use irp_core::sim::{ClothPlant, Plant, RopePlant};
use irp_core::{IrpError, Result, Task};

#[derive(Parser, Debug)]
#[command(name = "irp", version, about = "Iterative residual policy workbench", propagate_version = true)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Task: rope or cloth
    #[arg(long, global = true)]
    task: Option<String>,
    /// Master seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Dataset file (default: <out-dir>/<task>.irpd)
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    /// Predictor model file (knn or mlp)
    #[arg(long, global = true)]
    model: Option<PathBuf>,
    /// Controller: irp, irp_gt, const_sigma, avg, sysid, sysid_gt, optsim,
    /// iter_heuristic, iter_linear, deltareg
    #[arg(long, global = true)]
    method: Option<String>,
    /// World variant: training or deployment
    #[arg(long, global = true)]
    world: Option<String>,
    /// Versioned key = value config file
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory
    #[arg(long, global = true, env = "IRP_OUT_DIR")]
    out_dir: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dataset, assign splits and save it
    Gen(GenArgs),
    /// Build the nearest-neighbour predictor index
    BuildKnn(KnnArgs),
    /// Train the small network predictor
    TrainMlp(MlpArgs),
    /// Fit the SysID and DeltaReg baselines
    FitBaselines,
    /// Run one episode and print per-step distances
    Run(RunArgs),
    /// Run an experiment and write CSV, SVG and a manifest
    Eval(EvalArgs),
    /// Rebuild report files from a saved results file
    Report(ReportArgs),
    /// Print dataset facts; optionally dump one record as PGM
    Inspect(InspectArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Parameter grid size, e.g. 8x8
    #[arg(long)]
    param_dims: Option<String>,
    /// Action grid size per dimension, e.g. 9,9,9
    #[arg(long)]
    action_dims: Option<String>,
    /// Executions per (parameter, action) pair
    #[arg(long)]
    repeats: Option<usize>,
}

#[derive(Args, Debug)]
struct KnnArgs {
    /// Neighbours averaged per prediction
    #[arg(long)]
    k: Option<usize>,
    /// Answer mode: snap, interpolate or residual
    #[arg(long)]
    knn_mode: Option<String>,
    /// Candidates kept after the cheap matching pass
    #[arg(long)]
    shortlist: Option<usize>,
    /// Refine matches to a continuous action (true/false)
    #[arg(long)]
    refine: Option<bool>,
}

#[derive(Args, Debug)]
struct MlpArgs {
    /// Training epochs
    #[arg(long)]
    epochs: Option<usize>,
    /// Hidden layer width
    #[arg(long)]
    hidden: Option<usize>,
    /// Training pairs
    #[arg(long)]
    pairs: Option<usize>,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// Cell as <split>:<index within split>, e.g. test_interp:0
    #[arg(long)]
    rope: Option<String>,
    /// Goal index among the cell's sampled goals
    #[arg(long)]
    goal: Option<usize>,
    /// Step budget (default 16, or 10 in the deployment world)
    #[arg(long)]
    max_step: Option<usize>,
    /// Stop once the distance falls below this many metres
    #[arg(long)]
    d_stop: Option<f64>,
    /// Write the episode as JSON lines into the out dir
    #[arg(long)]
    log: bool,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// sim-matrix, deployment, online-adaptation, embodiment or cloth
    #[arg(long)]
    experiment: Option<String>,
    /// Parameter cells per split
    #[arg(long)]
    n_cells: Option<usize>,
    /// Goals per cell
    #[arg(long)]
    n_goals: Option<usize>,
    /// Step budget per episode
    #[arg(long)]
    max_step: Option<usize>,
    /// 0-based step from which the knotted rope is used
    #[arg(long)]
    swap_step: Option<usize>,
    /// Comma-separated methods (default depends on the experiment)
    #[arg(long)]
    methods: Option<String>,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Results file written by `eval`
    #[arg(long)]
    input: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InspectArgs {
    /// Parameter cell to dump
    #[arg(long)]
    cell: Option<usize>,
    /// Action index to dump
    #[arg(long)]
    action: Option<usize>,
}

/// Command-line values as config entries, only for flags actually given.
fn flag_config(cli: &Cli) -> Config {
    let mut c = Config::new();
    fn put<T: ToString>(c: &mut Config, k: &str, v: &Option<T>) {
        if let Some(v) = v {
            c.set(k, v.to_string());
        }
    }
    let path = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string());
    let g = &cli.global;
    put(&mut c, "task", &g.task);
    put(&mut c, "seed", &g.seed);
    put(&mut c, "jobs", &g.jobs);
    put(&mut c, "dataset", &path(&g.dataset));
    put(&mut c, "model", &path(&g.model));
    put(&mut c, "method", &g.method);
    put(&mut c, "world", &g.world);
    put(&mut c, "out_dir", &path(&g.out_dir));
    match &cli.command {
        Command::Gen(a) => {
            put(&mut c, "param_dims", &a.param_dims);
            put(&mut c, "action_dims", &a.action_dims);
            put(&mut c, "repeats", &a.repeats);
        }
        Command::BuildKnn(a) => {
            put(&mut c, "k", &a.k);
            put(&mut c, "knn_mode", &a.knn_mode);
            put(&mut c, "shortlist", &a.shortlist);
            put(&mut c, "refine", &a.refine);
        }
        Command::TrainMlp(a) => {
            put(&mut c, "epochs", &a.epochs);
            put(&mut c, "hidden", &a.hidden);
            put(&mut c, "pairs", &a.pairs);
        }
        Command::FitBaselines => {}
        Command::Run(a) => {
            put(&mut c, "rope", &a.rope);
            put(&mut c, "goal", &a.goal);
            put(&mut c, "max_step", &a.max_step);
            put(&mut c, "d_stop", &a.d_stop);
        }
        Command::Eval(a) => {
            put(&mut c, "experiment", &a.experiment);
            put(&mut c, "n_cells", &a.n_cells);
            put(&mut c, "n_goals", &a.n_goals);
            put(&mut c, "max_step", &a.max_step);
            put(&mut c, "swap_step", &a.swap_step);
            put(&mut c, "methods", &a.methods);
        }
        Command::Report(a) => put(&mut c, "input", &path(&a.input)),
        Command::Inspect(a) => {
            put(&mut c, "cell", &a.cell);
            put(&mut c, "action", &a.action);
        }
    }
    c
}

/// Effective settings: config file overlaid with command-line flags.
struct Ctx {
    cfg: Config,
}

impl Ctx {
    fn task(&self) -> Result<Task> {
        self.cfg.get_or("task", Task::Rope)
    }

    fn seed(&self) -> Result<u64> {
        self.cfg.get_or("seed", 0u64)
    }

    fn out_dir(&self) -> Result<PathBuf> {
        let d = PathBuf::from(self.cfg.raw("out_dir").unwrap_or("irp_out"));
        std::fs::create_dir_all(&d).map_err(|e| IrpError::io(&d, e))?;
        Ok(d)
    }

    fn dataset_path(&self) -> Result<PathBuf> {
        match self.cfg.raw("dataset") {
            Some(p) => Ok(PathBuf::from(p)),
            None => Ok(self.out_dir()?.join(format!("{}.irpd", self.task()?))),
        }
    }

    fn load_dataset(&self) -> Result<Arc<Dataset>> {
        let path = self.dataset_path()?;
        let ds = Dataset::load(&path)?;
        if let Some(t) = self.cfg.raw("task") {
            if t.parse::<Task>()? != ds.task {
                return Err(IrpError::contract(format!("{} holds a {} dataset, not {t}", path.display(), ds.task)));
            }
        }
        Ok(Arc::new(ds))
    }

    fn world(&self) -> Result<WorldVariant> {
        Ok(WorldVariant::for_mode(self.cfg.get_or("world", WorldMode::Training)?))
    }

    fn method(&self) -> Result<Method> {
        self.cfg.get_or("method", Method::Irp)
    }

    fn knn_config(&self) -> Result<KnnConfig> {
        let d = KnnConfig::default();
        let mode = match self.cfg.raw("knn_mode") {
            None => d.mode,
            Some("snap") => KnnMode::Snap,
            Some("interpolate") => KnnMode::Interpolate,
            Some("residual") => KnnMode::Residual,
            Some(other) => return Err(IrpError::format(format!("unknown knn mode '{other}'"))),
        };
        let cfg = KnnConfig {
            k: self.cfg.get_or("k", d.k)?,
            shortlist: self.cfg.get_or("shortlist", d.shortlist)?,
            mode,
            refine: self.cfg.get_or("refine", d.refine)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Predictor from `--model` or, absent that, a default kNN index.
    fn predictor(&self, ds: &Arc<Dataset>) -> Result<Arc<dyn Predictor>> {
        match self.cfg.raw("model") {
            Some(p) => {
                let blob = ModelBlob::load(Path::new(p))?;
                match blob.tag.as_str() {
                    "knn" => Ok(Arc::new(KnnPredictor::from_blob(&blob, ds.clone())?)),
                    "mlp" => Ok(Arc::new(MlpPredictor::from_blob(&blob)?)),
                    other => Err(IrpError::format(format!("{p}: '{other}' is not a predictor model"))),
                }
            }
            None => Ok(Arc::new(KnnPredictor::build(ds.clone(), self.knn_config()?)?)),
        }
    }

    /// Kit with whatever baseline models a method list needs; fitted
    /// baselines are read from the out dir when present, fitted otherwise.
    fn kit(&self, ds: &Arc<Dataset>, methods: &[Method]) -> Result<MethodKit> {
        let mut kit = MethodKit::new(ds.clone());
        if methods.iter().any(|m| matches!(m, Method::Irp | Method::ConstSigma)) {
            kit.pred = Some(self.predictor(ds)?);
        }
        let dir = self.out_dir()?;
        if methods.contains(&Method::SysId) {
            let path = dir.join(format!("{}_sysid.irpm", ds.task));
            kit.sysid = Some(Arc::new(if path.exists() {
                SysIdModel::from_blob(&ModelBlob::load(&path)?)?
            } else {
                SysIdModel::fit(ds)?
            }));
        }
        if methods.contains(&Method::DeltaReg) {
            let path = dir.join(format!("{}_deltareg.irpm", ds.task));
            kit.deltareg = Some(Arc::new(if path.exists() {
                DeltaRegModel::from_blob(&ModelBlob::load(&path)?, ds)?
            } else {
                DeltaRegModel::fit(ds, self.deltareg_config()?)?
            }));
        }
        Ok(kit)
    }

    fn deltareg_config(&self) -> Result<DeltaRegConfig> {
        Ok(DeltaRegConfig {
            seed: self.seed()?,
            ..DeltaRegConfig::default()
        })
    }
}

fn parse_dims(s: &str, sep: char) -> Result<Vec<usize>> {
    s.split(sep)
        .map(|x| {
            x.trim()
                .parse::<usize>()
                .map_err(|_| IrpError::format(format!("bad dimension list '{s}'")))
        })
        .collect()
}

fn cmd_gen(ctx: &Ctx) -> Result<()> {
    let task = ctx.task()?;
    let mut cfg = GenConfig::desk(task, ctx.seed()?);
    if let Some(d) = ctx.cfg.raw("param_dims") {
        let v = parse_dims(d, 'x')?;
        if v.len() != 2 {
            return Err(IrpError::format("param_dims must look like 8x8"));
        }
        cfg = cfg.with_param_dims(v[0], v[1])?;
    }
    if let Some(d) = ctx.cfg.raw("action_dims") {
        cfg.action_dims = parse_dims(d, ',')?;
    }
    cfg.repeats = ctx.cfg.get_or("repeats", cfg.repeats)?;
    if let Some(w) = ctx.cfg.get::<WorldMode>("world")? {
        cfg.world = WorldVariant::for_mode(w).with_noise(cfg.world.init_noise_sd);
    }
    cfg.validate()?;
    let mut ds = generate(&cfg)?;
    ds.split()?;
    let path = ctx.dataset_path()?;
    ds.save(&path)?;
    let invalid = ds.records.iter().filter(|r| !r.valid).count();
    println!("dataset: {}", path.display());
    println!("records: {} ({} invalid)", ds.n_records(), invalid);
    println!("hash: {}", ds.hash());
    Ok(())
}

fn cmd_build_knn(ctx: &Ctx) -> Result<()> {
    let ds = ctx.load_dataset()?;
    let knn = KnnPredictor::build(ds.clone(), ctx.knn_config()?)?;
    let path = match ctx.cfg.raw("model") {
        Some(p) => PathBuf::from(p),
        None => ctx.out_dir()?.join(format!("{}_knn.irpm", ds.task)),
    };
    knn.to_blob().save(&path)?;
    println!("knn index: {} entries -> {}", knn.n_entries(), path.display());
    Ok(())
}

fn cmd_train_mlp(ctx: &Ctx) -> Result<()> {
    let ds = ctx.load_dataset()?;
    let d = TrainConfig::default();
    let cfg = TrainConfig {
        seed: ctx.seed()?,
        epochs: ctx.cfg.get_or("epochs", d.epochs)?,
        hidden: ctx.cfg.get_or("hidden", d.hidden)?,
        pairs: ctx.cfg.get_or("pairs", d.pairs)?,
        ..d
    };
    let (mlp, report) = MlpPredictor::train(&ds, &cfg)?;
    let path = match ctx.cfg.raw("model") {
        Some(p) => PathBuf::from(p),
        None => ctx.out_dir()?.join(format!("{}_mlp.irpm", ds.task)),
    };
    mlp.to_blob().save(&path)?;
    for (e, l) in report.losses.iter().enumerate() {
        println!("epoch {e}: loss {l:.6}");
    }
    println!("mlp -> {}", path.display());
    Ok(())
}

fn cmd_fit_baselines(ctx: &Ctx) -> Result<()> {
    let ds = ctx.load_dataset()?;
    let dir = ctx.out_dir()?;
    if ds.task == Task::Rope {
        let sysid = SysIdModel::fit(&ds)?;
        let p = dir.join("rope_sysid.irpm");
        sysid.to_blob().save(&p)?;
        println!("sysid -> {}", p.display());
    }
    let dr = DeltaRegModel::fit(&ds, ctx.deltareg_config()?)?;
    let p = dir.join(format!("{}_deltareg.irpm", ds.task));
    dr.to_blob().save(&p)?;
    println!("deltareg: {} entries -> {}", dr.entries.len(), p.display());
    Ok(())
}

fn parse_cell(ds: &Dataset, s: &str) -> Result<usize> {
    let (split, idx) = s
        .split_once(':')
        .ok_or_else(|| IrpError::format(format!("cell must look like test_interp:0, got '{s}'")))?;
    let split: Split = split.parse()?;
    let idx: usize = idx
        .parse()
        .map_err(|_| IrpError::format(format!("bad cell index in '{s}'")))?;
    let cells = ds.cells(split);
    cells
        .get(idx)
        .copied()
        .ok_or_else(|| IrpError::contract(format!("{split} has {} cells, index {idx} out of range", cells.len())))
}

fn cmd_run(ctx: &Ctx) -> Result<()> {
    let ds = ctx.load_dataset()?;
    let method = ctx.method()?;
    let seed = ctx.seed()?;
    let p = match ctx.cfg.raw("rope") {
        Some(s) => parse_cell(&ds, s)?,
        None => base_cell(&ds)?,
    };
    let gi: usize = ctx.cfg.get_or("goal", 0)?;
    let world = ctx.world()?;
    let max_step: usize = ctx.cfg.get_or("max_step", if world.mode == WorldMode::Deployment { 10 } else { 16 })?;
    let d_stop: f64 = ctx.cfg.get_or("d_stop", 0.02)?;
    let goal = match ds.task {
        Task::Rope => ds
            .sample_goals(p, gi + 1, derive_seed(seed, &[1, p as u64]))?
            .swap_remove(gi),
        Task::Cloth => irp_core::eval::cloth_goals(ds.params.values(p).0, 11, CLOTH_GOAL_RANGE)
            .get(gi)
            .cloned()
            .ok_or_else(|| IrpError::contract("cloth goal index must be below 11"))?,
    };
    let ep_seed = derive_seed(seed, &[2, p as u64, gi as u64]);
    let plant: Arc<dyn Plant> = match ds.task {
        Task::Rope => Arc::new(RopePlant::new(ds.rope_params(p)?, world, ep_seed)),
        Task::Cloth => {
            let mut c = ClothPlant::new(ds.cloth_params(p)?, world, ep_seed);
            c.action_box = ds.action_box();
            Arc::new(c)
        }
    };
    let kit = ctx.kit(&ds, &[method])?;
    let ctrl = kit.controller(method, ds.params.values(p), &plant)?;
    let log = run_controller(plant.as_ref(), ctrl.as_ref(), &goal, max_step, d_stop, ep_seed)?;
    println!("method: {method}  cell: {p}  goal: {gi}");
    for it in &log.iterations {
        let a: Vec<String> = it.action.iter().map(|x| format!("{x:.4}")).collect();
        println!("step {}: distance {:.6} m  action [{}]", it.step + 1, it.distance, a.join(", "));
    }
    if ctx.cfg.raw("log").is_some() {
        let path = ctx.out_dir()?.join(format!("run_{method}_{p}_{gi}.jsonl"));
        log.write_jsonl(&path)?;
    }
    if let Some(e) = &log.error {
        println!("error: {e}");
    }
    println!("stop: {}", log.stop.name());
    Ok(())
}

fn methods_from(ctx: &Ctx, default: &[Method]) -> Result<Vec<Method>> {
    match ctx.cfg.raw("methods") {
        Some(s) => s.split(',').map(|m| m.trim().parse()).collect(),
        None => Ok(default.to_vec()),
    }
}

fn cmd_eval(ctx: &Ctx) -> Result<()> {
    let ds = ctx.load_dataset()?;
    let seed = ctx.seed()?;
    let exp = ctx.cfg.raw("experiment").unwrap_or("sim-matrix").to_string();
    let mut cfg = match exp.as_str() {
        "deployment" => EvalConfig::deployment(seed),
        _ => EvalConfig::simulation(seed),
    };
    if exp == "cloth" {
        cfg.n_goals = 11;
    }
    if exp != "deployment" {
        if let Some(w) = ctx.cfg.get::<WorldMode>("world")? {
            cfg.world = WorldVariant::for_mode(w);
        }
    }
    cfg.n_cells = ctx.cfg.get_or("n_cells", cfg.n_cells)?;
    cfg.n_goals = ctx.cfg.get_or("n_goals", cfg.n_goals)?;
    cfg.max_step = ctx.cfg.get_or("max_step", cfg.max_step)?;
    let splits = [Split::TestInterp, Split::TestExtrap];
    let table: ResultsTable = match exp.as_str() {
        "sim-matrix" => {
            let methods = methods_from(ctx, &Method::SIM_MATRIX)?;
            run_matrix(&ctx.kit(&ds, &methods)?, &methods, &splits, &cfg)?
        }
        "deployment" => {
            let methods = methods_from(ctx, &[Method::Irp, Method::OptSim, Method::Avg, Method::IterLinear])?;
            let mut t = run_matrix(&ctx.kit(&ds, &methods)?, &methods, &splits, &cfg)?;
            t.experiment = "deployment".into();
            t
        }
        "online-adaptation" => {
            let swap: usize = ctx.cfg.get_or("swap_step", 5)?;
            run_online_adaptation(&ctx.kit(&ds, &[Method::Irp])?, &cfg, Some(swap), cfg.n_cells)?
        }
        "embodiment" => run_embodiment(&ctx.kit(&ds, &[Method::Irp])?, &cfg, &WorldVariant::EMBODIMENT_LINKS)?,
        "cloth" => {
            let methods = methods_from(ctx, &Method::CLOTH)?;
            run_cloth_eval(&ctx.kit(&ds, &methods)?, &methods, &cfg, CLOTH_GOAL_RANGE)?
        }
        other => return Err(IrpError::format(format!("unknown experiment '{other}'"))),
    };
    let dir = ctx.out_dir()?;
    let results = dir.join(format!("{}_results.json", table.experiment));
    let text = serde_json::to_string(&table).expect("results serialize");
    std::fs::write(&results, text).map_err(|e| IrpError::io(&results, e))?;
    let manifest = summarize(&table, &dir, &ds.hash(), seed, &ctx.cfg)?;
    for f in &manifest.files {
        println!("wrote {}", dir.join(f).display());
    }
    for e in table.errors() {
        log::warn!("{} cell {} goal {}: {}", e.method, e.cell, e.goal, e.error.as_deref().unwrap_or(""));
    }
    Ok(())
}

fn cmd_report(ctx: &Ctx) -> Result<()> {
    let input = ctx
        .cfg
        .raw("input")
        .ok_or_else(|| IrpError::contract("report needs --input <results.json>"))?;
    let text = std::fs::read_to_string(input).map_err(|e| IrpError::io(input, e))?;
    let table: ResultsTable =
        serde_json::from_str(&text).map_err(|e| IrpError::format(format!("{input}: {e}")))?;
    let dir = ctx.out_dir()?;
    let hash = ctx.cfg.raw("dataset_hash").unwrap_or("").to_string();
    let manifest = summarize(&table, &dir, &hash, ctx.seed()?, &ctx.cfg)?;
    for f in &manifest.files {
        println!("wrote {}", dir.join(f).display());
    }
    Ok(())
}

fn cmd_inspect(ctx: &Ctx) -> Result<()> {
    let ds = ctx.load_dataset()?;
    let (n0, n1) = ds.params.dims();
    println!("task: {}", ds.task);
    println!("params: {n0}x{n1}  actions: {:?}  repeats: {}", ds.actions.dims, ds.repeats);
    println!(
        "records: {} ({} invalid)",
        ds.n_records(),
        ds.records.iter().filter(|r| !r.valid).count()
    );
    println!("grid: {}x{} cells of {:.4} m, {} channels", ds.grid_spec.height, ds.grid_spec.width, ds.grid_spec.cell_size(), ds.grid_spec.channels);
    for s in [Split::Train, Split::Validation, Split::TestInterp, Split::TestExtrap] {
        println!("{s}: {:?}", ds.cells(s));
    }
    if ds.splits.is_none() {
        println!("splits: unassigned (default assignment would be {:?})", split_labels(&ds.params, ds.seed)?);
    }
    println!("hash: {}", ds.hash());
    if let Some(p) = ctx.cfg.get::<usize>("cell")? {
        let a: usize = ctx.cfg.get_or("action", 0)?;
        if p >= ds.n_params() || a >= ds.n_actions() {
            return Err(IrpError::contract("cell or action index out of range"));
        }
        let grid = rasterize(&ds.trajectory(p, a, 0), &ds.grid_spec)?;
        for f in write_pgm(&grid, &ctx.out_dir()?, &format!("record_{p}_{a}"))? {
            println!("wrote {}", f.display());
        }
    }
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<()> {
    let file = match &cli.global.config {
        Some(p) => Config::load(p)?,
        None => Config::new(),
    };
    let mut flags = flag_config(cli);
    if let Command::Run(a) = &cli.command {
        if a.log {
            flags.set("log", true);
        }
    }
    let ctx = Ctx { cfg: file.merged(&flags) };
    if let Some(j) = ctx.cfg.get::<usize>("jobs")? {
        // a second initialization in the same process is harmless
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global();
    }
    match &cli.command {
        Command::Gen(_) => cmd_gen(&ctx),
        Command::BuildKnn(_) => cmd_build_knn(&ctx),
        Command::TrainMlp(_) => cmd_train_mlp(&ctx),
        Command::FitBaselines => cmd_fit_baselines(&ctx),
        Command::Run(_) => cmd_run(&ctx),
        Command::Eval(_) => cmd_eval(&ctx),
        Command::Report(_) => cmd_report(&ctx),
        Command::Inspect(_) => cmd_inspect(&ctx),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(1)
        }
    }
}
