use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use slrmig::effects::{annotate_geojson, build_effects, depth_sweep};
use slrmig::fitval::{
    cross_validate, detect_anomalous_origins, fit_model, AnomalyConfig, CvMode, CvOptions, CvPlan,
};
use slrmig::io;
use slrmig::jointmodel::{ablation_single_model, joint_registry, run_baseline, run_joint, JointRun, RUN_NOTES};
use slrmig::migmodels::{
    ModelSpecFile, NeuralConfig, ALPHA_STANDARD_DEFAULT, BETA_CLIMATE_DEFAULT, BETA_STANDARD_DEFAULT,
};
use slrmig::{
    BlockGroup64, Error as CoreError, FloodScenario, JointRunConfig64, MigrationMatrix64, ModelKind, ModelSpec64,
    ZoneGraph64,
};

#[derive(Parser)]
#[command(name = "slrmig", version, about = "Sea-level-rise driven migration simulator")]
struct Cli {
    /// Seed for every random choice (neural init, fold shuffling).
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Worker threads; defaults to all cores. Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check input tables and cross-references.
    Validate(ValidateArgs),
    /// Run a flood scenario and write T, T' (climate) and T'' (standard).
    Simulate(SimulateArgs),
    /// Same as simulate with no flooding.
    Baseline(RunArgs),
    /// Fit model parameters on historical flows.
    Calibrate(FitArgs),
    /// Origin-split cross-validation on historical flows.
    Crossval(CrossvalArgs),
    /// Compare a scenario run directory against a baseline run directory.
    Effects(EffectsArgs),
    /// Direct and indirect totals at fixed depths.
    Sweep(SweepArgs),
}

#[derive(Args)]
struct ValidateArgs {
    #[arg(long)]
    zones: PathBuf,
    #[arg(long)]
    block_groups: Option<PathBuf>,
    #[arg(long)]
    flows: Option<PathBuf>,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long)]
    zones: PathBuf,
    #[arg(long)]
    block_groups: PathBuf,
    #[arg(long)]
    year: i32,
    /// Kind name or model JSON file for displaced residents.
    #[arg(long, default_value = "ext_radiation")]
    climate_model: String,
    #[arg(long, default_value_t = BETA_CLIMATE_DEFAULT)]
    climate_beta: f64,
    /// Kind name or model JSON file for ordinary moves.
    #[arg(long, default_value = "ext_radiation")]
    standard_model: String,
    #[arg(long, default_value_t = BETA_STANDARD_DEFAULT)]
    standard_beta: f64,
    /// Fraction of dry-part population that moves.
    #[arg(long, default_value_t = ALPHA_STANDARD_DEFAULT)]
    alpha: f64,
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Preset (none, medium, high) or scenario JSON file.
    #[arg(long)]
    scenario: String,
    /// Drive the climate flows with the standard model.
    #[arg(long)]
    single_model: bool,
}

#[derive(Args, Clone)]
struct OriginArgs {
    /// Comma-separated origin ids; default all zones.
    #[arg(long, value_delimiter = ',')]
    origins: Vec<String>,
    /// Restrict to coastal origins flagged by the outflow-jump rule.
    #[arg(long, conflicts_with = "exclude_anomalous")]
    anomalous_only: bool,
    /// Drop origins flagged by the outflow-jump rule.
    #[arg(long)]
    exclude_anomalous: bool,
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    zones: PathBuf,
    #[arg(long)]
    flows: PathBuf,
    #[arg(long)]
    kind: ModelKind,
    #[command(flatten)]
    origins: OriginArgs,
    #[command(flatten)]
    neural: NeuralArgs,
}

#[derive(Args, Clone)]
struct NeuralArgs {
    #[arg(long, default_value = "64,64", value_delimiter = ',')]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 400)]
    epochs: usize,
    #[arg(long, default_value_t = 3e-3)]
    learning_rate: f64,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Kfold,
    Loo,
}

#[derive(Args)]
struct CrossvalArgs {
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long, value_enum, default_value = "kfold")]
    mode: Mode,
    #[arg(long, default_value_t = 5)]
    folds: usize,
}

#[derive(Args)]
struct EffectsArgs {
    #[arg(long)]
    scenario_dir: PathBuf,
    #[arg(long)]
    baseline_dir: PathBuf,
    /// Percent thresholds.
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,3,6,9")]
    thresholds: Vec<f64>,
    /// Also flag counties with flooded residents.
    #[arg(long)]
    include_direct: bool,
    /// County boundaries to annotate.
    #[arg(long)]
    geojson: Option<PathBuf>,
    #[arg(long, default_value = "id")]
    id_property: String,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6")]
    depths: Vec<u8>,
    #[arg(long, value_delimiter = ',', default_value = "0.5,1,3,6,9")]
    thresholds: Vec<f64>,
    #[arg(long)]
    include_direct: bool,
}

#[derive(Serialize)]
struct FileRecord {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest {
    command: String,
    version: &'static str,
    seed: u64,
    threads: Option<usize>,
    inputs: Vec<FileRecord>,
    config: Value,
    elapsed_s: f64,
    outputs: Vec<FileRecord>,
    notes: Vec<&'static str>,
}

fn sha256_file(path: &Path) -> Result<FileRecord> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(FileRecord {
        path: path.display().to_string(),
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

struct Ctx {
    seed: u64,
    threads: Option<usize>,
    out: PathBuf,
    started: Instant,
}

impl Ctx {
    fn out_path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn manifest(&self, command: &str, inputs: &[&Path], config: Value, outputs: &[PathBuf]) -> Result<()> {
        let m = Manifest {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION"),
            seed: self.seed,
            threads: self.threads,
            inputs: inputs.iter().map(|p| sha256_file(p)).collect::<Result<_>>()?,
            config,
            elapsed_s: self.started.elapsed().as_secs_f64(),
            outputs: outputs.iter().map(|p| sha256_file(p)).collect::<Result<_>>()?,
            notes: RUN_NOTES.to_vec(),
        };
        io::write_json(&self.out_path("manifest.json"), &m)?;
        Ok(())
    }
}

fn model_spec(arg: &str, beta: f64) -> Result<ModelSpec64> {
    if let Ok(kind) = arg.parse::<ModelKind>() {
        return Ok(match kind {
            ModelKind::Radiation => ModelSpec64::radiation(),
            ModelKind::Neural => bail!("neural models need a model JSON file with weights_path"),
            k => ModelSpec64::with_beta(k, beta)?,
        });
    }
    let path = Path::new(arg);
    let text = fs::read_to_string(path).with_context(|| format!("model `{arg}` is neither a kind nor a file"))?;
    let file: ModelSpecFile = serde_json::from_str(&text).with_context(|| format!("parsing {arg}"))?;
    Ok(file.resolve(path.parent().unwrap_or(Path::new(".")))?)
}

fn load_run_inputs(run: &RunArgs) -> Result<(ZoneGraph64, Vec<BlockGroup64>)> {
    let counties = io::read_zone_graph(&run.zones)?;
    let bgs = io::read_block_groups(&run.block_groups)?;
    Ok((counties, bgs))
}

fn run_config(run: &RunArgs, scenario: FloodScenario) -> Result<JointRunConfig64> {
    Ok(JointRunConfig64 {
        scenario,
        year: run.year,
        climate_model: model_spec(&run.climate_model, run.climate_beta)?,
        standard_model: model_spec(&run.standard_model, run.standard_beta)?,
        alpha_standard: run.alpha,
    })
}

fn run_echo(run: &RunArgs, scenario: &FloodScenario) -> Value {
    json!({
        "scenario": scenario,
        "year": run.year,
        "climate_model": run.climate_model,
        "climate_beta": run.climate_beta,
        "standard_model": run.standard_model,
        "standard_beta": run.standard_beta,
        "alpha": run.alpha,
    })
}

fn write_run(ctx: &Ctx, command: &str, run: &JointRun<f64>, args: &RunArgs, mut echo: Value) -> Result<()> {
    let outputs = vec![
        ctx.out_path("T.csv"),
        ctx.out_path("T_climate.csv"),
        ctx.out_path("T_standard.csv"),
        ctx.out_path("split.csv"),
    ];
    io::write_triplets(&outputs[0], &run.total)?;
    io::write_triplets(&outputs[1], &run.climate)?;
    io::write_triplets(&outputs[2], &run.standard)?;
    io::write_split(&outputs[3], &run.split)?;
    echo["totals"] = json!({
        "T": run.total.total(),
        "T_climate": run.climate.total(),
        "T_standard": run.standard.total(),
        "depth_ft": run.split.depth_ft,
    });
    ctx.manifest(command, &[&args.zones, &args.block_groups], echo, &outputs)?;
    println!(
        "{command}: depth {} ft, climate migrants {:.3}, standard migrants {:.3} -> {}",
        run.split.depth_ft,
        run.climate.total(),
        run.standard.total(),
        ctx.out.display()
    );
    Ok(())
}

fn cmd_validate(args: &ValidateArgs) -> Result<bool> {
    let mut errors: Vec<String> = Vec::new();
    let graph = match io::read_zone_graph::<f64>(&args.zones) {
        Ok(g) => {
            println!("zones: {} rows ok", g.len());
            Some(g)
        }
        Err(e) => {
            errors.push(e.to_string());
            None
        }
    };
    if let Some(path) = &args.block_groups {
        match io::read_block_groups::<f64>(path) {
            Ok(bgs) => {
                println!("block groups: {} rows ok", bgs.len());
                if let Some(g) = &graph {
                    let orphans = io::orphan_block_groups(&bgs, g);
                    if !orphans.is_empty() {
                        errors.push(CoreError::ReferentialIntegrity { offenders: orphans }.to_string());
                    }
                }
            }
            Err(e) => errors.push(e.to_string()),
        }
    }
    if let (Some(path), Some(g)) = (&args.flows, &graph) {
        match io::read_flows(path, g) {
            Ok(f) => println!("flows: {} years ok", f.len()),
            Err(e) => errors.push(e.to_string()),
        }
    }
    for e in &errors {
        println!("error: {e}");
    }
    println!("{} error(s)", errors.len());
    Ok(errors.is_empty())
}

fn select_origins(
    graph: &ZoneGraph64,
    flows: &BTreeMap<i32, MigrationMatrix64>,
    sel: &OriginArgs,
) -> Result<Vec<usize>> {
    let mut origins: Vec<usize> = if sel.origins.is_empty() {
        (0..graph.len()).collect()
    } else {
        sel.origins
            .iter()
            .map(|id| graph.index_of(id).ok_or_else(|| anyhow!(CoreError::ReferentialIntegrity { offenders: vec![id.clone()] })))
            .collect::<Result<_>>()?
    };
    if sel.anomalous_only || sel.exclude_anomalous {
        let flagged: Vec<usize> = detect_anomalous_origins(flows, graph, &AnomalyConfig::default())?
            .iter()
            .filter_map(|f| graph.index_of(&f.origin_id))
            .collect();
        origins.retain(|o| flagged.contains(o) == sel.anomalous_only);
    }
    if origins.is_empty() {
        bail!(CoreError::InsufficientData("no origins selected".into()));
    }
    Ok(origins)
}

fn neural_config(args: &NeuralArgs, seed: u64) -> NeuralConfig {
    NeuralConfig {
        hidden: args.hidden.clone(),
        epochs: args.epochs,
        learning_rate: args.learning_rate,
        seed,
    }
}

fn cmd_calibrate(ctx: &Ctx, args: &FitArgs) -> Result<()> {
    let graph = io::read_zone_graph::<f64>(&args.zones)?;
    let flows = io::read_flows(&args.flows, &graph)?;
    let origins = select_origins(&graph, &flows, &args.origins)?;
    let opts = CvOptions {
        neural: neural_config(&args.neural, ctx.seed),
    };
    let mut per_year = BTreeMap::new();
    let mut outputs = vec![ctx.out_path("calibration.json")];
    if args.kind == ModelKind::Neural {
        // Pool all years into one set of proportions.
        let pooled = flows
            .values()
            .skip(1)
            .try_fold(flows.values().next().expect("nonempty").clone(), |acc, t| acc.add(t))?;
        let fit = fit_model(&pooled, &origins, &graph, args.kind, &opts)?;
        let weights = ctx.out_path("weights.json");
        fs::write(&weights, fit.spec.neural.as_ref().expect("trained").to_json()?)?;
        let spec_path = ctx.out_path("model.json");
        io::write_json(
            &spec_path,
            &ModelSpecFile {
                kind: ModelKind::Neural,
                beta: None,
                weights_path: Some("weights.json".into()),
            },
        )?;
        outputs.extend([weights, spec_path]);
        per_year.insert("pooled".to_string(), json!({ "alpha": fit.alpha }));
    } else {
        for (year, t) in &flows {
            let fit = fit_model(t, &origins, &graph, args.kind, &opts)?;
            per_year.insert(year.to_string(), json!({ "alpha": fit.alpha, "beta": fit.beta }));
        }
    }
    let mean = |key: &str| -> Option<f64> {
        let v: Vec<f64> = per_year.values().filter_map(|r| r[key].as_f64()).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let alpha = mean("alpha");
    let beta = mean("beta");
    let beta_text = beta.map_or("n/a".to_string(), |b| format!("{b:.6}"));
    let report = json!({
        "kind": args.kind,
        "origins": origins.len(),
        "per_year": per_year,
        "alpha": alpha,
        "beta": beta.map_or(json!("n/a"), |b| json!(b)),
    });
    io::write_json(&outputs[0], &report)?;
    ctx.manifest(
        "calibrate",
        &[&args.zones, &args.flows],
        json!({ "kind": args.kind, "origins": origins.len() }),
        &outputs,
    )?;
    println!("kind: {}", args.kind);
    println!("beta: {beta_text}");
    println!("alpha: {:.6}", alpha.unwrap_or(f64::NAN));
    Ok(())
}

fn cmd_crossval(ctx: &Ctx, args: &CrossvalArgs) -> Result<()> {
    let fit = &args.fit;
    let graph = io::read_zone_graph::<f64>(&fit.zones)?;
    let flows = io::read_flows(&fit.flows, &graph)?;
    let origins = select_origins(&graph, &flows, &fit.origins)?;
    let plan = CvPlan {
        mode: match args.mode {
            Mode::Kfold => CvMode::KFold(args.folds),
            Mode::Loo => CvMode::LeaveOneOut,
        },
        origins,
        seed: ctx.seed,
    };
    let opts = CvOptions {
        neural: neural_config(&fit.neural, ctx.seed),
    };
    let report = cross_validate(&flows, &graph, fit.kind, &plan, &opts)?;
    let path = ctx.out_path("cv_report.json");
    io::write_json(&path, &report)?;
    ctx.manifest(
        "crossval",
        &[&fit.zones, &fit.flows],
        json!({ "kind": fit.kind, "mode": plan.mode, "origins": plan.origins.len() }),
        &[path],
    )?;
    println!("kind: {}  folds: {}", fit.kind, report.n_folds);
    match &report.beta {
        Some(b) => println!("beta: {:.6} ({:.6})", b.mean, b.std),
        None => println!("beta: n/a"),
    }
    if let Some(a) = &report.alpha {
        println!("alpha: {:.6} ({:.6})", a.mean, a.std);
    }
    for (name, s) in &report.metrics {
        println!("{name}: {:.4} ({:.4})", s.mean, s.std);
    }
    Ok(())
}

fn load_run_dir(dir: &Path) -> Result<JointRun<f64>> {
    let split = io::read_split::<f64>(&dir.join("split.csv"))?;
    let reg = joint_registry(&split)?;
    let read = |name: &str| io::read_triplets::<f64>(&dir.join(name), reg.clone(), reg.clone());
    Ok(JointRun {
        total: read("T.csv")?,
        climate: read("T_climate.csv")?,
        standard: read("T_standard.csv")?,
        split,
    })
}

fn fractions(percent: &[f64]) -> Vec<f64> {
    percent.iter().map(|p| p / 100.0).collect()
}

fn cmd_effects(ctx: &Ctx, args: &EffectsArgs) -> Result<()> {
    let scenario = load_run_dir(&args.scenario_dir)?;
    let baseline = load_run_dir(&args.baseline_dir)?;
    let thresholds = fractions(&args.thresholds);
    let report = build_effects(&scenario, &baseline, &thresholds, args.include_direct)?;
    let mut outputs = vec![ctx.out_path("effects.csv"), ctx.out_path("effects.json")];
    io::write_effects_csv(&outputs[0], &report)?;
    io::write_json(&outputs[1], &report)?;
    let mut inputs: Vec<PathBuf> = ["split.csv", "T.csv", "T_climate.csv", "T_standard.csv"]
        .iter()
        .flat_map(|f| [args.scenario_dir.join(f), args.baseline_dir.join(f)])
        .collect();
    if let Some(g) = &args.geojson {
        let mut value: Value = serde_json::from_str(&fs::read_to_string(g)?)?;
        let matched = annotate_geojson(&mut value, &report, &args.id_property)?;
        let path = ctx.out_path("effects.geojson");
        io::write_json(&path, &value)?;
        println!("geojson: {matched} features joined");
        outputs.push(path);
        inputs.push(g.clone());
    }
    let inputs: Vec<&Path> = inputs.iter().map(PathBuf::as_path).collect();
    ctx.manifest(
        "effects",
        &inputs,
        json!({ "thresholds": thresholds, "include_direct": args.include_direct }),
        &outputs,
    )?;
    println!("directly affected: {:.1}", report.direct_total);
    for (d, t) in args.thresholds.iter().zip(&report.indirect_totals) {
        println!("indirectly affected at {d}%: {t:.1}");
    }
    Ok(())
}

fn cmd_sweep(ctx: &Ctx, args: &SweepArgs) -> Result<()> {
    let (counties, bgs) = load_run_inputs(&args.run)?;
    let cfg = run_config(&args.run, FloodScenario::none())?;
    let thresholds = fractions(&args.thresholds);
    let rows = depth_sweep(&counties, &bgs, &cfg, &args.depths, &thresholds, args.include_direct)?;
    let path = ctx.out_path("sweep.csv");
    let mut text = String::from("depth_ft,direct_total");
    for d in &args.thresholds {
        text.push_str(&format!(",indirect_d{d}"));
    }
    text.push('\n');
    for r in &rows {
        text.push_str(&format!("{},{}", r.depth_ft, r.direct_total));
        for t in &r.indirect_totals {
            text.push_str(&format!(",{t}"));
        }
        text.push('\n');
    }
    fs::write(&path, &text)?;
    let mut echo = run_echo(&args.run, &cfg.scenario);
    echo["depths"] = json!(args.depths);
    echo["thresholds"] = json!(thresholds);
    ctx.manifest("sweep", &[&args.run.zones, &args.run.block_groups], echo, &[path])?;
    print!("{text}");
    Ok(())
}

fn run(cli: &Cli) -> Result<bool> {
    let ctx = Ctx {
        seed: cli.seed,
        threads: cli.threads,
        out: cli.out.clone(),
        started: Instant::now(),
    };
    if !matches!(cli.cmd, Command::Validate(_)) {
        fs::create_dir_all(&ctx.out).with_context(|| format!("creating {}", ctx.out.display()))?;
    }
    match &cli.cmd {
        Command::Validate(a) => return cmd_validate(a),
        Command::Simulate(a) => {
            let scenario = io::load_scenario(&a.scenario)?;
            let (counties, bgs) = load_run_inputs(&a.run)?;
            let cfg = run_config(&a.run, scenario)?;
            let run = if a.single_model {
                ablation_single_model(&counties, &bgs, &cfg)?
            } else {
                run_joint(&counties, &bgs, &cfg)?
            };
            let mut echo = run_echo(&a.run, &cfg.scenario);
            echo["single_model"] = json!(a.single_model);
            write_run(&ctx, "simulate", &run, &a.run, echo)?;
        }
        Command::Baseline(a) => {
            let (counties, bgs) = load_run_inputs(a)?;
            let cfg = run_config(a, FloodScenario::none())?;
            let run = run_baseline(&counties, &bgs, &cfg)?;
            write_run(&ctx, "baseline", &run, a, run_echo(a, &cfg.scenario))?;
        }
        Command::Calibrate(a) => cmd_calibrate(&ctx, a)?,
        Command::Crossval(a) => cmd_crossval(&ctx, a)?,
        Command::Effects(a) => cmd_effects(&ctx, a)?,
        Command::Sweep(a) => cmd_sweep(&ctx, a)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match pool.install(|| run(&cli)) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            let internal = matches!(e.downcast_ref::<CoreError>(), Some(CoreError::Internal(_)));
            ExitCode::from(if internal { 2 } else { 1 })
        }
    }
}
