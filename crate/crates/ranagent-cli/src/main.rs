use clap::{Args, Parser, Subcommand, ValueEnum};
use ranagent::bo::{run_synthetic, PaxboConfig, Synthetic1};
use ranagent::deql::eql::train_eql;
use ranagent::deql::train::{evaluate, telemetry_csv, train_deql, Checkpoint, RunMode, TrainConfig};
use ranagent::exec::{set_threads, Exec};
use ranagent::morl_env::{EnvConfig, LaConfig};
use ranagent::otm::{parse_otm, validate_otm, DomainBounds};
use ranagent::workflow::{calibrate_rate_scale, omega_sweep, qos_scenario, reliability_scenario, sweep_csv, STREAMING_CEILING};
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Environment variable naming the default output directory.
const OUT_ENV: &str = "RANAGENT_OUT";

#[derive(Parser, Debug)]
#[command(name = "ranagent", version, about = "Train, evaluate and run the preference-driven link adaptation stack")]
struct Cli {
    /// Worker threads for data-parallel loops; 1 forces sequential execution.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory (defaults to $RANAGENT_OUT, then ./out).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Train a controller and write a checkpoint plus telemetry.
    Train(TrainArgs),
    /// Recover the front of a checkpoint and report metrics.
    Eval(EvalArgs),
    /// Run the preference optimizer on a benchmark problem.
    Paxbo(PaxboArgs),
    /// Run a closed-loop workflow scenario.
    Workflow(WorkflowArgs),
    /// OTM document tools.
    Otm {
        #[command(subcommand)]
        cmd: OtmCmd,
    },
}

#[derive(Subcommand, Debug)]
enum OtmCmd {
    /// Parse and validate a document.
    Validate { path: PathBuf },
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum EnvKind {
    Dst,
    Ftn,
    La,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum Algo {
    Deql,
    Eql,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum Mode {
    Deterministic,
    Threaded,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum Preset {
    Paper,
    Desk,
}

#[derive(Args, Debug, Serialize)]
struct TrainArgs {
    #[arg(long, value_enum)]
    env: EnvKind,
    /// Fruit tree depth.
    #[arg(long, default_value_t = 6)]
    depth: usize,
    #[arg(long, value_enum, default_value = "deql")]
    algo: Algo,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON file of config overrides.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "paper")]
    preset: Preset,
    #[arg(long, value_enum, default_value = "deterministic")]
    mode: Mode,
    #[arg(long)]
    env_steps: Option<u64>,
}

#[derive(Args, Debug, Serialize)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 480)]
    n_prefs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "lowercase")]
enum Problem {
    Synthetic1,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize, PartialEq)]
#[serde(rename_all = "lowercase")]
enum OnOff {
    On,
    Off,
}

#[derive(Args, Debug, Serialize)]
struct PaxboArgs {
    #[arg(long, value_enum)]
    problem: Problem,
    #[arg(long, value_enum, default_value = "on")]
    tr: OnOff,
    #[arg(long, default_value_t = 60)]
    budget: usize,
    /// Comma-separated seeds.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    seeds: Vec<u64>,
}

#[derive(ValueEnum, Clone, Copy, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum ScenarioKind {
    Reliability,
    QosFlexible,
    QosRigid,
}

#[derive(Args, Debug, Serialize)]
struct WorkflowArgs {
    #[arg(long, value_enum)]
    scenario: ScenarioKind,
    /// Link-adaptation controller checkpoint.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    ticks: Option<usize>,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Domain(String),
}

impl<E: std::error::Error> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Domain(e.to_string())
    }
}

type Res<T> = Result<T, Failure>;

/// Identity of one invocation; its hash tags every output file.
#[derive(Serialize)]
struct RunManifest<'a, A: Serialize> {
    subcommand: &'a str,
    args: &'a A,
    config_path: Option<&'a Path>,
    seeds: Vec<u64>,
    out_dir: &'a Path,
    config_hash: Option<String>,
}

impl<A: Serialize> RunManifest<'_, A> {
    fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("manifest serializes");
        Sha256::digest(json.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
    }

    fn write(&self, dir: &Path) -> Res<String> {
        let h = self.hash();
        let mut v = serde_json::to_value(self).expect("manifest serializes");
        v["manifest_hash"] = serde_json::Value::String(h.clone());
        write_file(&dir.join("manifest.json"), &serde_json::to_string_pretty(&v).expect("json"))?;
        Ok(h)
    }
}

fn write_file(path: &Path, text: &str) -> Res<()> {
    std::fs::write(path, text).map_err(|e| Failure::Domain(format!("{}: {e}", path.display())))
}

fn write_csv(path: &Path, hash: &str, body: &str) -> Res<()> {
    write_file(path, &format!("# manifest {hash}\n{body}"))
}

fn write_json<T: Serialize>(path: &Path, hash: &str, value: &T) -> Res<()> {
    let mut v = serde_json::to_value(value).map_err(|e| Failure::Domain(e.to_string()))?;
    if let serde_json::Value::Object(map) = &mut v {
        map.insert("manifest_hash".into(), hash.into());
    }
    write_file(path, &serde_json::to_string_pretty(&v).expect("json"))
}

fn out_dir(cli: &Option<PathBuf>, sub: &str) -> Res<PathBuf> {
    let base = cli.clone().or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from)).unwrap_or_else(|| PathBuf::from("out"));
    let dir = base.join(sub);
    std::fs::create_dir_all(&dir).map_err(|e| Failure::Domain(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}

fn exec_for(threads: Option<usize>) -> Exec {
    match threads {
        Some(1) => Exec::Sequential,
        _ => Exec::best(),
    }
}

fn load_checkpoint(path: &Path) -> Res<Checkpoint> {
    if !path.exists() {
        return Err(Failure::Domain(format!("missing checkpoint {}", path.display())));
    }
    Ok(Checkpoint::load(path)?)
}

fn cmd_train(a: &TrainArgs, out: &Option<PathBuf>, exec: Exec) -> Res<()> {
    let env = match a.env {
        EnvKind::Dst => EnvConfig::dst(),
        EnvKind::Ftn => EnvConfig::ftn(a.depth),
        EnvKind::La => EnvConfig::La(LaConfig::default()),
    };
    let mut cfg = match a.preset {
        Preset::Paper => TrainConfig::paper(env),
        Preset::Desk => TrainConfig::desk(env),
    };
    cfg.seed = a.seed;
    if let Some(p) = &a.config {
        let text = std::fs::read_to_string(p).map_err(|e| Failure::Domain(format!("{}: {e}", p.display())))?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Failure::Domain(format!("{}: {e}", p.display())))?;
        cfg = cfg.with_overrides(&v).map_err(|e| Failure::Domain(format!("{}: {e}", p.display())))?;
    }
    if let Some(n) = a.env_steps {
        cfg.env_steps = n;
    }
    let dir = out_dir(out, "train")?;
    let manifest = RunManifest { subcommand: "train", args: a, config_path: a.config.as_deref(), seeds: vec![a.seed], out_dir: &dir, config_hash: Some(cfg.hash()) };
    let h = manifest.write(&dir)?;
    let mode = match a.mode {
        Mode::Deterministic => RunMode::Deterministic,
        Mode::Threaded => RunMode::Threaded,
    };
    let outcome = match a.algo {
        Algo::Deql => train_deql(&cfg, mode, exec)?,
        Algo::Eql => train_eql(&cfg, exec)?,
    };
    // Wall-clock rates would break byte-identical reruns.
    let mut rows = outcome.telemetry.clone();
    if matches!(a.mode, Mode::Deterministic) {
        rows.iter_mut().for_each(|r| r.samples_per_sec = 0.0);
    }
    write_csv(&dir.join("telemetry.csv"), &h, &telemetry_csv(&rows))?;
    write_json(&dir.join("checkpoint.json"), &h, &outcome.checkpoint(&cfg))?;
    println!("updates {} env_steps {} -> {}", outcome.updates, outcome.env_steps, dir.display());
    Ok(())
}

fn cmd_eval(a: &EvalArgs, out: &Option<PathBuf>, exec: Exec) -> Res<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    if a.n_prefs == 0 {
        return Err(Failure::Domain("empty front: no preferences to evaluate".into()));
    }
    let dir = out_dir(out, "eval")?;
    let manifest = RunManifest { subcommand: "eval", args: a, config_path: Some(&a.checkpoint), seeds: vec![a.seed], out_dir: &dir, config_hash: Some(ck.config_hash.clone()) };
    let h = manifest.write(&dir)?;
    if let EnvConfig::La(la) = &ck.config.env {
        let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
        let pts = omega_sweep(&ck.online, la, &grid, a.n_prefs, a.seed, exec)?;
        write_csv(&dir.join("sweep.csv"), &h, &sweep_csv(&pts))?;
        println!("sweep over {} preferences -> {}", grid.len(), dir.display());
        return Ok(());
    }
    let report = evaluate(&ck.online, &ck.config.env, a.n_prefs, a.seed, exec)
        .ok_or_else(|| Failure::Domain("environment has no enumerable front".into()))?;
    if report.recovered == 0 {
        return Err(Failure::Domain("empty front".into()));
    }
    write_json(&dir.join("report.json"), &h, &report)?;
    println!("crf1 {} hypervolume {} recovered {}/{}", report.crf1, report.hypervolume, report.recovered, report.truth);
    Ok(())
}

fn cmd_paxbo(a: &PaxboArgs, out: &Option<PathBuf>) -> Res<()> {
    let dir = out_dir(out, "paxbo")?;
    let manifest = RunManifest { subcommand: "paxbo", args: a, config_path: None, seeds: a.seeds.clone(), out_dir: &dir, config_hash: None };
    let h = manifest.write(&dir)?;
    let cfg = PaxboConfig { trust_region: a.tr == OnOff::On, ..PaxboConfig::default() };
    let (_, opt) = Synthetic1.grid_optimum();
    let tag = if a.tr == OnOff::On { "on" } else { "off" };
    for &seed in &a.seeds {
        let r = run_synthetic(&cfg, a.budget, seed)?;
        write_csv(&dir.join(format!("synthetic1_tr-{tag}_seed{seed}.csv")), &h, &r.trace_csv)?;
        let best = r.best_feasible.map_or("none".to_string(), |b| format!("{b:.6}"));
        println!("seed {seed} best {best} grid {opt:.6} violations {}", r.violations);
    }
    Ok(())
}

fn cmd_workflow(a: &WorkflowArgs, out: &Option<PathBuf>, exec: Exec) -> Res<()> {
    let ck = load_checkpoint(&a.checkpoint)?;
    if !matches!(ck.config.env, EnvConfig::La(_)) {
        return Err(Failure::Domain(format!("{} is not a link-adaptation checkpoint", a.checkpoint.display())));
    }
    let net = ck.online;
    let mut sc = match a.scenario {
        ScenarioKind::Reliability => reliability_scenario(a.seed),
        kind => {
            let scale = calibrate_rate_scale(&net, STREAMING_CEILING, 0, exec)?;
            qos_scenario(a.seed, matches!(kind, ScenarioKind::QosFlexible), scale)
        }
    };
    sc.cfg.exec = exec;
    if let Some(t) = a.ticks {
        sc.cfg.ticks = t;
    }
    let dir = out_dir(out, &format!("workflow-{}", sc.name))?;
    let manifest = RunManifest { subcommand: "workflow", args: a, config_path: Some(&a.checkpoint), seeds: vec![a.seed], out_dir: &dir, config_hash: Some(ck.config_hash.clone()) };
    let h = manifest.write(&dir)?;
    let trace = sc.run(&net)?;
    let services: Vec<_> = sc.bindings.iter().map(|b| b.service).collect();
    write_csv(&dir.join("trace.csv"), &h, &trace.csv(&services, None))?;
    write_csv(&dir.join("optimizer.csv"), &h, &trace.bo_trace_csv)?;
    write_file(&dir.join("audit.log"), &format!("# manifest {h}\n{}", trace.audit.iter().map(|l| format!("{l}\n")).collect::<String>()))?;
    let last = trace.snapshots.last().expect("initial snapshot");
    let mut otm: serde_json::Value = serde_json::from_str(&last.to_json()).expect("otm json");
    otm["metadata"]["manifest_hash"] = h.clone().into();
    write_file(&dir.join("otm_final.json"), &serde_json::to_string_pretty(&otm).expect("json"))?;
    println!(
        "objective mean {:.4} adaptations {} incumbent {:?} -> {}",
        trace.objective_mean(0),
        trace.adaptations(),
        trace.incumbent,
        dir.display()
    );
    Ok(())
}

fn cmd_otm_validate(path: &Path) -> Res<()> {
    let text = std::fs::read_to_string(path).map_err(|e| Failure::Domain(format!("{}: {e}", path.display())))?;
    let otm = parse_otm(&text).map_err(|e| Failure::Domain(format!("{}: {e}", path.display())))?;
    let report = validate_otm(&otm, &DomainBounds::default());
    print!("{}: {report}", path.display());
    if report.is_valid() {
        Ok(())
    } else {
        Err(Failure::Domain(format!("{}: {} finding(s)", path.display(), report.findings.len())))
    }
}

fn run(cli: Cli) -> Res<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Failure::Usage("--threads must be at least 1".into()));
        }
        set_threads(n);
    }
    let exec = exec_for(cli.threads);
    match &cli.cmd {
        Cmd::Train(a) => cmd_train(a, &cli.out, exec),
        Cmd::Eval(a) => cmd_eval(a, &cli.out, exec),
        Cmd::Paxbo(a) => cmd_paxbo(a, &cli.out),
        Cmd::Workflow(a) => cmd_workflow(a, &cli.out, exec),
        Cmd::Otm { cmd: OtmCmd::Validate { path } } => cmd_otm_validate(path),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Domain(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(m)) => {
            eprintln!("usage: {m}");
            ExitCode::from(2)
        }
    }
}
