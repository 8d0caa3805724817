//! Command-line front end: `gantry <command> ...`.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::agents::dqn::{dqn_train_with, DqnHyperparams};
use crate::agents::prompt::CaseMeta;
use crate::agents::qnet::QNetwork;
use crate::agents::text_to_plan::{text_to_plan_run, TextToPlanOptions};
use crate::dose::{load_dose, save_dose, Plan};
use crate::environment::{score_plan, EnvConfig, Environment};
use crate::eval::comparison::{run_comparison, write_comparison, ChatBackend, EvalSettings, Method};
use crate::eval::dvh::dvh;
use crate::llm::{ChatClient, ClientConfig, HillClimbClient, HttpChatClient, ScriptedClient};
use crate::phantom::{generate_prostate, load_phantom, save_phantom, Phantom, ProstateSpec};

/// Settings for every command, loaded from `--config` and then overridden
/// by flags. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub phantom: ProstateSpec,
    pub env: EnvConfig,
    pub dqn: DqnHyperparams,
    pub llm: ClientConfig,
    pub eval: EvalSettings,
    pub agent: AgentSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentSettings {
    pub iterations: usize,
    pub seed: u64,
    pub target_name: String,
    pub attach_images: bool,
    pub max_parse_retries: u32,
}

impl Default for AgentSettings {
    fn default() -> Self {
        Self {
            iterations: 10,
            seed: 0,
            target_name: "prostate".into(),
            attach_images: true,
            max_parse_retries: 3,
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                serde_json::from_str(&text).with_context(|| format!("parsing config {}", p.display()))
            }
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises") + "\n"
    }

    fn echo(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("config.json"), self.to_json())?;
        Ok(())
    }
}

#[derive(Debug, Parser)]
#[command(name = "gantry", version, about = "Beam-angle planning on voxel phantoms")]
struct Cli {
    /// JSON configuration file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Phantom generation.
    #[command(subcommand)]
    Phantom(PhantomCommand),
    /// Score a plan and write its dose grid.
    Score(ScoreArgs),
    /// Train the deep Q-network.
    TrainDqn(TrainArgs),
    /// Run a planning agent.
    #[command(subcommand)]
    Agent(AgentCommand),
    /// Compare methods over seeded trials.
    Evaluate(EvaluateArgs),
    /// Dose-volume histograms for a saved dose grid.
    Dvh(DvhArgs),
}

#[derive(Debug, Subcommand)]
enum PhantomCommand {
    /// Generate a synthetic prostate phantom.
    Gen(PhantomGenArgs),
}

#[derive(Debug, Args)]
struct PhantomGenArgs {
    /// Grid size, `N` or `NX,NY,NZ`.
    #[arg(long)]
    dims: Option<String>,
    /// Voxel spacing in mm, `S` or `SX,SY,SZ`.
    #[arg(long)]
    spacing: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PhantomSource {
    /// Saved phantom directory; the configured phantom is generated if absent.
    #[arg(long)]
    phantom: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[command(flatten)]
    source: PhantomSource,
    /// Gantry angles in degrees, comma separated.
    #[arg(long, value_delimiter = ',', num_args = 1.., required = true)]
    angles: Vec<f64>,
    /// Directory for the dose grid and resolved config.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    source: PhantomSource,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Backend {
    MockScript,
    MockHillclimb,
    Http,
}

#[derive(Debug, Args)]
struct BackendArgs {
    #[arg(long, value_enum, default_value = "mock-hillclimb")]
    backend: Backend,
    /// JSON array of reply strings for `mock-script`.
    #[arg(long)]
    script: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum AgentCommand {
    /// Run the text-to-plan loop once.
    Run(AgentRunArgs),
}

#[derive(Debug, Args)]
struct AgentRunArgs {
    #[command(flatten)]
    source: PhantomSource,
    #[command(flatten)]
    backend: BackendArgs,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Angle cap for parsed replies (defaults to the environment's max_beams).
    #[arg(long)]
    max_beams: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[command(flatten)]
    source: PhantomSource,
    #[command(flatten)]
    backend: BackendArgs,
    /// Comma-separated subset of random, dqn, text2plan.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    jobs: Option<usize>,
    /// Trained weights to use instead of training a new network.
    #[arg(long)]
    dqn_weights: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DvhArgs {
    #[arg(long)]
    phantom: PathBuf,
    /// Directory written by `score` or `evaluate`.
    #[arg(long)]
    dose: PathBuf,
    #[arg(long)]
    bins: Option<usize>,
    #[arg(long)]
    max_dose: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

/// Parses `N` or `A,B,C` into three values.
fn triple<T: std::str::FromStr + Copy>(s: &str, what: &str) -> Result<[T; 3]> {
    let parts: Vec<T> = s
        .split(',')
        .map(|p| p.trim().parse::<T>())
        .collect::<Result<_, _>>()
        .map_err(|_| anyhow::anyhow!("invalid {what} {s:?}"))?;
    match parts.as_slice() {
        [v] => Ok([*v; 3]),
        [a, b, c] => Ok([*a, *b, *c]),
        _ => bail!("{what} needs one or three comma-separated values, got {s:?}"),
    }
}

fn load_or_generate(source: &PhantomSource, cfg: &RunConfig) -> Result<Phantom> {
    match &source.phantom {
        Some(dir) => load_phantom(dir).with_context(|| format!("loading phantom {}", dir.display())),
        None => Ok(generate_prostate(&cfg.phantom)?),
    }
}

fn case_meta(phantom: &Phantom, cfg: &RunConfig, max_beams: usize) -> CaseMeta {
    CaseMeta {
        case_name: phantom.label.clone(),
        target_name: cfg.agent.target_name.clone(),
        prescription_gy: cfg.env.prescription_gy,
        max_beams,
    }
}

fn read_script(path: Option<&Path>) -> Result<Vec<String>> {
    let path = path.context("--backend mock-script needs --script FILE (a JSON array of replies)")?;
    let text = fs::read_to_string(path).with_context(|| format!("reading script {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("{} is not a JSON array of strings", path.display()))
}

/// Runs the command line `args` (program name first).
pub fn run<I, T>(args: I) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| {
        if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) {
            let _ = e.print();
            std::process::exit(0);
        }
        anyhow::anyhow!(e.to_string().lines().next().unwrap_or("invalid arguments").to_string())
    })?;
    let mut cfg = RunConfig::load(cli.config.as_deref())?;
    match cli.command {
        Command::Phantom(PhantomCommand::Gen(a)) => phantom_gen(&mut cfg, a),
        Command::Score(a) => score(&mut cfg, a),
        Command::TrainDqn(a) => train_dqn(&mut cfg, a),
        Command::Agent(AgentCommand::Run(a)) => agent_run(&mut cfg, a),
        Command::Evaluate(a) => evaluate(&mut cfg, a),
        Command::Dvh(a) => dvh_cmd(&cfg, a),
    }
}

fn phantom_gen(cfg: &mut RunConfig, a: PhantomGenArgs) -> Result<()> {
    if let Some(d) = &a.dims {
        cfg.phantom.dims = triple(d, "dims")?;
    }
    if let Some(s) = &a.spacing {
        cfg.phantom.spacing_mm = triple(s, "spacing")?;
    }
    if let Some(s) = a.seed {
        cfg.phantom.seed = s;
    }
    let phantom = generate_prostate(&cfg.phantom)?;
    if a.out.exists() && fs::read_dir(&a.out)?.next().is_some() {
        bail!("output directory {} exists and is not empty", a.out.display());
    }
    // Write next to the target and rename, so a failure leaves nothing behind.
    let name = a.out.file_name().context("--out needs a directory name")?.to_string_lossy().to_string();
    let parent = a.out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(parent)?;
    let staging = parent.join(format!(".{name}.partial-{}", std::process::id()));
    let written = save_phantom(&phantom, &staging)
        .map_err(anyhow::Error::from)
        .and_then(|_| cfg.echo(&staging));
    if let Err(e) = written {
        let _ = fs::remove_dir_all(&staging);
        return Err(e);
    }
    if a.out.exists() {
        fs::remove_dir(&a.out)?;
    }
    fs::rename(&staging, &a.out)?;
    println!("{}", a.out.display());
    Ok(())
}

fn score(cfg: &mut RunConfig, a: ScoreArgs) -> Result<()> {
    if a.angles.is_empty() {
        bail!("--angles needs at least one angle");
    }
    let phantom = Arc::new(load_or_generate(&a.source, cfg)?);
    let plan = Plan::from_angles(&a.angles, a.angles.len())?;
    let env = Environment::new(Arc::clone(&phantom), cfg.env.clone())?;
    let eval = env.evaluate_plan(&plan)?;
    debug_assert_eq!(score_plan(&eval.dose.dose, &phantom, &cfg.env)?.total, eval.reward.total);
    println!("{}", serde_json::to_string_pretty(&eval.reward)?);
    if let Some(out) = &a.out {
        cfg.echo(out)?;
        save_dose(&eval.dose.dose, &plan.angles(), cfg.env.prescription_gy, &out.join("dose"))?;
        fs::write(out.join("reward.json"), serde_json::to_string_pretty(&eval.reward)? + "\n")?;
    }
    Ok(())
}

fn train_dqn(cfg: &mut RunConfig, a: TrainArgs) -> Result<()> {
    if let Some(e) = a.episodes {
        cfg.dqn.episodes = e;
    }
    if let Some(s) = a.seed {
        cfg.dqn.seed = s;
    }
    let phantom = Arc::new(load_or_generate(&a.source, cfg)?);
    cfg.echo(&a.out)?;
    let env_cfg = cfg.env.clone();
    let trained = dqn_train_with(|| Environment::new(phantom, env_cfg), &cfg.dqn, |i, r| {
        eprintln!("episode {i}: return {r:.3}");
    })?;
    trained.net.save(&a.out.join("weights"))?;
    let mut csv = String::from("episode,return,length\n");
    for (i, (r, l)) in trained.log.episode_returns.iter().zip(&trained.log.episode_lengths).enumerate() {
        csv += &format!("{i},{r},{l}\n");
    }
    fs::write(a.out.join("returns.csv"), csv)?;
    Ok(())
}

fn make_client(cfg: &RunConfig, backend: &BackendArgs, out: &Path, seed: u64, n_beams: usize) -> Result<Box<dyn ChatClient>> {
    Ok(match backend.backend {
        Backend::MockScript => Box::new(ScriptedClient::new(read_script(backend.script.as_deref())?)),
        Backend::MockHillclimb => Box::new(HillClimbClient::new(seed, n_beams)),
        Backend::Http => {
            let mut llm = cfg.llm.clone();
            if llm.call_log.is_none() {
                llm.call_log = Some(out.join("calls.jsonl"));
            }
            Box::new(HttpChatClient::new(llm)?)
        }
    })
}

fn agent_run(cfg: &mut RunConfig, a: AgentRunArgs) -> Result<()> {
    if let Some(n) = a.iterations {
        cfg.agent.iterations = n;
    }
    if let Some(s) = a.seed {
        cfg.agent.seed = s;
    }
    let max_beams = a.max_beams.unwrap_or(cfg.env.max_beams);
    if max_beams == 0 {
        bail!("--max-beams must be positive");
    }
    cfg.env.max_beams = max_beams;
    let phantom = Arc::new(load_or_generate(&a.source, cfg)?);
    // The client is built before anything is written, so configuration
    // errors leave no output behind.
    let client = make_client(cfg, &a.backend, &a.out, cfg.agent.seed, max_beams.min(36))?;
    cfg.echo(&a.out)?;
    let mut env = Environment::new(Arc::clone(&phantom), cfg.env.clone())?;
    let mut opts = TextToPlanOptions::new(case_meta(&phantom, cfg, max_beams));
    opts.attach_images = cfg.agent.attach_images;
    opts.max_parse_retries = cfg.agent.max_parse_retries;
    opts.image_dir = Some(a.out.join("images"));
    let transcript = text_to_plan_run(&mut env, client.as_ref(), cfg.agent.iterations, cfg.agent.seed, &opts)?;
    transcript.save(&a.out.join("transcript.jsonl"))?;
    if let Some(best) = &transcript.best_plan {
        let plan = Plan::from_angles(best, best.len())?;
        let dose = env.plan_dose(&plan)?;
        save_dose(&dose.dose, best, cfg.env.prescription_gy, &a.out.join("dose_best"))?;
    }
    println!("{}", serde_json::to_string_pretty(&transcript.summary())?);
    if !transcript.complete {
        bail!(
            "agent stopped early: {}",
            transcript.error.as_deref().unwrap_or("unknown client error")
        );
    }
    Ok(())
}

fn evaluate(cfg: &mut RunConfig, a: EvaluateArgs) -> Result<()> {
    if let Some(m) = &a.methods {
        cfg.eval.methods = m.iter().map(|s| s.parse::<Method>()).collect::<Result<_, _>>()?;
    }
    if let Some(t) = a.trials {
        cfg.eval.trials_per_method = t;
    }
    if let Some(s) = a.seed {
        cfg.eval.seed = s;
    }
    if let Some(j) = a.jobs {
        cfg.eval.jobs = j;
    }
    let backend = match a.backend.backend {
        Backend::MockHillclimb => ChatBackend::HillClimb,
        Backend::MockScript => ChatBackend::Scripted(read_script(a.backend.script.as_deref())?),
        Backend::Http => {
            let mut llm = cfg.llm.clone();
            if llm.call_log.is_none() {
                llm.call_log = Some(a.out.join("calls.jsonl"));
            }
            ChatBackend::Http(llm)
        }
    };
    let pretrained = match &a.dqn_weights {
        Some(dir) => Some(QNetwork::load(dir).with_context(|| format!("loading weights {}", dir.display()))?),
        None => None,
    };
    let phantom = Arc::new(load_or_generate(&a.source, cfg)?);
    cfg.echo(&a.out)?;
    let result = run_comparison(phantom, &cfg.env, &cfg.eval, &cfg.dqn, &backend, pretrained.as_ref())?;
    write_comparison(&result, cfg.env.prescription_gy, &a.out)?;
    for s in &result.report.skipped {
        eprintln!("skipped {}: {}", s.method, s.reason);
    }
    println!("{}", result.report.to_json().trim_end());
    Ok(())
}

fn dvh_cmd(cfg: &RunConfig, a: DvhArgs) -> Result<()> {
    let phantom = load_phantom(&a.phantom).with_context(|| format!("loading phantom {}", a.phantom.display()))?;
    let (dose, _) = load_dose(&a.dose).with_context(|| format!("loading dose {}", a.dose.display()))?;
    if dose.geometry.dims != phantom.geometry().dims {
        bail!("dose grid {:?} does not match phantom {:?}", dose.geometry.dims, phantom.geometry().dims);
    }
    let bins = a.bins.unwrap_or(cfg.eval.dvh_bins);
    let max = a.max_dose.unwrap_or(cfg.eval.dvh_max_dose_gy);
    fs::create_dir_all(&a.out)?;
    for s in phantom.structures() {
        let curve = dvh(&s.name, &dose, &s.mask, bins, max)?;
        fs::write(a.out.join(format!("dvh_{}.csv", s.name)), curve.to_csv())?;
    }
    Ok(())
}
