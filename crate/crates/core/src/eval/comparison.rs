//! Batch trials per method, statistics across methods, and the run
//! directory they are written to.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::dvh::{dvh, DvhCurve, DvhError};
use super::stats::{mean, one_way_anova, sample_std, two_sample_t, AnovaResult, StatsError, TTestResult};
use crate::agents::dqn::{dqn_train, rollout, DqnError, DqnHyperparams, TrainingLog};
use crate::agents::prompt::CaseMeta;
use crate::agents::qnet::QNetwork;
use crate::agents::random::random_plan;
use crate::agents::text_to_plan::{text_to_plan_run, AgentTranscript, TextToPlanError, TextToPlanOptions};
use crate::dose::{save_dose, BeamDoseCache, DoseError, DoseGrid, Plan};
use crate::environment::{EnvConfig, EnvError, Environment};
use crate::llm::{ChatClient, ClientConfig, HillClimbClient, HttpChatClient, ScriptedClient};
use crate::par::{self, Execution};
use crate::phantom::Phantom;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("trials_per_method must be at least 2, got {0}")]
    TooFewTrials(usize),
    #[error("no methods requested")]
    NoMethods,
    #[error("unknown method {0:?} (expected random, dqn or text_to_plan)")]
    UnknownMethod(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Dose(#[from] DoseError),
    #[error(transparent)]
    Dqn(#[from] DqnError),
    #[error(transparent)]
    TextToPlan(#[from] TextToPlanError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Dvh(#[from] DvhError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Random,
    Dqn,
    TextToPlan,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::Dqn => "dqn",
            Method::TextToPlan => "text_to_plan",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "random" => Ok(Method::Random),
            "dqn" | "rl" => Ok(Method::Dqn),
            "text_to_plan" | "text2plan" | "text-to-plan" => Ok(Method::TextToPlan),
            other => Err(EvalError::UnknownMethod(other.to_string())),
        }
    }
}

/// Where text-to-plan replies come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ChatBackend {
    /// Seeded hill-climbing stand-in, one instance per trial.
    HillClimb,
    /// The same scripted replies replayed for every trial.
    Scripted(Vec<String>),
    /// A live chat-completions endpoint shared by all trials.
    Http(ClientConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub methods: Vec<Method>,
    pub trials_per_method: usize,
    pub seed: u64,
    /// Worker threads for trial loops; 1 runs everything in order.
    pub jobs: usize,
    pub dvh_bins: usize,
    pub dvh_max_dose_gy: f64,
    pub text_to_plan_iterations: usize,
    pub attach_images: bool,
    /// Exploration rate of the trained Q-network during evaluation
    /// rollouts, so trials differ from one another.
    pub dqn_eval_epsilon: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            methods: vec![Method::Random, Method::Dqn, Method::TextToPlan],
            trials_per_method: 30,
            seed: 0,
            jobs: 1,
            dvh_bins: 150,
            dvh_max_dose_gy: 150.0,
            text_to_plan_iterations: 10,
            attach_images: true,
            dqn_eval_epsilon: 0.1,
        }
    }
}

/// SplitMix64 output for `x`; used to derive independent trial seeds.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of trial `i`. Independent of the method, so two methods run with
/// the same base seed see the same seed list.
pub fn trial_seed(base: u64, i: usize) -> u64 {
    splitmix64(base.wrapping_add(i as u64))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSet {
    pub method: Method,
    pub rewards: Vec<f64>,
    pub plans: Vec<Vec<f64>>,
    pub seeds: Vec<u64>,
}

impl TrialSet {
    pub fn best_index(&self) -> usize {
        let mut best = 0;
        for (i, &r) in self.rewards.iter().enumerate() {
            if r > self.rewards[best] {
                best = i;
            }
        }
        best
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("trial,seed,reward,angles\n");
        for i in 0..self.rewards.len() {
            let angles: Vec<String> = self.plans[i].iter().map(|a| format!("{a}")).collect();
            out += &format!("{i},{},{},{}\n", self.seeds[i], self.rewards[i], angles.join(";"));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: Method,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub best_reward: f64,
    pub best_angles: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseResult {
    pub a: Method,
    pub b: Method,
    #[serde(flatten)]
    pub test: TTestResult,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedMethod {
    pub method: Method,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub note: String,
    pub trials_per_method: usize,
    pub base_seed: u64,
    pub methods: Vec<MethodSummary>,
    pub anova: Option<AnovaResult>,
    pub pairwise: Vec<PairwiseResult>,
    pub skipped: Vec<SkippedMethod>,
}

impl StatsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialises") + "\n"
    }
}

pub const TRIALS_NOTE: &str = "trials_per_method defaults to 30, which gives ANOVA df (2, 87) for three methods \
and pairwise t df 58; the evaluation protocol also mentions 100 plans per model, which is reachable by \
raising trials_per_method";

#[derive(Debug, Clone)]
pub struct BestPlan {
    pub angles: Vec<f64>,
    pub reward: f64,
    pub dose: DoseGrid,
}

#[derive(Debug, Clone)]
pub struct ComparisonResult {
    pub report: StatsReport,
    pub trial_sets: Vec<TrialSet>,
    pub dvhs: BTreeMap<Method, Vec<DvhCurve>>,
    pub best: BTreeMap<Method, BestPlan>,
    pub dqn_log: Option<TrainingLog>,
    pub transcripts: Vec<AgentTranscript>,
}

/// Computes the report from finished trial sets.
pub fn summarize(trial_sets: &[TrialSet], skipped: Vec<SkippedMethod>, trials: usize, seed: u64) -> Result<StatsReport, EvalError> {
    let methods = trial_sets
        .iter()
        .map(|t| {
            let b = t.best_index();
            MethodSummary {
                method: t.method,
                n: t.rewards.len(),
                mean: mean(&t.rewards),
                std: sample_std(&t.rewards),
                best_reward: t.rewards[b],
                best_angles: t.plans[b].clone(),
            }
        })
        .collect();
    let groups: Vec<&[f64]> = trial_sets.iter().map(|t| t.rewards.as_slice()).collect();
    let anova = if groups.len() >= 2 {
        Some(one_way_anova(&groups)?)
    } else {
        None
    };
    let mut pairwise = Vec::new();
    for i in 0..trial_sets.len() {
        for j in i + 1..trial_sets.len() {
            pairwise.push(PairwiseResult {
                a: trial_sets[i].method,
                b: trial_sets[j].method,
                test: two_sample_t(&trial_sets[i].rewards, &trial_sets[j].rewards)?,
            });
        }
    }
    Ok(StatsReport {
        note: TRIALS_NOTE.to_string(),
        trials_per_method: trials,
        base_seed: seed,
        methods,
        anova,
        pairwise,
        skipped,
    })
}

/// Runs every requested method for `trials_per_method` seeded trials on
/// `phantom`. A method that cannot run (for example a live endpoint without
/// credentials) is skipped and listed in the report. The DQN is trained with
/// `dqn` (its seed replaced by the evaluation seed) unless `pretrained` is
/// given.
pub fn run_comparison(
    phantom: Arc<Phantom>,
    cfg: &EnvConfig,
    settings: &EvalSettings,
    dqn: &DqnHyperparams,
    backend: &ChatBackend,
    pretrained: Option<&QNetwork>,
) -> Result<ComparisonResult, EvalError> {
    if settings.trials_per_method < 2 {
        return Err(EvalError::TooFewTrials(settings.trials_per_method));
    }
    if settings.methods.is_empty() {
        return Err(EvalError::NoMethods);
    }
    cfg.validate()?;
    let cache = Arc::new(BeamDoseCache::new(Arc::clone(&phantom), cfg.engine.clone())?);
    let exec = Execution::from_jobs(settings.jobs);
    let n = settings.trials_per_method;
    let seeds: Vec<u64> = (0..n).map(|i| trial_seed(settings.seed, i)).collect();
    let new_env = || Environment::with_cache(Arc::clone(&cache), cfg.clone());

    let mut methods = settings.methods.clone();
    methods.sort();
    methods.dedup();

    let mut trial_sets = Vec::new();
    let mut skipped = Vec::new();
    let mut dqn_log = None;
    let mut transcripts = Vec::new();

    par::with_jobs(settings.jobs, || -> Result<(), EvalError> {
        for &method in &methods {
            let results: Vec<Result<(Vec<f64>, f64), EvalError>> = match method {
                Method::Random => par::map_indexed(exec, n, |i| {
                    let env = new_env()?;
                    let mut rng = ChaCha8Rng::seed_from_u64(seeds[i]);
                    let plan = random_plan(cfg, &mut rng);
                    let score = env.evaluate_plan(&plan)?.reward.total;
                    Ok((plan.angles(), score))
                }),
                Method::Dqn => {
                    let trained;
                    let net = match pretrained {
                        Some(net) => net,
                        None => {
                            let mut hyper = dqn.clone();
                            hyper.seed = settings.seed;
                            let t = dqn_train(new_env, &hyper)?;
                            dqn_log = Some(t.log.clone());
                            trained = t.net;
                            &trained
                        }
                    };
                    par::map_indexed(exec, n, |i| {
                        let mut env = new_env()?;
                        let mut rng = ChaCha8Rng::seed_from_u64(seeds[i]);
                        Ok(rollout(&mut env, net, settings.dqn_eval_epsilon, seeds[i], &mut rng)?)
                    })
                }
                Method::TextToPlan => {
                    let shared: Option<Arc<dyn ChatClient>> = match backend {
                        ChatBackend::Http(client_cfg) => match HttpChatClient::new(client_cfg.clone()) {
                            Ok(c) => Some(Arc::new(c)),
                            Err(e) => {
                                skipped.push(SkippedMethod {
                                    method,
                                    reason: e.to_string(),
                                });
                                continue;
                            }
                        },
                        _ => None,
                    };
                    let meta = CaseMeta {
                        case_name: phantom.label.clone(),
                        target_name: "prostate".into(),
                        prescription_gy: cfg.prescription_gy,
                        max_beams: cfg.max_beams,
                    };
                    let mut opts = TextToPlanOptions::new(meta);
                    opts.attach_images = settings.attach_images;
                    let runs: Vec<Result<AgentTranscript, EvalError>> = par::map_indexed(exec, n, |i| {
                        let client: Arc<dyn ChatClient> = match (backend, &shared) {
                            (_, Some(c)) => Arc::clone(c),
                            (ChatBackend::Scripted(lines), _) => Arc::new(ScriptedClient::new(lines.clone())),
                            _ => Arc::new(HillClimbClient::new(seeds[i], cfg.max_beams)),
                        };
                        let mut env = new_env()?;
                        Ok(text_to_plan_run(
                            &mut env,
                            client.as_ref(),
                            settings.text_to_plan_iterations,
                            seeds[i],
                            &opts,
                        )?)
                    });
                    let mut out = Vec::with_capacity(n);
                    let mut failure = None;
                    for (i, run) in runs.into_iter().enumerate() {
                        let t = run?;
                        match (&t.best_plan, t.best_score) {
                            (Some(plan), Some(score)) => out.push(Ok((plan.clone(), score))),
                            _ => {
                                failure.get_or_insert_with(|| {
                                    format!(
                                        "trial {i} produced no valid plan{}",
                                        t.error.as_deref().map(|e| format!(": {e}")).unwrap_or_default()
                                    )
                                });
                            }
                        }
                        transcripts.push(t);
                    }
                    if let Some(reason) = failure {
                        skipped.push(SkippedMethod { method, reason });
                        continue;
                    }
                    out
                }
            };
            let mut set = TrialSet {
                method,
                rewards: Vec::with_capacity(n),
                plans: Vec::with_capacity(n),
                seeds: seeds.clone(),
            };
            for r in results {
                let (angles, reward) = r?;
                set.plans.push(angles);
                set.rewards.push(reward);
            }
            trial_sets.push(set);
        }
        Ok(())
    })?;

    let report = summarize(&trial_sets, skipped, n, settings.seed)?;
    let env = new_env()?;
    let mut dvhs = BTreeMap::new();
    let mut best = BTreeMap::new();
    for set in &trial_sets {
        let b = set.best_index();
        let angles = set.plans[b].clone();
        let plan = Plan::from_angles(&angles, angles.len().max(1))?;
        let dose = env.plan_dose(&plan)?.dose;
        let curves = phantom
            .structures()
            .iter()
            .map(|s| dvh(&s.name, &dose, &s.mask, settings.dvh_bins, settings.dvh_max_dose_gy))
            .collect::<Result<Vec<_>, _>>()?;
        dvhs.insert(set.method, curves);
        best.insert(
            set.method,
            BestPlan {
                angles,
                reward: set.rewards[b],
                dose,
            },
        );
    }
    Ok(ComparisonResult {
        report,
        trial_sets,
        dvhs,
        best,
        dqn_log,
        transcripts,
    })
}

/// Writes `rewards_{method}.csv`, `dvh_{method}_{structure}.csv`,
/// `stats.json`, `dose_{method}_best/` and, for text-to-plan, one transcript
/// per trial under `transcripts/`.
pub fn write_comparison(result: &ComparisonResult, prescription_gy: f64, dir: &Path) -> Result<(), EvalError> {
    std::fs::create_dir_all(dir)?;
    for set in &result.trial_sets {
        std::fs::write(dir.join(format!("rewards_{}.csv", set.method)), set.to_csv())?;
    }
    for (method, curves) in &result.dvhs {
        for c in curves {
            std::fs::write(dir.join(format!("dvh_{method}_{}.csv", c.structure_name)), c.to_csv())?;
        }
    }
    for (method, b) in &result.best {
        save_dose(&b.dose, &b.angles, prescription_gy, &dir.join(format!("dose_{method}_best")))?;
    }
    if let Some(log) = &result.dqn_log {
        let mut csv = String::from("episode,return,length\n");
        for (i, (r, l)) in log.episode_returns.iter().zip(&log.episode_lengths).enumerate() {
            csv += &format!("{i},{r},{l}\n");
        }
        std::fs::write(dir.join("dqn_training_returns.csv"), csv)?;
    }
    if !result.transcripts.is_empty() {
        let tdir = dir.join("transcripts");
        std::fs::create_dir_all(&tdir)?;
        for (i, t) in result.transcripts.iter().enumerate() {
            t.save(&tdir.join(format!("text_to_plan_trial{i:03}.jsonl")))?;
        }
    }
    std::fs::write(dir.join("stats.json"), result.report.to_json())?;
    Ok(())
}
