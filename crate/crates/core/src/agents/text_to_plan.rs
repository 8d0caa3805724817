//! The text-to-plan loop: show the model the case, parse its angles, score
//! them, feed the reward back, repeat.

use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::parse::parse_angles;
use super::prompt::{build_initial_prompt, build_refinement_prompt, build_retry_prompt, CaseMeta};
use crate::dose::{DoseGrid, Plan};
use crate::environment::{render_slices_for_prompt, EnvError, Environment};
use crate::llm::{ChatClient, ChatMessage, ImageAttachment};

#[derive(Debug, Error)]
pub enum TextToPlanError {
    #[error("max_iterations must be at least 1")]
    NoIterations,
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("writing prompt images: {0}")]
    Io(#[from] std::io::Error),
    #[error("transcript line {line}: {message}")]
    Transcript { line: usize, message: String },
}

#[derive(Debug, Clone)]
pub struct TextToPlanOptions {
    pub meta: CaseMeta,
    /// Extra requests after an unparseable reply before the iteration is
    /// recorded as failed.
    pub max_parse_retries: u32,
    pub attach_images: bool,
    /// Where prompt images are written; image references in the transcript
    /// are paths under this directory. Without it they are bare file names.
    pub image_dir: Option<PathBuf>,
}

impl TextToPlanOptions {
    pub fn new(meta: CaseMeta) -> Self {
        Self {
            meta,
            max_parse_retries: 3,
            attach_images: true,
            image_dir: None,
        }
    }
}

/// A follow-up request made after an unparseable reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exchange {
    pub prompt_text: String,
    pub raw_response: String,
    pub parse_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub index: usize,
    pub prompt_text: String,
    pub images_sent: Vec<String>,
    /// The reply that ended this iteration (the last one on failure).
    pub raw_response: String,
    pub parsed_angles: Option<Vec<f64>>,
    pub score: Option<f64>,
    /// Angle count before cutting the list to the beam limit.
    pub truncated_from: Option<usize>,
    pub parse_error: Option<String>,
    /// Retry requests issued after unparseable replies, in order. The first
    /// reply is in here too when it failed.
    pub retries: Vec<Exchange>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptSummary {
    pub case_name: String,
    pub seed: u64,
    pub iterations: usize,
    pub best_plan: Option<Vec<f64>>,
    pub best_score: Option<f64>,
    pub complete: bool,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AgentTranscript {
    pub case_name: String,
    pub seed: u64,
    pub iterations: Vec<IterationRecord>,
    pub best_plan: Option<Vec<f64>>,
    pub best_score: Option<f64>,
    /// False when the client failed before `max_iterations` were reached.
    pub complete: bool,
    pub error: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum TranscriptLine {
    Iteration(IterationRecord),
    Summary(TranscriptSummary),
}

impl AgentTranscript {
    pub fn parsed_count(&self) -> usize {
        self.iterations.iter().filter(|it| it.score.is_some()).count()
    }

    pub fn summary(&self) -> TranscriptSummary {
        TranscriptSummary {
            case_name: self.case_name.clone(),
            seed: self.seed,
            iterations: self.iterations.len(),
            best_plan: self.best_plan.clone(),
            best_score: self.best_score,
            complete: self.complete,
            error: self.error.clone(),
        }
    }

    /// One JSON object per iteration, then a summary line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for it in &self.iterations {
            out += &serde_json::to_string(&TranscriptLine::Iteration(it.clone())).expect("serialisable");
            out.push('\n');
        }
        out += &serde_json::to_string(&TranscriptLine::Summary(self.summary())).expect("serialisable");
        out.push('\n');
        out
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(self.to_jsonl().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, TextToPlanError> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }

    /// Inverse of [`AgentTranscript::to_jsonl`].
    pub fn from_jsonl(text: &str) -> Result<Self, TextToPlanError> {
        let mut iterations = Vec::new();
        let mut summary = None;
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: TranscriptLine = serde_json::from_str(line).map_err(|e| TextToPlanError::Transcript {
                line: i + 1,
                message: e.to_string(),
            })?;
            match parsed {
                TranscriptLine::Iteration(it) => iterations.push(it),
                TranscriptLine::Summary(s) => summary = Some(s),
            }
        }
        let s = summary.ok_or_else(|| TextToPlanError::Transcript {
            line: 0,
            message: "missing summary line".into(),
        })?;
        Ok(Self {
            case_name: s.case_name,
            seed: s.seed,
            iterations,
            best_plan: s.best_plan,
            best_score: s.best_score,
            complete: s.complete,
            error: s.error,
        })
    }
}

fn prompt_images(
    env: &Environment,
    dose: &DoseGrid,
    opts: &TextToPlanOptions,
    iteration: usize,
) -> Result<(Vec<ImageAttachment>, Vec<String>), TextToPlanError> {
    if !opts.attach_images {
        return Ok((Vec::new(), Vec::new()));
    }
    let mut view = env.state().clone();
    view.dose = dose.clone();
    let case = format!("{}_iter{:02}", opts.meta.case_name, iteration + 1);
    let mut images = Vec::new();
    let mut refs = Vec::new();
    for slice in render_slices_for_prompt(&view) {
        let bytes = slice.to_png();
        let reference = match &opts.image_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir)?;
                let path = dir.join(slice.file_name(&case));
                std::fs::write(&path, &bytes)?;
                path.display().to_string()
            }
            None => slice.file_name(&case),
        };
        images.push(ImageAttachment::png(bytes));
        refs.push(reference);
    }
    Ok((images, refs))
}

/// Runs up to `max_iterations` propose-score rounds. Every parsed plan is
/// scored on `env` through the continuous-angle path; the transcript keeps
/// the best of them (earliest on ties).
pub fn text_to_plan_run(
    env: &mut Environment,
    client: &dyn ChatClient,
    max_iterations: usize,
    seed: u64,
    opts: &TextToPlanOptions,
) -> Result<AgentTranscript, TextToPlanError> {
    if max_iterations == 0 {
        return Err(TextToPlanError::NoIterations);
    }
    env.reset(seed);
    let meta = &opts.meta;
    let mut transcript = AgentTranscript {
        case_name: meta.case_name.clone(),
        seed,
        iterations: Vec::new(),
        best_plan: None,
        best_score: None,
        complete: true,
        error: None,
    };
    let mut history: Vec<ChatMessage> = Vec::new();
    let mut shown_dose = env.state().dose.clone();
    let mut last_score: Option<f64> = None;

    'outer: for index in 0..max_iterations {
        let prompt_text = match last_score {
            None => build_initial_prompt(meta),
            Some(r) => build_refinement_prompt(meta, r),
        };
        let (images, images_sent) = prompt_images(env, &shown_dose, opts, index)?;
        history.push(ChatMessage::user_with_images(prompt_text.clone(), images));

        let mut retries = Vec::new();
        let mut current_prompt = prompt_text.clone();
        let mut failures = 0u32;
        loop {
            let reply = match client.complete(&history) {
                Ok(r) => r,
                Err(e) => {
                    transcript.complete = false;
                    transcript.error = Some(e.to_string());
                    break 'outer;
                }
            };
            history.push(ChatMessage::assistant(reply.clone()));
            match parse_angles(&reply, meta.max_beams) {
                Ok(parsed) => {
                    let plan = Plan::from_angles(&parsed.angles, meta.max_beams).map_err(EnvError::from)?;
                    let eval = env.evaluate_plan(&plan)?;
                    let score = eval.reward.total;
                    if transcript.best_score.is_none_or(|b| score > b) {
                        transcript.best_score = Some(score);
                        transcript.best_plan = Some(parsed.angles.clone());
                    }
                    shown_dose = eval.dose.dose;
                    last_score = Some(score);
                    transcript.iterations.push(IterationRecord {
                        index,
                        prompt_text,
                        images_sent,
                        raw_response: reply,
                        parsed_angles: Some(parsed.angles),
                        score: Some(score),
                        truncated_from: parsed.truncated_from,
                        parse_error: None,
                        retries,
                    });
                    break;
                }
                Err(err) => {
                    retries.push(Exchange {
                        prompt_text: current_prompt.clone(),
                        raw_response: reply.clone(),
                        parse_error: Some(err.to_string()),
                    });
                    if failures >= opts.max_parse_retries {
                        transcript.iterations.push(IterationRecord {
                            index,
                            prompt_text,
                            images_sent,
                            raw_response: reply,
                            parsed_angles: None,
                            score: None,
                            truncated_from: None,
                            parse_error: Some(err.to_string()),
                            retries,
                        });
                        break;
                    }
                    failures += 1;
                    current_prompt = build_retry_prompt(meta, &err.to_string());
                    history.push(ChatMessage::user(current_prompt.clone()));
                }
            }
        }
    }
    Ok(transcript)
}
