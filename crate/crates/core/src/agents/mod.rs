//! Planning agents: a uniform random baseline, a deep Q-network and the
//! language-model driven text-to-plan loop.

pub mod dqn;
pub mod parse;
pub mod prompt;
pub mod qnet;
pub mod random;
pub mod text_to_plan;

pub use dqn::{dqn_train, DqnHyperparams, TrainedDqn};
pub use parse::{parse_angles, ParseError, ParsedAngles};
pub use prompt::{build_initial_prompt, build_refinement_prompt, CaseMeta};
pub use qnet::QNetwork;
pub use random::random_plan;
pub use text_to_plan::{text_to_plan_run, AgentTranscript, IterationRecord, TextToPlanOptions};
