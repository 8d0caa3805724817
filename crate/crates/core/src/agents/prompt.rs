//! Prompt text for the text-to-plan loop.

use serde::{Deserialize, Serialize};

/// What the prompts need to know about the case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseMeta {
    pub case_name: String,
    /// Anatomical name of the target, e.g. "prostate".
    pub target_name: String,
    pub prescription_gy: f64,
    pub max_beams: usize,
}

impl Default for CaseMeta {
    fn default() -> Self {
        Self {
            case_name: "prostate".into(),
            target_name: "prostate".into(),
            prescription_gy: 100.0,
            max_beams: 5,
        }
    }
}

fn fmt_dose(gy: f64) -> String {
    if gy.fract() == 0.0 {
        format!("{}", gy as i64)
    } else {
        format!("{gy}")
    }
}

/// Reward as shown to the model: nearest integer, halves away from zero.
pub fn format_reward(reward: f64) -> String {
    let r = reward.round();
    if r == 0.0 {
        "0".into()
    } else {
        format!("{}", r as i64)
    }
}

pub fn build_initial_prompt(meta: &CaseMeta) -> String {
    format!(
        "Based on image analysis, optimize the number of beams and their angles to maximize the dose at the PTV ({target}) \
and minimize the dose at the OAR. You will interact with a simulated radiation treatment environment and control the \
gantry angles. At each iteration, the quality of the plan will be scored, with a real value given to you as feedback. \
Your goal is to maximize this score. Provide better gantry angles than before for this simulation in a JSON format.\n\
The plan targets a prescription dose of {rx} Gy at the PTV. Reply with a JSON object whose \"gantry_angles\" key \
lists at most {n} angles in degrees.",
        target = meta.target_name,
        rx = fmt_dose(meta.prescription_gy),
        n = meta.max_beams,
    )
}

pub fn build_refinement_prompt(meta: &CaseMeta, current_reward: f64) -> String {
    format!(
        "Based on image analysis, optimize the number of beams and their angles to maximize the dose at the PTV ({target}) \
and minimizing the dose at OAR. Actually you get a reward of {reward} that you should maximize by focusing the dose on \
the target and avoiding OARs. Provide better gantry angles than before for this simulation in a json format.",
        target = meta.target_name,
        reward = format_reward(current_reward),
    )
}

/// Sent after a reply that contained no usable angle list.
pub fn build_retry_prompt(meta: &CaseMeta, problem: &str) -> String {
    format!(
        "Your previous reply could not be used ({problem}). Answer with a JSON object of the form \
{{\"gantry_angles\": [a1, a2, ...]}} listing at most {n} gantry angles in degrees.",
        n = meta.max_beams,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn initial_prompt_wording() {
        let p = build_initial_prompt(&CaseMeta::default());
        assert!(p.contains("maximize the dose at the PTV"));
        assert!(p.contains("PTV (prostate)"));
        assert!(p.contains("100 Gy"));
        assert!(p.contains("in a JSON format"));
        assert_eq!(p, build_initial_prompt(&CaseMeta::default()));
    }

    #[test]
    fn refinement_rounds_reward() {
        let m = CaseMeta::default();
        assert!(build_refinement_prompt(&m, -230.4).contains("reward of -230 "));
        assert!(build_refinement_prompt(&m, -214.6).contains("reward of -215 "));
        assert!(build_refinement_prompt(&m, -0.3).contains("reward of 0 "));
        assert!(build_refinement_prompt(&m, 17.5).contains("reward of 18 "));
    }
}
