//! Episodic gantry-angle selection.
//!
//! An episode starts from an empty plan. Each step either adds the beam for an
//! angle bin or stops; the plan dose is recomputed and the reward handed back
//! is the change in plan score. Summed over an episode the deltas give the
//! final plan score minus the empty-plan score, less any invalid-action
//! penalties.

mod render;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dose::{BeamDoseCache, DoseError, DoseGrid, EngineConfig, Plan, PlanDose};
use crate::phantom::{Phantom, StructureKind};

pub use render::{render_slices_for_prompt, render_state, SliceImage, SlicePlane, StateTensor, PROMPT_IMAGE_SIZE};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error(transparent)]
    Dose(#[from] DoseError),
    #[error("dose grid is not congruent with the phantom")]
    GeometryMismatch,
    #[error("episode is over; call reset first")]
    EpisodeDone,
    #[error("action index {0} is out of range")]
    InvalidAction(usize),
    #[error("invalid environment configuration: {0}")]
    InvalidConfig(String),
    #[error("structure `{0}` has no dose limit")]
    MissingLimit(String),
}

pub type Result<T, E = EnvError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Prescription used to normalise plan doses (Gy).
    pub prescription_gy: f64,
    /// Per-voxel reward for a PTV voxel exactly at target dose.
    pub r_max: f64,
    /// Penalty per Gy above an OAR limit, per voxel.
    pub penalty: f64,
    pub max_beams: usize,
    pub angle_bins: usize,
    /// Width of the PTV homogeneity term; 1 Gy gives `exp(-(T - D)^2)`.
    pub homogeneity_width_gy: f64,
    /// Reward handed back for a repeated angle or an early STOP.
    pub invalid_action_penalty: f64,
    pub normalize_to_prescription: bool,
    pub engine: EngineConfig,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            prescription_gy: 100.0,
            r_max: 1.0,
            penalty: 1.0,
            max_beams: 5,
            angle_bins: 36,
            homogeneity_width_gy: 1.0,
            invalid_action_penalty: 1.0,
            normalize_to_prescription: true,
            engine: EngineConfig::default(),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v.is_finite() && v > 0.0;
        if !(pos(self.prescription_gy) && pos(self.r_max) && pos(self.penalty) && pos(self.homogeneity_width_gy)) {
            return Err(EnvError::InvalidConfig(
                "prescription, r_max, penalty and homogeneity width must be positive".into(),
            ));
        }
        if !(self.invalid_action_penalty.is_finite() && self.invalid_action_penalty >= 0.0) {
            return Err(EnvError::InvalidConfig("invalid_action_penalty must be >= 0".into()));
        }
        if self.max_beams < 1 {
            return Err(EnvError::InvalidConfig("max_beams must be >= 1".into()));
        }
        if self.angle_bins < 2 {
            return Err(EnvError::InvalidConfig("angle_bins must be >= 2".into()));
        }
        if self.angle_bins > 360 {
            return Err(EnvError::InvalidConfig("angle_bins must be <= 360".into()));
        }
        Ok(())
    }

    pub fn bin_angle(&self, bin: usize) -> f64 {
        bin as f64 * (360.0 / self.angle_bins as f64)
    }

    /// Discrete action count: one per angle bin plus STOP.
    pub fn n_actions(&self) -> usize {
        self.angle_bins + 1
    }

    pub fn action(&self, index: usize) -> Result<Action> {
        match index {
            i if i < self.angle_bins => Ok(Action::Bin(i)),
            i if i == self.angle_bins => Ok(Action::Stop),
            i => Err(EnvError::InvalidAction(i)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Action {
    Bin(usize),
    Stop,
}

impl Action {
    pub fn index(self, cfg: &EnvConfig) -> usize {
        match self {
            Action::Bin(b) => b,
            Action::Stop => cfg.angle_bins,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub ptv_term: f64,
    pub oar_terms: BTreeMap<String, f64>,
    pub total: f64,
}

/// Plan score: `Σ_PTV r_max·exp(-((T - D)/σ)²) - Σ_OAR max(0, D - L)·P`.
pub fn score_plan(dose: &DoseGrid, phantom: &Phantom, cfg: &EnvConfig) -> Result<RewardBreakdown> {
    if dose.geometry != *phantom.geometry() {
        return Err(EnvError::GeometryMismatch);
    }
    let mut ptv_term = 0.0;
    let mut oar_terms = BTreeMap::new();
    for s in phantom.structures() {
        match s.kind {
            StructureKind::Ptv => {
                let target = s.target_dose_gy.unwrap_or(cfg.prescription_gy);
                for idx in s.indices() {
                    let z = (target - dose.dose_gy[idx]) / cfg.homogeneity_width_gy;
                    ptv_term += cfg.r_max * (-(z * z)).exp();
                }
            }
            StructureKind::Oar => {
                let limit = s.dose_limit_gy.ok_or_else(|| EnvError::MissingLimit(s.name.clone()))?;
                let mut term = 0.0;
                for idx in s.indices() {
                    term += (dose.dose_gy[idx] - limit).max(0.0) * cfg.penalty;
                }
                oar_terms.insert(s.name.clone(), term);
            }
        }
    }
    let total = ptv_term - oar_terms.values().sum::<f64>();
    Ok(RewardBreakdown {
        ptv_term,
        oar_terms,
        total,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    pub phantom: Arc<Phantom>,
    pub prescription_gy: f64,
    pub chosen_angles: Vec<f64>,
    pub dose: DoseGrid,
    pub last_score: f64,
    /// Accepted actions, including penalised ones.
    pub steps_taken: usize,
    pub invalid_actions: usize,
    pub done: bool,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub reward_delta: f64,
    pub done: bool,
    pub invalid: bool,
}

/// Plan dose and its score.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanEvaluation {
    pub dose: PlanDose,
    pub reward: RewardBreakdown,
}

pub struct Environment {
    cfg: EnvConfig,
    cache: Arc<BeamDoseCache>,
    state: EnvState,
    reset_score: f64,
}

impl Environment {
    pub fn new(phantom: Arc<Phantom>, cfg: EnvConfig) -> Result<Self> {
        let cache = Arc::new(BeamDoseCache::new(phantom, cfg.engine.clone())?);
        Self::with_cache(cache, cfg)
    }

    /// Shares a beam-dose cache between environments on the same phantom.
    pub fn with_cache(cache: Arc<BeamDoseCache>, cfg: EnvConfig) -> Result<Self> {
        cfg.validate()?;
        if *cache.engine() != cfg.engine {
            return Err(EnvError::InvalidConfig(
                "beam-dose cache was built with a different engine configuration".into(),
            ));
        }
        let phantom = Arc::clone(cache.phantom());
        let zero = DoseGrid::zeros(phantom.geometry().clone());
        let reset_score = score_plan(&zero, &phantom, &cfg)?.total;
        let state = EnvState {
            phantom,
            prescription_gy: cfg.prescription_gy,
            chosen_angles: Vec::new(),
            dose: zero,
            last_score: reset_score,
            steps_taken: 0,
            invalid_actions: 0,
            done: false,
            seed: 0,
        };
        Ok(Self {
            cfg,
            cache,
            state,
            reset_score,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn phantom(&self) -> &Arc<Phantom> {
        self.cache.phantom()
    }

    pub fn cache(&self) -> &Arc<BeamDoseCache> {
        &self.cache
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    /// Score of the empty plan.
    pub fn reset_score(&self) -> f64 {
        self.reset_score
    }

    pub fn reset(&mut self, seed: u64) -> &EnvState {
        self.state.chosen_angles.clear();
        self.state.dose = DoseGrid::zeros(self.phantom().geometry().clone());
        self.state.last_score = self.reset_score;
        self.state.steps_taken = 0;
        self.state.invalid_actions = 0;
        self.state.done = false;
        self.state.seed = seed;
        &self.state
    }

    pub fn step_index(&mut self, index: usize) -> Result<StepOutcome> {
        if self.state.done {
            return Err(EnvError::EpisodeDone);
        }
        let action = self.cfg.action(index)?;
        self.step(action)
    }

    pub fn step(&mut self, action: Action) -> Result<StepOutcome> {
        if self.state.done {
            return Err(EnvError::EpisodeDone);
        }
        let cfg = &self.cfg;
        let mut invalid = false;
        let mut stop = false;
        match action {
            Action::Bin(b) if b >= cfg.angle_bins => return Err(EnvError::InvalidAction(b)),
            Action::Bin(b) => {
                let angle = cfg.bin_angle(b);
                if self.state.chosen_angles.contains(&angle) {
                    invalid = true;
                } else {
                    self.state.chosen_angles.push(angle);
                }
            }
            Action::Stop if self.state.chosen_angles.is_empty() => invalid = true,
            Action::Stop => stop = true,
        }
        self.state.steps_taken += 1;

        let reward_delta = if invalid {
            self.state.invalid_actions += 1;
            -cfg.invalid_action_penalty
        } else if stop {
            0.0
        } else {
            let plan = Plan::from_angles(&self.state.chosen_angles, cfg.max_beams)?;
            let eval = self.evaluate_plan(&plan)?;
            let score = eval.reward.total;
            let delta = score - self.state.last_score;
            self.state.dose = eval.dose.dose;
            self.state.last_score = score;
            delta
        };
        self.state.done = stop || self.state.steps_taken >= self.cfg.max_beams;
        Ok(StepOutcome {
            reward_delta,
            done: self.state.done,
            invalid,
        })
    }

    /// Plan dose honouring the normalisation setting.
    pub fn plan_dose(&self, plan: &Plan) -> Result<PlanDose> {
        if self.cfg.normalize_to_prescription {
            Ok(self.cache.plan_dose(plan, self.cfg.prescription_gy)?)
        } else {
            Ok(PlanDose {
                dose: self.cache.sum_plan_dose(plan)?,
                scale: None,
            })
        }
    }

    /// Continuous-angle scoring path used by the random and text-to-plan agents.
    pub fn evaluate_plan(&self, plan: &Plan) -> Result<PlanEvaluation> {
        let dose = self.plan_dose(plan)?;
        let reward = score_plan(&dose.dose, self.phantom(), &self.cfg)?;
        Ok(PlanEvaluation { dose, reward })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::phantom::{generate_prostate_phantom, CtVolume, GridGeometry, Structure};

    fn toy(ptv_doses: &[f64], rectum_dose: Option<f64>) -> (Phantom, DoseGrid) {
        let n = ptv_doses.len() + 1;
        let g = GridGeometry::centered([n, 1, 1], [1.0; 3]).unwrap();
        let ct = CtVolume::filled(g.clone(), 0.0).unwrap();
        let mut ptv = vec![true; n];
        ptv[n - 1] = false;
        let mut rect = vec![false; n];
        rect[n - 1] = true;
        let p = Phantom::new(
            ct,
            vec![Structure::ptv("ptv", ptv, 100.0), Structure::oar("rectum", rect, 50.0)],
            "toy",
        )
        .unwrap();
        let mut dose = ptv_doses.to_vec();
        dose.push(rectum_dose.unwrap_or(0.0));
        (p, DoseGrid { geometry: g, dose_gy: dose })
    }

    #[test]
    fn perfect_target_scores_r_max_per_voxel() {
        let (p, d) = toy(&[100.0; 10], None);
        let r = score_plan(&d, &p, &EnvConfig::default()).unwrap();
        assert_eq!(r.total, 10.0);
        assert_eq!(r.oar_terms["rectum"], 0.0);
    }

    #[test]
    fn oar_excess_is_penalised_linearly() {
        let (p, d) = toy(&[100.0; 10], Some(55.0));
        let r = score_plan(&d, &p, &EnvConfig::default()).unwrap();
        assert_eq!(r.oar_terms["rectum"], 5.0);
        assert_eq!(r.total, 5.0);
    }

    #[test]
    fn one_gray_off_target_gives_inverse_e() {
        let (p, d) = toy(&[99.0], None);
        let r = score_plan(&d, &p, &EnvConfig::default()).unwrap();
        assert!((r.ptv_term - (-1.0f64).exp()).abs() < 1e-15);
        assert!((r.ptv_term - 0.367879).abs() < 1e-6);
    }

    #[test]
    fn mismatched_geometry_is_rejected() {
        let (p, _) = toy(&[100.0; 3], None);
        let other = DoseGrid::zeros(GridGeometry::centered([2, 2, 2], [1.0; 3]).unwrap());
        assert!(matches!(score_plan(&other, &p, &EnvConfig::default()), Err(EnvError::GeometryMismatch)));
    }

    fn env() -> Environment {
        let p = Arc::new(generate_prostate_phantom([24, 24, 16], [5.0; 3], 0).unwrap());
        Environment::new(p, EnvConfig::default()).unwrap()
    }

    #[test]
    fn reset_state() {
        let mut e = env();
        let s = e.reset(3).clone();
        assert_eq!(s.steps_taken, 0);
        assert!(!s.done);
        assert!(s.last_score.abs() < 1e-300);
        assert!(s.last_score >= 0.0);
        assert_eq!(&s, e.reset(3));
    }

    #[test]
    fn duplicate_and_early_stop_are_penalised() {
        let mut e = env();
        e.reset(0);
        let out = e.step(Action::Stop).unwrap();
        assert_eq!(out.reward_delta, -1.0);
        assert!(!out.done && out.invalid);
        e.step(Action::Bin(3)).unwrap();
        let before = e.state().clone();
        let out = e.step(Action::Bin(3)).unwrap();
        assert_eq!(out.reward_delta, -1.0);
        let after = e.state();
        assert_eq!(after.chosen_angles, before.chosen_angles);
        assert_eq!(after.dose, before.dose);
        assert_eq!(after.last_score, before.last_score);
        assert_eq!(after.steps_taken, before.steps_taken + 1);
    }

    #[test]
    fn episode_ends_at_beam_cap_or_stop() {
        let mut e = env();
        e.reset(0);
        for b in 0..4 {
            assert!(!e.step(Action::Bin(b * 7)).unwrap().done);
        }
        assert!(e.step(Action::Bin(30)).unwrap().done);
        assert!(matches!(e.step(Action::Bin(1)), Err(EnvError::EpisodeDone)));
        e.reset(0);
        e.step(Action::Bin(0)).unwrap();
        let out = e.step(Action::Stop).unwrap();
        assert!(out.done);
        assert_eq!(out.reward_delta, 0.0);
        assert!(matches!(e.step_index(99), Err(EnvError::EpisodeDone)));
        e.reset(0);
        assert!(matches!(e.step_index(99), Err(EnvError::InvalidAction(99))));
    }

    #[test]
    fn steps_telescope() {
        let mut e = env();
        e.reset(0);
        let mut sum = 0.0;
        for b in [0, 9, 18, 27] {
            sum += e.step(Action::Bin(b)).unwrap().reward_delta;
        }
        let expected = e.state().last_score - e.reset_score();
        assert!((sum - expected).abs() <= 1e-9 * expected.abs().max(1.0));
    }
}
