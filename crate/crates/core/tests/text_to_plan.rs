//! The propose-score loop with the mock clients.

mod common;

use std::sync::Arc;

use gantry::agents::{build_refinement_prompt, parse_angles, text_to_plan_run, CaseMeta, TextToPlanOptions};
use gantry::llm::{angles_json, HillClimbClient, ScriptedClient};
use gantry::{EnvConfig, Environment};

use common::{standard_phantom, MODEL_REPLIES};

fn env(max_beams: usize) -> Environment {
    let cfg = EnvConfig {
        max_beams,
        ..EnvConfig::default()
    };
    Environment::new(Arc::clone(&standard_phantom()), cfg).unwrap()
}

fn opts(max_beams: usize) -> TextToPlanOptions {
    let mut o = TextToPlanOptions::new(CaseMeta {
        max_beams,
        ..CaseMeta::default()
    });
    o.attach_images = false;
    o
}

#[test]
fn first_reply_truncates_to_seven() {
    let p = parse_angles(MODEL_REPLIES[0], 7).unwrap();
    assert_eq!(p.angles, [10.0, 50.0, 90.0, 130.0, 170.0, 210.0, 250.0]);
    assert_eq!(p.truncated_from, Some(8));

    let mut e = env(7);
    let t = text_to_plan_run(&mut e, &ScriptedClient::new([MODEL_REPLIES[0]]), 1, 0, &opts(7)).unwrap();
    assert_eq!(t.iterations[0].truncated_from, Some(8));
    assert_eq!(t.best_plan.as_deref(), Some(&p.angles[..]));
}

#[test]
fn single_iteration() {
    let mut e = env(5);
    let client = ScriptedClient::new([angles_json(&[0.0, 90.0, 180.0])]);
    let t = text_to_plan_run(&mut e, &client, 1, 0, &opts(5)).unwrap();
    assert_eq!(t.iterations.len(), 1);
    assert_eq!(t.best_plan, Some(vec![0.0, 90.0, 180.0]));
    assert_eq!(t.best_score, t.iterations[0].score);
    assert!(t.complete);
}

#[test]
fn best_is_max_of_replayed_scores() {
    let mut e = env(8);
    let t = text_to_plan_run(&mut e, &ScriptedClient::new(MODEL_REPLIES), 4, 0, &opts(8)).unwrap();
    let scores: Vec<f64> = t.iterations.iter().map(|i| i.score.unwrap()).collect();
    let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(t.best_score, Some(best));
    // Later prompts carry the previous reward, rounded.
    let second = &t.iterations[1].prompt_text;
    assert!(second.contains(&format!("reward of {}", scores[0].round() as i64)), "{second}");
}

#[test]
fn hill_climb_never_loses_its_start() {
    let mut e = env(5);
    let client = HillClimbClient::new(3, 5);
    let t = text_to_plan_run(&mut e, &client, 10, 3, &opts(5)).unwrap();
    assert_eq!(t.iterations.len(), 10);
    let first = t.iterations[0].score.unwrap();
    assert!(t.best_score.unwrap() >= first);
    assert_eq!(t.iterations[0].parsed_angles, Some(HillClimbClient::equally_spaced(5)));
}

#[test]
fn parse_failures_are_retried() {
    let mut e = env(5);
    let client = ScriptedClient::new(["no json here", "still nothing", "{\"gantry_angles\": [15, 195]}"]);
    let t = text_to_plan_run(&mut e, &client, 1, 0, &opts(5)).unwrap();
    let it = &t.iterations[0];
    assert_eq!(it.retries.len(), 2);
    assert_eq!(it.parsed_angles, Some(vec![15.0, 195.0]));
}

#[test]
fn exhausted_retries_record_a_failed_iteration() {
    let mut e = env(5);
    let mut replies = vec!["nope"; 4];
    replies.push("{\"gantry_angles\": [40]}");
    let client = ScriptedClient::new(replies);
    let t = text_to_plan_run(&mut e, &client, 2, 0, &opts(5)).unwrap();
    assert_eq!(t.iterations[0].score, None);
    assert!(t.iterations[0].parse_error.is_some());
    assert_eq!(t.iterations[1].parsed_angles, Some(vec![40.0]));
    assert_eq!(t.best_plan, Some(vec![40.0]));
}

#[test]
fn client_failure_keeps_partial_results() {
    let mut e = env(8);
    let client = ScriptedClient::new(MODEL_REPLIES[..2].iter().copied());
    let t = text_to_plan_run(&mut e, &client, 4, 0, &opts(8)).unwrap();
    assert!(!t.complete);
    assert!(t.error.is_some());
    assert_eq!(t.parsed_count(), 2);
    assert!(t.best_score.is_some());
}

#[test]
fn refinement_prompt_rounds_reward() {
    let meta = CaseMeta::default();
    assert!(build_refinement_prompt(&meta, -230.4).contains("reward of -230"));
}

#[test]
fn images_are_written_when_requested() {
    let dir = common::temp_dir();
    let mut e = env(5);
    let mut o = opts(5);
    o.attach_images = true;
    o.image_dir = Some(dir.path().to_path_buf());
    let client = ScriptedClient::new([angles_json(&[0.0, 120.0, 240.0]), angles_json(&[10.0, 130.0, 250.0])]);
    let t = text_to_plan_run(&mut e, &client, 2, 0, &o).unwrap();
    for it in &t.iterations {
        assert!(!it.images_sent.is_empty());
        for img in &it.images_sent {
            let bytes = std::fs::read(img).unwrap();
            assert_eq!(&bytes[1..4], b"PNG");
        }
    }
}
