//! Random baseline: uniform beam count, uniform angles.

use rand::Rng;

use crate::dose::{degree_key, BeamSpec, Plan};
use crate::environment::EnvConfig;

/// Draws `1..=max_beams` beams with i.i.d. uniform angles on `[0, 360)`,
/// resampling any angle that collides with an earlier one at 1°.
pub fn random_plan<R: Rng + ?Sized>(cfg: &EnvConfig, rng: &mut R) -> Plan {
    // More than 360 beams cannot be distinct at 1°.
    let max = cfg.max_beams.clamp(1, 360);
    let count = rng.gen_range(1..=max);
    let mut keys = Vec::with_capacity(count);
    let mut beams = Vec::with_capacity(count);
    while beams.len() < count {
        let angle: f64 = rng.gen_range(0.0..360.0);
        let key = degree_key(angle);
        if keys.contains(&key) {
            continue;
        }
        keys.push(key);
        beams.push(BeamSpec::at(angle).expect("finite angle, unit weight"));
    }
    Plan::new(beams, cfg.max_beams).expect("distinct angles within the beam cap")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn seeded_draws_repeat() {
        let cfg = EnvConfig::default();
        let a = random_plan(&cfg, &mut ChaCha8Rng::seed_from_u64(9));
        let b = random_plan(&cfg, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn plans_respect_invariants() {
        let cfg = EnvConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..2000 {
            let p = random_plan(&cfg, &mut rng);
            assert!((1..=cfg.max_beams).contains(&p.len()));
            assert!(p.angles().iter().all(|a| (0.0..360.0).contains(a)));
            // Re-validating succeeds.
            Plan::new(p.beams().to_vec(), cfg.max_beams).unwrap();
        }
    }

    #[test]
    fn beam_count_is_uniform() {
        // Chi-square goodness of fit over 10^4 draws, 4 degrees of freedom.
        let cfg = EnvConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 10_000;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            counts[random_plan(&cfg, &mut rng).len() - 1] += 1;
        }
        let expected = n as f64 / 5.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // 0.999 quantile of chi-square with 4 dof.
        assert!(chi2 < 18.467, "chi2 = {chi2}, counts = {counts:?}");
        // Each cell within 3 sigma of its multinomial mean.
        let sigma = (n as f64 * 0.2 * 0.8).sqrt();
        for c in counts {
            assert!((c as f64 - expected).abs() < 3.0 * sigma, "{counts:?}");
        }
    }
}
