use rand::{Rng, RngCore};

use crate::agent::{AgentError, EpisodeContext, Policy, PolicyKind, Result};

/// Uniform draw among the actions not yet proposed.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    n_actions: usize,
    state_dim: usize,
}

impl RandomPolicy {
    pub fn new(n_actions: usize, state_dim: usize) -> Self {
        Self { n_actions, state_dim }
    }
}

impl Policy for RandomPolicy {
    fn kind(&self) -> PolicyKind {
        PolicyKind::Random
    }

    fn n_actions(&self) -> usize {
        self.n_actions
    }

    fn state_dim(&self) -> usize {
        self.state_dim
    }

    fn choose(&self, ctx: &EpisodeContext, rng: &mut dyn RngCore) -> Result<usize> {
        let mask = ctx.state.mask(self.n_actions);
        let open: Vec<usize> = (0..self.n_actions).filter(|&a| !mask[a]).collect();
        if open.is_empty() {
            return Err(AgentError::ActionsExhausted(self.n_actions));
        }
        Ok(open[rng.random_range(0..open.len())])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn last_open_action_is_forced() {
        let p = RandomPolicy::new(4, 1);
        let mut ctx = p.begin(&[0.0]).unwrap();
        ctx.state.proposed = vec![0, 1, 3];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(p.choose(&ctx, &mut rng).unwrap(), 2);
        ctx.state.proposed.push(2);
        assert!(matches!(p.choose(&ctx, &mut rng), Err(AgentError::ActionsExhausted(4))));
    }

    #[test]
    fn full_episode_is_a_permutation() {
        let p = RandomPolicy::new(9, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut ctx = p.begin(&[0.0, 0.0]).unwrap();
        for _ in 0..9 {
            let a = p.choose(&ctx, &mut rng).unwrap();
            p.observe(&mut ctx, a, 0.5, &[1.0, 1.0]).unwrap();
        }
        let mut seen = ctx.state.proposed.clone();
        seen.sort();
        assert_eq!(seen, (0..9).collect::<Vec<_>>());
    }

    #[test]
    fn uniform_within_three_sigma() {
        let p = RandomPolicy::new(5, 1);
        let mut ctx = p.begin(&[0.0]).unwrap();
        ctx.state.proposed = vec![2];
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 10_000;
        let mut counts = [0usize; 5];
        for _ in 0..n {
            counts[p.choose(&ctx, &mut rng).unwrap()] += 1;
        }
        assert_eq!(counts[2], 0);
        let q = 0.25;
        let sigma = (n as f64 * q * (1.0 - q)).sqrt();
        for a in [0, 1, 3, 4] {
            assert!((counts[a] as f64 - n as f64 * q).abs() < 3.0 * sigma, "{counts:?}");
        }
    }
}
