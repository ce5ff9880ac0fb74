use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    /// `None` for the final step of an episode.
    pub next_state: Option<Vec<f64>>,
    /// Actions unavailable in `next_state`.
    pub next_mask: Vec<bool>,
    pub terminal: bool,
}

/// Fixed-capacity ring buffer with uniform sampling.
#[derive(Debug, Clone)]
pub struct ReplayMemory {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayMemory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity: capacity.max(1),
            items: Vec::with_capacity(capacity.clamp(1, 1 << 16)),
            next: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// `batch` uniform draws with replacement, or `None` while the memory
    /// holds fewer than `batch` transitions.
    pub fn sample<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Option<Vec<&Transition>> {
        if batch == 0 || self.items.len() < batch {
            return None;
        }
        Some(
            (0..batch)
                .map(|_| &self.items[rng.random_range(0..self.items.len())])
                .collect(),
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(r: f64) -> Transition {
        Transition {
            state: vec![],
            action: 0,
            reward: r,
            next_state: None,
            next_mask: vec![],
            terminal: true,
        }
    }

    #[test]
    fn ring_buffer_overwrites_oldest() {
        let mut m = ReplayMemory::new(3);
        for i in 0..5 {
            m.push(t(i as f64));
        }
        assert_eq!(m.len(), 3);
        let mut rewards: Vec<f64> = m.items.iter().map(|x| x.reward).collect();
        rewards.sort_by(f64::total_cmp);
        assert_eq!(rewards, vec![2.0, 3.0, 4.0]);
    }

    #[test]
    fn no_sampling_below_batch_size() {
        let mut m = ReplayMemory::new(10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        m.push(t(0.0));
        assert!(m.sample(2, &mut rng).is_none());
        m.push(t(1.0));
        assert_eq!(m.sample(2, &mut rng).unwrap().len(), 2);
    }

    #[test]
    fn sampling_is_uniform() {
        let mut m = ReplayMemory::new(4);
        for i in 0..4 {
            m.push(t(i as f64));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 4];
        let draws = 10_000;
        for _ in 0..draws / 4 {
            for x in m.sample(4, &mut rng).unwrap() {
                counts[x.reward as usize] += 1;
            }
        }
        let sigma = (draws as f64 * 0.25 * 0.75).sqrt();
        for c in counts {
            assert!((c as f64 - draws as f64 / 4.0).abs() < 3.0 * sigma, "{counts:?}");
        }
    }
}
