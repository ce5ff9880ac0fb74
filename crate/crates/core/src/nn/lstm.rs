use rand::Rng;

use super::{check_len, sigmoid, NnError, Params, Result};

/// Standard LSTM cell. Gate blocks are stacked `[input, forget, candidate, output]`,
/// each `hidden_dim` rows.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    input_dim: usize,
    hidden_dim: usize,
    w_x: Vec<f64>,
    w_h: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Vec<f64>,
    pub c: Vec<f64>,
}

impl LstmState {
    pub fn zeros(hidden_dim: usize) -> Self {
        Self {
            h: vec![0.0; hidden_dim],
            c: vec![0.0; hidden_dim],
        }
    }

    /// Hidden state set to `h`, cell memory zeroed.
    pub fn from_hidden(h: Vec<f64>) -> Self {
        let c = vec![0.0; h.len()];
        Self { h, c }
    }
}

#[derive(Debug, Clone)]
pub struct LstmStepCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    g: Vec<f64>,
    o: Vec<f64>,
    tanh_c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmGrads {
    pub w_x: Vec<f64>,
    pub w_h: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LstmCell {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden_dim: usize, rng: &mut R) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(NnError::InvalidConfig("lstm dims must be > 0".into()));
        }
        let limit = 1.0 / (hidden_dim as f64).sqrt();
        let mut sample = |n: usize| -> Vec<f64> {
            (0..n).map(|_| rng.random_range(-limit..=limit)).collect()
        };
        Ok(Self {
            input_dim,
            hidden_dim,
            w_x: sample(4 * hidden_dim * input_dim),
            w_h: sample(4 * hidden_dim * hidden_dim),
            bias: sample(4 * hidden_dim),
        })
    }

    pub fn from_parts(
        input_dim: usize,
        hidden_dim: usize,
        w_x: Vec<f64>,
        w_h: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(NnError::InvalidConfig("lstm dims must be > 0".into()));
        }
        check_len("lstm w_x", 4 * hidden_dim * input_dim, w_x.len())?;
        check_len("lstm w_h", 4 * hidden_dim * hidden_dim, w_h.len())?;
        check_len("lstm bias", 4 * hidden_dim, bias.len())?;
        Ok(Self {
            input_dim,
            hidden_dim,
            w_x,
            w_h,
            bias,
        })
    }

    pub fn zeroed(input_dim: usize, hidden_dim: usize) -> Result<Self> {
        Self::from_parts(
            input_dim,
            hidden_dim,
            vec![0.0; 4 * hidden_dim * input_dim],
            vec![0.0; 4 * hidden_dim * hidden_dim],
            vec![0.0; 4 * hidden_dim],
        )
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.hidden_dim
    }

    pub fn w_x(&self) -> &[f64] {
        &self.w_x
    }

    pub fn w_h(&self) -> &[f64] {
        &self.w_h
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn step(&self, state: &LstmState, x: &[f64]) -> Result<LstmState> {
        self.step_cached(state, x).map(|(s, _)| s)
    }

    pub fn step_cached(&self, state: &LstmState, x: &[f64]) -> Result<(LstmState, LstmStepCache)> {
        let hd = self.hidden_dim;
        check_len("lstm input", self.input_dim, x.len())?;
        check_len("lstm hidden", hd, state.h.len())?;
        check_len("lstm cell", hd, state.c.len())?;
        let mut pre = self.bias.clone();
        for (r, p) in pre.iter_mut().enumerate() {
            let wx = &self.w_x[r * self.input_dim..(r + 1) * self.input_dim];
            let wh = &self.w_h[r * hd..(r + 1) * hd];
            *p += super::dot(wx, x) + super::dot(wh, &state.h);
        }
        let i: Vec<f64> = pre[..hd].iter().map(|&v| sigmoid(v)).collect();
        let f: Vec<f64> = pre[hd..2 * hd].iter().map(|&v| sigmoid(v)).collect();
        let g: Vec<f64> = pre[2 * hd..3 * hd].iter().map(|v| v.tanh()).collect();
        let o: Vec<f64> = pre[3 * hd..].iter().map(|&v| sigmoid(v)).collect();
        let c: Vec<f64> = (0..hd).map(|k| f[k] * state.c[k] + i[k] * g[k]).collect();
        let tanh_c: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h: Vec<f64> = (0..hd).map(|k| o[k] * tanh_c[k]).collect();
        let cache = LstmStepCache {
            x: x.to_vec(),
            h_prev: state.h.clone(),
            c_prev: state.c.clone(),
            i,
            f,
            g,
            o,
            tanh_c,
        };
        Ok((LstmState { h, c }, cache))
    }

    /// One step of backpropagation through time. `dh`/`dc` are the gradients
    /// wrt this step's outputs; returns gradients wrt `(h_prev, c_prev, x)`.
    pub fn backward_step(
        &self,
        cache: &LstmStepCache,
        dh: &[f64],
        dc: &[f64],
        grads: &mut LstmGrads,
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let hd = self.hidden_dim;
        let mut da = vec![0.0; 4 * hd];
        let mut dc_prev = vec![0.0; hd];
        for k in 0..hd {
            let d_o = dh[k] * cache.tanh_c[k];
            let dck = dc[k] + dh[k] * cache.o[k] * (1.0 - cache.tanh_c[k] * cache.tanh_c[k]);
            let di = dck * cache.g[k];
            let df = dck * cache.c_prev[k];
            let dg = dck * cache.i[k];
            dc_prev[k] = dck * cache.f[k];
            da[k] = di * cache.i[k] * (1.0 - cache.i[k]);
            da[hd + k] = df * cache.f[k] * (1.0 - cache.f[k]);
            da[2 * hd + k] = dg * (1.0 - cache.g[k] * cache.g[k]);
            da[3 * hd + k] = d_o * cache.o[k] * (1.0 - cache.o[k]);
        }
        let mut dx = vec![0.0; self.input_dim];
        let mut dh_prev = vec![0.0; hd];
        for (r, &d) in da.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            grads.bias[r] += d;
            let xo = r * self.input_dim;
            for j in 0..self.input_dim {
                grads.w_x[xo + j] += d * cache.x[j];
                dx[j] += d * self.w_x[xo + j];
            }
            let ho = r * hd;
            for j in 0..hd {
                grads.w_h[ho + j] += d * cache.h_prev[j];
                dh_prev[j] += d * self.w_h[ho + j];
            }
        }
        (dh_prev, dc_prev, dx)
    }

    pub fn zero_grads(&self) -> LstmGrads {
        LstmGrads {
            w_x: vec![0.0; self.w_x.len()],
            w_h: vec![0.0; self.w_h.len()],
            bias: vec![0.0; self.bias.len()],
        }
    }

    pub fn round_to_f32(&mut self) {
        for v in self
            .w_x
            .iter_mut()
            .chain(self.w_h.iter_mut())
            .chain(self.bias.iter_mut())
        {
            *v = *v as f32 as f64;
        }
    }
}

impl Params for LstmCell {
    fn param_slices(&self) -> Vec<&[f64]> {
        vec![&self.w_x, &self.w_h, &self.bias]
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.w_x, &mut self.w_h, &mut self.bias]
    }
}

impl LstmGrads {
    pub fn slices(&self) -> Vec<&[f64]> {
        vec![&self.w_x, &self.w_h, &self.bias]
    }

    pub fn scale(&mut self, factor: f64) {
        for v in self
            .w_x
            .iter_mut()
            .chain(self.w_h.iter_mut())
            .chain(self.bias.iter_mut())
        {
            *v *= factor;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Scalar-by-scalar reference recurrence, written independently of the
    /// vectorised cell.
    fn reference_step(
        w_x: &[f64],
        w_h: &[f64],
        b: &[f64],
        h: &[f64],
        c: &[f64],
        x: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let n = h.len();
        let m = x.len();
        let sig = |v: f64| 1.0 / (1.0 + (-v).exp());
        let gate = |block: usize, k: usize| {
            let row = block * n + k;
            let mut acc = b[row];
            for j in 0..m {
                acc += w_x[row * m + j] * x[j];
            }
            for j in 0..n {
                acc += w_h[row * n + j] * h[j];
            }
            acc
        };
        let mut h_new = Vec::new();
        let mut c_new = Vec::new();
        for k in 0..n {
            let ig = sig(gate(0, k));
            let fg = sig(gate(1, k));
            let gg = gate(2, k).tanh();
            let og = sig(gate(3, k));
            let ck = fg * c[k] + ig * gg;
            c_new.push(ck);
            h_new.push(og * ck.tanh());
        }
        (h_new, c_new)
    }

    #[test]
    fn matches_reference_recurrence_on_3d_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cell = LstmCell::new(2, 3, &mut rng).unwrap();
        let state = LstmState {
            h: vec![0.2, -0.4, 0.9],
            c: vec![-0.3, 0.1, 0.5],
        };
        let x = [0.7, -1.2];
        let next = cell.step(&state, &x).unwrap();
        let (h, c) = reference_step(cell.w_x(), cell.w_h(), cell.bias(), &state.h, &state.c, &x);
        for k in 0..3 {
            assert!((next.h[k] - h[k]).abs() < 1e-14);
            assert!((next.c[k] - c[k]).abs() < 1e-14);
        }
    }

    #[test]
    fn zero_weights_decay_to_zero_fixed_point() {
        let cell = LstmCell::zeroed(1, 4).unwrap();
        let mut s = LstmState::from_hidden(vec![1.0, -2.0, 3.0, 0.5]);
        s.c = vec![2.0, -2.0, 1.0, 4.0];
        for _ in 0..60 {
            s = cell.step(&s, &[0.7]).unwrap();
            assert!(s.h.iter().chain(&s.c).all(|v| v.is_finite()));
        }
        assert!(s.h.iter().chain(&s.c).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn step_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let cell = LstmCell::new(1, 5, &mut rng).unwrap();
        let s = LstmState::from_hidden(vec![0.1; 5]);
        assert_eq!(cell.step(&s, &[0.3]).unwrap(), cell.step(&s, &[0.3]).unwrap());
    }

    #[test]
    fn gates_bound_hidden_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cell = LstmCell::new(2, 6, &mut rng).unwrap();
        let s = LstmState::from_hidden(vec![50.0; 6]);
        let n = cell.step(&s, &[100.0, -100.0]).unwrap();
        assert!(n.h.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let cell = LstmCell::zeroed(1, 3).unwrap();
        let s = LstmState::zeros(2);
        assert!(matches!(cell.step(&s, &[0.0]), Err(NnError::Shape { .. })));
    }

    #[test]
    fn bptt_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cell = LstmCell::new(2, 8, &mut rng).unwrap();
        let h0: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xs: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..2).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        let w: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
        // loss = sum_t w . h_t
        let loss = |c: &LstmCell| {
            let mut s = LstmState::from_hidden(h0.clone());
            let mut total = 0.0;
            for x in &xs {
                s = c.step(&s, x).unwrap();
                total += crate::nn::dot(&w, &s.h);
            }
            total
        };
        let mut s = LstmState::from_hidden(h0.clone());
        let mut caches = Vec::new();
        for x in &xs {
            let (n, cache) = cell.step_cached(&s, x).unwrap();
            caches.push(cache);
            s = n;
        }
        let mut grads = cell.zero_grads();
        let mut dh = vec![0.0; 8];
        let mut dc = vec![0.0; 8];
        for cache in caches.iter().rev() {
            crate::nn::axpy(1.0, &w, &mut dh);
            let (dhp, dcp, _) = cell.backward_step(cache, &dh, &dc, &mut grads);
            dh = dhp;
            dc = dcp;
        }
        let numeric = gradcheck::numeric_gradient(&cell, loss, gradcheck::DEFAULT_STEP);
        let err = gradcheck::max_relative_error(&grads.slices(), &numeric);
        assert!(err < 1e-4, "rel err {err}");
    }
}
