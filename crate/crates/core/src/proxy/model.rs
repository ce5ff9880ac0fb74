use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{ProxyError, Result};
use crate::data::{Dataset, Garment, OutfitQuadruple};
use crate::nn::{dot, sigmoid, softplus, Activation, ForwardCache, Mlp, MlpGrads, Optimizer, Params};

/// Which latents the `(1 - phi)` term of the general compatibility pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContextPairing {
    /// Top context latent against bottom visual latent.
    #[default]
    TopContextBottomVisual,
    /// Top context latent against bottom context latent.
    Symmetric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpbprConfig {
    /// Output dimension of every projection stack.
    pub latent_dim: usize,
    /// Number of layers per projection stack.
    pub depth: usize,
    pub activation: Activation,
    /// Dimension of the matrix-factorization vectors.
    pub mf_dim: usize,
    pub phi: f64,
    pub eta: f64,
    pub mu: f64,
    pub lambda: f64,
    pub pairing: ContextPairing,
    /// Half-width of the uniform init of per-id vectors.
    pub init_scale: f64,
}

impl Default for GpbprConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            depth: 2,
            activation: Activation::Tanh,
            mf_dim: 8,
            phi: 0.5,
            eta: 0.5,
            mu: 0.5,
            lambda: 1e-4,
            pairing: ContextPairing::default(),
            init_scale: 0.1,
        }
    }
}

/// Per-user and per-bottom biases and latent vectors. Vectors are stored
/// flat, `dim` values per id, in the order of `users` / `bottoms`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MfParams {
    pub alpha: f64,
    pub dim: usize,
    pub users: Vec<String>,
    pub bottoms: Vec<String>,
    pub beta_user: Vec<f64>,
    pub beta_bottom: Vec<f64>,
    pub gamma_user: Vec<f64>,
    pub gamma_bottom: Vec<f64>,
    pub xi_v_user: Vec<f64>,
    pub xi_v_bottom: Vec<f64>,
    pub xi_c_user: Vec<f64>,
    pub xi_c_bottom: Vec<f64>,
    #[serde(skip)]
    user_index: HashMap<String, usize>,
    #[serde(skip)]
    bottom_index: HashMap<String, usize>,
}

impl MfParams {
    /// Zero biases, vectors uniform in `[-scale, scale]`.
    pub fn new<R: Rng + ?Sized>(users: Vec<String>, bottoms: Vec<String>, dim: usize, scale: f64, rng: &mut R) -> Self {
        let mut vecs = |n: usize| -> Vec<f64> {
            (0..n * dim)
                .map(|_| if scale > 0.0 { rng.random_range(-scale..=scale) } else { 0.0 })
                .collect()
        };
        let (nu, nb) = (users.len(), bottoms.len());
        let gamma_user = vecs(nu);
        let gamma_bottom = vecs(nb);
        let xi_v_user = vecs(nu);
        let xi_v_bottom = vecs(nb);
        let xi_c_user = vecs(nu);
        let xi_c_bottom = vecs(nb);
        let mut mf = Self {
            alpha: 0.0,
            dim,
            beta_user: vec![0.0; nu],
            beta_bottom: vec![0.0; nb],
            users,
            bottoms,
            gamma_user,
            gamma_bottom,
            xi_v_user,
            xi_v_bottom,
            xi_c_user,
            xi_c_bottom,
            user_index: HashMap::new(),
            bottom_index: HashMap::new(),
        };
        mf.rebuild_index();
        mf
    }

    pub(crate) fn rebuild_index(&mut self) {
        self.user_index = self.users.iter().enumerate().map(|(i, u)| (u.clone(), i)).collect();
        self.bottom_index = self.bottoms.iter().enumerate().map(|(i, b)| (b.clone(), i)).collect();
    }

    pub(crate) fn check_shapes(&self) -> std::result::Result<(), String> {
        let (nu, nb, d) = (self.users.len(), self.bottoms.len(), self.dim);
        let checks = [
            ("beta_user", self.beta_user.len(), nu),
            ("beta_bottom", self.beta_bottom.len(), nb),
            ("gamma_user", self.gamma_user.len(), nu * d),
            ("gamma_bottom", self.gamma_bottom.len(), nb * d),
            ("xi_v_user", self.xi_v_user.len(), nu * d),
            ("xi_v_bottom", self.xi_v_bottom.len(), nb * d),
            ("xi_c_user", self.xi_c_user.len(), nu * d),
            ("xi_c_bottom", self.xi_c_bottom.len(), nb * d),
        ];
        for (name, got, want) in checks {
            if got != want {
                return Err(format!("{name} has {got} values, expected {want}"));
            }
        }
        if self.user_index.len() != nu || self.bottom_index.len() != nb {
            return Err("duplicate user or bottom id".into());
        }
        Ok(())
    }

    pub fn user(&self, id: &str) -> Option<usize> {
        self.user_index.get(id).copied()
    }

    pub fn bottom(&self, id: &str) -> Option<usize> {
        self.bottom_index.get(id).copied()
    }

    fn row(v: &[f64], i: usize, d: usize) -> &[f64] {
        &v[i * d..(i + 1) * d]
    }

    /// `alpha + beta_m + beta_j + gamma_m.gamma_j + eta xi_v_m.xi_v_j + (1-eta) xi_c_m.xi_c_j`.
    /// An unknown user or bottom contributes all-zero factors.
    pub fn preference(&self, user: Option<usize>, bottom: Option<usize>, eta: f64) -> f64 {
        let d = self.dim;
        let mut c = self.alpha;
        if let Some(m) = user {
            c += self.beta_user[m];
        }
        if let Some(j) = bottom {
            c += self.beta_bottom[j];
        }
        if let (Some(m), Some(j)) = (user, bottom) {
            c += dot(Self::row(&self.gamma_user, m, d), Self::row(&self.gamma_bottom, j, d));
            c += eta * dot(Self::row(&self.xi_v_user, m, d), Self::row(&self.xi_v_bottom, j, d));
            c += (1.0 - eta) * dot(Self::row(&self.xi_c_user, m, d), Self::row(&self.xi_c_bottom, j, d));
        }
        c
    }

    fn slices(&self) -> Vec<&[f64]> {
        vec![
            std::slice::from_ref(&self.alpha),
            &self.beta_user,
            &self.beta_bottom,
            &self.gamma_user,
            &self.gamma_bottom,
            &self.xi_v_user,
            &self.xi_v_bottom,
            &self.xi_c_user,
            &self.xi_c_bottom,
        ]
    }

    fn slices_mut(&mut self) -> Vec<&mut [f64]> {
        vec![
            std::slice::from_mut(&mut self.alpha),
            &mut self.beta_user,
            &mut self.beta_bottom,
            &mut self.gamma_user,
            &mut self.gamma_bottom,
            &mut self.xi_v_user,
            &mut self.xi_v_bottom,
            &mut self.xi_c_user,
            &mut self.xi_c_bottom,
        ]
    }
}

/// Projected latents of one garment.
#[derive(Debug, Clone, PartialEq)]
pub struct Projected {
    pub visual: Vec<f64>,
    pub context: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpbprModel {
    pub top_visual: Mlp,
    pub bottom_visual: Mlp,
    pub top_context: Option<Mlp>,
    pub bottom_context: Option<Mlp>,
    pub phi: f64,
    pub eta: f64,
    pub mu: f64,
    pub lambda: f64,
    pub pairing: ContextPairing,
    pub mf: MfParams,
}

/// Gradient groups in [`Params::param_slices`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct GpbprGrads {
    pub groups: Vec<Vec<f64>>,
}

fn context_of(g: &Garment) -> Result<&[f64]> {
    g.context
        .as_deref()
        .ok_or_else(|| ProxyError::MissingContext { id: g.id.clone() })
}

fn check_unit(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(ProxyError::Config(format!("{name} must lie in [0, 1], got {v}")))
    }
}

fn projection<R: Rng + ?Sized>(input: usize, cfg: &GpbprConfig, rng: &mut R) -> Result<Mlp> {
    let mut dims = vec![input];
    dims.extend(std::iter::repeat_n(cfg.latent_dim, cfg.depth));
    Ok(Mlp::new(&dims, cfg.activation, cfg.activation, rng)?)
}

impl GpbprModel {
    /// Fresh model over every user and bottom of `dataset`. Without context
    /// features the model runs visual-only (`phi = eta = 1`).
    pub fn new<R: Rng + ?Sized>(cfg: &GpbprConfig, dataset: &Dataset, rng: &mut R) -> Result<Self> {
        if cfg.depth == 0 || cfg.latent_dim == 0 {
            return Err(ProxyError::Config("depth and latent_dim must be positive".into()));
        }
        let top_visual = projection(dataset.feature_dim, cfg, rng)?;
        let bottom_visual = projection(dataset.feature_dim, cfg, rng)?;
        let (top_context, bottom_context, phi, eta) = match dataset.context_dim {
            Some(cd) if cd > 0 => (
                Some(projection(cd, cfg, rng)?),
                Some(projection(cd, cfg, rng)?),
                cfg.phi,
                cfg.eta,
            ),
            _ => (None, None, 1.0, 1.0),
        };
        let mf = MfParams::new(dataset.users.clone(), dataset.bottoms.clone(), cfg.mf_dim, cfg.init_scale, rng);
        let model = Self {
            top_visual,
            bottom_visual,
            top_context,
            bottom_context,
            phi,
            eta,
            mu: cfg.mu,
            lambda: cfg.lambda,
            pairing: cfg.pairing,
            mf,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        check_unit("phi", self.phi)?;
        check_unit("eta", self.eta)?;
        check_unit("mu", self.mu)?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(ProxyError::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        let d = self.top_visual.output_dim();
        let stacks = [Some(&self.bottom_visual), self.top_context.as_ref(), self.bottom_context.as_ref()];
        if stacks.iter().flatten().any(|m| m.output_dim() != d) {
            return Err(ProxyError::Config("projection stacks disagree on latent dimension".into()));
        }
        if self.phi < 1.0 && (self.top_context.is_none() || self.bottom_context.is_none()) {
            return Err(ProxyError::Config("phi < 1 requires context projections".into()));
        }
        self.mf.check_shapes().map_err(ProxyError::Config)
    }

    fn uses_context(&self) -> bool {
        self.phi < 1.0
    }

    fn project(&self, g: &Garment, visual: &Mlp, context: Option<&Mlp>, need_context: bool) -> Result<Projected> {
        let v = visual.forward(&g.feature)?;
        let c = if need_context {
            let ctx = g
                .context
                .as_ref()
                .ok_or_else(|| ProxyError::MissingContext { id: g.id.clone() })?;
            let mlp = context.ok_or_else(|| ProxyError::Config("phi < 1 without context projection".into()))?;
            Some(mlp.forward(ctx)?)
        } else {
            None
        };
        Ok(Projected { visual: v, context: c })
    }

    pub fn project_top(&self, top: &Garment) -> Result<Projected> {
        self.project(top, &self.top_visual, self.top_context.as_ref(), self.uses_context())
    }

    pub fn project_bottom(&self, bottom: &Garment) -> Result<Projected> {
        let need = self.uses_context() && self.pairing == ContextPairing::Symmetric;
        self.project(bottom, &self.bottom_visual, self.bottom_context.as_ref(), need)
    }

    /// General compatibility from already projected latents.
    pub fn compatibility_projected(&self, top: &Projected, bottom: &Projected) -> f64 {
        let mut s = self.phi * dot(&top.visual, &bottom.visual);
        if self.uses_context() {
            // project_* guarantee presence when phi < 1
            let tc = top.context.as_deref().unwrap_or(&[]);
            let other = match self.pairing {
                ContextPairing::TopContextBottomVisual => &bottom.visual,
                ContextPairing::Symmetric => bottom.context.as_deref().unwrap_or(&[]),
            };
            s += (1.0 - self.phi) * dot(tc, other);
        }
        s
    }

    pub fn general_compatibility(&self, top: &Garment, bottom: &Garment) -> Result<f64> {
        Ok(self.compatibility_projected(&self.project_top(top)?, &self.project_bottom(bottom)?))
    }

    /// Unknown users fall back to all-zero factors.
    pub fn personal_preference(&self, user: &str, bottom_id: &str) -> f64 {
        self.mf.preference(self.mf.user(user), self.mf.bottom(bottom_id), self.eta)
    }

    pub fn personalized_score(&self, user: &str, top: &Garment, bottom: &Garment) -> Result<f64> {
        Ok(self.score_projected(user, &self.project_top(top)?, &self.project_bottom(bottom)?, &bottom.id))
    }

    /// `personalized_score` from precomputed projections.
    pub fn score_projected(&self, user: &str, top: &Projected, bottom: &Projected, bottom_id: &str) -> f64 {
        let s = self.compatibility_projected(top, bottom);
        let c = self.personal_preference(user, bottom_id);
        self.mu * s + (1.0 - self.mu) * c
    }

    /// `mean_q softplus(p_neg - p_pos) + lambda/2 |theta|^2` and its gradient.
    pub fn loss_and_grads(&self, dataset: &Dataset, quads: &[&OutfitQuadruple]) -> Result<(f64, GpbprGrads)> {
        let n = quads.len().max(1) as f64;
        let mut g_tv = self.top_visual.zero_grads();
        let mut g_bv = self.bottom_visual.zero_grads();
        let mut g_tc = self.top_context.as_ref().map(Mlp::zero_grads);
        let mut g_bc = self.bottom_context.as_ref().map(Mlp::zero_grads);
        let mf_shapes: Vec<usize> = self.mf.slices().iter().map(|s| s.len()).collect();
        let mut g_mf: Vec<Vec<f64>> = mf_shapes.iter().map(|&l| vec![0.0; l]).collect();
        let ctx = self.uses_context();
        let sym = self.pairing == ContextPairing::Symmetric;
        let d = self.mf.dim;
        let mut loss = 0.0;

        let get = |id: &str| dataset.garment(id).ok_or_else(|| ProxyError::UnknownGarment(id.to_owned()));

        for q in quads {
            let top = get(&q.top)?;
            let tv = self.top_visual.forward_cached(&top.feature)?;
            let tc: Option<ForwardCache> = match (&self.top_context, ctx) {
                (Some(m), true) => Some(m.forward_cached(context_of(top)?)?),
                _ => None,
            };
            let mut bottoms = Vec::with_capacity(2);
            for id in [&q.pos, &q.neg] {
                let b = get(id)?;
                let bv = self.bottom_visual.forward_cached(&b.feature)?;
                let bc = match (&self.bottom_context, ctx && sym) {
                    (Some(m), true) => Some(m.forward_cached(context_of(b)?)?),
                    _ => None,
                };
                let s = {
                    let mut s = self.phi * dot(tv.output(), bv.output());
                    if let Some(tc) = &tc {
                        let other = bc.as_ref().map_or(bv.output(), |c| c.output());
                        s += (1.0 - self.phi) * dot(tc.output(), other);
                    }
                    s
                };
                let (u, j) = (self.mf.user(&q.user), self.mf.bottom(id));
                let c = self.mf.preference(u, j, self.eta);
                bottoms.push((bv, bc, u, j, self.mu * s + (1.0 - self.mu) * c));
            }
            let diff = bottoms[0].4 - bottoms[1].4;
            loss += softplus(-diff) / n;
            let g = (sigmoid(diff) - 1.0) / n;

            let mut up_tv = vec![0.0; tv.output().len()];
            let mut up_tc = tc.as_ref().map(|c| vec![0.0; c.output().len()]);
            for (sign, (bv, bc, u, j, _)) in [1.0, -1.0].into_iter().zip(&bottoms) {
                let dp = sign * g;
                let ds = self.mu * dp;
                let dc = (1.0 - self.mu) * dp;
                crate::nn::axpy(ds * self.phi, bv.output(), &mut up_tv);
                let mut up_bv: Vec<f64> = tv.output().iter().map(|x| ds * self.phi * x).collect();
                if let (Some(tc), Some(up_tc)) = (&tc, &mut up_tc) {
                    let w = ds * (1.0 - self.phi);
                    match bc {
                        Some(bc) => {
                            crate::nn::axpy(w, bc.output(), up_tc);
                            let up_bc: Vec<f64> = tc.output().iter().map(|x| w * x).collect();
                            if let (Some(m), Some(gm)) = (&self.bottom_context, &mut g_bc) {
                                m.backward_accumulate(bc, &up_bc, gm)?;
                            }
                        }
                        None => {
                            crate::nn::axpy(w, bv.output(), up_tc);
                            crate::nn::axpy(w, tc.output(), &mut up_bv);
                        }
                    }
                }
                self.bottom_visual.backward_accumulate(bv, &up_bv, &mut g_bv)?;

                g_mf[0][0] += dc;
                if let Some(m) = *u {
                    g_mf[1][m] += dc;
                }
                if let Some(j) = *j {
                    g_mf[2][j] += dc;
                }
                if let (Some(m), Some(j)) = (*u, *j) {
                    let pairs = [(3, 4, &self.mf.gamma_user, &self.mf.gamma_bottom, 1.0)];
                    let weighted = [
                        (5, 6, &self.mf.xi_v_user, &self.mf.xi_v_bottom, self.eta),
                        (7, 8, &self.mf.xi_c_user, &self.mf.xi_c_bottom, 1.0 - self.eta),
                    ];
                    for (gu, gb, vu, vb, w) in pairs.into_iter().chain(weighted) {
                        for k in 0..d {
                            g_mf[gu][m * d + k] += dc * w * vb[j * d + k];
                            g_mf[gb][j * d + k] += dc * w * vu[m * d + k];
                        }
                    }
                }
            }
            self.top_visual.backward_accumulate(&tv, &up_tv, &mut g_tv)?;
            if let (Some(tc), Some(up), Some(m), Some(gm)) = (&tc, &up_tc, &self.top_context, &mut g_tc) {
                m.backward_accumulate(tc, up, gm)?;
            }
        }

        let mut groups: Vec<Vec<f64>> = Vec::new();
        let mut push = |g: &MlpGrads| groups.extend(g.slices().into_iter().map(<[f64]>::to_vec));
        push(&g_tv);
        push(&g_bv);
        if let Some(g) = &g_tc {
            push(g);
        }
        if let Some(g) = &g_bc {
            push(g);
        }
        groups.extend(g_mf);

        if self.lambda > 0.0 {
            loss += 0.5 * self.lambda * self.sum_squares();
            for (g, p) in groups.iter_mut().zip(self.param_slices()) {
                crate::nn::axpy(self.lambda, p, g);
            }
        }
        Ok((loss, GpbprGrads { groups }))
    }

    /// One optimizer step; parameter group `i` uses optimizer slot `i`.
    /// Nothing changes when a gradient is non-finite.
    pub fn apply_gradients(&mut self, opt: &mut Optimizer, grads: &GpbprGrads) -> Result<()> {
        if grads.groups.iter().flatten().any(|v| !v.is_finite()) {
            return Err(crate::nn::NnError::NonFiniteGradient {
                param: "gp-bpr parameters".into(),
            }
            .into());
        }
        for (slot, (p, g)) in self.param_slices_mut().into_iter().zip(&grads.groups).enumerate() {
            opt.step(slot, p, g)?;
        }
        Ok(())
    }
}

impl Params for GpbprModel {
    fn param_slices(&self) -> Vec<&[f64]> {
        let mut v = self.top_visual.param_slices();
        v.extend(self.bottom_visual.param_slices());
        if let Some(m) = &self.top_context {
            v.extend(m.param_slices());
        }
        if let Some(m) = &self.bottom_context {
            v.extend(m.param_slices());
        }
        v.extend(self.mf.slices());
        v
    }

    fn param_slices_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.top_visual.param_slices_mut();
        v.extend(self.bottom_visual.param_slices_mut());
        if let Some(m) = &mut self.top_context {
            v.extend(m.param_slices_mut());
        }
        if let Some(m) = &mut self.bottom_context {
            v.extend(m.param_slices_mut());
        }
        v.extend(self.mf.slices_mut());
        v
    }
}
