use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ContextPairing, GpbprModel, MfParams, Proxy, ProxyError, Result, ScoreNormalizer};
use crate::nn::checkpoint::{load_mlp, save_mlp};

pub const PROXY_FILE: &str = "proxy.json";
const TOP_VISUAL: &str = "top_visual.ckpt";
const BOTTOM_VISUAL: &str = "bottom_visual.ckpt";
const TOP_CONTEXT: &str = "top_context.ckpt";
const BOTTOM_CONTEXT: &str = "bottom_context.ckpt";

#[derive(Serialize, Deserialize)]
struct ProxyFile {
    version: u32,
    phi: f64,
    eta: f64,
    mu: f64,
    lambda: f64,
    pairing: ContextPairing,
    has_context: bool,
    normalizer: ScoreNormalizer,
    mf: MfParams,
}

fn io_err(path: &Path, source: std::io::Error) -> ProxyError {
    ProxyError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Projection stacks go to nn checkpoints (f32), everything else to
/// `proxy.json` (full f64 precision).
pub fn save_proxy(dir: impl AsRef<Path>, proxy: &Proxy) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let m = &proxy.model;
    save_mlp(dir.join(TOP_VISUAL), &m.top_visual)?;
    save_mlp(dir.join(BOTTOM_VISUAL), &m.bottom_visual)?;
    if let (Some(tc), Some(bc)) = (&m.top_context, &m.bottom_context) {
        save_mlp(dir.join(TOP_CONTEXT), tc)?;
        save_mlp(dir.join(BOTTOM_CONTEXT), bc)?;
    }
    let file = ProxyFile {
        version: 1,
        phi: m.phi,
        eta: m.eta,
        mu: m.mu,
        lambda: m.lambda,
        pairing: m.pairing,
        has_context: m.top_context.is_some() && m.bottom_context.is_some(),
        normalizer: proxy.normalizer,
        mf: m.mf.clone(),
    };
    let path = dir.join(PROXY_FILE);
    let json = serde_json::to_vec_pretty(&file).map_err(|e| ProxyError::Checkpoint {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    fs::write(&path, json).map_err(|e| io_err(&path, e))
}

pub fn load_proxy(dir: impl AsRef<Path>) -> Result<Proxy> {
    let dir = dir.as_ref();
    let path = dir.join(PROXY_FILE);
    let bad = |message: String| ProxyError::Checkpoint {
        path: path.display().to_string(),
        message,
    };
    let bytes = fs::read(&path).map_err(|e| io_err(&path, e))?;
    let file: ProxyFile = serde_json::from_slice(&bytes).map_err(|e| bad(e.to_string()))?;
    if file.version != 1 {
        return Err(bad(format!("unsupported version {}", file.version)));
    }
    let load = |name: &str| -> Result<crate::nn::Mlp> {
        let p = dir.join(name);
        if !p.exists() {
            return Err(io_err(&p, std::io::Error::from(std::io::ErrorKind::NotFound)));
        }
        Ok(load_mlp(p)?)
    };
    let (top_context, bottom_context) = if file.has_context {
        (Some(load(TOP_CONTEXT)?), Some(load(BOTTOM_CONTEXT)?))
    } else {
        (None, None)
    };
    let mut mf = file.mf;
    mf.rebuild_index();
    let model = GpbprModel {
        top_visual: load(TOP_VISUAL)?,
        bottom_visual: load(BOTTOM_VISUAL)?,
        top_context,
        bottom_context,
        phi: file.phi,
        eta: file.eta,
        mu: file.mu,
        lambda: file.lambda,
        pairing: file.pairing,
        mf,
    };
    model.validate().map_err(|e| bad(e.to_string()))?;
    let normalizer = ScoreNormalizer::new(file.normalizer.lo, file.normalizer.hi)?;
    Ok(Proxy { model, normalizer })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{SynthConfig, SyntheticWorld};
    use crate::proxy::GpbprConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn roundtrip_scores_match_f32_rounded_model() {
        let mut cfg = SynthConfig::tiny(4);
        cfg.context_dim = Some(3);
        let ds = SyntheticWorld::new(cfg).unwrap().generate().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = GpbprModel::new(&GpbprConfig::default(), &ds, &mut rng).unwrap();
        let proxy = Proxy::new(model, ScoreNormalizer::new(-0.5, 0.75).unwrap());
        let dir = tempfile::tempdir().unwrap();
        save_proxy(dir.path(), &proxy).unwrap();
        let back = load_proxy(dir.path()).unwrap();

        let mut rounded = proxy.clone();
        rounded.model.top_visual.round_to_f32();
        rounded.model.bottom_visual.round_to_f32();
        rounded.model.top_context.as_mut().unwrap().round_to_f32();
        rounded.model.bottom_context.as_mut().unwrap().round_to_f32();
        assert_eq!(back, rounded);
        let q = &ds.train[0];
        let (t, b) = (&ds.garments[&q.top], &ds.garments[&q.pos]);
        assert_eq!(
            back.feedback(&q.user, t, b).unwrap().to_bits(),
            rounded.feedback(&q.user, t, b).unwrap().to_bits()
        );
    }

    #[test]
    fn missing_checkpoint_names_the_file() {
        let ds = crate::data::tests::tiny();
        let model = GpbprModel::new(&GpbprConfig::default(), &ds, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_proxy(dir.path(), &Proxy::new(model, ScoreNormalizer::new(0.0, 1.0).unwrap())).unwrap();
        fs::remove_file(dir.path().join(BOTTOM_VISUAL)).unwrap();
        let err = load_proxy(dir.path()).unwrap_err();
        assert!(err.to_string().contains(BOTTOM_VISUAL), "{err}");
    }
}
