use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DataError, Dataset, OutfitQuadruple, Result};

/// Re-partitions every quadruple of `dataset` into train/val/test with the
/// given ratios. Quadruples sharing a `(user, top)` key always land in the
/// same split. Target sizes are `round(r * n)` for train and val; test takes
/// the rest.
pub fn split(dataset: &Dataset, ratios: [f64; 3], seed: u64) -> Result<Dataset> {
    if ratios.iter().any(|r| !(0.0..=1.0).contains(r)) {
        return Err(DataError::InvalidSplit(format!("ratios must be in [0, 1], got {ratios:?}")));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(DataError::InvalidSplit(format!("ratios sum to {total}, not 1")));
    }

    let all: Vec<&OutfitQuadruple> = dataset.all_quadruples().map(|(_, q)| q).collect();
    let n = all.len();

    let mut groups: Vec<Vec<&OutfitQuadruple>> = Vec::new();
    let mut index: HashMap<(&str, &str), usize> = HashMap::new();
    for q in &all {
        let slot = *index.entry(q.key()).or_insert_with(|| {
            groups.push(Vec::new());
            groups.len() - 1
        });
        groups[slot].push(q);
    }
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));

    let n_train = (ratios[0] * n as f64).round() as usize;
    let n_val = (ratios[1] * n as f64).round() as usize;
    let mut out = dataset.clone();
    out.train.clear();
    out.val.clear();
    out.test.clear();
    for g in order {
        let target = if out.train.len() < n_train {
            &mut out.train
        } else if out.val.len() < n_val {
            &mut out.val
        } else {
            &mut out.test
        };
        target.extend(groups[g].iter().map(|q| (*q).clone()));
    }

    for (name, ratio, len) in [
        ("train", ratios[0], out.train.len()),
        ("val", ratios[1], out.val.len()),
        ("test", ratios[2], out.test.len()),
    ] {
        if ratio > 0.0 && len == 0 {
            return Err(DataError::InvalidSplit(format!(
                "{name} split is empty at ratio {ratio} with {n} quadruples"
            )));
        }
    }
    Ok(out)
}
