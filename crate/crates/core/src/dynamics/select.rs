use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::features::DynamicsFeature;
use super::DynamicsError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub indices: Vec<usize>,
    pub scores: Vec<f64>,
}

/// Cosine similarity of the concatenated vectors; 0 when either norm is 0.
pub fn cosine_similarity(a: &DynamicsFeature, b: &DynamicsFeature) -> Result<f64, DynamicsError> {
    if a.vis.len() != b.vis.len() || a.lang.len() != b.lang.len() {
        return Err(DynamicsError::DimensionMismatch {
            expected: a.dimension(),
            found: b.dimension(),
        });
    }
    let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
    for (x, y) in a.components().zip(b.components()) {
        let (x, y) = (f64::from(x), f64::from(y));
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Ok(0.0);
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// Exact top-K by cosine similarity; ties go to the lower pool index.
pub fn select_top_k(
    query: &DynamicsFeature,
    pool: &[DynamicsFeature],
    k: usize,
) -> Result<SelectionResult, DynamicsError> {
    if k == 0 || k > pool.len() {
        return Err(DynamicsError::KOutOfRange { k, n: pool.len() });
    }
    let scores: Vec<f64> = pool
        .par_iter()
        .map(|f| cosine_similarity(query, f))
        .collect::<Result<_, _>>()?;
    let mut order: Vec<usize> = (0..pool.len()).collect();
    let by_score = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if k < order.len() {
        order.select_nth_unstable_by(k - 1, by_score);
        order.truncate(k);
    }
    order.sort_by(by_score);
    Ok(SelectionResult {
        scores: order.iter().map(|&i| scores[i]).collect(),
        indices: order,
    })
}

/// Uniform sampling without replacement. No similarity is computed, so the
/// scores are rank placeholders `1 - i/K` that preserve the sampled order.
pub fn select_random(pool_len: usize, k: usize, seed: u64) -> Result<SelectionResult, DynamicsError> {
    if k == 0 || k > pool_len {
        return Err(DynamicsError::KOutOfRange { k, n: pool_len });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let indices = sample(&mut rng, pool_len, k).into_vec();
    let scores = (0..k).map(|i| 1.0 - i as f64 / k as f64).collect();
    Ok(SelectionResult { indices, scores })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feat(v: &[f32]) -> DynamicsFeature {
        DynamicsFeature {
            demo_id: String::new(),
            vis: v.to_vec(),
            lang: vec![],
        }
    }

    #[test]
    fn cosine_closed_forms() {
        let a = feat(&[0.3, -2.0, 1.0]);
        assert!((cosine_similarity(&a, &a).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(cosine_similarity(&feat(&[1.0, 0.0]), &feat(&[0.0, 1.0])).unwrap(), 0.0);
        let c = cosine_similarity(&feat(&[1.0, 0.0]), &feat(&[1.0, 1.0])).unwrap();
        assert!((c - 0.70710678).abs() < 1e-8);
        assert_eq!(cosine_similarity(&feat(&[0.0, 0.0]), &feat(&[1.0, 1.0])).unwrap(), 0.0);
        assert!(cosine_similarity(&feat(&[1.0]), &feat(&[1.0, 1.0])).is_err());
    }

    #[test]
    fn ties_prefer_lower_index() {
        // query along x; pool scores 0.9, 0.1, 0.9 (up to rounding, equal for 0 and 2)
        let q = feat(&[1.0, 0.0]);
        let s = 0.9f32;
        let t = (1.0 - s * s).sqrt();
        let pool = vec![feat(&[s, t]), feat(&[0.1, (1.0f32 - 0.01).sqrt()]), feat(&[s, t])];
        let r = select_top_k(&q, &pool, 2).unwrap();
        assert_eq!(r.indices, vec![0, 2]);
        let all = select_top_k(&q, &pool, 3).unwrap();
        assert_eq!(all.indices, vec![0, 2, 1]);
        assert!(select_top_k(&q, &pool, 0).is_err());
        assert!(select_top_k(&q, &pool, 4).is_err());
    }

    #[test]
    fn random_selection_is_seeded() {
        let a = select_random(50, 10, 9).unwrap();
        assert_eq!(a, select_random(50, 10, 9).unwrap());
        let mut idx = a.indices.clone();
        idx.sort();
        idx.dedup();
        assert_eq!(idx.len(), 10);
        assert!(a.scores.windows(2).all(|w| w[0] > w[1]));
        let full = select_random(5, 5, 1).unwrap();
        let mut all = full.indices.clone();
        all.sort();
        assert_eq!(all, vec![0, 1, 2, 3, 4]);
    }
}
