//! Rank-based ROC AUC and its support-weighted one-vs-rest extension.

use super::DownstreamError;

/// Mann-Whitney AUC with tied scores counted as half.
pub fn binary_auc(scores: &[f64], positive: &[bool]) -> Result<f64, DownstreamError> {
    if scores.len() != positive.len() {
        return Err(DownstreamError::Shape(format!("{} scores for {} labels", scores.len(), positive.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(DownstreamError::InvalidInput("NaN score".into()));
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = positive.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(DownstreamError::SingleClass);
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += order[i..=j].iter().filter(|&&k| positive[k]).count() as f64 * mid;
        i = j + 1;
    }
    let np = n_pos as f64;
    Ok((rank_sum - np * (np + 1.0) / 2.0) / (np * n_neg as f64))
}

/// One-vs-rest AUC per class present in `labels`, averaged with weights
/// equal to class support.
pub fn weighted_auc(scores: &[Vec<f64>], labels: &[usize]) -> Result<f64, DownstreamError> {
    if scores.len() != labels.len() {
        return Err(DownstreamError::Shape(format!("{} score rows for {} labels", scores.len(), labels.len())));
    }
    let k = scores.first().map_or(0, Vec::len);
    if scores.iter().any(|r| r.len() != k) {
        return Err(DownstreamError::Shape("ragged score rows".into()));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= k) {
        return Err(DownstreamError::InvalidInput(format!("label {y} outside {k} classes")));
    }
    let mut total = 0.0;
    let mut present = 0;
    for c in 0..k {
        let support = labels.iter().filter(|&&y| y == c).count();
        if support == 0 {
            continue;
        }
        present += 1;
        let col: Vec<f64> = scores.iter().map(|r| r[c]).collect();
        let pos: Vec<bool> = labels.iter().map(|&y| y == c).collect();
        total += support as f64 * binary_auc(&col, &pos)?;
    }
    if present < 2 {
        return Err(DownstreamError::SingleClass);
    }
    Ok(total / labels.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn perfect_ranker_scores_one() {
        let scores = vec![vec![0.9, 0.05, 0.05], vec![0.1, 0.8, 0.1], vec![0.0, 0.2, 0.8], vec![0.7, 0.2, 0.1]];
        assert_eq!(weighted_auc(&scores, &[0, 1, 2, 0]).unwrap(), 1.0);
    }

    #[test]
    fn balanced_labels_give_macro_average() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let labels: Vec<usize> = (0..300).map(|i| i % 3).collect();
        let scores: Vec<Vec<f64>> = labels
            .iter()
            .map(|&y| (0..3).map(|c| rng.random::<f64>() + if c == y { 0.3 } else { 0.0 }).collect())
            .collect();
        let macro_avg: f64 = (0..3)
            .map(|c| {
                let col: Vec<f64> = scores.iter().map(|r| r[c]).collect();
                let pos: Vec<bool> = labels.iter().map(|&y| y == c).collect();
                binary_auc(&col, &pos).unwrap()
            })
            .sum::<f64>()
            / 3.0;
        assert!((weighted_auc(&scores, &labels).unwrap() - macro_avg).abs() < 1e-12);
    }

    #[test]
    fn random_scores_are_near_half() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let labels: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..3)).collect();
        let scores: Vec<Vec<f64>> = (0..10_000).map(|_| (0..3).map(|_| rng.random()).collect()).collect();
        let auc = weighted_auc(&scores, &labels).unwrap();
        assert!((auc - 0.5).abs() < 0.02, "{auc}");
    }

    #[test]
    fn ties_count_half() {
        assert_eq!(binary_auc(&[0.5, 0.5], &[true, false]).unwrap(), 0.5);
    }

    #[test]
    fn single_class_is_an_error() {
        assert!(matches!(weighted_auc(&[vec![0.2, 0.8]], &[1]), Err(DownstreamError::SingleClass)));
    }
}
