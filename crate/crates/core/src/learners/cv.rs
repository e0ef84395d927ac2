use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Fold id per row, dealing shuffled positives and negatives round-robin so
/// each fold keeps the class balance. The fold count is capped at the
/// minority class size.
pub fn stratified_folds(labels: &[bool], folds: usize, seed: u64) -> (Vec<usize>, usize) {
    let pos = labels.iter().filter(|&&y| y).count();
    let k = folds.min(pos).min(labels.len() - pos).max(1);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut assignment = vec![0usize; labels.len()];
    for class in [true, false] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        for (r, i) in members.into_iter().enumerate() {
            assignment[i] = r % k;
        }
    }
    (assignment, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn folds_balance_classes() {
        let labels: Vec<bool> = (0..100).map(|i| i % 10 == 0).collect();
        let (a, k) = stratified_folds(&labels, 5, 3);
        assert_eq!(k, 5);
        for f in 0..5 {
            let members: Vec<usize> = (0..100).filter(|&i| a[i] == f).collect();
            assert_eq!(members.len(), 20);
            assert_eq!(members.iter().filter(|&&i| labels[i]).count(), 2);
        }
        assert_eq!(stratified_folds(&labels, 5, 3), (a, 5));
        let (_, k) = stratified_folds(&[true, false, false], 10, 0);
        assert_eq!(k, 1);
    }
}
