/// `C(n, k)`; exact for every `n <= 64`.
pub fn binomial(n: u32, k: u32) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k) as u128;
    let n = n as u128;
    (0..k).fold(1u128, |acc, i| acc * (n - i) / (i + 1))
}

/// Entropy in bits of the ω class sampled from a uniformly random `n`-bit
/// value, restricted to the populated `classes` and renormalized.
pub fn entropy_from_classes(n: u32, classes: &[u32]) -> f64 {
    let weights: Vec<f64> = classes.iter().map(|&i| binomial(n, i) as f64).collect();
    let total: f64 = weights.iter().sum();
    if total == 0.0 {
        return 0.0;
    }
    -weights
        .iter()
        .map(|w| w / total)
        .filter(|p| *p > 0.0)
        .map(|p| p * p.log2())
        .sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binomial_rows() {
        assert_eq!(binomial(8, 0), 1);
        assert_eq!(binomial(8, 4), 70);
        assert_eq!(binomial(64, 32), 1_832_624_140_942_590_534);
        let row: u128 = (0..=16).map(|k| binomial(16, k)).sum();
        assert_eq!(row, 1 << 16);
    }

    #[test]
    fn two_symmetric_classes_give_one_bit() {
        assert_eq!(entropy_from_classes(8, &[0, 8]), 1.0);
        assert_eq!(entropy_from_classes(32, &[0, 32]), 1.0);
        assert_eq!(entropy_from_classes(8, &[3]), 0.0);
    }
}
