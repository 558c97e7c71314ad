//! Small numeric helpers: deterministic summation, weighted moments,
//! quantiles, seed derivation.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Two-sided 95% standard normal critical value.
pub const Z_975: f64 = 1.959_963_984_540_054;

/// Fixed-order pairwise summation. The result depends only on the slice
/// contents and order, never on scheduling.
pub fn pairwise_sum(xs: &[f64]) -> f64 {
    const BLOCK: usize = 32;
    if xs.len() <= BLOCK {
        let mut s = 0.0;
        for &x in xs {
            s += x;
        }
        return s;
    }
    let mid = xs.len() / 2;
    pairwise_sum(&xs[..mid]) + pairwise_sum(&xs[mid..])
}

pub fn mean(xs: &[f64]) -> f64 {
    pairwise_sum(xs) / xs.len() as f64
}

/// Weighted mean `Σ w x / Σ w`.
pub fn weighted_mean(xs: &[f64], w: &[f64]) -> f64 {
    debug_assert_eq!(xs.len(), w.len());
    let prod: Vec<f64> = xs.iter().zip(w).map(|(x, w)| x * w).collect();
    pairwise_sum(&prod) / pairwise_sum(w)
}

/// Standard error of a weighted mean of influence-type signals.
///
/// With unit weights this is `sqrt(mean((s - s̄)^2) / n)`.
pub fn signal_se(s: &[f64], w: &[f64]) -> f64 {
    let m = weighted_mean(s, w);
    let sw = pairwise_sum(w);
    let sq: Vec<f64> = s
        .iter()
        .zip(w)
        .map(|(x, w)| (w * (x - m)).powi(2))
        .collect();
    pairwise_sum(&sq).sqrt() / sw
}

/// Sample standard deviation with `n - 1` denominator.
pub fn sample_sd(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m).powi(2)).collect();
    (pairwise_sum(&sq) / (n - 1) as f64).sqrt()
}

/// Type-7 (linear interpolation) quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Type-7 quantile of unsorted data.
pub fn quantile(xs: &[f64], p: f64) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, p)
}

pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// SplitMix64 finaliser, used to derive independent substream seeds.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for the substream identified by `tags` under `base`.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    let mut s = mix(base);
    for &t in tags {
        s = mix(s ^ mix(t.wrapping_add(0x5851_F42D_4C95_7F2D)));
    }
    s
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_type7_matches_reference() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        // h = 99 * 0.01 = 0.99 -> 1 + 0.99 * 1
        assert!((quantile(&v, 0.01) - 1.99).abs() < 1e-12);
        assert!((quantile(&v, 0.99) - 99.01).abs() < 1e-12);
        assert_eq!(quantile(&[3.0], 0.3), 3.0);
    }

    #[test]
    fn pairwise_matches_naive_on_integers() {
        let v: Vec<f64> = (0..1000).map(f64::from).collect();
        assert_eq!(pairwise_sum(&v), 499_500.0);
    }

    #[test]
    fn signal_se_unit_weights() {
        let s = [1.0, 2.0, 3.0, 4.0];
        let w = [1.0; 4];
        let var = 1.25; // population variance
        assert!((signal_se(&s, &w) - (var / 4.0f64).sqrt()).abs() < 1e-15);
    }

    #[test]
    fn seeds_differ_by_tag() {
        assert_ne!(derive_seed(1, &[0]), derive_seed(1, &[1]));
        assert_ne!(derive_seed(1, &[0, 1]), derive_seed(1, &[1, 0]));
        assert_eq!(derive_seed(7, &[3, 4]), derive_seed(7, &[3, 4]));
    }

    #[test]
    fn expit_is_stable() {
        assert_eq!(expit(1000.0), 1.0);
        assert_eq!(expit(-1000.0), 0.0);
        assert!((expit(0.0) - 0.5).abs() < 1e-15);
        assert!((logit(expit(0.3)) - 0.3).abs() < 1e-12);
    }
}
