use super::Real;

/// Max-subtracted softmax.
pub fn softmax<T: Real>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::NEG_INFINITY, T::max);
    let exps: Vec<T> = logits.iter().map(|&z| (z - max).exp()).collect();
    let sum: T = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// `-log softmax(logits)[label]` and its gradient `softmax - onehot`.
pub fn softmax_cross_entropy<T: Real>(logits: &[T], label: usize) -> (T, Vec<T>) {
    assert!(label < logits.len(), "label {label} out of range");
    let max = logits.iter().copied().fold(T::NEG_INFINITY, T::max);
    let sum: T = logits.iter().map(|&z| (z - max).exp()).sum();
    let log_sum = sum.ln() + max;
    let loss = log_sum - logits[label];
    let grad = logits
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            let p = (z - log_sum).exp();
            if i == label {
                p - T::ONE
            } else {
                p
            }
        })
        .collect();
    (loss, grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn symmetric_logits() {
        let (loss, grad) = softmax_cross_entropy(&[0.0f64, 0.0], 0);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
        assert!((grad[0] + 0.5).abs() < 1e-12 && (grad[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn extreme_logits_do_not_overflow() {
        let (loss, grad) = softmax_cross_entropy(&[100.0f32, -100.0], 0);
        assert!(loss.is_finite() && loss.abs() < 1e-6);
        assert!(grad.iter().all(|g| g.is_finite()));
        let (loss, _) = softmax_cross_entropy(&[100.0f32, -100.0], 1);
        assert!((loss - 200.0).abs() < 1e-3);
    }

    #[test]
    fn gradient_matches_central_differences() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let logits = [rng.random_range(-5.0..5.0f64), rng.random_range(-5.0..5.0)];
            let label = rng.random_range(0..2);
            let (_, grad) = softmax_cross_entropy(&logits, label);
            for i in 0..2 {
                let h = 1e-4;
                let mut up = logits;
                let mut dn = logits;
                up[i] += h;
                dn[i] -= h;
                let fd = (softmax_cross_entropy(&up, label).0 - softmax_cross_entropy(&dn, label).0) / (2.0 * h);
                let rel = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(1e-8);
                assert!(rel <= 1e-4, "rel {rel}");
            }
        }
    }

    proptest! {
        #[test]
        fn softmax_sums_to_one(a in -1e3f64..1e3, b in -1e3f64..1e3) {
            let p = softmax(&[a, b]);
            prop_assert!((p[0] + p[1] - 1.0).abs() <= 1e-6);
            let p32 = softmax(&[a as f32, b as f32]);
            prop_assert!((p32[0] + p32[1] - 1.0).abs() <= 1e-6);
        }
    }
}
