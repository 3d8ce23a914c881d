/// Inverse-square-root schedule with linear warm-up:
/// `d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)`.
pub fn warmup_lr(step: usize, warmup: usize, d_model: usize) -> f64 {
    let s = step.max(1) as f64;
    let w = warmup.max(1) as f64;
    (d_model as f64).powf(-0.5) * s.powf(-0.5).min(s * w.powf(-1.5))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert!((warmup_lr(12000, 12000, 512) - 4.0343e-4).abs() < 1e-7);
        assert!((warmup_lr(3000, 12000, 512) - 1.0086e-4).abs() < 1e-7);
    }

    #[test]
    fn branches_meet_at_the_peak() {
        let w = 1000f64;
        assert!((w.powf(-0.5) - w * w.powf(-1.5)).abs() < 1e-15);
        let peak = warmup_lr(1000, 1000, 64);
        assert!(warmup_lr(999, 1000, 64) < peak && warmup_lr(1001, 1000, 64) < peak);
    }

    #[test]
    fn strictly_monotone_on_each_side() {
        let lrs: Vec<f64> = (1..=300).map(|s| warmup_lr(s, 100, 256)).collect();
        assert!(lrs[..100].windows(2).all(|w| w[0] < w[1]));
        assert!(lrs[99..].windows(2).all(|w| w[0] > w[1]));
    }
}
