use duopath_core::{EwmaState, HarmonicState};
use proptest::prelude::*;

fn samples() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-3f64..1e6, 1..200)
}

fn batch_harmonic(xs: &[f64]) -> f64 {
    xs.len() as f64 / xs.iter().map(|x| 1.0 / x).sum::<f64>()
}

fn arithmetic(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

proptest! {
    #[test]
    fn incremental_harmonic_matches_batch(xs in samples()) {
        let mut h = HarmonicState::new();
        for &x in &xs {
            h.update(x).unwrap();
        }
        let got = h.estimate().unwrap();
        let want = batch_harmonic(&xs);
        prop_assert!(((got - want) / want).abs() <= 1e-9, "{got} vs {want}");
        prop_assert_eq!(h.count(), xs.len() as u64);
    }

    #[test]
    fn harmonic_never_exceeds_arithmetic(xs in samples()) {
        let mut h = HarmonicState::new();
        for (k, &x) in xs.iter().enumerate() {
            let est = h.update(x).unwrap();
            let mean = arithmetic(&xs[..=k]);
            prop_assert!(est <= mean * (1.0 + 1e-12), "{est} > {mean}");
        }
    }

    #[test]
    fn ewma_stays_between_old_and_sample(alpha in 0.0f64..=1.0, xs in samples()) {
        let mut e = EwmaState::new(alpha).unwrap();
        for &x in &xs {
            let old = e.estimate();
            let new = e.update(x).unwrap();
            let (lo, hi) = match old {
                Some(o) => (o.min(x), o.max(x)),
                None => (x, x),
            };
            prop_assert!(lo <= new && new <= hi, "{lo} <= {new} <= {hi}");
        }
    }
}

#[test]
fn outlier_is_damped_more_by_harmonic() {
    let mut h = HarmonicState::new();
    let mut e = EwmaState::new(0.9).unwrap();
    for x in [10.0, 10.0, 10.0, 1000.0] {
        h.update(x).unwrap();
        e.update(x).unwrap();
    }
    let (h, e) = (h.estimate().unwrap(), e.estimate().unwrap());
    // 4 / (3/10 + 1/1000) and 0.9 * 10 + 0.1 * 1000
    assert!((h - 4.0 / 0.301).abs() < 1e-9);
    assert!((e - 109.0).abs() < 1e-9);
    assert!((h - 10.0).abs() < (e - 10.0).abs());
}
