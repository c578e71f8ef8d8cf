use proptest::prelude::*;

use herald_core::estimator::equivalent_wcp;
use herald_core::experiment::{HeraldedStats, SetupConfig};
use herald_core::qkd::{
    coherent_stats, max_secure_distance, pump_sweep, ChannelSpec, DistanceStatus,
};

fn stats(p1: f64, p2: f64) -> HeraldedStats {
    HeraldedStats::new(vec![1.0 - p1 - p2, p1, p2]).unwrap()
}

fn channel() -> impl Strategy<Value = ChannelSpec> {
    (0.0f64..0.4, 0.01f64..1.0, 0.0f64..1e-3).prop_map(|(l, e, d)| ChannelSpec::new(l, e, d))
}

proptest! {
    #[test]
    fn distance_nonincreasing_in_multiphoton(
        p1 in 0.05f64..0.3, p2 in 1e-5f64..5e-3, extra in 0.0f64..5e-3, ch in channel(),
    ) {
        let a = max_secure_distance(&stats(p1, p2), &ch).unwrap();
        let b = max_secure_distance(&stats(p1, p2 + extra), &ch).unwrap();
        // the extra mass comes out of vacuum; p_exp rises by at most as much
        // as p_multi does
        prop_assert!(b.km <= a.km + 1e-9);
    }

    #[test]
    fn distance_nondecreasing_in_dark(
        p1 in 0.05f64..0.3, p2 in 1e-5f64..5e-3, ch in channel(), more in 0.0f64..1e-3,
    ) {
        let s = stats(p1, p2);
        let mut noisy = ch;
        noisy.receiver_dark_per_pulse = (ch.receiver_dark_per_pulse + more).min(1.0);
        let a = max_secure_distance(&s, &ch).unwrap();
        let b = max_secure_distance(&s, &noisy).unwrap();
        // dark clicks count toward p_exp, so the bound can only move out
        prop_assert!(b.km >= a.km - 1e-9);
    }

    #[test]
    fn distance_nondecreasing_in_receiver_efficiency(
        p1 in 0.05f64..0.3, p2 in 1e-5f64..5e-3, ch in channel(), more in 0.0f64..0.5,
    ) {
        let s = stats(p1, p2);
        let mut better = ch;
        better.receiver_efficiency = (ch.receiver_efficiency + more).min(1.0);
        let a = max_secure_distance(&s, &ch).unwrap();
        let b = max_secure_distance(&s, &better).unwrap();
        prop_assert!(b.km >= a.km - 1e-9);
    }

    #[test]
    fn heralded_beats_matched_wcp(ch in channel()) {
        let heralded = stats(0.1871, 2.4e-3);
        let w = equivalent_wcp(0.1871, 2.4e-3).unwrap();
        let wcp = coherent_stats(w.mu_coherent).unwrap();
        let h = max_secure_distance(&heralded, &ch).unwrap();
        let c = max_secure_distance(&wcp, &ch).unwrap();
        prop_assert!(h.km >= c.km, "{h:?} vs {c:?}");
    }
}

#[test]
fn at_least_one_photon_insecure_at_zero_when_multiphoton_dominates() {
    let s = HeraldedStats::new(vec![0.9, 0.0, 0.1]).unwrap();
    let ch = ChannelSpec::new(0.2, 0.01, 0.0);
    let d = max_secure_distance(&s, &ch).unwrap();
    assert_eq!(d.status, DistanceStatus::Insecure);
    assert_eq!(d.km, 0.0);
}

#[test]
fn sweep_rows_are_monotone_and_ordered() {
    let mus: Vec<f64> = (1..=20).map(|k| 0.01 * k as f64).collect();
    let rows = pump_sweep(
        &SetupConfig::reference(),
        &mus,
        &ChannelSpec::telecom_fiber(),
    )
    .unwrap();
    let rows: Vec<_> = rows.into_iter().map(|r| r.unwrap()).collect();
    for (row, mu) in rows.iter().zip(&mus) {
        assert_eq!(row.mu, *mu);
    }
    for w in rows.windows(2) {
        assert!(w[1].trigger_rate >= w[0].trigger_rate);
        assert!(w[1].p2 >= w[0].p2);
    }
    let ratio_small = rows[0].p2 / rows[0].p1;
    let ratio_big = rows[9].p2 / rows[9].p1;
    assert!((ratio_big / ratio_small - 10.0).abs() < 1.0);
}
