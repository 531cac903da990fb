use proptest::prelude::*;
use qlinksim_core::wcp::*;

#[test]
fn multi_photon_probability_at_one_tenth() {
    let s = poisson_stats(0.1).unwrap();
    assert!((s.p_multi - 0.004678840160444397).abs() < 1e-15);
}

#[test]
fn fiber_transmission_values() {
    assert!((ChannelModel::fiber(5.0).unwrap().transmission() - 10f64.powf(-0.1)).abs() < 1e-15);
    let far = ChannelModel::fiber(1000.0).unwrap().transmission();
    assert!((far / 1e-20 - 1.0).abs() < 1e-9);
}

#[test]
fn direct_transmission_wait() {
    let d = direct_transmission_rate(10e9, &ChannelModel::fiber(1000.0).unwrap()).unwrap();
    assert!((d.mean_wait_years() - 1e10 / (365.25 * 86400.0)).abs() < 1e-6);
}

proptest! {
    #[test]
    fn optimum_beats_any_mu(
        length in 1.0f64..150.0,
        mu in 1e-4f64..1.0,
        sarg in any::<bool>(),
    ) {
        let protocol = if sarg { WcpProtocol::Sarg } else { WcpProtocol::Bb84 };
        let channel = ChannelModel::fiber(length).unwrap();
        let best = optimal_mu(protocol, &channel, 0.8).unwrap();
        let other = secure_rate(protocol, mu, &channel, 0.8, 1.0).unwrap();
        prop_assert!(best.rate_per_pulse >= other * (1.0 - 1e-6));
    }

    #[test]
    fn tail_is_bounded_and_decreasing(mu in 0.0f64..20.0, k in 0u32..8) {
        let a = poisson_tail(mu, k);
        let b = poisson_tail(mu, k + 1);
        prop_assert!((0.0..=1.0).contains(&a));
        prop_assert!(b <= a + 1e-15);
    }
}
