//! Property tests for the laws the closed forms promise, complementing
//! the pinned-value unit tests: scaling behaviors, bounds and
//! determinism over randomized inputs.

use plugplay::analytic::{
    effective_rep_rate, qber_det, qber_total, scale_experiment, useful_rate, ExperimentRecord,
    TrainSchedule,
};
use plugplay::protocol::{amplified_len, toeplitz_hash};
use plugplay::sim::{OperatingCurve, OperatingPoint, OpticalConfig};
use proptest::prelude::*;

proptest! {
    /// The detector error term is noise over signal, so doubling the
    /// photon number must exactly halve it.
    #[test]
    fn detector_qber_scales_inversely_with_mu(
        p_noise in 1e-9f64..1e-4,
        mu in 0.01f64..1.0,
        eta_d in 0.01f64..1.0,
        eta_t in 0.001f64..1.0,
    ) {
        prop_assume!(p_noise / (mu * eta_d * eta_t) < 0.2);
        let at_mu = qber_det(p_noise, mu, eta_d, eta_t).unwrap();
        let at_double = qber_det(p_noise, 2.0 * mu, eta_d, eta_t).unwrap();
        prop_assert!((2.0 * at_double - at_mu).abs() <= 1e-12 * at_mu);
    }

    /// The budget is a plain sum of its three terms.
    #[test]
    fn error_budget_terms_add(
        qd in 0.0f64..0.2,
        qopt in 0.0f64..0.05,
        extra in 0.0f64..0.05,
    ) {
        let total = qber_total(qd, qopt, extra).unwrap();
        prop_assert!((total - (qd + qopt + extra)).abs() <= 1e-15);
    }

    /// Below the distillation threshold some key always survives, never
    /// more than was sifted, and a noisier channel never yields more.
    #[test]
    fn distillation_is_positive_bounded_and_monotone(
        raw in 1.0f64..1e6,
        qa in 1e-4f64..0.15,
        qb in 1e-4f64..0.15,
    ) {
        let (lo, hi) = if qa <= qb { (qa, qb) } else { (qb, qa) };
        let at_lo = useful_rate(raw, lo).unwrap();
        let at_hi = useful_rate(raw, hi).unwrap();
        prop_assert!(at_lo > 0.0 && at_lo < raw);
        prop_assert!(at_hi <= at_lo);
    }

    /// Linear photon-number rescaling preserves the rate-error product
    /// and undoes itself exactly.
    #[test]
    fn rescaling_round_trips(
        mu0 in 0.02f64..2.0,
        mu1 in 0.02f64..2.0,
        raw in 0.1f64..1e5,
        qber in 1e-4f64..0.2,
    ) {
        prop_assume!(qber * mu0 / mu1 < 0.5);
        let rec = ExperimentRecord {
            label: "probe".into(),
            distance_km: 10.0,
            mu: mu0,
            raw_rate_hz: raw,
            qber,
        };
        let scaled = scale_experiment(&rec, mu1).unwrap();
        let product = scaled.raw_rate_hz * scaled.qber;
        prop_assert!((product - raw * qber).abs() <= 1e-9 * raw * qber);
        let back = scale_experiment(&scaled, mu0).unwrap();
        prop_assert!((back.raw_rate_hz - raw).abs() <= 1e-9 * raw);
        prop_assert!((back.qber - qber).abs() <= 1e-9 * qber);
    }

    /// A click probability is a probability and brightening the source
    /// never lowers it.
    #[test]
    fn click_probability_is_monotone_in_mu(
        mu_a in 0.01f64..3.0,
        mu_b in 0.01f64..3.0,
        eta_t in 0.001f64..1.0,
        eta_d in 0.01f64..1.0,
    ) {
        let (dim, bright) = if mu_a <= mu_b { (mu_a, mu_b) } else { (mu_b, mu_a) };
        let p_dim = OpticalConfig::with_qber_opt(dim, eta_t, 0.0).unwrap().click_probability(eta_d);
        let p_bright =
            OpticalConfig::with_qber_opt(bright, eta_t, 0.0).unwrap().click_probability(eta_d);
        prop_assert!((0.0..=1.0).contains(&p_dim));
        prop_assert!((0.0..=1.0).contains(&p_bright));
        prop_assert!(p_dim <= p_bright);
    }

    /// The duty factor prices the storage round trip: it is a proper
    /// fraction, the effective rate is exactly the base rate times it,
    /// and capacity bookkeeping agrees with itself.
    #[test]
    fn duty_cycle_prices_the_round_trip(
        ppt in 1u32..400,
        spacing in 1e-7f64..1e-6,
        storage in 1.0f64..30.0,
        line in 1.0f64..60.0,
    ) {
        let schedule = TrainSchedule::new(ppt, spacing, storage, 2.04e8, line).unwrap();
        let eff = effective_rep_rate(&schedule, 2.5e6);
        prop_assert!(eff.duty_factor > 0.0 && eff.duty_factor < 1.0);
        prop_assert!((eff.hz - 2.5e6 * eff.duty_factor).abs() <= 1e-6 * eff.hz);
        prop_assert_eq!(eff.within_capacity, schedule.fits_storage_line());
        prop_assert_eq!(schedule.fits_storage_line(), schedule.overfill_pulses() == 0);
        prop_assert_eq!(
            schedule.fits_storage_line(),
            ppt <= schedule.capacity_pulses()
        );
    }

    /// Amplification never returns more bits than went in and every
    /// disclosed bit costs at least itself.
    #[test]
    fn amplification_shrinks_with_the_leak(
        n in 0usize..20_000,
        qber in 1e-3f64..0.15,
        leaked in 0u64..5_000,
        margin in 0u64..256,
    ) {
        let len = amplified_len(n, qber, leaked, margin).unwrap();
        prop_assert!(len <= n);
        let leakier = amplified_len(n, qber, leaked + 17, margin).unwrap();
        prop_assert!(leakier <= len);
        if len > 0 {
            prop_assert!((len as u64 + leaked + margin) as usize <= n);
        }
    }

    /// Between anchors the operating curve interpolates the noise
    /// geometrically: log-linear in the efficiency.
    #[test]
    fn operating_curve_interpolates_log_linearly(
        p_lo in 1e-8f64..1e-5,
        p_hi in 1e-5f64..1e-2,
        t in 0.0f64..1.0,
    ) {
        let (e_lo, e_hi) = (0.025, 0.2);
        let curve = OperatingCurve::new(vec![
            OperatingPoint { eta_d: e_lo, p_noise: p_lo },
            OperatingPoint { eta_d: e_hi, p_noise: p_hi },
        ])
        .unwrap();
        let eta = e_lo + t * (e_hi - e_lo);
        let got = curve.p_noise_at(eta).unwrap();
        let expect = (p_lo.ln() + t * (p_hi.ln() - p_lo.ln())).exp();
        prop_assert!((got - expect).abs() <= 1e-9 * expect);
        prop_assert!(got >= p_lo.min(p_hi) && got <= p_lo.max(p_hi));
    }

    /// The compression hash is deterministic and delivers exactly the
    /// requested number of bits.
    #[test]
    fn toeplitz_hash_is_deterministic_with_exact_length(
        bits in proptest::collection::vec(any::<bool>(), 0..400),
        seed in any::<u64>(),
        frac in 0.0f64..1.0,
    ) {
        let out_len = (bits.len() as f64 * frac) as usize;
        let once = toeplitz_hash(&bits, out_len, seed);
        let twice = toeplitz_hash(&bits, out_len, seed);
        prop_assert_eq!(once.len(), out_len);
        prop_assert_eq!(once, twice);
    }
}
