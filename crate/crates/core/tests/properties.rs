use madpo_core::losses::{coefficient, loss_grad_h_theta, loss_hessian_h_theta, per_pair_loss, weight, weight_ablated};
use madpo_core::policy::{implicit_margin, PolicyParams};
use madpo_core::trainer::{beta_guided_filter, FilterState};
use madpo_core::world::{read_ndjson, sample_preference, write_ndjson, DatasetHeader, Prompt, Response, Source};
use madpo_core::{Ablation, LossKind, PreferenceRecord, Tier, WeightConfig, World, WorldConfig};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn weight_config() -> impl Strategy<Value = WeightConfig> {
    (0.0..0.95f64, 1.05..5.0f64, 0.2..3.0f64, 0.5..10.0f64).prop_map(|(lo, hi, l, t)| WeightConfig::new(lo, hi, l, t).unwrap())
}

fn vec24() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0..3.0f64, 24)
}

fn record(x: Vec<f64>, yw: Vec<f64>, yl: Vec<f64>) -> PreferenceRecord {
    PreferenceRecord {
        prompt: Prompt { id: 0, features: x },
        winner: Response { features: yw, source: Source::Generated },
        loser: Response { features: yl, source: Source::NegativeCorpus },
        oracle_reward_w: 0.0,
        oracle_reward_l: 0.0,
        tier: Tier::Low,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn coefficient_decreases_and_stays_in_range(cfg in weight_config(), a in 0.0..50.0f64, b in 0.0..50.0f64) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        let (c_lo, c_hi) = (coefficient(lo, &cfg), coefficient(hi, &cfg));
        prop_assert!(c_lo >= c_hi);
        prop_assert!(c_hi >= cfg.c_min && c_lo <= cfg.c_max);
        prop_assert!((coefficient(cfg.tau, &cfg) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weight_amplifies_and_regularizes_by_region(cfg in weight_config(), u in 0.001..0.999f64, extra in 0.0..30.0f64) {
        let h = u * cfg.tau;
        prop_assert!(weight(h, &cfg) >= 1.0);
        prop_assert!(weight(-h, &cfg) <= 1.0);
        prop_assert!(weight(cfg.tau + extra, &cfg) <= 1.0 + 1e-12);
        prop_assert_eq!(weight(-cfg.tau - extra, &cfg), 1.0);
        for h in [h, -h, cfg.tau + extra] {
            let w = weight(h, &cfg);
            prop_assert!(w.is_finite() && w > 0.0);
            prop_assert!(w <= cfg.w_max() + 1e-12);
        }
    }

    #[test]
    fn ablations_switch_off_one_region(cfg in weight_config(), h in -20.0..20.0f64) {
        let full = weight(h, &cfg);
        let amp = weight_ablated(h, &cfg, Ablation::AmpOnly);
        let reg = weight_ablated(h, &cfg, Ablation::RegOnly);
        if h.abs() < cfg.tau {
            prop_assert_eq!(amp, full);
            prop_assert_eq!(reg, 1.0);
        } else {
            prop_assert_eq!(amp, 1.0);
            prop_assert_eq!(reg, full);
        }
    }

    #[test]
    fn madpo_gradient_matches_central_difference(cfg in weight_config(), beta in 0.05..1.0f64, t in -10.0..10.0f64, h_phi in -15.0..15.0f64) {
        let kind = LossKind::madpo(beta, cfg, Ablation::Full).unwrap();
        let h = t / beta;
        let eps = 1e-4 / beta;
        let f = |x: f64| per_pair_loss(x, h_phi, &kind).unwrap();
        let g = loss_grad_h_theta(h, h_phi, &kind).unwrap();
        let fd = (f(h + eps) - f(h - eps)) / (2.0 * eps);
        prop_assert!((g - fd).abs() <= 1e-6 * (1.0 + g.abs()), "g={g} fd={fd}");
        prop_assert!(g < 0.0);
        let hess = loss_hessian_h_theta(h, h_phi, &kind).unwrap();
        prop_assert!(hess > 0.0 && hess <= cfg.w_max() * beta * beta / 4.0 + 1e-15);
    }

    #[test]
    fn ipo_loss_is_minimized_at_its_target(beta in 0.05..1.0f64, dh in -5.0..5.0f64) {
        let kind = LossKind::ipo(beta).unwrap();
        let target = 1.0 / (2.0 * beta);
        let at = per_pair_loss(target, 0.0, &kind).unwrap();
        prop_assert!(at.abs() < 1e-12);
        prop_assert!(per_pair_loss(target + dh, 0.0, &kind).unwrap() >= at);
    }

    #[test]
    fn implicit_margin_is_antisymmetric_and_linear(x in vec24(), a in vec24(), b in vec24(), t1 in vec24(), t2 in vec24(), s in -3.0..3.0f64) {
        let x = x[..8].to_vec();
        let yw = a[..8].to_vec();
        let yl = b[..8].to_vec();
        let fwd = record(x.clone(), yw.clone(), yl.clone());
        let rev = record(x, yl, yw);
        let p1 = PolicyParams { theta: t1.clone() };
        let m = implicit_margin(&p1, &fwd).unwrap();
        prop_assert!((m + implicit_margin(&p1, &rev).unwrap()).abs() <= 1e-12 * (1.0 + m.abs()));
        let p2 = PolicyParams { theta: t2.clone() };
        let combo = PolicyParams { theta: t1.iter().zip(&t2).map(|(a, b)| a + s * b).collect() };
        let lhs = implicit_margin(&combo, &fwd).unwrap();
        let rhs = m + s * implicit_margin(&p2, &fwd).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
    }

    #[test]
    fn filter_keeps_a_sorted_subset_of_the_right_size(
        margins in prop::collection::vec(-50.0..50.0f64, 1..80),
        p in 0.05..1.0f64,
        sigma in 0.01..5.0f64,
        seed in any::<u64>(),
    ) {
        let state = FilterState::new(0.0, sigma, 0.9);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = beta_guided_filter(&margins, &state, p, 0.0, &mut rng).unwrap();
        let expected = ((p * margins.len() as f64).ceil() as usize).clamp(1, margins.len());
        prop_assert_eq!(out.kept.len(), expected);
        prop_assert!(out.kept.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(out.kept.iter().all(|&i| i < margins.len()));
        prop_assert!(out.state.std.is_finite() && out.state.std > 0.0);
    }

    #[test]
    fn preference_draws_are_pure_functions_of_seed_and_index(r1 in -5.0..5.0f64, r2 in -5.0..5.0f64, seed in any::<u64>(), index in any::<u64>()) {
        prop_assert_eq!(sample_preference(r1, r2, seed, index), sample_preference(r1, r2, seed, index));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn dataset_files_round_trip_exactly(seed in any::<u64>(), n in 1usize..30) {
        let world = World::new(WorldConfig::default(), seed).unwrap();
        let records = world.build_dataset(Tier::Medium, n).unwrap();
        let header = DatasetHeader { seed, tier: Tier::Medium, config_hash: "h".into() };
        let mut buf = Vec::new();
        write_ndjson(&mut buf, &header, &records).unwrap();
        let (h2, back) = read_ndjson(buf.as_slice()).unwrap();
        prop_assert_eq!(h2, header);
        prop_assert_eq!(back, records);
    }
}
