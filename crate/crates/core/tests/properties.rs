use std::collections::BTreeMap;

use approx::assert_relative_eq;
use proptest::prelude::*;

use windfleet::clustering::{assign, fit_dpgmm, smooth_labels, DpgmmConfig, LabelGrid, ZoneAssignment};
use windfleet::controller::{
    episode_return, reinforce_update, reward, turbine_return, ShutdownPolicy,
};
use windfleet::farmsim::{first_alarms, simulate, ShutdownKind, StormScenario};
use windfleet::layout::{FarmLayout, TurbineId};
use windfleet::profiles::{build_profiles, compute_ldd, compute_lrd, hellinger, LoadHistogram};
use windfleet::scada::{farm_wind_vector, normalize, Bounds, ScadaRecord, WindVector};

fn unit() -> impl Strategy<Value = f64> {
    prop_oneof![Just(0.0), Just(1.0), Just(0.5), 0.0..=1.0]
}

fn series(max: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    prop::collection::vec((unit(), 0.0..20.0f64), 0..max).prop_map(|v| v.into_iter().unzip())
}

fn nonempty_ldd() -> impl Strategy<Value = LoadHistogram> {
    prop::collection::vec(unit(), 1..200).prop_map(|p| compute_ldd(&p, 20).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn reward_branches_partition_the_plane(t in -500.0..500.0f64, ts in -500.0..500.0f64, c in -500.0..500.0f64, p in 0.01..50.0f64) {
        let conditions = [t < ts && t <= c, t >= ts && t <= c, t > c];
        prop_assert_eq!(conditions.iter().filter(|&&b| b).count(), 1);
        let r = reward(t, ts, c, p);
        let expected = if conditions[0] { 1.0 } else if conditions[1] { -p } else { 0.0 };
        prop_assert_eq!(r, expected);
    }

    #[test]
    fn episode_return_non_increasing_in_penalty(
        delays in prop::collection::vec(0.0..400.0f64, 1..6),
        arrival0 in 0.0..600.0f64,
        p1 in 0.1..20.0f64,
        dp in 0.0..20.0f64,
    ) {
        let arrivals: Vec<f64> = (0..delays.len()).map(|i| arrival0 + 120.0 * i as f64).collect();
        let columns = vec![5; delays.len()];
        let low = episode_return(&delays, &arrivals, 3000.0, p1, &columns).unwrap();
        let high = episode_return(&delays, &arrivals, 3000.0, p1 + dp, &columns).unwrap();
        prop_assert!(high <= low);

        // Shutting down before each arrival makes the penalty irrelevant.
        let mut prev = 0.0;
        let safe: Vec<f64> = arrivals.iter().map(|a| { let d = (a - 1.0).max(prev) - prev; prev += d; d }).collect();
        let a = episode_return(&safe, &arrivals, 3000.0, p1, &columns).unwrap();
        let b = episode_return(&safe, &arrivals, 3000.0, p1 + dp, &columns).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn turbine_return_sums_the_reward(cum in 0.0..300.0f64, ts in 0.0..300.0f64, h in 0u32..300, p in 0.1..20.0f64) {
        let total: f64 = (0..=h).map(|t| reward(t as f64, ts, cum, p)).sum();
        assert_relative_eq!(turbine_return(cum, ts, h as f64, p), total, max_relative = 1e-12, epsilon = 1e-9);
    }

    #[test]
    fn reinforce_update_fixed_points(
        theta in prop::collection::btree_map(3u32..12, 0.0..300.0f64, 1..9),
        noise in prop::collection::vec(-50.0..50.0f64, 9),
        ret in -1e4..1e4f64,
        sigma in 1.0..40.0f64,
        alpha in 0.0..1.0f64,
    ) {
        let delays: BTreeMap<u32, f64> = theta.iter().zip(&noise).map(|((&r, &t), n)| (r, t + n)).collect();
        prop_assert_eq!(&reinforce_update(&theta, &delays, ret, ret, sigma, alpha).unwrap(), &theta);
        prop_assert_eq!(&reinforce_update(&theta, &theta, ret, 0.0, sigma, alpha).unwrap(), &theta);
    }

    #[test]
    fn sigma_strictly_decreases(sigma0 in 0.1..100.0f64, decay in 0.5..0.999f64, i in 0usize..200) {
        let policy = ShutdownPolicy::uniform(11, 10.0, sigma0, decay).unwrap();
        prop_assert!(policy.sigma(i + 1) < policy.sigma(i));
    }

    #[test]
    fn cumulative_shutdown_times_non_decreasing(theta in prop::collection::vec(0.0..200.0f64, 9)) {
        let policy = ShutdownPolicy::new((3..=11).zip(theta).collect()).unwrap();
        let cum: Vec<f64> = policy.cumulative_delays().into_values().collect();
        prop_assert!(cum.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn histogram_mass_is_conserved((power, rpm) in series(500)) {
        let ldd = compute_ldd(&power, 50).unwrap();
        let lrd = compute_lrd(&power, &rpm, 50).unwrap();
        prop_assert_eq!(ldd.total(), power.len() as f64);
        let revs: f64 = rpm.iter().map(|r| r / 60.0).sum();
        assert_relative_eq!(lrd.total(), revs, max_relative = 1e-9, epsilon = 1e-12);
        prop_assert_eq!(lrd.counts.len() + 1, lrd.bin_edges.len());
    }

    #[test]
    fn duration_histograms_merge_additively((power, _) in series(400), cut in 0.0..1.0f64) {
        let k = (cut * power.len() as f64) as usize;
        let (a, b) = power.split_at(k);
        let merged = compute_ldd(a, 50).unwrap().merge(&compute_ldd(b, 50).unwrap()).unwrap();
        prop_assert_eq!(merged, compute_ldd(&power, 50).unwrap());
    }

    #[test]
    fn duration_histogram_ignores_order(power in prop::collection::vec(unit(), 0..300).prop_shuffle()) {
        let mut sorted = power.clone();
        sorted.sort_by(f64::total_cmp);
        prop_assert_eq!(compute_ldd(&power, 50).unwrap(), compute_ldd(&sorted, 50).unwrap());
    }

    #[test]
    fn hellinger_is_a_metric(a in nonempty_ldd(), b in nonempty_ldd(), c in nonempty_ldd()) {
        let ab = hellinger(&a, &b).unwrap();
        let ba = hellinger(&b, &a).unwrap();
        prop_assert_eq!(ab, ba);
        prop_assert!((0.0..=1.0 + 1e-12).contains(&ab));
        prop_assert!(hellinger(&a, &a).unwrap().abs() < 1e-12);
        let ac = hellinger(&a, &c).unwrap();
        let cb = hellinger(&c, &b).unwrap();
        prop_assert!(ab <= ac + cb + 1e-12);
    }

    #[test]
    fn normalize_is_monotone_and_idempotent(mut values in prop::collection::vec(-10.0..3000.0f64, 1..100)) {
        values.sort_by(f64::total_cmp);
        let out = normalize(&values, Bounds::new(0.0, 2000.0).unwrap()).unwrap();
        prop_assert!(out.windows(2).all(|w| w[0] <= w[1]));
        let again = normalize(&out, Bounds::new(0.0, 1.0).unwrap()).unwrap();
        prop_assert_eq!(again, out);
    }

    #[test]
    fn smoothing_fixed_points_stay_fixed(cells in prop::collection::vec(prop::option::weighted(0.9, 0usize..3), 20)) {
        let mut grid = LabelGrid::empty(4, 5);
        for (i, c) in cells.into_iter().enumerate() {
            grid.set(TurbineId::new(i as u32 / 5 + 1, i as u32 % 5 + 1), c);
        }
        let mut g = grid;
        for _ in 0..50 {
            let next = smooth_labels(&g);
            if next == g {
                prop_assert_eq!(smooth_labels(&next), next);
                break;
            }
            g = next;
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn mixture_fit_invariants(
        points in prop::collection::vec(prop::collection::vec(-5.0..5.0f64, 2), 6..80),
        seed in 0u64..1000,
    ) {
        let cfg = DpgmmConfig::default().with_seed(seed);
        let model = fit_dpgmm(&points, &cfg).unwrap();
        let total: f64 = model.components.iter().map(|c| c.weight).sum();
        assert_relative_eq!(total, 1.0, epsilon = 1e-9);
        prop_assert!(model.components.iter().all(|c| c.is_positive_definite()));
        prop_assert!(model.effective_components().len() <= cfg.truncation);
        prop_assert!(model.elbo_trace.windows(2).all(|w| w[1] - w[0] >= -1e-8));
        prop_assert_eq!(&fit_dpgmm(&points, &cfg).unwrap(), &model);
        let a = assign(&model, &points).unwrap();
        for (r, &l) in a.responsibilities.iter().zip(&a.labels) {
            assert_relative_eq!(r.iter().sum::<f64>(), 1.0, epsilon = 1e-9);
            prop_assert!(r.iter().all(|&v| v <= r[l]));
        }
    }

    #[test]
    fn pooling_ignores_record_order(
        zones in prop::collection::vec(0usize..3, 6),
        seconds in 1i64..40,
        order in Just((0..240usize).collect::<Vec<_>>()).prop_shuffle(),
    ) {
        let turbines: Vec<TurbineId> = (1..=6).map(|c| TurbineId::new(1, c)).collect();
        let mut records = Vec::new();
        for s in 0..seconds {
            for (i, &t) in turbines.iter().enumerate() {
                records.push(ScadaRecord {
                    timestamp: 100 + s,
                    turbine: t,
                    power: ((s * 37 + i as i64 * 11) % 2000) as f64,
                    rotor_speed: ((s * 7 + i as i64) % 16) as f64 + 0.25,
                    wind_speed: 8.0,
                    wind_direction: 230.0,
                });
            }
        }
        let assignment = ZoneAssignment {
            labels: turbines.iter().copied().zip(zones).collect(),
            responsibilities: BTreeMap::new(),
        };
        let bounds = Bounds::new(0.0, 2000.0).unwrap();
        let wind = WindVector { speed: 8.0, direction: 230.0 };
        let shuffled: Vec<ScadaRecord> = order.iter().filter(|&&i| i < records.len()).map(|&i| records[i]).collect();
        let mut rest: Vec<ScadaRecord> = records.iter().skip(240).copied().collect();
        let mut permuted = shuffled;
        permuted.append(&mut rest);
        prop_assert_eq!(
            build_profiles(&records, &assignment, bounds, 50, wind).unwrap(),
            build_profiles(&permuted, &assignment, bounds, 50, wind).unwrap()
        );
        let a = farm_wind_vector(&records).unwrap().vector.speed;
        let b = farm_wind_vector(&permuted).unwrap().vector.speed;
        assert_relative_eq!(a, b, max_relative = 1e-12);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn simulation_invariants(seed in 0u64..10_000, theta in prop::collection::vec(0.0..150.0f64, 9)) {
        let layout = FarmLayout::default();
        let scenario = StormScenario::default();
        let policy = ShutdownPolicy::new((3..=11).zip(theta).collect()).unwrap();
        let base = simulate(&layout, &scenario, None, seed).unwrap();
        let run = simulate(&layout, &scenario, Some(&policy), seed).unwrap();
        prop_assert_eq!(&simulate(&layout, &scenario, Some(&policy), seed).unwrap(), &run);
        prop_assert_eq!(&base.log.alarms, &run.log.alarms);

        let first: BTreeMap<TurbineId, i64> = run.log.alarms.iter().rev().map(|&(t, id)| (id, t)).collect();
        let mut seen = std::collections::BTreeSet::new();
        let mut planned_by_row: BTreeMap<u32, i64> = BTreeMap::new();
        for s in &run.log.shutdowns {
            prop_assert!(seen.insert(s.turbine));
            prop_assert!((0..=scenario.horizon).contains(&s.timestamp));
            match s.kind {
                ShutdownKind::Emergency => prop_assert!(first.get(&s.turbine).is_some_and(|&a| a <= s.timestamp)),
                ShutdownKind::Planned => { planned_by_row.insert(s.turbine.row, s.timestamp); }
            }
        }
        let times: Vec<i64> = planned_by_row.into_values().collect();
        prop_assert!(times.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn noise_free_alarms_are_affine_beyond_the_beacons(interval in 20.0..200.0f64) {
        let layout = FarmLayout::default();
        let scenario = StormScenario::deterministic(&layout, interval);
        let alarms: BTreeMap<u32, i64> = first_alarms(&layout, &scenario, 3)
            .into_iter()
            .filter_map(|(id, a)| a.map(|a| (id.row, a)))
            .collect();
        for r in 3..=layout.rows {
            let expected = (scenario.onset + (r - 1) as f64 * interval).ceil() as i64;
            if expected < scenario.horizon {
                prop_assert_eq!(alarms.get(&r).copied(), Some(expected));
            }
        }
    }
}
