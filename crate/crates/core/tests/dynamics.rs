use proptest::prelude::*;
use v2xfl_core::forecast::*;
use v2xfl_core::mobility::*;
use v2xfl_core::v2x::*;
use v2xfl_core::{Rect, Vec2};

fn snapshot(states: &[VehicleState], now: f64, rsus: Vec<Vec2>) -> Rttg {
    let cams: Vec<V2xMessage> = states
        .iter()
        .map(|s| V2xMessage::Cam(CamRecord { sender_id: s.vehicle_id, state: *s, generation_time: s.timestamp }))
        .collect();
    fuse(&cams, now, &Rttg::empty(rsus, 150.0), &FusionConfig::default()).0
}

fn kind() -> impl Strategy<Value = MobilityKind> {
    prop_oneof![Just(MobilityKind::RingRoad), Just(MobilityKind::GridRandomWaypoint), Just(MobilityKind::Stationary)]
}

proptest! {
    #[test]
    fn constant_velocity_prediction_tracks_straight_motion(
        x in -500.0f64..500.0, y in -500.0f64..500.0,
        speed in 0.0f64..40.0, heading in 0.0f64..std::f64::consts::TAU,
        steps in 1u32..100,
    ) {
        let (v_max, dt) = (40.0, 0.1);
        let v = Vec2::new(speed * heading.cos(), speed * heading.sin());
        let mut truth = VehicleState { velocity: v, ..VehicleState::at_rest(3, Vec2::new(x, y)) };
        let g = snapshot(&[truth], 0.0, vec![Vec2::ZERO]);
        for _ in 0..steps {
            truth = integrate(&truth, dt, v_max);
        }
        let pred = TrajectoryPredictor::new(PredictorKind::ConstantVelocity, steps as f64 * dt).unwrap();
        let p = predict_rttg(&g, &pred).position(3).unwrap();
        prop_assert!(p.distance(truth.position) <= v_max * dt);
    }

    #[test]
    fn one_step_ring_prediction_within_a_step(seed in any::<u64>(), steps in 0u64..50) {
        let cfg = ScenarioConfig { vehicle_count: 20, seed, ..Default::default() };
        let mut m = Mobility::from_config(&cfg).unwrap();
        m.advance_to(steps as f64 * cfg.dt);
        let g = snapshot(m.states(), m.time(), vec![Vec2::ZERO]);
        let pred = predict_rttg(&g, &TrajectoryPredictor::new(PredictorKind::ConstantVelocity, cfg.dt).unwrap());
        m.advance();
        for s in m.states() {
            prop_assert!(pred.position(s.vehicle_id).unwrap().distance(s.position) <= cfg.v_max * cfg.dt);
        }
    }

    #[test]
    fn latency_grows_with_rsu_distance(a in 0.0f64..300.0, b in 0.0f64..300.0, round in any::<u64>(), id in any::<u32>()) {
        let model = LatencyModel { jitter_std: 0.0, ..Default::default() };
        let (near, far) = if a <= b { (a, b) } else { (b, a) };
        let rsu = [Vec2::ZERO];
        let l_near = model.estimate_at(id, Vec2::new(near, 0.0), &rsu, round);
        let l_far = model.estimate_at(id, Vec2::new(0.0, far), &rsu, round);
        prop_assert!(l_near.connected && l_far.connected);
        prop_assert!(l_near.uplink <= l_far.uplink);
        prop_assert!(l_near.downlink <= l_far.downlink);
        let gone = model.estimate_at(id, Vec2::new(300.0 + far + 1.0, 0.0), &rsu, round);
        prop_assert!(!gone.connected && gone.uplink == UNREACHABLE);
    }

    #[test]
    fn fusing_twice_changes_nothing(seed in any::<u64>(), steps in 0u64..30, loss in 0.0f64..0.5) {
        let cfg = ScenarioConfig { vehicle_count: 25, seed, ..Default::default() };
        let mut m = Mobility::from_config(&cfg).unwrap();
        m.advance_to(steps as f64 * cfg.dt);
        let rates = MessageRates { msg_loss: loss, seed, ..Default::default() };
        let (cams, cpms) = emit_messages(m.states(), m.time(), &rates);
        let msgs = into_stream(cams, cpms);
        let prior = Rttg::empty(m.scenario().rsu_positions.clone(), 150.0);
        let fc = FusionConfig::default();
        let (once, _) = fuse(&msgs, m.time(), &prior, &fc);
        prop_assert_eq!(&fuse(&msgs, m.time(), &prior, &fc).0, &once);
        prop_assert_eq!(&fuse(&msgs, m.time(), &once, &fc).0, &once);
    }

    #[test]
    fn stale_entries_expire_after_ttl(age in 0.0f64..3.0, ttl in 0.1f64..2.0) {
        let s = VehicleState { timestamp: 10.0, ..VehicleState::at_rest(1, Vec2::new(5.0, 5.0)) };
        let g = snapshot(&[s], 10.0, vec![]);
        let fc = FusionConfig { ttl, ..Default::default() };
        let (later, stats) = fuse(&[], 10.0 + age, &g, &fc);
        prop_assert_eq!(later.nodes.contains_key(&1), age <= ttl);
        prop_assert_eq!(stats.expired, usize::from(age > ttl));
    }

    #[test]
    fn mobility_replays_and_stays_in_bounds(seed in any::<u64>(), kind in kind(), steps in 1usize..300) {
        let cfg = ScenarioConfig { vehicle_count: 15, mobility: kind, seed, ..Default::default() };
        let run = || {
            let mut m = Mobility::from_config(&cfg).unwrap();
            let mut table = Vec::new();
            for _ in 0..steps {
                m.advance();
                table.extend_from_slice(m.states());
            }
            table
        };
        let table = run();
        prop_assert_eq!(&table, &run());
        let bounds: Rect = cfg.bounds;
        for s in &table {
            prop_assert!(s.is_finite());
            prop_assert!(bounds.contains(s.position));
            prop_assert!(s.speed() <= cfg.v_max + 1e-9);
        }
    }
}
