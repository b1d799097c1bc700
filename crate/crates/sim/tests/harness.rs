use std::io::Write;
use std::sync::{Arc, Mutex};

use v2xfl::grid::{run_grid, GridCell};
use v2xfl::harness::{load_datasets, time_to_accuracy};
use v2xfl::output::{read_rows, ResultsWriter, HEADER};
use v2xfl::{DatasetSource, ExperimentConfig, RoundRecord, Simulation};
use v2xfl_core::fl::{Dataset, MlpShape, SyntheticConfig};
use v2xfl_core::mobility::MobilityKind;
use v2xfl_core::selection::Strategy;
use v2xfl_core::Vec2;

fn small(strategy: Strategy) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.scenario.vehicle_count = 20;
    c.partition.client_count = 20;
    c.selection.cluster_count = 4;
    c.selection.selection_rate = 0.2;
    c.dataset = DatasetSource::Synthetic(SyntheticConfig { samples_per_class: 40, dim: 20, ..Default::default() });
    c.experiment.strategy = strategy;
    c.experiment.max_rounds = Some(6);
    c.experiment.fingerprint_refresh = 3;
    c
}

fn data(c: &ExperimentConfig) -> (Dataset, Dataset) {
    load_datasets(&c.dataset).unwrap()
}

fn records(c: &ExperimentConfig) -> Vec<RoundRecord> {
    let (train, test) = data(c);
    let mut sim = Simulation::new(c, &train, &test).unwrap();
    let mut out = Vec::new();
    sim.run(|r| {
        out.push(r.clone());
        Ok(())
    })
    .unwrap();
    out
}

#[derive(Clone, Default)]
struct Shared(Arc<Mutex<Vec<u8>>>);

impl Write for Shared {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().write(buf)
    }
    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

#[test]
fn identical_seeds_replay_identically() {
    for s in Strategy::ALL {
        let c = small(s);
        let a = records(&c);
        assert_eq!(a.len(), 6);
        assert_eq!(a, records(&c), "{s}");
    }
}

#[test]
fn clock_increases_and_records_are_consistent() {
    for s in Strategy::ALL {
        let rs = records(&small(s));
        let mut t = 0.0;
        for r in &rs {
            assert_eq!(r.sim_time_start, t);
            assert!(r.sim_time_end > r.sim_time_start);
            assert!((r.sim_time_end - r.sim_time_start - r.round_latency).abs() < 1e-9);
            assert!(r.participating_count <= r.selected.len());
            assert!(r.test_accuracy.is_some_and(|a| (0.0..=1.0).contains(&a)));
            t = r.sim_time_end;
        }
    }
}

#[test]
fn full_connection_rate_connects_everyone() {
    for r in records(&small(Strategy::Gossip)) {
        assert_eq!(r.connected_count, 20);
    }
    let mut c = small(Strategy::Greedy);
    c.experiment.connection_rate = 0.3;
    let rs = records(&c);
    assert!(rs.iter().any(|r| r.connected_count < 20));
    assert!(rs.iter().all(|r| r.selected.len() == r.connected_count));
}

#[test]
fn zero_budget_writes_only_the_header() {
    let mut c = small(Strategy::Contextual);
    c.experiment.time_budget = 0.0;
    let (train, test) = data(&c);
    let mut w = ResultsWriter::new(Vec::new()).unwrap();
    let summary = Simulation::new(&c, &train, &test).unwrap().run(|_| Ok(())).unwrap();
    assert!(summary.records.is_empty());
    w.write_run(&summary).unwrap();
    let text = String::from_utf8(w.into_inner().unwrap()).unwrap();
    assert_eq!(text, format!("{}\n", HEADER.join(",")));
}

#[test]
fn greedy_waits_at_least_as_long_as_any_subset() {
    let straggler = |s| records(&small(s))[0].straggler_latency;
    let greedy = straggler(Strategy::Greedy);
    for s in Strategy::ALL {
        assert!(greedy >= straggler(s), "{s}");
    }
}

#[test]
fn greedy_round_waits_for_edge_straggler() {
    let mut c = small(Strategy::Greedy);
    c.scenario.vehicle_count = 3;
    c.partition.client_count = 3;
    c.partition.classes_per_client = 4;
    c.selection.cluster_count = 1;
    c.scenario.mobility = MobilityKind::Stationary;
    c.scenario.rsu_positions = vec![Vec2::ZERO];
    c.scenario.initial_positions = vec![Vec2::new(10.0, 0.0), Vec2::new(0.0, 20.0), Vec2::new(300.0, 0.0)];
    c.latency.payload_bits = 32e6;
    c.latency.jitter_std = 0.0;
    c.experiment.report_timeout = 60.0;
    c.experiment.max_rounds = Some(1);
    let r = &records(&c)[0];
    assert_eq!(r.selected, vec![0, 1, 2]);
    assert!(r.round_latency >= 6.45, "{}", r.round_latency);
    assert_eq!(r.participating_count, 3);
}

#[test]
fn unreachable_pick_costs_the_report_timeout() {
    let mut c = small(Strategy::Greedy);
    c.scenario.vehicle_count = 2;
    c.partition.client_count = 2;
    c.partition.classes_per_client = 5;
    c.selection.cluster_count = 1;
    c.scenario.mobility = MobilityKind::Stationary;
    c.scenario.rsu_positions = vec![Vec2::ZERO];
    c.scenario.initial_positions = vec![Vec2::new(10.0, 0.0), Vec2::new(900.0, 0.0)];
    c.experiment.max_rounds = Some(1);
    let r = &records(&c)[0];
    assert_eq!(r.participating_count, 1);
    assert!((r.round_latency - 5.01).abs() < 1e-9);
}

#[test]
fn trace_selection_matches_records() {
    let c = small(Strategy::Contextual);
    let (train, test) = data(&c);
    let buf = Shared::default();
    let mut sim = Simulation::new(&c, &train, &test).unwrap().with_trace(Box::new(buf.clone()));
    let mut recs = Vec::new();
    sim.run(|r| {
        recs.push(r.clone());
        Ok(())
    })
    .unwrap();
    let text = String::from_utf8(buf.0.lock().unwrap().clone()).unwrap();
    let events: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let picks: Vec<&serde_json::Value> =
        events.iter().filter(|e| e["event"] == "selection").map(|e| &e["decision"]["selected"]).collect();
    assert_eq!(picks.len(), recs.len());
    for (p, r) in picks.iter().zip(&recs) {
        assert_eq!(p.to_string(), serde_json::to_string(&r.selected).unwrap());
    }
    assert_eq!(events.iter().filter(|e| e["event"] == "profiling").count(), 2);
    assert!(events.iter().any(|e| e["event"] == "fusion" && e["stats"]["cams"].as_u64().unwrap() > 0));
}

#[test]
fn profiling_shows_up_in_round_latency() {
    let rs = records(&small(Strategy::Contextual));
    assert!(rs[0].profiling_time > 0.0);
    assert_eq!(rs[1].profiling_time, 0.0);
    assert!(rs[3].profiling_time > 0.0);
    assert!(records(&small(Strategy::NetworkBased)).iter().all(|r| r.profiling_time == 0.0));
}

#[test]
fn stop_at_target_ends_the_run() {
    let mut c = small(Strategy::Greedy);
    c.experiment.max_rounds = Some(200);
    c.experiment.stop_at_target = true;
    c.partition.classes_per_client = 10;
    c.training.learning_rate = 0.1;
    let rs = records(&c);
    let t = time_to_accuracy(&rs, 0.5).expect("synthetic blobs are easy");
    assert_eq!(rs.last().unwrap().sim_time_end, t);
}

#[test]
fn model_shape_follows_the_dataset() {
    let c = small(Strategy::Gossip);
    let (train, test) = data(&c);
    let sim = Simulation::new(&c, &train, &test).unwrap();
    assert_eq!(sim.global().shape, MlpShape { input: 20, hidden: 64, classes: 10 });
}

#[test]
fn grid_marks_failed_cells_and_continues() {
    let c = small(Strategy::Gossip);
    let (train, test) = data(&c);
    let cells = [
        GridCell { strategy: Strategy::Gossip, connection_rate: 1.0, classes_per_client: 2, seed: 1 },
        GridCell { strategy: Strategy::Gossip, connection_rate: 1.0, classes_per_client: 0, seed: 1 },
        GridCell { strategy: Strategy::NetworkBased, connection_rate: 0.5, classes_per_client: 2, seed: 2 },
    ];
    let out = run_grid(&c, &cells, &train, &test);
    assert!(out[0].result.is_ok() && out[1].result.is_err() && out[2].result.is_ok());
    assert!(run_grid(&c, &[], &train, &test).is_empty());

    let mut w = ResultsWriter::new(Vec::new()).unwrap();
    for o in &out {
        if let Ok(s) = &o.result {
            w.write_run(s).unwrap();
        }
    }
    let rows = read_rows(&w.into_inner().unwrap()[..]).unwrap();
    assert_eq!(rows.len(), 12);
    assert_eq!(rows[6].run_id, "network-cr0.5-cpc2-s2");
}
