//! The discrete-event loop: mobility, fusion, forecasting, selection and
//! federated training advancing together in simulated time.

use std::borrow::Cow;
use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;
use v2xfl_core::fl::{
    evaluate, fedavg, generate_synthetic_dataset, local_train, local_train_epochs, ClientData, ClientUpdate, Dataset,
    GradientFingerprint, MlpShape, ModelParameters, SyntheticConfig,
};
use v2xfl_core::forecast::{predicted_round_latency, Direction, LatencyEstimate, LatencyModel, TrajectoryPredictor};
use v2xfl_core::mobility::{Mobility, VehicleState};
use v2xfl_core::rng::{self, tag};
use v2xfl_core::selection::{
    assign_universe, collect_profiles, select, ClusterAssignment, ProfileReport, RoundContext, SelectionDecision,
    Strategy,
};
use v2xfl_core::v2x::{emit_messages, fuse, into_stream, FusionStats, Rttg};

use crate::config::{ConfigError, DatasetSource, ExperimentConfig};
use crate::idx::{load_mnist, IdxError};

/// Key separating the forecaster's jitter draws from the ground truth's.
const PREDICTION_STREAM: u64 = 0x7072_6564;
const PROFILE_STREAM: u64 = 0x7072_6f66;
const TRAIN_STREAM: u64 = 0x7472_6169;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] IdxError),
    #[error(transparent)]
    Core(#[from] v2xfl_core::Error),
    #[error("writing output: {0}")]
    Io(#[from] std::io::Error),
    #[error("writing csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;

/// Loads the train and test split named by `source`.
pub fn load_datasets(source: &DatasetSource) -> Result<(Dataset, Dataset)> {
    match source {
        DatasetSource::Mnist { path } => Ok(load_mnist(path)?),
        DatasetSource::Synthetic(cfg) => {
            let train = generate_synthetic_dataset(cfg)?;
            let test = generate_synthetic_dataset(&SyntheticConfig { seed: cfg.seed.wrapping_add(1), ..cfg.clone() })?;
            Ok((train, test))
        }
    }
}

/// One row of experiment output.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RoundRecord {
    pub round_index: u64,
    pub sim_time_start: f64,
    pub sim_time_end: f64,
    pub strategy: Strategy,
    pub selected: Vec<u32>,
    /// Selected clients whose update reached the server.
    pub participating_count: usize,
    pub connected_count: usize,
    /// Whole round including any profiling exchange, seconds.
    pub round_latency: f64,
    /// Slowest selected client's download + compute + upload, seconds.
    pub straggler_latency: f64,
    /// Part of `round_latency` spent collecting fingerprints.
    pub profiling_time: f64,
    pub test_accuracy: Option<f64>,
}

/// Trace lines, one JSON object each.
#[derive(Debug, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceEvent<'a> {
    Fusion { round: u64, time: f64, nodes: usize, edges: usize, stats: FusionTotals },
    Profiling { round: u64, profiled: Vec<u32>, unprofiled: &'a [u32], window: f64, clusters: Vec<Vec<u32>> },
    Selection { round: u64, decision: &'a SelectionDecision },
    Round { record: &'a RoundRecord },
}

#[derive(Debug, Clone, Copy, Default, Serialize)]
pub struct FusionTotals {
    pub cams: usize,
    pub cpms: usize,
    pub observations: usize,
    pub malformed: usize,
    pub expired: usize,
}

impl FusionTotals {
    fn add(&mut self, s: &FusionStats) {
        self.cams += s.cams;
        self.cpms += s.cpms;
        self.observations += s.observations;
        self.malformed += s.malformed;
        self.expired += s.expired;
    }
}

/// Positions of every vehicle at upcoming integration ticks.
struct Lookahead {
    frames: Vec<Vec<VehicleState>>,
    dt: f64,
}

impl Lookahead {
    fn new(mobility: &Mobility, horizon: f64) -> Self {
        let dt = mobility.scenario().dt();
        let ticks = (horizon / dt).ceil().max(0.0) as usize + 1;
        let mut ahead = mobility.clone();
        let mut frames = vec![ahead.states().to_vec()];
        for _ in 0..ticks {
            ahead.advance();
            frames.push(ahead.states().to_vec());
        }
        Self { frames, dt }
    }

    fn at(&self, offset: f64, id: u32) -> &VehicleState {
        let i = ((offset / self.dt).round().max(0.0) as usize).min(self.frames.len() - 1);
        &self.frames[i][id as usize]
    }
}

/// Ground-truth link timing for one client.
#[derive(Debug, Clone, Copy)]
struct Link {
    estimate: LatencyEstimate,
    compute: f64,
}

impl Link {
    /// Seconds from dispatch until the server holds this client's update, if it ever does.
    fn completion(&self) -> Option<f64> {
        self.estimate.connected.then_some(self.estimate.downlink + self.compute + self.estimate.uplink)
    }
}

fn client<'a>(train: &'a Dataset, partitions: &'a [Vec<usize>], id: u32) -> ClientData<'a> {
    ClientData { client_id: id, dataset: train, indices: &partitions[id as usize] }
}

pub struct Simulation<'d> {
    cfg: ExperimentConfig,
    train: &'d Dataset,
    test: Cow<'d, Dataset>,
    partitions: Vec<Vec<usize>>,
    universe: Vec<u32>,
    mobility: Mobility,
    rttg: Rttg,
    predicted_model: LatencyModel,
    global: ModelParameters,
    clock: f64,
    round: u64,
    last_duration: Option<f64>,
    fingerprints: BTreeMap<u32, GradientFingerprint>,
    late: BTreeMap<u32, GradientFingerprint>,
    clusters: Option<ClusterAssignment>,
    last_refresh: Option<u64>,
    fusion: FusionTotals,
    trace: Option<Box<dyn Write + 'd>>,
}

impl<'d> Simulation<'d> {
    pub fn new(config: &ExperimentConfig, train: &'d Dataset, test: &'d Dataset) -> Result<Self> {
        config.validate()?;
        let cfg = config.resolved();
        let partitions = v2xfl_core::fl::partition_non_iid(train, &cfg.partition)?;
        let mobility = Mobility::from_config(&cfg.scenario)?;
        let rttg = Rttg::empty(mobility.scenario().rsu_positions.clone(), cfg.fusion.radio_range);
        let shape = MlpShape { input: train.dim, hidden: MlpShape::MNIST.hidden, classes: train.num_classes };
        let global = ModelParameters::init(shape, cfg.seeds.data);
        let test = match cfg.experiment.test_limit {
            Some(n) if n < test.len() => Cow::Owned(test.subset(&(0..n).collect::<Vec<_>>())),
            _ => Cow::Borrowed(test),
        };
        let predicted_model =
            LatencyModel { seed: rng::derive(cfg.seeds.network, &[PREDICTION_STREAM]), ..cfg.latency.clone() };
        let mut sim = Self {
            universe: (0..cfg.partition.client_count as u32).collect(),
            cfg,
            train,
            test,
            partitions,
            mobility,
            rttg,
            predicted_model,
            global,
            clock: 0.0,
            round: 0,
            last_duration: None,
            fingerprints: BTreeMap::new(),
            late: BTreeMap::new(),
            clusters: None,
            last_refresh: None,
            fusion: FusionTotals::default(),
            trace: None,
        };
        sim.sync_world();
        Ok(sim)
    }

    /// Sends JSON-lines trace events to `sink`.
    pub fn with_trace(mut self, sink: Box<dyn Write + 'd>) -> Self {
        self.trace = Some(sink);
        self
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn clock(&self) -> f64 {
        self.clock
    }

    pub fn global(&self) -> &ModelParameters {
        &self.global
    }

    pub fn rttg(&self) -> &Rttg {
        &self.rttg
    }

    pub fn clusters(&self) -> Option<&ClusterAssignment> {
        self.clusters.as_ref()
    }

    fn emit(&mut self, event: TraceEvent<'_>) -> Result<()> {
        if let Some(t) = self.trace.as_mut() {
            serde_json::to_writer(&mut *t, &event).map_err(std::io::Error::from)?;
            t.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Advances vehicles to the current clock, fusing the messages of every tick.
    fn sync_world(&mut self) {
        let dt = self.mobility.scenario().dt();
        let target = (self.clock / dt).round() as u64;
        let first = self.mobility.tick() == 0 && self.rttg.nodes.is_empty();
        if first {
            self.fuse_current();
        }
        while self.mobility.tick() < target {
            self.mobility.advance();
            self.fuse_current();
        }
    }

    fn fuse_current(&mut self) {
        let now = self.mobility.time();
        let (cams, cpms) = emit_messages(self.mobility.states(), now, &self.cfg.messages);
        let (g, stats) = fuse(&into_stream(cams, cpms), now, &self.rttg, &self.cfg.fusion);
        self.rttg = g;
        self.fusion.add(&stats);
    }

    fn connected(&self) -> BTreeSet<u32> {
        let cr = self.cfg.experiment.connection_rate;
        self.universe
            .iter()
            .copied()
            .filter(|&id| cr >= 1.0 || rng::unit(self.cfg.seeds.network, &[tag::CONNECT, self.round, id as u64]) < cr)
            .collect()
    }

    fn compute_time(&self, id: u32, epochs: usize) -> f64 {
        self.cfg.compute.training_time(&self.cfg.training, self.partitions[id as usize].len(), epochs)
    }

    /// True link timing for each client if dispatched now: download from the
    /// current position, upload from where the vehicle is once it has
    /// downloaded and trained.
    fn ground_truth(&self, ids: &BTreeSet<u32>, epochs: usize) -> BTreeMap<u32, Link> {
        let model = &self.cfg.latency;
        let rsus = &self.mobility.scenario().rsu_positions;
        let states = self.mobility.states();
        let downs: Vec<(u32, f64, f64)> = ids
            .iter()
            .map(|&id| {
                let pos = states[id as usize].position;
                (id, model.one_way(id, pos, rsus, self.round, Direction::Downlink), self.compute_time(id, epochs))
            })
            .collect();
        let horizon = downs.iter().filter(|d| d.1.is_finite()).map(|d| d.1 + d.2).fold(0.0, f64::max);
        let ahead = Lookahead::new(&self.mobility, horizon);
        downs
            .into_iter()
            .map(|(id, down, compute)| {
                let up = if down.is_finite() {
                    model.one_way(id, ahead.at(down + compute, id).position, rsus, self.round, Direction::Uplink)
                } else {
                    f64::INFINITY
                };
                (id, Link { estimate: LatencyEstimate::from_parts(id, up, down), compute })
            })
            .collect()
    }


    /// Collects fresh fingerprints from the connected clients. Returns the
    /// simulated time the exchange took.
    fn refresh_fingerprints(&mut self, connected: &BTreeSet<u32>) -> Result<f64> {
        let links = self.ground_truth(connected, 1);
        let seed = rng::derive(self.cfg.seeds.data, &[PROFILE_STREAM, self.round]);
        let reachable: Vec<u32> = links.iter().filter(|(_, l)| l.estimate.downlink.is_finite()).map(|(&id, _)| id).collect();
        let (global, train, parts, training) = (&self.global, self.train, &self.partitions, &self.cfg.training);
        let reports: Vec<ProfileReport> = reachable
            .par_iter()
            .map(|&id| -> Result<ProfileReport> {
                let (local, _) = local_train_epochs(global, client(train, parts, id), training, 1, seed)?;
                Ok(ProfileReport {
                    fingerprint: GradientFingerprint::from_update(id, global, &local),
                    compute_time: links[&id].compute,
                })
            })
            .collect::<Result<_>>()?;
        let actual: BTreeMap<u32, LatencyEstimate> = links.iter().map(|(&id, l)| (id, l.estimate)).collect();
        let unreachable = connected.iter().filter(|id| !reachable.contains(id)).copied();
        let mut outcome = collect_profiles(reports, self.cfg.experiment.profiling_deadline, &actual)?;
        outcome.unprofiled.extend(unreachable);
        outcome.unprofiled.sort_unstable();
        // Deltas taken against an older global model would cluster by age
        // rather than by data, so only the fresh ones define clusters; the
        // older ones just attach to the nearest fresh centroid.
        let profiled: Vec<u32> = outcome.fingerprints.keys().copied().collect();
        if !profiled.is_empty() {
            let stale = std::mem::replace(&mut self.fingerprints, outcome.fingerprints);
            self.late.extend(stale);
            for id in &profiled {
                self.late.remove(id);
            }
        }
        self.recluster()?;
        self.last_refresh = Some(self.round);
        self.emit(TraceEvent::Profiling {
            round: self.round,
            profiled,
            unprofiled: &outcome.unprofiled,
            window: outcome.window,
            clusters: self.clusters.as_ref().map(ClusterAssignment::members).unwrap_or_default(),
        })?;
        Ok(outcome.window)
    }

    /// Profiles the currently connected clients without training a round.
    pub fn profile_now(&mut self) -> Result<Option<&ClusterAssignment>> {
        self.sync_world();
        let connected = self.connected();
        if !connected.is_empty() {
            self.refresh_fingerprints(&connected)?;
        }
        Ok(self.clusters.as_ref())
    }

    fn recluster(&mut self) -> Result<()> {
        self.clusters =
            Some(assign_universe(&self.fingerprints, &self.late, &self.universe, self.cfg.selection.cluster_count)?);
        Ok(())
    }

    fn refresh_due(&self) -> bool {
        self.cfg.experiment.strategy.uses_clusters()
            && self.last_refresh.map_or(true, |r| self.round >= r + self.cfg.experiment.fingerprint_refresh)
    }

    /// Runs one federated round and advances the clock past it.
    pub fn run_round(&mut self) -> Result<RoundRecord> {
        let start = self.clock;
        self.sync_world();
        let connected = self.connected();

        let mut profiling_time = 0.0;
        if self.refresh_due() && !connected.is_empty() {
            profiling_time = self.refresh_fingerprints(&connected)?;
            self.clock += profiling_time;
            self.sync_world();
        }
        let stats = std::mem::take(&mut self.fusion);
        self.emit(TraceEvent::Fusion {
            round: self.round,
            time: self.rttg.snapshot_time,
            nodes: self.rttg.nodes.len(),
            edges: self.rttg.edges.len(),
            stats,
        })?;

        let epochs = self.cfg.training.local_epochs;
        let links = self.ground_truth(&connected, epochs);
        let actual: BTreeMap<u32, LatencyEstimate> = links.iter().map(|(&id, l)| (id, l.estimate)).collect();
        let horizon = self.last_duration.unwrap_or(1.0).max(self.mobility.scenario().dt());
        let predictor = TrajectoryPredictor::new(self.cfg.experiment.predictor, horizon)?;
        let in_graph: Vec<u32> = connected.iter().copied().filter(|id| self.rttg.nodes.contains_key(id)).collect();
        let predicted = predicted_round_latency(&self.rttg, &predictor, &self.predicted_model, in_graph, self.round)?;

        let ctx = RoundContext {
            round_index: self.round,
            universe: &self.universe,
            connected: &connected,
            fingerprints: &self.fingerprints,
            clusters: self.clusters.as_ref(),
            current_rttg: Some(&self.rttg),
            predicted_latency: &predicted,
            actual_latency: &actual,
            params: self.cfg.selection,
        };
        let decision = select(self.cfg.experiment.strategy, &ctx)?;
        self.emit(TraceEvent::Selection { round: self.round, decision: &decision })?;

        // The server cannot tell a lost dispatch from a slow client, so anyone
        // who never reports holds the round until the report timeout.
        let dispatched = &decision.selected;
        let timeout = self.cfg.experiment.report_timeout;
        let straggler = dispatched
            .iter()
            .map(|id| links[id].completion().map_or(timeout, |t| t.min(timeout)))
            .fold(0.0, f64::max);
        let delivering: Vec<u32> = dispatched
            .iter()
            .copied()
            .filter(|id| links[id].completion().is_some_and(|t| t <= timeout))
            .collect();

        let duration = if dispatched.is_empty() {
            self.cfg.experiment.retry_backoff
        } else {
            let seed = rng::derive(self.cfg.seeds.data, &[TRAIN_STREAM, self.round]);
            let (global, train, parts, training) = (&self.global, self.train, &self.partitions, &self.cfg.training);
            let updates: Vec<ClientUpdate> = delivering
                .par_iter()
                .map(|&id| -> Result<ClientUpdate> {
                    let (params, sample_count) = local_train(global, client(train, parts, id), training, seed)?;
                    Ok(ClientUpdate { client_id: id, params, sample_count })
                })
                .collect::<Result<_>>()?;
            if !updates.is_empty() {
                self.note_late_fingerprints(&updates)?;
                self.global = fedavg(&updates)?;
            }
            straggler + self.cfg.experiment.aggregation_overhead
        };

        self.clock += duration;
        self.last_duration = Some(duration);
        self.round += 1;
        let test_accuracy = if self.round % self.cfg.experiment.eval_period == 0 {
            Some(evaluate(&self.global, &self.test)?)
        } else {
            None
        };
        let record = RoundRecord {
            round_index: self.round - 1,
            sim_time_start: start,
            sim_time_end: self.clock,
            strategy: self.cfg.experiment.strategy,
            selected: decision.selected.clone(),
            participating_count: delivering.len(),
            connected_count: connected.len(),
            round_latency: self.clock - start,
            straggler_latency: straggler,
            profiling_time,
            test_accuracy,
        };
        self.emit(TraceEvent::Round { record: &record })?;
        Ok(record)
    }

    /// Unprofiled clients that trained this round reveal their data through
    /// the update; use it to place them in a cluster.
    fn note_late_fingerprints(&mut self, updates: &[ClientUpdate]) -> Result<()> {
        if !self.cfg.experiment.strategy.uses_clusters() {
            return Ok(());
        }
        let mut changed = false;
        for u in updates.iter().filter(|u| !self.fingerprints.contains_key(&u.client_id)) {
            self.late.insert(u.client_id, GradientFingerprint::from_update(u.client_id, &self.global, &u.params));
            changed = true;
        }
        if changed {
            self.recluster()?;
        }
        Ok(())
    }

    /// Whether the run should continue after the rounds so far.
    fn keep_going(&self, records: &[RoundRecord]) -> bool {
        let e = &self.cfg.experiment;
        if self.clock >= e.time_budget || e.max_rounds.is_some_and(|m| self.round >= m) {
            return false;
        }
        !(e.stop_at_target
            && records.last().and_then(|r| r.test_accuracy).is_some_and(|a| a >= e.target_accuracy))
    }

    /// Runs rounds until the time budget (or round cap) is spent, handing each
    /// record to `sink` as it completes.
    pub fn run(&mut self, mut sink: impl FnMut(&RoundRecord) -> Result<()>) -> Result<RunSummary> {
        let mut records = Vec::new();
        while self.keep_going(&records) {
            let r = self.run_round()?;
            sink(&r)?;
            records.push(r);
        }
        if let Some(t) = self.trace.as_mut() {
            t.flush()?;
        }
        Ok(RunSummary::new(&self.cfg, records))
    }
}

/// Earliest `sim_time_end` whose evaluation reached `target`.
pub fn time_to_accuracy(records: &[RoundRecord], target: f64) -> Option<f64> {
    records.iter().find(|r| r.test_accuracy.is_some_and(|a| a >= target)).map(|r| r.sim_time_end)
}

/// Latest evaluated accuracy at or before `budget` seconds.
pub fn accuracy_at(records: &[RoundRecord], budget: f64) -> Option<f64> {
    records.iter().rev().filter(|r| r.sim_time_end <= budget).find_map(|r| r.test_accuracy)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub run_id: String,
    pub strategy: Strategy,
    pub connection_rate: f64,
    pub classes_per_client: usize,
    pub records: Vec<RoundRecord>,
    pub time_to_target: Option<f64>,
    pub final_accuracy: Option<f64>,
}

impl RunSummary {
    fn new(cfg: &ExperimentConfig, records: Vec<RoundRecord>) -> Self {
        Self {
            run_id: cfg.experiment.run_id.clone(),
            strategy: cfg.experiment.strategy,
            connection_rate: cfg.experiment.connection_rate,
            classes_per_client: cfg.partition.classes_per_client,
            time_to_target: time_to_accuracy(&records, cfg.experiment.target_accuracy),
            final_accuracy: records.iter().rev().find_map(|r| r.test_accuracy),
            records,
        }
    }
}

/// Runs one experiment from loaded data.
pub fn run_experiment(
    config: &ExperimentConfig,
    train: &Dataset,
    test: &Dataset,
    sink: impl FnMut(&RoundRecord) -> Result<()>,
) -> Result<RunSummary> {
    Simulation::new(config, train, test)?.run(sink)
}
