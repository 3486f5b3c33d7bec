//! End-to-end experiments: build the problem, run the rounds over the chosen
//! transport, and summarize.

use std::fmt;
use std::sync::Arc;

use saps_core::analysis::{
    bandwidth_stats, consensus_error, estimate_rho, matched_bandwidth, mean_model, neumaier_sum, BandwidthSummary,
    RoundRecord, SpectralEstimate,
};
use saps_core::coordinator::{Coordinator, CoordinatorConfig, RoundLog};
use saps_core::matching::GossipGenerator;
use saps_core::objectives::{
    gaussian_clusters, logistic_over, make_quadratic, mlp_over, Dataset, Mlp, Objective, QuadraticProblem,
};
use saps_core::rng::derive_seed;
use saps_core::sparsify::generate_mask;
use saps_core::wire::{Message, MessageType, MODEL_VALUES_OVERHEAD};
use saps_core::worker::WorkerState;
use saps_core::{BandwidthMatrix, ParameterVector, SplitMix64};

use crate::bandwidth;
use crate::config::{ExperimentConfig, ObjectiveSpec, TransportKind};
use crate::dataset::load_dataset;
use crate::error::{Result, SapsError};
use crate::transport::sim::{round_time, Endpoint, SimNetwork};
use crate::transport::tcp::{run_tcp, TcpOptions};

/// Independent streams derived from the master seed. Workers use indices
/// `1..=n`; these sit far above any worker rank.
pub const DATA_STREAM: u64 = 1 << 32;
pub const BANDWIDTH_STREAM: u64 = (1 << 32) + 1;
pub const INIT_STREAM: u64 = (1 << 32) + 2;
pub const RHO_STREAM: u64 = (1 << 32) + 3;

const SAMPLES_PER_WORKER: usize = 64;

fn invalid(msg: impl Into<String>) -> SapsError {
    SapsError::Core(saps_core::Error::Validation(msg.into()))
}

/// The objective set shared by a run.
#[derive(Clone)]
pub struct Problem {
    pub objectives: Vec<Arc<dyn Objective>>,
    pub x0: Vec<f64>,
    pub batch_size: usize,
    /// Closed-form optimum, when the objective has one.
    pub quadratic: Option<QuadraticProblem>,
}

impl Problem {
    /// `f(x) = (1/n) Σᵢ fᵢ(x)`.
    pub fn global_loss(&self, x: &[f64]) -> f64 {
        neumaier_sum(self.objectives.iter().map(|o| o.full_loss(x))) / self.objectives.len() as f64
    }

    pub fn global_grad(&self, x: &[f64]) -> Vec<f64> {
        let n = self.objectives.len() as f64;
        let mut total = vec![0.0; x.len()];
        let mut g = vec![0.0; x.len()];
        for o in &self.objectives {
            o.full_grad(x, &mut g);
            total.iter_mut().zip(&g).for_each(|(t, v)| *t += v);
        }
        total.iter_mut().for_each(|t| *t /= n);
        total
    }
}

fn dataset_for(path: Option<&std::path::Path>, samples: usize, features: usize, rng: &mut SplitMix64) -> Result<Dataset> {
    match path {
        Some(p) => {
            let d = load_dataset(p)?;
            if d.n_features() != features {
                return Err(invalid(format!(
                    "dataset {} has {} features (bias included), expected {features}",
                    p.display(),
                    d.n_features()
                )));
            }
            Ok(d)
        }
        None => Ok(gaussian_clusters(samples, features, rng)?),
    }
}

pub fn build_problem(cfg: &ExperimentConfig) -> Result<Problem> {
    let mut data_rng = SplitMix64::new(derive_seed(cfg.master_seed, DATA_STREAM));
    let n = cfg.n;
    match &cfg.objective {
        ObjectiveSpec::Quadratic => {
            let q = make_quadratic(n, cfg.dim, &mut data_rng)?;
            Ok(Problem {
                objectives: q.objectives(),
                x0: vec![0.0; cfg.dim],
                batch_size: 1,
                quadratic: Some(q),
            })
        }
        ObjectiveSpec::Logistic {
            samples,
            batch_size,
            dataset,
        } => {
            let samples = samples.unwrap_or(SAMPLES_PER_WORKER * n);
            let data = Arc::new(dataset_for(dataset.as_deref(), samples, cfg.dim, &mut data_rng)?);
            Ok(Problem {
                objectives: logistic_over(data, n, cfg.partition.into(), &mut data_rng)?,
                x0: vec![0.0; cfg.dim],
                batch_size: *batch_size,
                quadratic: None,
            })
        }
        ObjectiveSpec::Mlp {
            inputs,
            hidden,
            samples,
            batch_size,
            dataset,
        } => {
            let samples = samples.unwrap_or(SAMPLES_PER_WORKER * n);
            let data = Arc::new(dataset_for(dataset.as_deref(), samples, *inputs, &mut data_rng)?);
            let mut init_rng = SplitMix64::new(derive_seed(cfg.master_seed, INIT_STREAM));
            let x0 = Mlp::new(data.clone(), Vec::new(), *hidden).initial_point(&mut init_rng);
            Ok(Problem {
                objectives: mlp_over(data, n, *hidden, cfg.partition.into(), &mut data_rng)?,
                x0,
                batch_size: *batch_size,
                quadratic: None,
            })
        }
    }
}

pub fn build_bandwidth(cfg: &ExperimentConfig) -> Result<BandwidthMatrix> {
    let mut rng = SplitMix64::new(derive_seed(cfg.master_seed, BANDWIDTH_STREAM));
    bandwidth::build(&cfg.bandwidth, cfg.n, &mut rng)
}

pub fn coordinator_config(cfg: &ExperimentConfig) -> CoordinatorConfig {
    CoordinatorConfig {
        t_thres: cfg.t_thres,
        b_thres: cfg.b_thres,
        master_seed: cfg.master_seed,
        peer_selection: cfg.peer_selection.into(),
    }
}

pub fn build_workers(cfg: &ExperimentConfig, problem: &Problem) -> Result<Vec<WorkerState>> {
    problem
        .objectives
        .iter()
        .enumerate()
        .map(|(rank, obj)| {
            Ok(WorkerState::new(
                rank,
                ParameterVector::from(problem.x0.clone()),
                cfg.gamma,
                cfg.c,
                problem.batch_size,
                obj.clone(),
                cfg.master_seed,
            )?)
        })
        .collect()
}

/// ρ of the configured generator in stationary operation, on its own RNG stream.
pub fn estimate_config_rho(cfg: &ExperimentConfig, b: &BandwidthMatrix, samples: usize) -> Result<SpectralEstimate> {
    let coord = Coordinator::new(b.clone(), &coordinator_config(cfg))?;
    let mut gen = GossipGenerator::new(
        cfg.peer_selection.into(),
        b.clone(),
        coord.b_star().clone(),
        cfg.t_thres,
        SplitMix64::new(derive_seed(cfg.master_seed, RHO_STREAM)),
    )?;
    Ok(estimate_rho(&mut gen, samples)?)
}

#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Matrices sampled for the ρ estimate; 0 skips it.
    pub rho_samples: usize,
    pub tcp: TcpOptions,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            rho_samples: 1000,
            tcp: TcpOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Summary {
    pub rounds: u64,
    pub transport: TransportKind,
    /// Global loss at the across-worker mean model.
    pub final_loss: f64,
    /// Global loss at the model collected from worker 0.
    pub collected_loss: f64,
    /// Mean over workers of parameter values sent plus received.
    pub values_per_worker: f64,
    /// Mean over workers of MODEL_VALUES frame bytes sent plus received.
    pub bytes_per_worker: f64,
    /// Everything the coordinator received in model frames.
    pub coordinator_model_bytes: u64,
    /// Cumulative communication time in seconds.
    pub comm_time: f64,
    pub bandwidth: Option<BandwidthSummary>,
    pub rho: Option<SpectralEstimate>,
}

impl fmt::Display for Summary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "rounds                 {}", self.rounds)?;
        writeln!(f, "transport              {:?}", self.transport)?;
        writeln!(f, "final loss (mean x)    {:.6e}", self.final_loss)?;
        writeln!(f, "final loss (worker 0)  {:.6e}", self.collected_loss)?;
        writeln!(f, "values per worker      {:.1}", self.values_per_worker)?;
        writeln!(f, "bytes per worker       {:.1}", self.bytes_per_worker)?;
        writeln!(f, "coordinator model B    {}", self.coordinator_model_bytes)?;
        writeln!(f, "comm time (s)          {:.6e}", self.comm_time)?;
        if let Some(b) = &self.bandwidth {
            writeln!(f, "bottleneck bw (mean)   {:.6e}", b.mean_min)?;
            writeln!(f, "matched bw (mean)      {:.6e}", b.mean_mean)?;
        }
        match &self.rho {
            Some(r) => write!(f, "rho                    {:.6} ± {:.1e} ({} samples)", r.rho, r.std_error, r.n_samples),
            None => write!(f, "rho                    (not estimated)"),
        }
    }
}

pub struct RunOutput {
    pub records: Vec<RoundRecord>,
    /// Worker 0's model as collected by the coordinator.
    pub final_model: ParameterVector,
    pub worker_models: Vec<ParameterVector>,
    /// Per worker: parameter values sent plus received over the run.
    pub values_exchanged: Vec<u64>,
    pub logs: Vec<RoundLog>,
    pub problem: Problem,
    pub summary: Summary,
}

pub fn run_experiment(cfg: &ExperimentConfig, opts: &RunOptions) -> Result<RunOutput> {
    cfg.validate()?;
    let problem = build_problem(cfg)?;
    let b = build_bandwidth(cfg)?;
    let mut coordinator = Coordinator::new(b.clone(), &coordinator_config(cfg))?;
    let workers = build_workers(cfg, &problem)?;

    let run = match cfg.transport.kind() {
        TransportKind::Sim => run_sim(&mut coordinator, workers, cfg.rounds, cfg.dim)?,
        TransportKind::Tcp => {
            let mut tcp = opts.tcp.clone();
            tcp.bind = cfg.transport.bind().to_string();
            let out = run_tcp(&mut coordinator, workers, cfg.rounds, cfg.dim, &tcp)?;
            let records = tcp_records(&out.logs, cfg, &b)?;
            Transcript {
                records,
                final_model: out.final_model,
                worker_models: out.workers.iter().map(|w| w.model().clone()).collect(),
                values_exchanged: out.traffic.iter().map(|t| t.values_sent + t.values_received).collect(),
                bytes_exchanged: out.traffic.iter().map(|t| t.bytes_sent + t.bytes_received).collect(),
                coordinator_model_bytes: out.coordinator_model_bytes,
                logs: out.logs,
            }
        }
    };

    let rho = if opts.rho_samples > 0 {
        Some(estimate_config_rho(cfg, &b, opts.rho_samples)?)
    } else {
        None
    };
    let n = cfg.n as f64;
    let summary = Summary {
        rounds: cfg.rounds,
        transport: cfg.transport.kind(),
        final_loss: problem.global_loss(&mean_model(&run.worker_models)),
        collected_loss: problem.global_loss(&run.final_model),
        values_per_worker: run.values_exchanged.iter().sum::<u64>() as f64 / n,
        bytes_per_worker: run.bytes_exchanged.iter().sum::<u64>() as f64 / n,
        coordinator_model_bytes: run.coordinator_model_bytes,
        comm_time: run.records.last().map_or(0.0, |r| r.cum_time),
        bandwidth: bandwidth_stats(&run.records).ok(),
        rho,
    };
    Ok(RunOutput {
        records: run.records,
        final_model: run.final_model,
        worker_models: run.worker_models,
        values_exchanged: run.values_exchanged,
        logs: run.logs,
        problem,
        summary,
    })
}

/// What one transport run produced, before summarizing.
pub struct Transcript {
    pub records: Vec<RoundRecord>,
    pub final_model: ParameterVector,
    pub worker_models: Vec<ParameterVector>,
    pub values_exchanged: Vec<u64>,
    pub bytes_exchanged: Vec<u64>,
    pub coordinator_model_bytes: u64,
    pub logs: Vec<RoundLog>,
}

fn mean_loss(log: &RoundLog) -> f64 {
    neumaier_sum(log.losses.iter().copied()) / log.losses.len() as f64
}

/// Every frame goes through the codec and the simulated network; rounds are
/// executed worker by worker in rank order, so runs are bit-reproducible.
pub fn run_sim(coordinator: &mut Coordinator, mut workers: Vec<WorkerState>, rounds: u64, dim: usize) -> Result<Transcript> {
    let n = coordinator.n();
    let mut net = SimNetwork::new(coordinator.bandwidth().clone());
    let mut records = Vec::with_capacity(rounds as usize);
    let mut values_exchanged = vec![0u64; n];
    let values_bytes = |net: &SimNetwork| -> u64 {
        (0..n)
            .map(|w| {
                let t = net.values_traffic(w);
                t.bytes_sent + t.bytes_received
            })
            .sum()
    };
    for _ in 0..rounds {
        let assignment = coordinator.begin_round()?;
        let bytes_before = values_bytes(&net);
        for w in 0..n {
            net.send(Endpoint::Coordinator, Endpoint::Worker(w), &Message::RoundStart(assignment.round_start_for(w)))?;
        }
        let mut prepared = Vec::with_capacity(n);
        for (w, state) in workers.iter_mut().enumerate() {
            let start = match net.receive(Endpoint::Worker(w), Endpoint::Coordinator, MessageType::RoundStart)? {
                Message::RoundStart(s) => s,
                _ => unreachable!("type checked by receive"),
            };
            let p = state.prepare_round(&start)?;
            if let (Some(peer), Some(payload)) = (p.peer, &p.payload) {
                net.send(Endpoint::Worker(w), Endpoint::Worker(peer), &Message::ModelValues(payload.clone()))?;
                values_exchanged[w] += payload.values.len() as u64;
            }
            prepared.push(p);
        }
        for (w, (state, p)) in workers.iter_mut().zip(prepared).enumerate() {
            let incoming = match p.peer {
                Some(peer) => match net.receive(Endpoint::Worker(w), Endpoint::Worker(peer), MessageType::ModelValues)? {
                    Message::ModelValues(v) => {
                        values_exchanged[w] += v.values.len() as u64;
                        Some(v)
                    }
                    _ => unreachable!("type checked by receive"),
                },
                None => None,
            };
            let end = state.finish_round(p, incoming)?;
            net.send(Endpoint::Worker(w), Endpoint::Coordinator, &Message::RoundEnd(end))?;
        }
        let mut finished = None;
        for w in 0..n {
            let end = match net.receive(Endpoint::Coordinator, Endpoint::Worker(w), MessageType::RoundEnd)? {
                Message::RoundEnd(e) => e,
                _ => unreachable!("type checked by receive"),
            };
            finished = coordinator.acknowledge(&end)?;
        }
        let log = finished.ok_or_else(|| SapsError::Transport("round did not complete".into()))?;
        net.end_round();
        let models: Vec<ParameterVector> = workers.iter().map(|s| s.model().clone()).collect();
        let (min_bw, mean_bw) = matched_bandwidth(&log.matching, coordinator.bandwidth()).unwrap_or((0.0, 0.0));
        records.push(RoundRecord {
            round: log.round,
            pairs: log.matching.len(),
            bytes_per_worker: (values_bytes(&net) - bytes_before) as f64 / n as f64,
            min_bw,
            mean_bw,
            consensus_err: consensus_error(&models),
            mean_loss: mean_loss(&log),
            cum_time: net.clock(),
        });
    }

    net.send(Endpoint::Coordinator, Endpoint::Worker(0), &Message::ModelRequest)?;
    net.receive(Endpoint::Worker(0), Endpoint::Coordinator, MessageType::ModelRequest)?;
    net.send(Endpoint::Worker(0), Endpoint::Coordinator, &Message::ModelFull(workers[0].model().to_vec()))?;
    let frame = net.receive_frame(Endpoint::Coordinator, Endpoint::Worker(0))?;
    let final_model = coordinator.accept_final_model(&frame, dim)?;
    if net.pending() != 0 {
        return Err(SapsError::Transport(format!("{} undelivered frames after the run", net.pending())));
    }
    let bytes_exchanged = (0..n)
        .map(|w| {
            let t = net.values_traffic(w);
            t.bytes_sent + t.bytes_received
        })
        .collect();
    Ok(Transcript {
        records,
        final_model,
        worker_models: workers.iter().map(|s| s.model().clone()).collect(),
        values_exchanged,
        bytes_exchanged,
        coordinator_model_bytes: coordinator.model_bytes_received(),
        logs: coordinator.log().to_vec(),
    })
}

/// Records from the coordinator's view of a TCP run. Models are not observable
/// mid-run, so the consensus error is NaN; bytes and time follow from the mask
/// size, which the coordinator can recompute from the round seed.
fn tcp_records(logs: &[RoundLog], cfg: &ExperimentConfig, b: &BandwidthMatrix) -> Result<Vec<RoundRecord>> {
    let mut cum_time = 0.0;
    logs.iter()
        .map(|log| {
            let k = generate_mask(log.seed, cfg.c, cfg.dim)?.count();
            let frame = MODEL_VALUES_OVERHEAD + 8 * k;
            cum_time += round_time(&log.matching, frame, b)?;
            let (min_bw, mean_bw) = matched_bandwidth(&log.matching, b).unwrap_or((0.0, 0.0));
            Ok(RoundRecord {
                round: log.round,
                pairs: log.matching.len(),
                bytes_per_worker: (4 * log.matching.len() * frame) as f64 / cfg.n as f64,
                min_bw,
                mean_bw,
                consensus_err: f64::NAN,
                mean_loss: mean_loss(log),
                cum_time,
            })
        })
        .collect()
}
