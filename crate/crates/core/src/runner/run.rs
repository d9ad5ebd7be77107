//! Sequential and parallel run orchestration.

use std::collections::BTreeSet;
use std::sync::Arc;
use std::time::Instant;

use super::config::{prepare, Prepared, RunConfig, TransportKind};
use super::report::{AuditSummary, RunReport, ServerSummary, WorkerReport, REPORT_FORMAT};
use super::RunError;
use crate::event::{SortKey, WorkerId};
use crate::models::{AuditBoard, Layout, ModelMetrics, NetModel};
use crate::qsm::{ClientStats, LocalQsm, QsmClient, QsmOptions, QsmStats, TcpLink};
use crate::qsm_server::{serve, ServerCore, DEFAULT_ENDPOINT, ENDPOINT_ENV};
use crate::quantum::DEFAULT_MEMO_CAPACITY;
use crate::sync::{
    compute_lookahead, run_lagged_window_loop, run_window_loop, EngineConfig, LinkTiming, LocalTransport,
    LookaheadConfig, Placement, TcpTransport, ThreadTransport, Transport, WorkerStats,
};

/// A finished run: the report plus the merged sort-key trace when asked for.
#[derive(Clone, Debug)]
pub struct RunOutput {
    pub report: RunReport,
    /// Every executed event's sort key, in sort-key order.
    pub trace: Option<Vec<SortKey>>,
}

struct Shared {
    layout: Arc<Layout>,
    placement: Arc<Placement>,
    engine: EngineConfig,
    lagged: bool,
    seed: u64,
    trace: bool,
    workers: usize,
    audit: Option<Arc<AuditBoard>>,
}

struct WorkerResult {
    stats: WorkerStats,
    metrics: ModelMetrics,
    qsm: QsmStats,
    client: Option<ClientStats>,
    trace: Vec<SortKey>,
}

/// The listen address for the global QSM: the environment wins over the
/// config file.
pub fn server_endpoint(cfg: &RunConfig) -> String {
    std::env::var(ENDPOINT_ENV)
        .ok()
        .or_else(|| cfg.server_endpoint.clone())
        .unwrap_or_else(|| DEFAULT_ENDPOINT.to_owned())
}

pub fn lookahead_for(cfg: &RunConfig, prep: &Prepared) -> Result<LookaheadConfig, RunError> {
    let timing = LinkTiming {
        light_speed: cfg.hardware.light_speed,
        cc_latency: cfg.hardware.cc_delay(),
    };
    Ok(compute_lookahead(&prep.spec, &prep.pmap, cfg.lookahead, &timing, cfg.end_time())?)
}

pub fn run(cfg: &RunConfig) -> Result<RunOutput, RunError> {
    let prep = prepare(cfg)?;
    run_prepared(cfg, &prep)
}

pub fn run_prepared(cfg: &RunConfig, prep: &Prepared) -> Result<RunOutput, RunError> {
    let p = prep.pmap.workers;
    let layout = Arc::new(Layout::new(&prep.spec, &prep.model)?);
    let lk = lookahead_for(cfg, prep)?;
    let empty = BTreeSet::new();
    let lagged_links = if lk.is_lagged() { &lk.lagged_bsm_links } else { &empty };
    let placement = Arc::new(layout.placement(&prep.pmap, lagged_links));
    let engine = EngineConfig {
        end_time: cfg.end_time(),
        lookahead: lk.lookahead,
        advance: cfg.advance.into(),
        duplication: cfg.features.duplication_factor,
        record_windows: cfg.diagnostics.windows,
    };
    let opts = QsmOptions {
        offload: cfg.features.offloading,
        memo_capacity: DEFAULT_MEMO_CAPACITY,
    };

    let mut shared = Shared {
        layout,
        placement,
        engine,
        lagged: lk.is_lagged(),
        seed: cfg.seed,
        trace: cfg.diagnostics.trace,
        workers: p,
        audit: None,
    };

    let started = Instant::now();
    let (results, server) = if p == 1 {
        if cfg.diagnostics.audit {
            shared.audit = Some(Arc::new(AuditBoard::new(1, None)));
        }
        let qsm = LocalQsm::new(0, opts, None);
        let r = run_worker(0, &shared, &mut LocalTransport, qsm)?;
        (vec![r], None)
    } else {
        let core = Arc::new(ServerCore::new(DEFAULT_MEMO_CAPACITY));
        let handle = serve(&server_endpoint(cfg), Arc::clone(&core)).map_err(RunError::Server)?;
        if cfg.diagnostics.audit {
            shared.audit = Some(Arc::new(AuditBoard::new(p, Some(Arc::clone(&core)))));
        }
        let transports: Vec<Box<dyn Transport>> = match cfg.transport {
            TransportKind::Thread => ThreadTransport::group(p)
                .into_iter()
                .map(|t| Box::new(t) as Box<dyn Transport>)
                .collect(),
            TransportKind::Tcp => TcpTransport::local_mesh(p)?
                .into_iter()
                .map(|t| Box::new(t) as Box<dyn Transport>)
                .collect(),
        };
        let addr = handle.addr();
        let batching = cfg.features.batching;
        let results: Vec<Result<WorkerResult, RunError>> = std::thread::scope(|s| {
            let shared = &shared;
            let joins: Vec<_> = transports
                .into_iter()
                .enumerate()
                .map(|(w, mut t)| {
                    let opts = opts.clone();
                    std::thread::Builder::new()
                        .name(format!("worker-{w}"))
                        .spawn_scoped(s, move || {
                            let client = match TcpLink::connect(addr) {
                                Ok(link) => QsmClient::new(Box::new(link), w as u32, batching),
                                Err(source) => {
                                    t.abort();
                                    return Err(RunError::Qsm { worker: w, source });
                                }
                            };
                            let qsm = LocalQsm::new(w as u32, opts, Some(client));
                            run_worker(w, shared, t.as_mut(), qsm)
                        })
                        .expect("spawn worker thread")
                })
                .collect();
            joins
                .into_iter()
                .enumerate()
                .map(|(w, j)| j.join().unwrap_or_else(|_| Err(RunError::Panicked { worker: w })))
                .collect()
        });
        let stats = core.stats();
        handle.shutdown().map_err(RunError::Server)?;
        (first_error(results)?, Some(ServerSummary {
            frames: stats.frames,
            requests: stats.requests,
        }))
    };
    let wall = started.elapsed();

    let mut per_worker = Vec::with_capacity(p);
    let mut metrics = ModelMetrics::default();
    let mut qsm = QsmStats::default();
    let mut trace = shared.trace.then(Vec::new);
    for mut r in results {
        metrics.merge(&r.metrics);
        qsm.merge(&r.qsm);
        per_worker.push(worker_report(&r));
        if let Some(t) = trace.as_mut() {
            t.append(&mut r.trace);
        }
    }
    if let Some(t) = trace.as_mut() {
        t.sort_unstable();
    }
    let audit = shared.audit.as_ref().map(|a| AuditSummary {
        checks: a.checks(),
        violations: a.violations(),
    });
    let report = RunReport {
        format_version: REPORT_FORMAT,
        config_hash: cfg.config_hash(),
        workers: p,
        partition: cfg.partition.method,
        lookahead_mode: lk.mode,
        lookahead_ps: lk.lookahead.as_ps(),
        end_time_ps: cfg.end_time().as_ps(),
        wall_time: wall.as_secs_f64(),
        executed_events: per_worker.iter().map(|w| w.executed_events).sum(),
        windows: per_worker.iter().map(|w| w.windows).max().unwrap_or(0),
        event_bytes_sent: per_worker.iter().map(|w| w.event_bytes_sent).sum(),
        messages_to_server: per_worker.iter().map(|w| w.messages_to_server).sum(),
        per_worker,
        metrics,
        qsm,
        server,
        audit,
        speedup: None,
        efficiency: None,
        config: cfg.clone(),
    };
    Ok(RunOutput { report, trace })
}

/// The earliest-numbered worker's error wins; a worker aborted by another
/// worker's failure reports only a transport error.
fn first_error(results: Vec<Result<WorkerResult, RunError>>) -> Result<Vec<WorkerResult>, RunError> {
    let mut ok = Vec::with_capacity(results.len());
    let mut errors = Vec::new();
    for r in results {
        match r {
            Ok(v) => ok.push(v),
            Err(e) => errors.push(e),
        }
    }
    match errors.iter().position(|e| !e.is_abort()) {
        Some(i) => Err(errors.swap_remove(i)),
        None => match errors.into_iter().next() {
            Some(e) => Err(e),
            None => Ok(ok),
        },
    }
}

fn run_worker(w: WorkerId, sh: &Shared, transport: &mut dyn Transport, qsm: LocalQsm) -> Result<WorkerResult, RunError> {
    let mut worker = crate::sync::Worker::new(w, sh.workers, Arc::clone(&sh.placement), sh.trace);
    let mut model = NetModel::new(Arc::clone(&sh.layout), Arc::clone(&sh.placement), w, sh.seed, qsm, sh.audit.clone());
    for (t, src, target, msg) in model.initial_events() {
        if let Err(source) = worker.schedule_initial(t, src, target, msg) {
            transport.abort();
            return Err(RunError::Worker { worker: w, source });
        }
    }
    let stats = if sh.lagged {
        run_lagged_window_loop(&mut worker, &mut model, transport, &sh.engine)
    } else {
        run_window_loop(&mut worker, &mut model, transport, &sh.engine)
    }
    .map_err(|source| RunError::Worker { worker: w, source })?;
    model
        .qsm_mut()
        .flush()
        .map_err(|source| RunError::Qsm { worker: w, source })?;
    Ok(WorkerResult {
        stats,
        metrics: model.metrics(),
        qsm: model.qsm_stats().clone(),
        client: model.qsm().client_stats().cloned(),
        trace: worker.take_trace(),
    })
}

fn worker_report(r: &WorkerResult) -> WorkerReport {
    let s = &r.stats;
    let client = r.client.clone().unwrap_or_default();
    WorkerReport {
        format_version: REPORT_FORMAT,
        worker: s.worker,
        executed_events: s.executed,
        windows: s.windows,
        computing_time: s.computing.as_secs_f64(),
        communicating_time: s.communicating.as_secs_f64(),
        waiting_time: s.waiting.as_secs_f64(),
        socket_time: s.socket.as_secs_f64(),
        total_time: s.total.as_secs_f64(),
        events_sent: s.events_sent,
        events_received: s.events_received,
        event_bytes_sent: s.event_bytes_sent,
        messages_to_server: client.messages,
        server_requests: client.requests,
        qsm_requests: r.qsm.requests,
        qsm_local: r.qsm.local,
        qsm_forwarded: r.qsm.forwarded,
        server_request_fraction: if r.qsm.requests == 0 {
            0.0
        } else {
            r.qsm.forwarded as f64 / r.qsm.requests as f64
        },
        max_lag_ps: s.max_lag.as_ps(),
    }
}
