//! UDP transport around the packet controller, the simulated-engine client
//! and the latency benchmark.

use std::io::{BufWriter, ErrorKind, Write};
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use anyhow::{bail, Context, Result};
use h2df_core::engine::{EngineInputs, MeasurementNoise, VirtualEngine};
use h2df_core::env::{compute_reward, idle_outputs, RewardConfig, SafePolytope, TraceRow};
use h2df_core::runtime::wire::ACTION_LEN;
use h2df_core::runtime::{ActionPacket, Controller, Reply, StatePacket, Status};

use crate::records::{LatencySummary, MetricsRow};

#[derive(Clone, Debug)]
pub struct ServeOptions {
    pub deadline: Duration,
    /// Return after this many replies; run until stopped otherwise.
    pub max_replies: Option<u64>,
    pub metrics_every: u64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ServeStats {
    pub replies: u64,
    pub held: u64,
    pub faults: u64,
    pub stale: u64,
    pub malformed: u64,
    pub deadline_misses: u64,
}

impl ServeStats {
    pub fn drops(&self) -> u64 {
        self.stale + self.malformed
    }
}

/// Answers state packets on `socket` one at a time until `stop` is set or
/// `max_replies` is reached. Metrics lines go to `metrics` if given.
pub fn serve(
    socket: &UdpSocket,
    controller: &mut Controller,
    opts: &ServeOptions,
    stop: &AtomicBool,
    metrics: Option<&mut dyn Write>,
) -> Result<ServeStats> {
    socket.set_read_timeout(Some(opts.deadline)).context("setting socket deadline")?;
    let mut metrics = metrics.map(csv::Writer::from_writer);
    let started = Instant::now();
    let mut stats = ServeStats::default();
    let mut buf = [0u8; 1500];
    while !stop.load(Ordering::Relaxed) && opts.max_replies.is_none_or(|m| stats.replies < m) {
        let (n, peer) = match socket.recv_from(&mut buf) {
            Ok(r) => r,
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                stats.deadline_misses += 1;
                controller.deadline_missed();
                continue;
            }
            Err(e) if e.kind() == ErrorKind::Interrupted => continue,
            Err(e) => return Err(e).context("receiving state packet"),
        };
        let t0 = Instant::now();
        let reply = controller.handle_bytes(&buf[..n]);
        let Reply::Action(packet) = reply else {
            continue;
        };
        let bytes = packet.encode();
        let latency_us = t0.elapsed().as_secs_f64() * 1e6;
        socket.send_to(&bytes, peer).context("sending action packet")?;
        stats.replies += 1;
        match packet.status {
            Status::HeldLastAction => stats.held += 1,
            Status::Fault => stats.faults += 1,
            Status::Ok => {}
        }
        if let Some(w) = metrics.as_mut() {
            if stats.replies % opts.metrics_every.max(1) == 0 {
                w.serialize(MetricsRow {
                    ts: started.elapsed().as_millis() as u64,
                    seq: packet.seq,
                    policy_id: packet.policy_id,
                    latency_us,
                    drops: controller.drops(),
                })?;
                w.flush()?;
            }
        }
    }
    stats.malformed = controller.malformed();
    stats.stale = controller.drops() - controller.malformed();
    Ok(stats)
}

#[derive(Clone, Debug)]
pub struct ClientOptions {
    pub timeout: Duration,
    /// Resends of one state packet before giving up.
    pub retries: u32,
    pub engine_seed: u64,
    pub noise: MeasurementNoise,
    pub reward: RewardConfig,
    pub polytope: SafePolytope,
}

/// Result of a closed-loop client run.
#[derive(Clone, Debug, Default)]
pub struct ClientRun {
    pub sent: Vec<StatePacket>,
    pub replies: Vec<ActionPacket>,
    pub trace: Vec<TraceRow>,
    pub timeouts: u64,
    /// Replies whose size or header was wrong, or whose seq did not match.
    pub rejected: u64,
    /// False when the run stopped early after exhausting retries.
    pub complete: bool,
}

/// Drives the virtual engine through `reference`, asking the server at
/// `server` for every action. The first state sent is the engine at rest.
pub fn sim_engine_client(socket: &UdpSocket, server: SocketAddr, reference: &[f64], opts: &ClientOptions) -> Result<ClientRun> {
    socket.set_read_timeout(Some(opts.timeout)).context("setting client timeout")?;
    let mut engine = VirtualEngine::new(opts.noise, opts.engine_seed);
    let mut y = idle_outputs();
    let mut run = ClientRun::default();
    let mut buf = [0u8; 1500];
    for (t, &r) in reference.iter().enumerate() {
        let seq = t as u32 + 1;
        let state = StatePacket {
            seq,
            imep: y.imep as f32,
            nox: y.nox as f32,
            soot: y.soot as f32,
            mprr: y.mprr as f32,
            reference: r as f32,
        };
        let bytes = state.encode();
        let mut reply = None;
        'attempts: for _ in 0..=opts.retries {
            socket.send_to(&bytes, server).context("sending state packet")?;
            loop {
                match socket.recv_from(&mut buf) {
                    Ok((n, _)) => match ActionPacket::decode(&buf[..n]) {
                        Ok(p) if p.seq == seq => {
                            reply = Some(p);
                            break 'attempts;
                        }
                        _ => run.rejected += 1,
                    },
                    Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {
                        run.timeouts += 1;
                        continue 'attempts;
                    }
                    Err(e) if e.kind() == ErrorKind::Interrupted => {}
                    Err(e) => return Err(e).context("receiving action packet"),
                }
            }
        }
        let Some(reply) = reply else {
            return Ok(run);
        };
        let u = EngineInputs::from_array(reply.actions.map(f64::from));
        let measured = engine.step(u);
        let breakdown = compute_reward(&measured, r, &u, &opts.reward, &opts.polytope);
        let [a1, a2, a3, a4] = u.to_array();
        run.trace.push(TraceRow {
            step: t + 1,
            reference: r,
            imep: measured.imep,
            nox: measured.nox,
            soot: measured.soot,
            mprr: measured.mprr,
            a1,
            a2,
            a3,
            a4,
            reward: breakdown.total,
            q1: breakdown.q1,
            q2: breakdown.q2,
            q3: breakdown.q3,
            r: breakdown.r,
            staging: breakdown.staging,
            w: breakdown.w,
        });
        run.sent.push(state);
        run.replies.push(reply);
        y = measured;
    }
    run.complete = true;
    Ok(run)
}

/// Latency samples and their summary.
#[derive(Clone, Debug)]
pub struct LatencyReport {
    pub summary: LatencySummary,
    pub samples_us: Vec<f64>,
}

/// Times decode, observer step, policy evaluation and encode for `n`
/// packets of a closed-loop trajectory against the virtual engine. The
/// controller is reset first.
pub fn benchmark_latency(controller: &mut Controller, reference: &[f64], n: usize, engine_seed: u64) -> Result<LatencyReport> {
    if n < 1000 {
        bail!("latency benchmark needs at least 1000 iterations, got {n}");
    }
    if reference.is_empty() {
        bail!("latency benchmark needs a reference");
    }
    controller.reset();
    let mut engine = VirtualEngine::new(MeasurementNoise::one_percent(), engine_seed);
    let mut y = idle_outputs();
    let mut samples = Vec::with_capacity(n);
    for k in 0..n {
        let bytes = StatePacket {
            seq: k as u32 + 1,
            imep: y.imep as f32,
            nox: y.nox as f32,
            soot: y.soot as f32,
            mprr: y.mprr as f32,
            reference: reference[k % reference.len()] as f32,
        }
        .encode();
        let t0 = Instant::now();
        let reply = controller.handle_bytes(std::hint::black_box(&bytes));
        let Reply::Action(p) = reply else {
            bail!("benchmark packet {} was dropped: {reply:?}", k + 1);
        };
        let out: [u8; ACTION_LEN] = std::hint::black_box(p.encode());
        samples.push(t0.elapsed().as_secs_f64() * 1e6);
        std::hint::black_box(out);
        y = engine.step(EngineInputs::from_array(p.actions.map(f64::from)));
    }
    Ok(LatencyReport { summary: summarize(&samples), samples_us: samples })
}

/// Median (mean of the two middle values for even counts), nearest-rank
/// 99th percentile and maximum.
pub fn summarize(samples: &[f64]) -> LatencySummary {
    let mut s = samples.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n == 0 {
        return LatencySummary { n: 0, median_us: f64::NAN, p99_us: f64::NAN, max_us: f64::NAN };
    }
    let median_us = if n % 2 == 1 { s[n / 2] } else { 0.5 * (s[n / 2 - 1] + s[n / 2]) };
    let rank = (0.99 * n as f64).ceil() as usize;
    LatencySummary { n, median_us, p99_us: s[rank.clamp(1, n) - 1], max_us: s[n - 1] }
}

/// Buffered file sink for the metrics log.
pub fn metrics_file(path: &std::path::Path) -> Result<BufWriter<std::fs::File>> {
    Ok(BufWriter::new(std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?))
}
