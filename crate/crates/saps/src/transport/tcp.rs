//! TCP backend. One long-lived framed stream per coordinator↔worker pair;
//! worker↔worker streams are opened per round (lower rank dials) and closed
//! after the exchange.

use std::io::{self, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use saps_core::coordinator::{Coordinator, RoundLog};
use saps_core::wire::{self, Message, MessageType, HEADER_LEN};
use saps_core::worker::WorkerState;
use saps_core::{ParameterVector, ProtocolError};

use crate::error::{Result, SapsError};

fn transport(context: &str, e: io::Error) -> SapsError {
    match e.kind() {
        io::ErrorKind::WouldBlock | io::ErrorKind::TimedOut => SapsError::Transport(format!("{context}: timed out")),
        io::ErrorKind::UnexpectedEof => SapsError::Transport(format!("{context}: connection closed")),
        _ => SapsError::Transport(format!("{context}: {e}")),
    }
}

/// Reads one whole frame (header, body, CRC) without decoding it.
pub fn read_frame(r: &mut impl Read) -> Result<Vec<u8>> {
    let mut frame = vec![0u8; HEADER_LEN];
    r.read_exact(&mut frame).map_err(|e| transport("reading frame header", e))?;
    let (_, rest) = wire::parse_header(&frame)?;
    frame.resize(HEADER_LEN + rest, 0);
    r.read_exact(&mut frame[HEADER_LEN..])
        .map_err(|e| transport("reading frame body", e))?;
    Ok(frame)
}

pub fn read_message(r: &mut impl Read) -> Result<Message> {
    Ok(wire::decode(&read_frame(r)?)?)
}

/// Writes one frame; returns its size in bytes.
pub fn write_message(w: &mut impl Write, msg: &Message) -> Result<usize> {
    let frame = wire::encode(msg);
    w.write_all(&frame).map_err(|e| transport("writing frame", e))?;
    w.flush().map_err(|e| transport("flushing frame", e))?;
    Ok(frame.len())
}

fn expect(msg: Message, expected: MessageType) -> Result<Message> {
    if msg.message_type() == expected {
        Ok(msg)
    } else {
        Err(ProtocolError::UnexpectedMessage {
            expected: expected.name(),
            got: msg.name(),
        }
        .into())
    }
}

#[derive(Clone, Debug)]
pub struct TcpOptions {
    /// Address every endpoint binds to; ports are chosen by the OS.
    pub bind: String,
    /// Upper bound on any single wait (acknowledgment, peer, frame).
    pub timeout: Duration,
    /// Workers send measured link speeds after each exchange. Off by default:
    /// measured loopback speeds would make matchings depend on timing.
    pub report_bandwidth: bool,
}

impl Default for TcpOptions {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1".into(),
            timeout: Duration::from_secs(30),
            report_bandwidth: false,
        }
    }
}

/// Per-worker exchange counters as observed on the sockets.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PeerTraffic {
    pub values_sent: u64,
    pub values_received: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

pub struct TcpOutcome {
    pub logs: Vec<RoundLog>,
    pub final_model: ParameterVector,
    pub coordinator_model_bytes: u64,
    pub workers: Vec<WorkerState>,
    pub traffic: Vec<PeerTraffic>,
}

fn connect_with_retry(addr: SocketAddr, deadline: Instant) -> Result<TcpStream> {
    loop {
        match TcpStream::connect(addr) {
            Ok(s) => return Ok(s),
            Err(e) if Instant::now() >= deadline => return Err(transport(&format!("connecting to {addr}"), e)),
            Err(_) => thread::sleep(Duration::from_millis(1)),
        }
    }
}

fn accept_within(listener: &TcpListener, timeout: Duration, what: &str) -> Result<TcpStream> {
    let deadline = Instant::now() + timeout;
    listener
        .set_nonblocking(true)
        .map_err(|e| transport("configuring listener", e))?;
    loop {
        match listener.accept() {
            Ok((s, _)) => {
                s.set_nonblocking(false).map_err(|e| transport("configuring peer stream", e))?;
                return Ok(s);
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(SapsError::Timeout(timeout, what.into()));
                }
                thread::sleep(Duration::from_millis(1));
            }
            Err(e) => return Err(transport("accepting peer", e)),
        }
    }
}

fn configure(stream: &TcpStream, timeout: Duration) -> Result<()> {
    stream.set_nodelay(true).map_err(|e| transport("configuring stream", e))?;
    stream
        .set_read_timeout(Some(timeout))
        .map_err(|e| transport("configuring stream", e))?;
    stream
        .set_write_timeout(Some(timeout))
        .map_err(|e| transport("configuring stream", e))?;
    Ok(())
}

struct WorkerNode {
    state: WorkerState,
    listener: TcpListener,
    peers: Vec<SocketAddr>,
    opts: TcpOptions,
    traffic: PeerTraffic,
}

impl WorkerNode {
    /// Both sides write and read concurrently, so neither waits on the other's send.
    fn exchange(&mut self, peer: usize, frame: &[u8]) -> Result<(Vec<u8>, f64)> {
        let deadline = Instant::now() + self.opts.timeout;
        let stream = if self.state.rank() < peer {
            connect_with_retry(self.peers[peer], deadline)?
        } else {
            accept_within(&self.listener, self.opts.timeout, &format!("worker {peer} to connect"))?
        };
        configure(&stream, self.opts.timeout)?;
        let mut writer = stream.try_clone().map_err(|e| transport("cloning peer stream", e))?;
        let mut reader = stream;
        let started = Instant::now();
        let incoming = thread::scope(|s| {
            let send = s.spawn(move || writer.write_all(frame).and_then(|_| writer.flush()));
            let got = read_frame(&mut reader);
            let sent = send.join().expect("peer writer panicked");
            sent.map_err(|e| transport("sending to peer", e))?;
            got
        })?;
        let elapsed = started.elapsed().as_secs_f64();
        let _ = reader.shutdown(std::net::Shutdown::Both);
        Ok((incoming, elapsed))
    }

    fn run(mut self, coordinator: SocketAddr) -> Result<(WorkerState, PeerTraffic)> {
        let deadline = Instant::now() + self.opts.timeout;
        let mut control = connect_with_retry(coordinator, deadline)?;
        configure(&control, self.opts.timeout)?;
        let rank = self.state.rank();
        write_message(&mut control, &Message::Hello { worker_id: rank as u32 })?;
        loop {
            match read_message(&mut control)? {
                Message::RoundStart(start) => {
                    let prepared = self.state.prepare_round(&start)?;
                    let mut incoming = None;
                    let mut report = None;
                    if let (Some(peer), Some(payload)) = (prepared.peer, &prepared.payload) {
                        let out = wire::encode(&Message::ModelValues(payload.clone()));
                        let (frame, secs) = self.exchange(peer, &out)?;
                        let values = match wire::decode(&frame)? {
                            Message::ModelValues(p) => p,
                            other => {
                                return Err(ProtocolError::UnexpectedMessage {
                                    expected: "MODEL_VALUES",
                                    got: other.name(),
                                }
                                .into())
                            }
                        };
                        self.traffic.values_sent += payload.values.len() as u64;
                        self.traffic.values_received += values.values.len() as u64;
                        self.traffic.bytes_sent += out.len() as u64;
                        self.traffic.bytes_received += frame.len() as u64;
                        if secs > 0.0 {
                            report = Some((peer as u32, (out.len() + frame.len()) as f64 / secs));
                        }
                        incoming = Some(values);
                    }
                    let end = self.state.finish_round(prepared, incoming)?;
                    if self.opts.report_bandwidth {
                        if let Some(entry) = report {
                            write_message(&mut control, &Message::BandwidthReport(vec![entry]))?;
                        }
                    }
                    write_message(&mut control, &Message::RoundEnd(end))?;
                }
                Message::ModelRequest => {
                    write_message(&mut control, &Message::ModelFull(self.state.model().to_vec()))?;
                }
                Message::Shutdown => return Ok((self.state, self.traffic)),
                other => {
                    return Err(ProtocolError::UnexpectedMessage {
                        expected: "ROUND_START, MODEL_REQUEST or SHUTDOWN",
                        got: other.name(),
                    }
                    .into())
                }
            }
        }
    }
}

type Inbound = (usize, Result<Vec<u8>>);

struct CoordinatorNode<'a> {
    coordinator: &'a mut Coordinator,
    streams: Vec<TcpStream>,
    inbox: mpsc::Receiver<Inbound>,
    timeout: Duration,
}

impl CoordinatorNode<'_> {
    fn recv(&self, waiting_for: impl FnOnce() -> String) -> Result<(usize, Vec<u8>)> {
        match self.inbox.recv_timeout(self.timeout) {
            Ok((w, frame)) => Ok((w, frame?)),
            Err(mpsc::RecvTimeoutError::Timeout) => Err(SapsError::Timeout(self.timeout, waiting_for())),
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                Err(SapsError::Transport("all worker connections closed".into()))
            }
        }
    }

    fn run_round(&mut self) -> Result<()> {
        let assignment = self.coordinator.begin_round()?;
        for (w, stream) in self.streams.iter_mut().enumerate() {
            write_message(stream, &Message::RoundStart(assignment.round_start_for(w)))?;
        }
        let mut acked = vec![false; self.streams.len()];
        loop {
            let (w, frame) = self.recv(|| {
                let missing: Vec<usize> = (0..acked.len()).filter(|&i| !acked[i]).collect();
                format!("ROUND_END for round {} from workers {missing:?}", assignment.round)
            })?;
            match wire::decode(&frame)? {
                Message::RoundEnd(end) => {
                    if end.worker_id as usize != w {
                        return Err(ProtocolError::WrongSender {
                            expected: w as u32,
                            got: end.worker_id,
                        }
                        .into());
                    }
                    let done = self.coordinator.acknowledge(&end)?;
                    acked[w] = true;
                    if done.is_some() {
                        return Ok(());
                    }
                }
                Message::BandwidthReport(entries) => self.coordinator.apply_bandwidth_report(w, &entries)?,
                other => {
                    return Err(ProtocolError::UnexpectedMessage {
                        expected: "ROUND_END",
                        got: other.name(),
                    }
                    .into())
                }
            }
        }
    }

    fn collect_final_model(&mut self, dim: usize) -> Result<ParameterVector> {
        write_message(&mut self.streams[0], &Message::ModelRequest)?;
        loop {
            let (w, frame) = self.recv(|| "MODEL_FULL from worker 0".into())?;
            let kind = wire::parse_header(&frame)?.0;
            match (w, kind) {
                (0, MessageType::ModelFull) => return self.coordinator.accept_final_model(&frame, dim).map_err(Into::into),
                (_, MessageType::BandwidthReport) => {}
                _ => {
                    return Err(ProtocolError::UnexpectedMessage {
                        expected: "MODEL_FULL",
                        got: kind.name(),
                    }
                    .into())
                }
            }
        }
    }

    fn shutdown(&mut self) {
        for s in &mut self.streams {
            let _ = write_message(s, &Message::Shutdown);
        }
    }

    fn abort(&mut self) {
        self.coordinator.abort_round();
        for s in &self.streams {
            let _ = s.shutdown(std::net::Shutdown::Both);
        }
    }
}

/// Runs `rounds` rounds over loopback TCP with one thread per worker, then
/// collects worker 0's model through the coordinator.
pub fn run_tcp(
    coordinator: &mut Coordinator,
    workers: Vec<WorkerState>,
    rounds: u64,
    dim: usize,
    opts: &TcpOptions,
) -> Result<TcpOutcome> {
    let n = coordinator.n();
    if workers.len() != n {
        return Err(SapsError::Transport(format!("{} workers for a coordinator of {n}", workers.len())));
    }
    let bind = |what: &str| {
        TcpListener::bind((opts.bind.as_str(), 0)).map_err(|e| transport(&format!("binding {what} on {}", opts.bind), e))
    };
    let control = bind("coordinator")?;
    let control_addr = control.local_addr().map_err(|e| transport("coordinator address", e))?;
    let listeners = (0..n).map(|_| bind("worker")).collect::<Result<Vec<_>>>()?;
    let peers = listeners
        .iter()
        .map(|l| l.local_addr().map_err(|e| transport("worker address", e)))
        .collect::<Result<Vec<_>>>()?;

    thread::scope(|s| {
        let handles: Vec<_> = workers
            .into_iter()
            .zip(listeners)
            .map(|(state, listener)| {
                let node = WorkerNode {
                    state,
                    listener,
                    peers: peers.clone(),
                    opts: opts.clone(),
                    traffic: PeerTraffic::default(),
                };
                s.spawn(move || node.run(control_addr))
            })
            .collect();

        let served = serve(s, coordinator, &control, n, rounds, dim, opts);
        let joined: Vec<Result<(WorkerState, PeerTraffic)>> =
            handles.into_iter().map(|h| h.join().expect("worker thread panicked")).collect();
        let (final_model, logs, model_bytes) = match served {
            Ok(v) => v,
            Err(e) => return Err(root_cause(e, joined)),
        };
        let mut states = Vec::with_capacity(n);
        let mut traffic = Vec::with_capacity(n);
        for r in joined {
            let (st, tr) = r?;
            states.push(st);
            traffic.push(tr);
        }
        Ok(TcpOutcome {
            logs,
            final_model,
            coordinator_model_bytes: model_bytes,
            workers: states,
            traffic,
        })
    })
}

/// A failure on one endpoint surfaces elsewhere as closed connections; prefer
/// the error that is not just a consequence of another.
fn root_cause(served: SapsError, workers: Vec<Result<(WorkerState, PeerTraffic)>>) -> SapsError {
    let secondary = |e: &SapsError| matches!(e, SapsError::Transport(_) | SapsError::Timeout(..));
    if !secondary(&served) {
        return served;
    }
    workers
        .into_iter()
        .filter_map(|r| r.err())
        .find(|e| !secondary(e))
        .unwrap_or(served)
}

fn serve<'scope>(
    s: &'scope thread::Scope<'scope, '_>,
    coordinator: &mut Coordinator,
    control: &TcpListener,
    n: usize,
    rounds: u64,
    dim: usize,
    opts: &TcpOptions,
) -> Result<(ParameterVector, Vec<RoundLog>, u64)> {
    let mut slots: Vec<Option<TcpStream>> = (0..n).map(|_| None).collect();
    for _ in 0..n {
        let mut stream = accept_within(control, opts.timeout, "workers to connect")?;
        configure(&stream, opts.timeout)?;
        let id = match expect(read_message(&mut stream)?, MessageType::Hello)? {
            Message::Hello { worker_id } => worker_id as usize,
            _ => unreachable!("checked by expect"),
        };
        match slots.get_mut(id) {
            Some(slot @ None) => *slot = Some(stream),
            Some(Some(_)) => return Err(SapsError::Transport(format!("worker {id} connected twice"))),
            None => return Err(ProtocolError::UnknownWorker(id as u32).into()),
        }
    }
    let streams: Vec<TcpStream> = slots.into_iter().map(|s| s.expect("every worker said hello")).collect();

    let (tx, rx) = mpsc::channel();
    for (w, stream) in streams.iter().enumerate() {
        let mut reader = stream.try_clone().map_err(|e| transport("cloning control stream", e))?;
        // Reads block for as long as rounds take; the queue wait enforces the timeout.
        reader.set_read_timeout(None).map_err(|e| transport("configuring stream", e))?;
        let tx = tx.clone();
        s.spawn(move || loop {
            let frame = read_frame(&mut reader);
            let stop = frame.is_err();
            if tx.send((w, frame)).is_err() || stop {
                return;
            }
        });
    }
    drop(tx);

    let mut node = CoordinatorNode {
        coordinator,
        streams,
        inbox: rx,
        timeout: opts.timeout,
    };
    let result = (|| {
        for _ in 0..rounds {
            node.run_round()?;
        }
        node.collect_final_model(dim)
    })();
    match result {
        Ok(model) => {
            node.shutdown();
            let bytes = node.coordinator.model_bytes_received();
            Ok((model, node.coordinator.log().to_vec(), bytes))
        }
        Err(e) => {
            node.abort();
            Err(e)
        }
    }
}
