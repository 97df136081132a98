//! Master/worker over TCP. One JSON object per line; see `docs/formats.md`.

use std::io::{self, BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::parallel::{PoolOptions, Run};
use super::pool::Delivery;
use super::{expand_task, EnumerationReport, Task, TaskResult};
use crate::error::{Error, Result};
use crate::format::{domain_sha256, model_sha256};
use crate::geometry::{BoundedDomain, SignVector};
use crate::network::{Mlp, NetworkSignVector};

pub const TERMINATE_ID: i64 = -1;
const POLL: Duration = Duration::from_millis(100);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum Message {
    #[serde(rename = "HELLO")]
    Hello {
        model_sha256: String,
        domain_sha256: String,
    },
    #[serde(rename = "WELCOME")]
    Welcome { worker_id: u64 },
    #[serde(rename = "ERROR")]
    Error { reason: String },
    #[serde(rename = "REQUEST")]
    Request,
    #[serde(rename = "TASK")]
    Task { id: i64, s1: String },
    #[serde(rename = "TERMINATE")]
    Terminate { id: i64 },
    #[serde(rename = "RESULT-ACK")]
    ResultAck {
        id: i64,
        s1: String,
        wall_time: f64,
        lp_calls: u64,
        layer_counts: Vec<u64>,
        sign_vectors: Vec<String>,
    },
}

impl Message {
    fn from_result(r: &TaskResult) -> Message {
        Message::ResultAck {
            id: r.task_id as i64,
            s1: r.s1.to_string(),
            wall_time: r.wall_time,
            lp_calls: r.lp_calls,
            layer_counts: r.layer_counts.clone(),
            sign_vectors: r.sign_vectors.iter().map(ToString::to_string).collect(),
        }
    }
}

/// Buffered line reader that keeps partial lines across read timeouts.
pub struct Connection {
    stream: TcpStream,
    reader: BufReader<TcpStream>,
    buf: Vec<u8>,
}

pub enum Received {
    Message(Message),
    Timeout,
    Closed,
}

impl Connection {
    pub fn new(stream: TcpStream) -> io::Result<Self> {
        stream.set_nodelay(true)?;
        let reader = BufReader::new(stream.try_clone()?);
        Ok(Connection {
            stream,
            reader,
            buf: Vec::new(),
        })
    }

    pub fn send(&mut self, msg: &Message) -> Result<()> {
        let mut line = serde_json::to_vec(msg).expect("message serialize");
        line.push(b'\n');
        self.stream
            .write_all(&line)
            .map_err(|e| Error::Protocol(format!("send failed: {e}")))
    }

    /// Waits up to `timeout` (`None`: forever) for one message.
    pub fn recv(&mut self, timeout: Option<Duration>) -> Result<Received> {
        self.stream
            .set_read_timeout(timeout)
            .map_err(|e| Error::Protocol(e.to_string()))?;
        match self.reader.read_until(b'\n', &mut self.buf) {
            Ok(0) => Ok(Received::Closed),
            Ok(_) if self.buf.ends_with(b"\n") => {
                let line = std::mem::take(&mut self.buf);
                serde_json::from_slice(&line)
                    .map(Received::Message)
                    .map_err(|e| Error::Protocol(format!("bad message: {e}")))
            }
            Ok(_) => Ok(Received::Closed),
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => Ok(Received::Timeout),
            Err(e) if e.kind() == ErrorKind::Interrupted => Ok(Received::Timeout),
            Err(_) => Ok(Received::Closed),
        }
    }
}

pub struct Master {
    listener: TcpListener,
}

impl Master {
    pub fn bind(addr: impl ToSocketAddrs) -> Result<Master> {
        let listener = TcpListener::bind(addr).map_err(|e| Error::Protocol(format!("bind failed: {e}")))?;
        listener
            .set_nonblocking(true)
            .map_err(|e| Error::Protocol(e.to_string()))?;
        Ok(Master { listener })
    }

    pub fn local_addr(&self) -> Result<SocketAddr> {
        self.listener.local_addr().map_err(|e| Error::Protocol(e.to_string()))
    }

    /// Serves tasks to connecting workers until every task is acknowledged.
    /// `opts.workers` is only recorded in the run summary.
    pub fn run(self, mlp: &Mlp, domain: &BoundedDomain, opts: &PoolOptions) -> Result<EnumerationReport> {
        let run = Run::prepare(mlp, domain, opts)?;
        let hashes = (model_sha256(mlp), domain_sha256(domain));
        let next_id = AtomicU64::new(0);
        let outcome = thread::scope(|scope| {
            let waiter = scope.spawn(|| {
                let r = run.wait();
                run.pool.close();
                r
            });
            while !run.pool.is_closed() {
                match self.listener.accept() {
                    Ok((stream, peer)) => {
                        let id = next_id.fetch_add(1, Ordering::Relaxed);
                        log::info!("worker {id} connected from {peer}");
                        let (run, hashes) = (&run, &hashes);
                        scope.spawn(move || {
                            if let Err(e) = serve_connection(run, hashes, stream, id) {
                                log::warn!("worker {id}: {e}");
                            }
                        });
                    }
                    Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(20)),
                    Err(e) => log::warn!("accept failed: {e}"),
                }
            }
            waiter.join().expect("waiter thread")
        });
        outcome?;
        let workers = opts.workers.max(next_id.load(Ordering::Relaxed) as usize);
        Ok(run.finish(mlp, domain, workers))
    }
}

fn parse_result(msg: Message, task: &Task) -> Result<TaskResult> {
    let Message::ResultAck {
        id,
        s1,
        wall_time,
        lp_calls,
        layer_counts,
        sign_vectors,
    } = msg
    else {
        return Err(Error::Protocol("expected RESULT-ACK".into()));
    };
    if id != task.id as i64 || s1.parse::<SignVector>()? != task.s1 {
        return Err(Error::Protocol(format!(
            "result for task {id} does not match leased task {}",
            task.id
        )));
    }
    let mut vs = sign_vectors
        .iter()
        .map(|s| s.parse::<NetworkSignVector>())
        .collect::<Result<Vec<_>>>()?;
    if vs.iter().any(|v| v.depth() == 0 || v.layer(1) != &task.s1) {
        return Err(Error::Protocol(format!(
            "task {id} result has a foreign layer-1 prefix"
        )));
    }
    vs.sort();
    vs.dedup();
    Ok(TaskResult {
        task_id: task.id,
        s1: task.s1.clone(),
        sign_vectors: vs,
        wall_time,
        layer_counts,
        lp_calls,
    })
}

fn serve_connection(run: &Run, hashes: &(String, String), stream: TcpStream, worker: u64) -> Result<()> {
    stream
        .set_nonblocking(false)
        .map_err(|e| Error::Protocol(e.to_string()))?;
    let mut conn = Connection::new(stream).map_err(|e| Error::Protocol(e.to_string()))?;
    let hello = loop {
        match conn.recv(Some(POLL))? {
            Received::Message(m) => break m,
            Received::Timeout if run.pool.is_closed() => return Ok(()),
            Received::Timeout => continue,
            Received::Closed => return Ok(()),
        }
    };
    match hello {
        Message::Hello {
            model_sha256,
            domain_sha256,
        } if (model_sha256.as_str(), domain_sha256.as_str()) == (hashes.0.as_str(), hashes.1.as_str()) => {
            conn.send(&Message::Welcome { worker_id: worker })?;
        }
        Message::Hello { .. } => {
            let reason = "model or domain hash differs from the master's".to_string();
            conn.send(&Message::Error { reason: reason.clone() })?;
            return Err(Error::Protocol(reason));
        }
        other => return Err(Error::Protocol(format!("expected HELLO, got {other:?}"))),
    }
    loop {
        match conn.recv(Some(POLL))? {
            Received::Message(Message::Request) => {}
            Received::Message(other) => return Err(Error::Protocol(format!("expected REQUEST, got {other:?}"))),
            Received::Timeout => {
                if run.pool.is_closed() {
                    let _ = conn.send(&Message::Terminate { id: TERMINATE_ID });
                    return Ok(());
                }
                continue;
            }
            Received::Closed => return Ok(()),
        }
        let task = match run.pool.dequeue() {
            Delivery::Task(t) => t,
            Delivery::Terminate => {
                let _ = conn.send(&Message::Terminate { id: TERMINATE_ID });
                return Ok(());
            }
        };
        let sent = conn.send(&Message::Task {
            id: task.id as i64,
            s1: task.s1.to_string(),
        });
        if let Err(e) = sent {
            run.fail(task.id, e);
            return Ok(());
        }
        let msg = loop {
            match conn.recv(Some(POLL)) {
                Ok(Received::Message(m)) => break Some(m),
                Ok(Received::Timeout) if run.pool.is_closed() && !run.pool.is_done(task.id) => return Ok(()),
                Ok(Received::Timeout) => continue,
                Ok(Received::Closed) | Err(_) => break None,
            }
        };
        let Some(msg) = msg else {
            if !run.pool.is_done(task.id) {
                run.fail(
                    task.id,
                    Error::Protocol(format!("worker {worker} disconnected during task {}", task.id)),
                );
            }
            return Ok(());
        };
        match parse_result(msg, &task).and_then(|r| run.complete(r)) {
            Ok(_) => {}
            Err(e) => {
                run.fail(task.id, e);
                return Ok(());
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct WorkerOptions {
    /// Keep retrying the initial connection this long.
    pub connect_timeout: Duration,
}

impl Default for WorkerOptions {
    fn default() -> Self {
        WorkerOptions {
            connect_timeout: Duration::from_secs(30),
        }
    }
}

/// Processes tasks from a master until told to stop. Returns the number of
/// tasks completed.
pub fn run_worker(mlp: &Mlp, domain: &BoundedDomain, addr: &str, opts: &WorkerOptions) -> Result<u64> {
    let start = Instant::now();
    let stream = loop {
        match TcpStream::connect(addr) {
            Ok(s) => break s,
            Err(e) if start.elapsed() < opts.connect_timeout => {
                log::debug!("connect to {addr} failed ({e}); retrying");
                thread::sleep(Duration::from_millis(100));
            }
            Err(e) => return Err(Error::Protocol(format!("cannot reach master at {addr}: {e}"))),
        }
    };
    let mut conn = Connection::new(stream).map_err(|e| Error::Protocol(e.to_string()))?;
    let recv = |conn: &mut Connection| -> Result<Message> {
        match conn.recv(None)? {
            Received::Message(m) => Ok(m),
            _ => Err(Error::Protocol("master closed the connection".into())),
        }
    };
    conn.send(&Message::Hello {
        model_sha256: model_sha256(mlp),
        domain_sha256: domain_sha256(domain),
    })?;
    match recv(&mut conn)? {
        Message::Welcome { worker_id } => log::info!("registered as worker {worker_id}"),
        Message::Error { reason } => return Err(Error::Protocol(format!("master refused: {reason}"))),
        other => return Err(Error::Protocol(format!("expected WELCOME, got {other:?}"))),
    }
    let mut done = 0;
    loop {
        conn.send(&Message::Request)?;
        match recv(&mut conn)? {
            Message::Task { id, s1 } => {
                let task = Task {
                    id: u64::try_from(id).map_err(|_| Error::Protocol(format!("bad task id {id}")))?,
                    s1: s1.parse()?,
                };
                let r = expand_task(mlp, domain, &task)?;
                conn.send(&Message::from_result(&r))?;
                done += 1;
            }
            Message::Terminate { .. } => return Ok(done),
            other => return Err(Error::Protocol(format!("unexpected {other:?}"))),
        }
    }
}
