//! Request handlers for the main and worker roles and a thread-per-connection
//! TCP server.

use std::io::{BufReader, BufWriter};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use crate::auth::CompressedResult;
use crate::cluster::{Coordinator, LocalWorker, ShardWorker};
use crate::error::{Error, Result};
use crate::he::wire::expect_digest;
use crate::he::{Evaluator, HeCiphertext, HeError};
use crate::params::ParamsDigest;

use super::envelope::{Envelope, MessageType};
use super::headers;

pub trait Handler: Send + Sync + 'static {
    fn handle(&self, req: Envelope) -> Envelope;
}

/// HTTP-like status for an error.
pub fn status_of(e: &Error) -> u16 {
    match e {
        Error::He(HeError::ParamsMismatch { .. }) => 412,
        Error::He(HeError::Format(_)) | Error::Format(_) | Error::Shape(_) | Error::Protocol(_) | Error::Bounds { .. } => 400,
        Error::He(HeError::Alignment(_) | HeError::Shape { .. }) => 400,
        Error::NotFound(_) => 404,
        Error::Conflict(_) => 409,
        Error::WorkerFault { .. } | Error::IncompleteAggregation(_) => 503,
        _ => 500,
    }
}

fn reply(kind: MessageType, result: Result<Envelope>) -> Envelope {
    match result {
        Ok(env) => env.header(headers::STATUS, 200),
        Err(e) => Envelope::new(kind)
            .header(headers::STATUS, status_of(&e))
            .with_payload(e.to_string().into_bytes()),
    }
}

/// Rejects a request whose digest header differs from ours, before any
/// ciphertext is parsed.
pub fn check_request_digest(req: &Envelope, ours: ParamsDigest) -> Result<()> {
    let raw = req.require(headers::PARAMS_DIGEST)?;
    let found = ParamsDigest::from_hex(raw).ok_or_else(|| Error::Protocol(format!("bad params digest {raw:?}")))?;
    Ok(expect_digest(found, ours)?)
}

/// Appends compressed results as `groups`/`lengths` headers and a
/// concatenated payload.
pub fn pack_results<C: HeCiphertext>(mut env: Envelope, results: &[CompressedResult<C>]) -> Envelope {
    let mut payload = Vec::new();
    let mut groups = Vec::new();
    let mut lengths = Vec::new();
    for r in results {
        let bytes = r.ciphertext.to_bytes();
        groups.push(r.group.to_string());
        lengths.push(bytes.len().to_string());
        payload.extend_from_slice(&bytes);
    }
    env = env.header(headers::GROUPS, groups.join(",")).header(headers::LENGTHS, lengths.join(","));
    env.with_payload(payload)
}

/// Splits a payload packed by [`pack_results`] into `(group, bytes)` pairs.
pub fn unpack_results(env: &Envelope) -> Result<Vec<(usize, Vec<u8>)>> {
    let list = |key| -> Result<Vec<usize>> {
        let v = env.require(key)?;
        if v.is_empty() {
            return Ok(Vec::new());
        }
        v.split(',')
            .map(|x| x.parse().map_err(|_| Error::Protocol(format!("bad {key} entry {x:?}"))))
            .collect()
    };
    let groups = list(headers::GROUPS)?;
    let lengths = list(headers::LENGTHS)?;
    if groups.len() != lengths.len() || lengths.iter().sum::<usize>() != env.payload.len() {
        return Err(Error::Protocol("result lengths do not match payload".into()));
    }
    let mut out = Vec::with_capacity(groups.len());
    let mut pos = 0;
    for (g, len) in groups.into_iter().zip(lengths) {
        out.push((g, env.payload[pos..pos + len].to_vec()));
        pos += len;
    }
    Ok(out)
}

/// Front server: enrollment routing, authentication fan-out and identities.
pub struct MainService<E: Evaluator> {
    coordinator: Coordinator<E>,
}

impl<E: Evaluator> MainService<E> {
    pub fn new(coordinator: Coordinator<E>) -> Self {
        Self { coordinator }
    }

    fn digest(&self) -> ParamsDigest {
        self.coordinator.evaluator().params().digest()
    }

    fn dispatch(&self, req: &Envelope) -> Result<Envelope> {
        let eval = self.coordinator.evaluator();
        match req.kind {
            MessageType::Health => Ok(Envelope::new(req.kind)
                .header(headers::ROLE, "main")
                .header(headers::PARAMS_DIGEST, self.digest())
                .header(headers::REGISTERED, self.coordinator.registered())),
            MessageType::Identity => {
                let idx: usize = req.require_parsed(headers::GLOBAL_INDEX)?;
                Ok(Envelope::new(req.kind).header(headers::USER_ID, self.coordinator.lookup_identity(idx)?))
            }
            MessageType::Enroll => {
                check_request_digest(req, self.digest())?;
                let user = req.require(headers::USER_ID)?;
                let c_u = eval.ciphertext_from_bytes(&req.payload)?;
                let global = self.coordinator.enroll(&c_u, user)?;
                Ok(Envelope::new(req.kind).header(headers::GLOBAL_INDEX, global))
            }
            MessageType::Auth => {
                check_request_digest(req, self.digest())?;
                let query = eval.ciphertext_from_bytes(&req.payload)?;
                let resp = self.coordinator.authenticate(&query)?;
                let env = Envelope::new(req.kind)
                    .header(headers::OCCUPANCY, resp.occupancy.to_hex())
                    .header(headers::OCCUPANCY_LEN, resp.occupancy.len());
                Ok(pack_results(env, &resp.results))
            }
            MessageType::WorkerScore => Err(Error::Protocol("main server does not score shards".into())),
        }
    }
}

impl<E: Evaluator> Handler for MainService<E> {
    fn handle(&self, req: Envelope) -> Envelope {
        reply(req.kind, self.dispatch(&req))
    }
}

/// Shard server: scores its range and accepts enrollments routed to it.
pub struct WorkerService<E: Evaluator> {
    worker: LocalWorker<E>,
}

impl<E: Evaluator> WorkerService<E> {
    pub fn new(worker: LocalWorker<E>) -> Self {
        Self { worker }
    }

    fn dispatch(&self, req: &Envelope) -> Result<Envelope> {
        let eval = self.worker.evaluator();
        let digest = eval.params().digest();
        match req.kind {
            MessageType::Health => Ok(Envelope::new(req.kind)
                .header(headers::ROLE, "worker")
                .header(headers::PARAMS_DIGEST, digest)
                .header(headers::SHARDS, self.worker.store().len())),
            MessageType::Enroll => {
                check_request_digest(req, digest)?;
                let global: usize = req.require_parsed(headers::GLOBAL_INDEX)?;
                let c_u = eval.ciphertext_from_bytes(&req.payload)?;
                self.worker.enroll(&c_u, global)?;
                Ok(Envelope::new(req.kind))
            }
            MessageType::WorkerScore => {
                check_request_digest(req, digest)?;
                let query = eval.ciphertext_from_bytes(&req.payload)?;
                let results = self.worker.score(&query)?;
                Ok(pack_results(Envelope::new(req.kind), &results))
            }
            MessageType::Auth | MessageType::Identity => {
                Err(Error::Protocol("workers only accept enrollment, scoring and health requests".into()))
            }
        }
    }
}

impl<E: Evaluator> Handler for WorkerService<E> {
    fn handle(&self, req: Envelope) -> Envelope {
        reply(req.kind, self.dispatch(&req))
    }
}

/// Running server; dropping it does not stop it, call [`Server::shutdown`].
pub struct Server {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl Server {
    pub fn bind(addr: SocketAddr, handler: Arc<dyn Handler>) -> Result<Self> {
        let listener = TcpListener::bind(addr)?;
        let addr = listener.local_addr()?;
        let stop = Arc::new(AtomicBool::new(false));
        let flag = Arc::clone(&stop);
        let accept = thread::spawn(move || {
            for stream in listener.incoming() {
                if flag.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let handler = Arc::clone(&handler);
                thread::spawn(move || {
                    let _ = serve_connection(stream, &*handler);
                });
            }
        });
        Ok(Self { addr, stop, accept: Some(accept) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the accept loop ends.
    pub fn join(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect_timeout(&self.addr, Duration::from_secs(1));
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

fn serve_connection(stream: TcpStream, handler: &dyn Handler) -> Result<()> {
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    loop {
        let req = match Envelope::read_from(&mut reader) {
            Ok(Some(req)) => req,
            Ok(None) => return Ok(()),
            Err(e) => {
                // Unframeable input: report once and drop the connection.
                let env = Envelope::new(MessageType::Health)
                    .header(headers::STATUS, status_of(&e))
                    .with_payload(e.to_string().into_bytes());
                let _ = env.write_to(&mut writer);
                return Err(e);
            }
        };
        handler.handle(req).write_to(&mut writer)?;
    }
}
