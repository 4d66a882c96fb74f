//! Blocking clients for the main server and for workers.

use std::io::{BufReader, BufWriter};
use std::net::{TcpStream, ToSocketAddrs};
use std::sync::Arc;
use std::time::Duration;

use crate::auth::CompressedResult;
use crate::cluster::ShardWorker;
use crate::error::{Error, Result};
use crate::he::{Evaluator, HeCiphertext};
use crate::params::ParamsDigest;
use crate::registry::{Occupancy, RegistryShard};

use super::envelope::{Envelope, MessageType};
use super::headers;
use super::server::unpack_results;

/// One request/response exchange over a fresh connection. Non-200 replies
/// become [`Error::Remote`].
pub fn call(addr: &str, req: &Envelope, timeout: Option<Duration>) -> Result<Envelope> {
    let target = addr
        .to_socket_addrs()?
        .next()
        .ok_or_else(|| Error::Config(format!("cannot resolve {addr}")))?;
    let stream = match timeout {
        Some(t) => TcpStream::connect_timeout(&target, t)?,
        None => TcpStream::connect(target)?,
    };
    stream.set_nodelay(true)?;
    stream.set_read_timeout(timeout)?;
    stream.set_write_timeout(timeout)?;
    let mut writer = BufWriter::new(stream.try_clone()?);
    req.write_to(&mut writer)?;
    let resp = Envelope::read_from(&mut BufReader::new(stream))?
        .ok_or_else(|| Error::Protocol("connection closed before a reply".into()))?;
    let status: u16 = resp.require_parsed(headers::STATUS)?;
    if status != 200 {
        return Err(Error::Remote { status, message: String::from_utf8_lossy(&resp.payload).into_owned() });
    }
    Ok(resp)
}

/// Raw authentication reply.
#[derive(Debug, Clone)]
pub struct AuthReply {
    /// `(group, ciphertext bytes)` in ascending group order.
    pub results: Vec<(usize, Vec<u8>)>,
    pub occupancy: Occupancy,
}

impl AuthReply {
    pub fn payload_bytes(&self) -> usize {
        self.results.iter().map(|(_, b)| b.len()).sum()
    }
}

/// Client for the main server's public endpoints.
#[derive(Debug, Clone)]
pub struct ServiceClient {
    addr: String,
    digest: ParamsDigest,
    timeout: Option<Duration>,
}

impl ServiceClient {
    pub fn new(addr: impl Into<String>, digest: ParamsDigest) -> Self {
        Self { addr: addr.into(), digest, timeout: None }
    }

    pub fn with_timeout(mut self, t: Duration) -> Self {
        self.timeout = Some(t);
        self
    }

    fn request(&self, kind: MessageType) -> Envelope {
        Envelope::new(kind).header(headers::PARAMS_DIGEST, self.digest)
    }

    pub fn health(&self) -> Result<Envelope> {
        call(&self.addr, &self.request(MessageType::Health), self.timeout)
    }

    pub fn enroll<C: HeCiphertext>(&self, c_u: &C, user_id: &str) -> Result<usize> {
        let req = self.request(MessageType::Enroll).header(headers::USER_ID, user_id).with_payload(c_u.to_bytes());
        call(&self.addr, &req, self.timeout)?.require_parsed(headers::GLOBAL_INDEX)
    }

    pub fn authenticate<C: HeCiphertext>(&self, query: &C) -> Result<AuthReply> {
        let req = self.request(MessageType::Auth).with_payload(query.to_bytes());
        let resp = call(&self.addr, &req, self.timeout)?;
        let len: usize = resp.require_parsed(headers::OCCUPANCY_LEN)?;
        let occupancy = Occupancy::from_hex(resp.require(headers::OCCUPANCY)?, len)?;
        Ok(AuthReply { results: unpack_results(&resp)?, occupancy })
    }

    pub fn identity(&self, global: usize) -> Result<String> {
        let req = self.request(MessageType::Identity).header(headers::GLOBAL_INDEX, global);
        Ok(call(&self.addr, &req, self.timeout)?.require(headers::USER_ID)?.to_owned())
    }
}

/// Worker reached over TCP. The evaluator only parses returned ciphertexts.
pub struct RemoteWorker<E: Evaluator> {
    addr: String,
    eval: Arc<E>,
    timeout: Duration,
}

impl<E: Evaluator> RemoteWorker<E> {
    pub fn new(addr: impl Into<String>, eval: Arc<E>, timeout: Duration) -> Self {
        Self { addr: addr.into(), eval, timeout }
    }

    fn request(&self, kind: MessageType) -> Envelope {
        Envelope::new(kind).header(headers::PARAMS_DIGEST, self.eval.params().digest())
    }
}

impl<E: Evaluator> ShardWorker<E::Ciphertext> for RemoteWorker<E> {
    fn describe(&self) -> String {
        self.addr.clone()
    }

    fn score(&self, query: &E::Ciphertext) -> Result<Vec<CompressedResult<E::Ciphertext>>> {
        let req = self.request(MessageType::WorkerScore).with_payload(query.to_bytes());
        let resp = call(&self.addr, &req, Some(self.timeout))?;
        unpack_results(&resp)?
            .into_iter()
            .map(|(group, bytes)| Ok(CompressedResult { group, ciphertext: self.eval.ciphertext_from_bytes(&bytes)? }))
            .collect()
    }

    fn enroll(&self, c_u: &E::Ciphertext, global: usize) -> Result<()> {
        let req = self
            .request(MessageType::Enroll)
            .header(headers::GLOBAL_INDEX, global)
            .with_payload(c_u.to_bytes());
        call(&self.addr, &req, Some(self.timeout)).map(|_| ())
    }

    fn import(&self, _shard: RegistryShard<E::Ciphertext>) -> Result<()> {
        Err(Error::Config("bulk import writes worker shard files offline; it has no network form".into()))
    }
}
