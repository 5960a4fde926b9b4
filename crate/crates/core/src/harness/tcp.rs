//! TCP transport: one blocking connection per client, length-prefixed frames.
//!
//! Session: each client sends `Hello`; once all `K` are registered the server
//! runs every seed as `Begin`, then per round `Global` -> `Client`, then
//! `Finish`. Both sides build the same [`Problem`] from the shared config, so
//! results match the in-process transport bit for bit.

use std::collections::BTreeMap;
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::time::Duration;

use super::config::ExperimentConfig;
use super::runner::{build_problem, load_dataset, run_client_step, run_with_transport, Problem, RoundTransport, RunOutput};
use super::wire::{read_msg, write_msg, WireMsg};
use crate::error::{Error, Result};
use crate::strategy::{ClientMsg, ClientState, GlobalMsg};

pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(30);

fn transport_err(msg: impl Into<String>) -> Error {
    Error::Transport(msg.into())
}

struct Connections {
    streams: Vec<TcpStream>,
}

fn send(stream: &mut TcpStream, msg: &WireMsg, k: usize) -> Result<()> {
    write_msg(stream, msg).map_err(|e| transport_err(format!("send to client {k}: {e}")))
}

impl RoundTransport for Connections {
    fn begin(&mut self, _cfg: &ExperimentConfig, _problem: &Problem, seed_index: usize) -> Result<()> {
        for (k, s) in self.streams.iter_mut().enumerate() {
            send(s, &WireMsg::Begin { seed_index: seed_index as u32 }, k)?;
        }
        Ok(())
    }

    fn exchange(&mut self, _cfg: &ExperimentConfig, _problem: &Problem, msg: &GlobalMsg) -> Result<Vec<ClientMsg>> {
        let frame = WireMsg::Global(msg.clone());
        for (k, s) in self.streams.iter_mut().enumerate() {
            send(s, &frame, k)?;
        }
        let mut replies = Vec::with_capacity(self.streams.len());
        for (k, s) in self.streams.iter_mut().enumerate() {
            match read_msg(s) {
                Ok(Some(WireMsg::Client(reply))) if reply.client_id as usize == k && reply.round == msg.round => {
                    replies.push(reply)
                }
                Ok(Some(other)) => {
                    return Err(transport_err(format!("client {k} sent an unexpected message: {other:?}")))
                }
                Ok(None) => return Err(transport_err(format!("client {k} closed the connection"))),
                Err(e) => {
                    log::error!("client {k}: {e}");
                    return Err(transport_err(format!("client {k}: {e}")));
                }
            }
        }
        Ok(replies)
    }

    fn finish(&mut self) -> Result<()> {
        for (k, s) in self.streams.iter_mut().enumerate() {
            send(s, &WireMsg::Finish, k)?;
        }
        Ok(())
    }
}

/// Accepts clients until all `K` ids have registered. Connections with
/// unknown or duplicate ids, or a shard size that disagrees with the
/// server's, are closed.
fn accept_clients(listener: &TcpListener, expected_sizes: &[usize], timeout: Duration) -> Result<Vec<TcpStream>> {
    let k_count = expected_sizes.len();
    let mut registered: BTreeMap<usize, TcpStream> = BTreeMap::new();
    while registered.len() < k_count {
        let (mut stream, peer) = listener.accept()?;
        stream.set_read_timeout(Some(timeout))?;
        stream.set_write_timeout(Some(timeout))?;
        stream.set_nodelay(true)?;
        match read_msg(&mut stream) {
            Ok(Some(WireMsg::Hello { client_id, n_k })) => {
                let id = client_id as usize;
                if id >= k_count {
                    log::error!("{peer}: client id {id} out of range 0..{k_count}; closing");
                } else if registered.contains_key(&id) {
                    log::error!("{peer}: duplicate client id {id}; closing");
                } else if n_k as usize != expected_sizes[id] {
                    log::error!(
                        "{peer}: client {id} reports {n_k} examples, expected {}; closing",
                        expected_sizes[id]
                    );
                } else {
                    log::info!("{peer}: registered client {id}");
                    registered.insert(id, stream);
                }
            }
            Ok(other) => log::error!("{peer}: expected Hello, got {other:?}; closing"),
            Err(e) => log::error!("{peer}: malformed registration ({e}); closing"),
        }
    }
    Ok(registered.into_values().collect())
}

/// Serves the experiment on `listener`, waiting for all clients to connect.
pub fn tcp_serve_on(cfg: &ExperimentConfig, listener: TcpListener, timeout: Duration) -> Result<RunOutput> {
    cfg.validate()?;
    let dataset = load_dataset(&cfg.dataset)?;
    let first = build_problem(cfg, dataset.as_ref(), 0)?;
    log::info!("waiting for {} clients on {}", first.clients(), listener.local_addr()?);
    let streams = accept_clients(&listener, &first.client_sizes(), timeout)?;
    let mut conns = Connections { streams };
    run_with_transport(cfg, &mut conns)
}

pub fn tcp_serve(cfg: &ExperimentConfig, addr: impl ToSocketAddrs) -> Result<RunOutput> {
    tcp_serve_on(cfg, TcpListener::bind(addr)?, DEFAULT_IDLE_TIMEOUT)
}

/// Runs client `client_id` against a server until it closes the session.
pub fn tcp_client(cfg: &ExperimentConfig, addr: impl ToSocketAddrs, client_id: usize, timeout: Duration) -> Result<()> {
    cfg.validate()?;
    let dataset = load_dataset(&cfg.dataset)?;
    let mut problem = build_problem(cfg, dataset.as_ref(), 0)?;
    if client_id >= problem.clients() {
        return Err(Error::config(format!(
            "client id {client_id} out of range 0..{}",
            problem.clients()
        )));
    }
    let mut stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    stream.set_write_timeout(Some(timeout))?;
    write_msg(
        &mut stream,
        &WireMsg::Hello {
            client_id: client_id as u32,
            n_k: problem.losses[client_id].len() as u64,
        },
    )?;
    let mut state: Option<ClientState> = None;
    loop {
        match read_msg(&mut stream)? {
            None => return Ok(()),
            Some(WireMsg::Begin { seed_index }) => {
                problem = build_problem(cfg, dataset.as_ref(), seed_index as usize)?;
                state = Some(ClientState::new(client_id, &problem.init));
            }
            Some(WireMsg::Global(msg)) => {
                let st = state
                    .as_ref()
                    .ok_or_else(|| transport_err("received a round before Begin"))?;
                let (next, reply) = run_client_step(cfg, &problem, client_id, st, &msg)?;
                state = Some(next);
                write_msg(&mut stream, &WireMsg::Client(reply))?;
            }
            Some(WireMsg::Finish) => state = None,
            Some(other) => return Err(transport_err(format!("unexpected message from server: {other:?}"))),
        }
    }
}
