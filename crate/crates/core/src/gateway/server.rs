//! Serves any [`Oracle`] over the `/v1` protocol.
//!
//! Malformed bodies answer 400, shape errors 422, other failures 500.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::JoinHandle;

use tiny_http::{Header, Method, Request, Response, Server};

use super::wire::{ActivationsRequest, ActivationsResponse, TensorBody, TensorPayload};
use super::Oracle;
use crate::error::{Error, Result};

/// A running server. Dropping it stops accepting requests and joins the accept loop.
pub struct ServerHandle {
    addr: SocketAddr,
    server: Arc<Server>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn uri(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the accept loop ends.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.server.unblock();
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Binds `addr` (port 0 picks a free port) and answers on a thread per request.
pub fn serve(oracle: Arc<dyn Oracle>, addr: &str) -> Result<ServerHandle> {
    let server = Server::http(addr).map_err(|e| Error::Unreachable(format!("bind {addr}: {e}")))?;
    let bound = server
        .server_addr()
        .to_ip()
        .ok_or_else(|| Error::Unreachable(format!("{addr} is not an ip address")))?;
    let server = Arc::new(server);
    let accept = Arc::clone(&server);
    let thread = std::thread::spawn(move || {
        for req in accept.incoming_requests() {
            let oracle = Arc::clone(&oracle);
            std::thread::spawn(move || handle(oracle.as_ref(), req));
        }
    });
    log::info!("serving oracle on http://{bound}");
    Ok(ServerHandle {
        addr: bound,
        server,
        thread: Some(thread),
    })
}

struct Reply {
    status: u16,
    body: String,
}

impl Reply {
    fn json<T: serde::Serialize>(v: &T) -> Reply {
        Reply {
            status: 200,
            body: serde_json::to_string(v).expect("reply serializes"),
        }
    }

    fn error(status: u16, msg: impl std::fmt::Display) -> Reply {
        Reply {
            status,
            body: serde_json::json!({ "error": msg.to_string() }).to_string(),
        }
    }

    fn from_error(e: Error) -> Reply {
        match e {
            Error::ShapeMismatch(_) | Error::LengthMismatch { .. } | Error::DimensionMismatch(_) => {
                Reply::error(422, e)
            }
            Error::Protocol(_) => Reply::error(400, e),
            _ => Reply::error(500, e),
        }
    }
}

fn handle(oracle: &dyn Oracle, mut req: Request) {
    let mut body = String::new();
    let reply = match req.as_reader().read_to_string(&mut body) {
        Err(e) => Reply::error(400, format!("unreadable body: {e}")),
        Ok(_) => route(oracle, req.method(), req.url(), &body),
    };
    log::debug!("{} {} -> {}", req.method(), req.url(), reply.status);
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    let resp = Response::from_string(reply.body)
        .with_status_code(reply.status)
        .with_header(header);
    if let Err(e) = req.respond(resp) {
        log::warn!("failed to send response: {e}");
    }
}

fn parse<T: serde::de::DeserializeOwned>(body: &str) -> std::result::Result<T, Reply> {
    serde_json::from_str(body).map_err(|e| Reply::error(400, format!("malformed request: {e}")))
}

fn route(oracle: &dyn Oracle, method: &Method, url: &str, body: &str) -> Reply {
    let path = url.split('?').next().unwrap_or(url);
    let result = match (method, path) {
        (Method::Get, "/v1/meta") => return Reply::json(oracle.meta()),
        (Method::Post, "/v1/logits") => parse::<TensorBody>(body).map(|req| {
            req.tensor.decode().and_then(|t| oracle.logits(&t)).map(|t| {
                Reply::json(&TensorBody {
                    tensor: TensorPayload::encode(&t),
                })
            })
        }),
        (Method::Post, "/v1/activations") => parse::<ActivationsRequest>(body).map(|req| {
            req.tensor
                .decode()
                .and_then(|t| oracle.activations(&t, &req.depths))
                .map(|acts| {
                    Reply::json(&ActivationsResponse {
                        tensors: acts.iter().map(TensorPayload::encode).collect(),
                    })
                })
        }),
        _ => return Reply::error(404, format!("no route for {method} {path}")),
    };
    match result {
        Ok(Ok(r)) => r,
        Ok(Err(e)) => Reply::from_error(e),
        Err(r) => r,
    }
}
