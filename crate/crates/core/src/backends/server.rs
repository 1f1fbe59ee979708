//! Serves any in-process [`LanguageModel`] over the scoring protocol, so the
//! remote client can be exercised end to end against a reference model.

use std::net::SocketAddr;
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use serde::de::DeserializeOwned;
use serde::Serialize;
use tiny_http::{Header, Method, Request, Response, Server};

use super::wire::{
    encode_row, ErrorBody, ErrorResponse, InfoResponse, LogprobsRequest, LogprobsResponse,
    TokenizeRequest, TokenizeResponse, CODE_BAD_REQUEST, CODE_NOT_FOUND, CODE_POSITION,
    CODE_TOKEN_LIMIT, CODE_UNKNOWN_TOKEN, INFO_PATH, LOGPROBS_PATH, TOKENIZE_PATH,
};
use super::{BackendError, LanguageModel};

const WORKERS: usize = 4;

pub struct ServerHandle {
    server: Arc<Server>,
    addr: SocketAddr,
    workers: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Blocks until the server stops (it only stops via [`Self::shutdown`]).
    pub fn join(mut self) {
        for worker in self.workers.drain(..) {
            let _ = worker.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        for _ in 0..self.workers.len() {
            self.server.unblock();
        }
        for worker in self.workers.drain(..) {
            let _ = worker.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Binds `addr` (use port 0 for an ephemeral port) and starts serving.
pub fn serve(
    model: Arc<dyn LanguageModel>,
    addr: &str,
) -> Result<ServerHandle, Box<dyn std::error::Error + Send + Sync>> {
    let server = Arc::new(Server::http(addr)?);
    let addr = server
        .server_addr()
        .to_ip()
        .ok_or("server is not bound to an IP address")?;
    let workers = (0..WORKERS)
        .map(|_| {
            let server = Arc::clone(&server);
            let model = Arc::clone(&model);
            thread::spawn(move || {
                while let Ok(request) = server.recv() {
                    handle(model.as_ref(), request);
                }
            })
        })
        .collect();
    Ok(ServerHandle { server, addr, workers })
}

fn handle(model: &dyn LanguageModel, mut request: Request) {
    let mut body = String::new();
    let (status, payload) = match request.as_reader().read_to_string(&mut body) {
        Err(e) => error(400, CODE_BAD_REQUEST, &e.to_string()),
        Ok(_) => route(model, request.method(), request.url(), &body),
    };
    let header = Header::from_bytes("Content-Type", "application/json").expect("static header");
    let response = Response::from_string(payload).with_status_code(status).with_header(header);
    if let Err(e) = request.respond(response) {
        log::warn!("failed to send response: {e}");
    }
}

fn route(model: &dyn LanguageModel, method: &Method, url: &str, body: &str) -> (u16, String) {
    match (method, url) {
        (Method::Get, INFO_PATH) => ok(&InfoResponse {
            vocab_size: model.vocab_size(),
            max_input_tokens: model.max_input_tokens(),
            bos_token_id: None,
        }),
        (Method::Post, TOKENIZE_PATH) => match parse::<TokenizeRequest>(body) {
            Ok(req) => match model.tokenize(&req.text) {
                Ok(tokens) => ok(&TokenizeResponse { tokens, bos_token_id: None }),
                Err(e) => backend_error(&e),
            },
            Err(resp) => resp,
        },
        (Method::Post, LOGPROBS_PATH) => match parse::<LogprobsRequest>(body) {
            Ok(req) => match model.logprobs(&req.tokens, &req.positions, &req.token_ids) {
                Ok(rows) => ok(&LogprobsResponse { logprobs: rows.iter().map(|r| encode_row(r)).collect() }),
                Err(e) => backend_error(&e),
            },
            Err(resp) => resp,
        },
        _ => error(404, CODE_NOT_FOUND, &format!("no route for {method} {url}")),
    }
}

fn parse<T: DeserializeOwned>(body: &str) -> Result<T, (u16, String)> {
    serde_json::from_str(body).map_err(|e| error(400, CODE_BAD_REQUEST, &e.to_string()))
}

fn ok<T: Serialize>(value: &T) -> (u16, String) {
    (200, serde_json::to_string(value).expect("response serializes"))
}

fn error(status: u16, code: &str, message: &str) -> (u16, String) {
    let body = ErrorResponse { error: ErrorBody { code: code.to_string(), message: message.to_string() } };
    (status, serde_json::to_string(&body).expect("error serializes"))
}

fn backend_error(e: &BackendError) -> (u16, String) {
    let message = e.to_string();
    match e {
        BackendError::TokenLimit { .. } => error(413, CODE_TOKEN_LIMIT, &message),
        BackendError::PositionOutOfRange { .. } => error(400, CODE_POSITION, &message),
        BackendError::UnknownToken { .. } => error(400, CODE_UNKNOWN_TOKEN, &message),
        _ => error(500, "internal", &message),
    }
}
