//! JSON-over-HTTP transport for inference-only backends.
//!
//! `GET /info` returns `{version, info, vocab}`. `POST /score` takes
//! `{version, queries}` and answers `{version, log_probs}`; failures come
//! back as `{version, error}` with a 4xx status.

use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::vocab::Vocab;
use super::{BackendError, BackendInfo, GradBundle, MaskedLm, MaskedQuery};

pub const PROTOCOL_VERSION: u32 = 1;

const EXCERPT_LEN: usize = 200;

#[derive(Serialize, Deserialize)]
struct ScoreRequest {
    version: u32,
    queries: Vec<MaskedQuery>,
}

#[derive(Serialize, Deserialize)]
struct ScoreResponse {
    version: u32,
    #[serde(default)]
    log_probs: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    error: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct InfoResponse {
    version: u32,
    info: BackendInfo,
    vocab: Vocab,
}

fn excerpt(raw: &str) -> String {
    raw.chars().take(EXCERPT_LEN).collect()
}

fn protocol(message: impl Into<String>, raw: &str) -> BackendError {
    BackendError::Protocol {
        message: message.into(),
        excerpt: excerpt(raw),
    }
}

/// Serves any [`MaskedLm`] over HTTP on a background thread.
pub struct BackendServer {
    server: Arc<tiny_http::Server>,
    addr: String,
    handle: Option<JoinHandle<()>>,
}

impl BackendServer {
    /// Binds `addr` (use port 0 for an ephemeral port) and starts serving.
    pub fn start(backend: Arc<dyn MaskedLm>, addr: &str) -> Result<Self, BackendError> {
        let server = tiny_http::Server::http(addr)
            .map_err(|e| BackendError::Transport(format!("cannot bind {addr}: {e}")))?;
        let bound = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| BackendError::Transport("server bound to a non-IP address".into()))?
            .to_string();
        let server = Arc::new(server);
        let worker = server.clone();
        let handle = std::thread::spawn(move || {
            for request in worker.incoming_requests() {
                handle_request(backend.as_ref(), request);
            }
        });
        Ok(BackendServer {
            server,
            addr: bound,
            handle: Some(handle),
        })
    }

    /// `host:port` actually bound.
    pub fn addr(&self) -> &str {
        &self.addr
    }

    /// Blocks until the server stops; it only stops via [`Self::shutdown`].
    pub fn wait(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        self.server.unblock();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for BackendServer {
    fn drop(&mut self) {
        self.stop();
    }
}

fn json_response(status: u16, body: String) -> tiny_http::Response<std::io::Cursor<Vec<u8>>> {
    let header = tiny_http::Header::from_bytes("Content-Type", "application/json")
        .expect("static header");
    tiny_http::Response::from_string(body)
        .with_status_code(status)
        .with_header(header)
}

fn error_body(message: String) -> String {
    serde_json::to_string(&ScoreResponse {
        version: PROTOCOL_VERSION,
        log_probs: None,
        error: Some(message),
    })
    .expect("error serializes")
}

fn handle_request(backend: &dyn MaskedLm, mut request: tiny_http::Request) {
    use tiny_http::Method;
    let (status, body) = match (request.method(), request.url()) {
        (Method::Get, "/info") => {
            let body = InfoResponse {
                version: PROTOCOL_VERSION,
                info: backend.info().clone(),
                vocab: backend.vocab().clone(),
            };
            (200, serde_json::to_string(&body).expect("info serializes"))
        }
        (Method::Post, "/score") => {
            let mut raw = String::new();
            match request.as_reader().read_to_string(&mut raw) {
                Err(e) => (400, error_body(format!("unreadable body: {e}"))),
                Ok(_) => score(backend, &raw),
            }
        }
        _ => (404, error_body("unknown endpoint".into())),
    };
    let _ = request.respond(json_response(status, body));
}

fn score(backend: &dyn MaskedLm, raw: &str) -> (u16, String) {
    let req: ScoreRequest = match serde_json::from_str(raw) {
        Ok(r) => r,
        Err(e) => return (400, error_body(format!("malformed request: {e}"))),
    };
    if req.version != PROTOCOL_VERSION {
        return (
            400,
            error_body(format!(
                "protocol version mismatch: server {PROTOCOL_VERSION}, client {}",
                req.version
            )),
        );
    }
    match backend.forward_log_probs(&req.queries) {
        Ok(log_probs) => {
            let body = ScoreResponse {
                version: PROTOCOL_VERSION,
                log_probs: Some(log_probs),
                error: None,
            };
            (200, serde_json::to_string(&body).expect("response serializes"))
        }
        Err(e) => (422, error_body(e.to_string())),
    }
}

fn agent() -> ureq::Agent {
    ureq::Agent::config_builder()
        .http_status_as_error(false)
        .timeout_global(Some(Duration::from_secs(120)))
        .build()
        .into()
}

fn url(addr: &str, path: &str) -> String {
    if addr.starts_with("http://") || addr.starts_with("https://") {
        format!("{}{path}", addr.trim_end_matches('/'))
    } else {
        format!("http://{addr}{path}")
    }
}

fn read_body(resp: &mut ureq::http::Response<ureq::Body>) -> Result<String, BackendError> {
    resp.body_mut()
        .read_to_string()
        .map_err(|e| BackendError::Transport(e.to_string()))
}

/// Scores a batch against a server at `addr` without fetching its metadata.
pub fn remote_score(addr: &str, queries: &[MaskedQuery]) -> Result<Vec<Vec<f64>>, BackendError> {
    score_with(&agent(), addr, queries)
}

fn score_with(
    agent: &ureq::Agent,
    addr: &str,
    queries: &[MaskedQuery],
) -> Result<Vec<Vec<f64>>, BackendError> {
    if queries.is_empty() {
        return Ok(Vec::new());
    }
    let body = serde_json::to_string(&ScoreRequest {
        version: PROTOCOL_VERSION,
        queries: queries.to_vec(),
    })
    .expect("request serializes");
    let mut resp = agent
        .post(&url(addr, "/score"))
        .header("Content-Type", "application/json")
        .send(body)
        .map_err(|e| BackendError::Transport(e.to_string()))?;
    let status = resp.status().as_u16();
    let raw = read_body(&mut resp)?;
    let parsed: ScoreResponse = serde_json::from_str(&raw)
        .map_err(|e| protocol(format!("malformed response (HTTP {status}): {e}"), &raw))?;
    if parsed.version != PROTOCOL_VERSION {
        return Err(protocol(
            format!(
                "protocol version mismatch: client {PROTOCOL_VERSION}, server {}",
                parsed.version
            ),
            &raw,
        ));
    }
    if let Some(message) = parsed.error {
        return Err(if status == 400 {
            protocol(message, &raw)
        } else {
            BackendError::Remote(message)
        });
    }
    let log_probs = parsed
        .log_probs
        .ok_or_else(|| protocol("response carries neither log_probs nor error", &raw))?;
    if log_probs.len() != queries.len()
        || log_probs
            .iter()
            .zip(queries)
            .any(|(lp, q)| lp.len() != q.masked_positions.len())
    {
        return Err(protocol("response shape does not match the request", &raw));
    }
    if log_probs.iter().flatten().any(|v| !v.is_finite()) {
        return Err(protocol("non-finite log-probability in response", &raw));
    }
    Ok(log_probs)
}

/// Client for a [`BackendServer`]. Inference only.
#[derive(Debug, Clone)]
pub struct RemoteBackend {
    addr: String,
    info: BackendInfo,
    vocab: Vocab,
    agent: ureq::Agent,
}

impl RemoteBackend {
    /// Connects and fetches the server's metadata and vocabulary.
    pub fn connect(addr: &str) -> Result<Self, BackendError> {
        let agent = agent();
        let mut resp = agent
            .get(&url(addr, "/info"))
            .call()
            .map_err(|e| BackendError::Transport(e.to_string()))?;
        let raw = read_body(&mut resp)?;
        let parsed: InfoResponse = serde_json::from_str(&raw)
            .map_err(|e| protocol(format!("malformed info response: {e}"), &raw))?;
        if parsed.version != PROTOCOL_VERSION {
            return Err(protocol(
                format!(
                    "protocol version mismatch: client {PROTOCOL_VERSION}, server {}",
                    parsed.version
                ),
                &raw,
            ));
        }
        Ok(RemoteBackend {
            addr: addr.to_string(),
            info: parsed.info,
            vocab: parsed.vocab,
            agent,
        })
    }
}

impl MaskedLm for RemoteBackend {
    fn info(&self) -> &BackendInfo {
        &self.info
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn forward_log_probs(&self, queries: &[MaskedQuery]) -> Result<Vec<Vec<f64>>, BackendError> {
        super::validate_batch(queries, self.info.embedding_dim)?;
        score_with(&self.agent, &self.addr, queries)
    }

    fn forward_with_prompt_grads(
        &self,
        _queries: &[MaskedQuery],
        _upstream_weights: &[Vec<f64>],
    ) -> Result<Vec<GradBundle>, BackendError> {
        Err(BackendError::GradientsUnsupported(self.info.identifier.clone()))
    }

    fn supports_gradients(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::UniformBackend;

    fn serve() -> BackendServer {
        let b: Arc<dyn MaskedLm> = Arc::new(UniformBackend::new(10, 4).unwrap());
        BackendServer::start(b, "127.0.0.1:0").unwrap()
    }

    fn query() -> MaskedQuery {
        MaskedQuery {
            tokens: vec![3, 4, 5],
            masked_positions: vec![0, 2],
            target_ids: vec![3, 5],
            prompt_injections: vec![],
        }
    }

    fn canned_server(status: u16, body: &'static str) -> (String, JoinHandle<()>) {
        let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
        let addr = server.server_addr().to_ip().unwrap().to_string();
        let h = std::thread::spawn(move || {
            if let Ok(req) = server.recv() {
                let _ = req.respond(json_response(status, body.to_string()));
            }
        });
        (addr, h)
    }

    #[test]
    fn echoes_uniform_backend() {
        let server = serve();
        let remote = RemoteBackend::connect(server.addr()).unwrap();
        assert_eq!(remote.info().vocab_size, 10);
        let out = remote.forward_log_probs(&[query()]).unwrap();
        for v in &out[0] {
            assert!((v + 10f64.ln()).abs() < 1e-12);
        }
        assert!(matches!(
            remote.forward_with_prompt_grads(&[query()], &[vec![1.0, 1.0]]),
            Err(BackendError::GradientsUnsupported(_))
        ));
        server.shutdown();
    }

    #[test]
    fn empty_batch_is_empty() {
        let server = serve();
        assert!(remote_score(server.addr(), &[]).unwrap().is_empty());
    }

    #[test]
    fn malformed_payload_is_protocol_error() {
        let (addr, h) = canned_server(200, "{\"version\": 1, \"log_probs\": \"oops\"}");
        match remote_score(&addr, &[query()]) {
            Err(BackendError::Protocol { excerpt, .. }) => assert!(excerpt.contains("oops")),
            other => panic!("expected protocol error, got {other:?}"),
        }
        h.join().unwrap();
    }

    #[test]
    fn wrong_shape_is_protocol_error() {
        let (addr, h) = canned_server(200, "{\"version\": 1, \"log_probs\": [[-1.0]]}");
        assert!(matches!(
            remote_score(&addr, &[query()]),
            Err(BackendError::Protocol { .. })
        ));
        h.join().unwrap();
    }

    #[test]
    fn version_mismatch_is_protocol_error() {
        let (addr, h) = canned_server(200, "{\"version\": 99, \"log_probs\": [[-1.0, -1.0]]}");
        assert!(matches!(
            remote_score(&addr, &[query()]),
            Err(BackendError::Protocol { .. })
        ));
        h.join().unwrap();

        let server = serve();
        let agent = agent();
        let mut resp = agent
            .post(&url(server.addr(), "/score"))
            .send("{\"version\": 7, \"queries\": []}")
            .unwrap();
        assert_eq!(resp.status().as_u16(), 400);
        assert!(read_body(&mut resp).unwrap().contains("version mismatch"));
    }

    #[test]
    fn server_reports_backend_errors() {
        let server = serve();
        let mut bad = query();
        bad.masked_positions = vec![9, 0];
        assert!(matches!(
            remote_score(server.addr(), &[bad]),
            Err(BackendError::Remote(_))
        ));
    }
}
