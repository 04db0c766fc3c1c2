//! Blocking HTTP clients: the peer transport used between nodes, and a
//! small typed client for operators and scripts.

use std::time::Duration;

use por_core::ledger::{Block, CHAIN_SCHEMA};
use por_core::netsync::{PeerAddr, PeerClient, ReceiveOutcome, TransportError};
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;
use thiserror::Error;

use crate::wire::{
    ConsentRequest, ConsentResponse, ErrorBody, PeersResponse, ReceiveResponse, SessionOpened, SessionRequest,
    SyncResponse, VerdictResponse,
};

const TIMEOUT: Duration = Duration::from_secs(10);

fn http_client() -> Client {
    Client::builder().timeout(TIMEOUT).build().expect("http client builds")
}

/// Decodes a chain document into blocks without validating them.
pub fn decode_chain_blocks(bytes: &[u8]) -> Result<Vec<Block>, String> {
    #[derive(Deserialize)]
    struct Doc<'a> {
        schema: String,
        #[serde(borrow)]
        blocks: Vec<&'a RawValue>,
    }
    let doc: Doc<'_> = serde_json::from_slice(bytes).map_err(|e| e.to_string())?;
    if doc.schema != CHAIN_SCHEMA {
        return Err(format!("unexpected schema {:?}", doc.schema));
    }
    doc.blocks
        .iter()
        .map(|raw| Block::decode(raw.get().as_bytes()).map_err(|e| e.to_string()))
        .collect()
}

#[derive(Clone)]
pub struct HttpPeerClient {
    http: Client,
}

impl Default for HttpPeerClient {
    fn default() -> Self {
        HttpPeerClient { http: http_client() }
    }
}

impl PeerClient for HttpPeerClient {
    fn deliver_block(&self, peer: &PeerAddr, block: &Block) -> Result<ReceiveOutcome, TransportError> {
        let resp = self
            .http
            .post(format!("{}/blocks", peer.base_url()))
            .header("content-type", "application/json")
            .body(block.encode())
            .send()
            .map_err(|e| TransportError::Unreachable(e.to_string()))?;
        let body: ReceiveResponse = resp.json().map_err(|e| TransportError::Protocol(e.to_string()))?;
        Ok(body.outcome)
    }

    fn fetch_chain(&self, peer: &PeerAddr) -> Result<Vec<Block>, TransportError> {
        let resp = self
            .http
            .get(format!("{}/chain", peer.base_url()))
            .send()
            .map_err(|e| TransportError::Unreachable(e.to_string()))?;
        if !resp.status().is_success() {
            return Err(TransportError::Protocol(format!("status {}", resp.status())));
        }
        let bytes = resp.bytes().map_err(|e| TransportError::Unreachable(e.to_string()))?;
        decode_chain_blocks(&bytes).map_err(TransportError::Protocol)
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("request to {url} failed: {message}")]
    Transport { url: String, message: String },
    #[error("node answered {status}: {body:?}")]
    Api { status: u16, body: ErrorBody },
    #[error("unexpected response from node: {0}")]
    Protocol(String),
}

impl ClientError {
    pub fn status(&self) -> Option<u16> {
        match self {
            ClientError::Api { status, .. } => Some(*status),
            _ => None,
        }
    }
}

/// Typed access to one node's HTTP API.
pub struct NodeClient {
    base: String,
    http: Client,
}

impl NodeClient {
    pub fn new(base_url: impl Into<String>) -> Self {
        NodeClient {
            base: base_url.into().trim_end_matches('/').to_string(),
            http: http_client(),
        }
    }

    pub fn base_url(&self) -> &str {
        &self.base
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }

    fn handle(&self, url: String, resp: reqwest::Result<reqwest::blocking::Response>) -> Result<Vec<u8>, ClientError> {
        let resp = resp.map_err(|e| ClientError::Transport {
            url: url.clone(),
            message: e.to_string(),
        })?;
        let status = resp.status();
        let bytes = resp
            .bytes()
            .map_err(|e| ClientError::Transport {
                url,
                message: e.to_string(),
            })?
            .to_vec();
        if status.is_success() || status == StatusCode::ACCEPTED {
            return Ok(bytes);
        }
        let body = serde_json::from_slice(&bytes).unwrap_or_else(|_| ErrorBody {
            schema: crate::wire::ERROR_SCHEMA.into(),
            code: "unknown".into(),
            message: String::from_utf8_lossy(&bytes).into_owned(),
        });
        Err(ClientError::Api {
            status: status.as_u16(),
            body,
        })
    }

    fn get_raw(&self, path: &str) -> Result<Vec<u8>, ClientError> {
        let url = self.url(path);
        let resp = self.http.get(&url).send();
        self.handle(url, resp)
    }

    fn post_raw(&self, path: &str, body: Vec<u8>) -> Result<Vec<u8>, ClientError> {
        let url = self.url(path);
        let resp = self
            .http
            .post(&url)
            .header("content-type", "application/json")
            .body(body)
            .send();
        self.handle(url, resp)
    }

    fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, ClientError> {
        serde_json::from_slice(bytes).map_err(|e| ClientError::Protocol(e.to_string()))
    }

    fn post<B: Serialize, T: DeserializeOwned>(&self, path: &str, body: &B) -> Result<T, ClientError> {
        let bytes = serde_json::to_vec(body).expect("request serializes");
        Self::decode(&self.post_raw(path, bytes)?)
    }

    pub fn open_session(&self, request: &SessionRequest) -> Result<SessionOpened, ClientError> {
        self.post("/sessions", request)
    }

    pub fn consent(&self, session_id: &str, request: &ConsentRequest) -> Result<ConsentResponse, ClientError> {
        self.post(&format!("/sessions/{session_id}/consent"), request)
    }

    /// The chain document exactly as the node serves it.
    pub fn chain_bytes(&self) -> Result<Vec<u8>, ClientError> {
        self.get_raw("/chain")
    }

    pub fn chain_blocks(&self) -> Result<Vec<Block>, ClientError> {
        decode_chain_blocks(&self.chain_bytes()?).map_err(ClientError::Protocol)
    }

    pub fn validate(&self) -> Result<VerdictResponse, ClientError> {
        Self::decode(&self.get_raw("/chain/validate")?)
    }

    pub fn post_block(&self, block: &Block) -> Result<ReceiveResponse, ClientError> {
        Self::decode(&self.post_raw("/blocks", block.encode())?)
    }

    pub fn add_peer(&self, peer: &PeerAddr) -> Result<PeersResponse, ClientError> {
        self.post("/peers", peer)
    }

    pub fn sync(&self) -> Result<SyncResponse, ClientError> {
        Self::decode(&self.post_raw("/sync", b"{}".to_vec())?)
    }

    pub fn get_json(&self, path: &str) -> Result<serde_json::Value, ClientError> {
        Self::decode(&self.get_raw(path)?)
    }
}
