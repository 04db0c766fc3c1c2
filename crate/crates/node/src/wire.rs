//! Request and response documents of the node HTTP API.

use std::path::PathBuf;

use por_core::bibdata::{AuthorProfile, BibDocument};
use por_core::conflate::{AuditReport, ConflateResult, UnifiedMetrics};
use por_core::ledger::{Block, Verdict};
use por_core::netsync::{PeerAddr, ReceiveOutcome, SyncReport};
use por_core::por::{MetricsView, SessionView};
use por_core::Millis;
use serde::{Deserialize, Serialize};

pub const SESSION_REQUEST_SCHEMA: &str = "por.session-request.v1";
pub const CONSENT_SCHEMA: &str = "por.consent.v1";
pub const VERDICT_SCHEMA: &str = "por.verdict.v1";
pub const RECEIVE_SCHEMA: &str = "por.receive.v1";
pub const PEERS_SCHEMA: &str = "por.peers.v1";
pub const SYNC_SCHEMA: &str = "por.sync.v1";
pub const METRICS_SCHEMA: &str = "por.metrics.v1";
pub const ERROR_SCHEMA: &str = "por.error.v1";
pub const STATUS_SCHEMA: &str = "por.status.v1";

/// A bibliographic document given inline or as a path under the node's data directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DatasetRef {
    Path { path: PathBuf },
    Inline(BibDocument),
}

/// Body of `POST /sessions`. Either a precomputed conflate result, or the
/// source documents to conflate on the node.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionRequest {
    pub schema: String,
    pub author: AuthorProfile,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub conflate: Option<ConflateResult>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub scopus: Vec<DatasetRef>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub wos: Vec<DatasetRef>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConsentStage {
    #[serde(rename = "self")]
    SelfCitations,
    Retracted,
    Ack,
    Publish,
}

/// Body of `POST /sessions/{id}/consent`.
///
/// For `publish`, a client holding the author key may send `signature`
/// (over the canonical attestation) together with the `decided_at` it
/// signed. Without them the node signs with its keyring.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsentRequest {
    pub stage: ConsentStage,
    #[serde(default)]
    pub agree: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub signature: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decided_at: Option<Millis>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConsentResponse {
    pub schema: String,
    pub session: SessionView,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub block: Option<Block>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declined: Option<MetricsView>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SessionOpened {
    #[serde(flatten)]
    pub session: SessionView,
    pub audit: AuditReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerdictResponse {
    pub schema: String,
    pub length: usize,
    #[serde(flatten)]
    pub verdict: Verdict,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReceiveResponse {
    pub schema: String,
    #[serde(flatten)]
    pub outcome: ReceiveOutcome,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PeersResponse {
    pub schema: String,
    pub peers: Vec<PeerAddr>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SyncResponse {
    pub schema: String,
    #[serde(flatten)]
    pub report: SyncReport,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AuthorMetricsResponse {
    pub schema: String,
    pub author_ref: String,
    pub block_index: u64,
    pub block_hash: String,
    pub timestamp: Millis,
    pub metrics: UnifiedMetrics,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StatusResponse {
    pub schema: String,
    pub node_id: String,
    pub length: usize,
    pub head: String,
    pub peers: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ErrorBody {
    pub schema: String,
    pub code: String,
    pub message: String,
}
