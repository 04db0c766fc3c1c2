use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path as UrlPath, State};
use axum::http::{header, HeaderValue, Method, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use por_core::bibdata::{BibDocument, BibError, SourceTag};
use por_core::conflate::conflate;
use por_core::keys::{AuthorSignature, KeyResolver};
use por_core::ledger::{append_block, validate_chain, Block, LedgerError};
use por_core::netsync::{
    adopt_longest_valid, fetch_peer_chains, receive_block, PeerAddr, PeerClient, ReceiveOutcome, RejectReason,
    SyncError,
};
use por_core::por::{open_session, AttestationSigner, NoSigner, PorError, Presigned, PublishOutcome};
use serde::de::DeserializeOwned;
use serde::Serialize;
use tower_http::cors::{AllowOrigin, CorsLayer};

use crate::client::HttpPeerClient;
use crate::wire::*;
use crate::{AppState, NodeError};

type Shared = Arc<AppState>;

pub(crate) struct ApiError {
    status: StatusCode,
    code: &'static str,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &'static str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            code,
            message: message.into(),
        }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "schema_violation", message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn internal(message: impl Into<String>) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", message)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let body = ErrorBody {
            schema: ERROR_SCHEMA.into(),
            code: self.code.into(),
            message: self.message,
        };
        (self.status, Json(body)).into_response()
    }
}

impl From<PorError> for ApiError {
    fn from(e: PorError) -> Self {
        match e {
            PorError::IllegalTransition { .. } => Self::new(StatusCode::CONFLICT, "illegal_transition", e.to_string()),
            PorError::SignatureFailure(_) => {
                Self::new(StatusCode::UNPROCESSABLE_ENTITY, "signature_failure", e.to_string())
            }
            PorError::InvalidConflate(_) => Self::new(StatusCode::BAD_REQUEST, "invalid_conflate", e.to_string()),
        }
    }
}

impl From<LedgerError> for ApiError {
    fn from(e: LedgerError) -> Self {
        match e {
            LedgerError::InvalidPayload(_) => Self::new(StatusCode::UNPROCESSABLE_ENTITY, "invalid_payload", e.to_string()),
            LedgerError::ClockSkew { .. } => Self::new(StatusCode::CONFLICT, "clock_skew", e.to_string()),
            LedgerError::Malformed(_) => Self::bad_request(e.to_string()),
            LedgerError::StorageCorrupt(_) | LedgerError::Io { .. } => Self::internal(e.to_string()),
        }
    }
}

impl From<BibError> for ApiError {
    fn from(e: BibError) -> Self {
        Self::bad_request(e.to_string())
    }
}

fn parse_body<T: DeserializeOwned>(body: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(body).map_err(|e| ApiError::bad_request(e.to_string()))
}

fn ok<T: Serialize>(value: T) -> Response {
    (StatusCode::OK, Json(value)).into_response()
}

pub(crate) fn router(state: Shared, ui_origin: &str) -> Result<Router, NodeError> {
    let origin = HeaderValue::from_str(ui_origin)
        .map_err(|_| NodeError::Config(format!("invalid UI origin {ui_origin:?}")))?;
    let cors = CorsLayer::new()
        .allow_origin(AllowOrigin::list([origin]))
        .allow_methods([Method::GET, Method::POST, Method::OPTIONS])
        .allow_headers([header::CONTENT_TYPE]);
    Ok(Router::new()
        .route("/status", get(status))
        .route("/sessions", post(create_session))
        .route("/sessions/:id", get(get_session))
        .route("/sessions/:id/consent", post(consent))
        .route("/chain", get(get_chain))
        .route("/chain/validate", get(validate))
        .route("/blocks", post(post_block))
        .route("/peers", get(list_peers).post(add_peer))
        .route("/sync", post(sync))
        .route("/authors/:id/metrics", get(author_metrics))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .layer(cors)
        .with_state(state))
}

async fn status(State(app): State<Shared>) -> Response {
    let node = app.node.lock().await;
    ok(StatusResponse {
        schema: STATUS_SCHEMA.into(),
        node_id: node.node_id().to_string(),
        length: node.chain.len(),
        head: node.chain.head().hash.clone(),
        peers: node.peers().len(),
    })
}

/// Resolves a path reference, refusing anything outside the data directory.
fn resolve_dataset_path(data_dir: &Path, path: &Path) -> Result<PathBuf, ApiError> {
    let joined = if path.is_absolute() {
        path.to_path_buf()
    } else {
        data_dir.join(path)
    };
    let resolved = joined
        .canonicalize()
        .map_err(|e| ApiError::bad_request(format!("dataset {}: {e}", path.display())))?;
    if !resolved.starts_with(data_dir) {
        return Err(ApiError::bad_request(format!(
            "dataset {} is outside the node data directory",
            path.display()
        )));
    }
    Ok(resolved)
}

fn load_dataset(data_dir: &Path, dataset: DatasetRef) -> Result<BibDocument, ApiError> {
    match dataset {
        DatasetRef::Inline(doc) => {
            if doc.schema != por_core::bibdata::BIB_SCHEMA {
                return Err(ApiError::bad_request(format!("unexpected dataset schema {:?}", doc.schema)));
            }
            Ok(doc)
        }
        DatasetRef::Path { path } => {
            let resolved = resolve_dataset_path(data_dir, &path)?;
            Ok(por_core::bibdata::load_document(resolved)?)
        }
    }
}

async fn create_session(State(app): State<Shared>, body: Bytes) -> Result<Response, ApiError> {
    let request: SessionRequest = parse_body(&body)?;
    if request.schema != SESSION_REQUEST_SCHEMA {
        return Err(ApiError::bad_request(format!("unexpected schema {:?}", request.schema)));
    }
    request.author.validate()?;
    let result = match request.conflate {
        Some(result) => {
            if !request.scopus.is_empty() || !request.wos.is_empty() {
                return Err(ApiError::bad_request("give either a conflate result or datasets, not both"));
            }
            result
        }
        None => {
            let mut publications = Vec::new();
            let mut citations = Vec::new();
            for (source, refs) in [(SourceTag::Scopus, request.scopus), (SourceTag::Wos, request.wos)] {
                for dataset in refs {
                    let doc = load_dataset(&app.data_dir, dataset)?;
                    publications.extend(doc.publications(source)?.records);
                    citations.extend(doc.citations(source)?.records);
                }
            }
            conflate(&request.author, publications, &citations)
        }
    };
    let now = app.clock.now_ms();
    let session = open_session(request.author, result, now)?;
    let audit = session.conflate().audit_report();
    let view = session.view();
    app.sessions.insert(session, now);
    Ok(ok(SessionOpened { session: view, audit }))
}

async fn get_session(State(app): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let session = app
        .sessions
        .get(&id, app.clock.now_ms())
        .ok_or_else(|| ApiError::not_found(format!("unknown session {id}")))?;
    let view = session.lock().expect("session lock poisoned").view();
    Ok(ok(view))
}

async fn consent(
    State(app): State<Shared>,
    UrlPath(id): UrlPath<String>,
    body: Bytes,
) -> Result<Response, ApiError> {
    let request: ConsentRequest = parse_body(&body)?;
    let now = app.clock.now_ms();
    let session = app
        .sessions
        .get(&id, now)
        .ok_or_else(|| ApiError::not_found(format!("unknown session {id}")))?;
    let respond = |session: &por_core::ConsentSession, block: Option<Block>, declined| {
        ok(ConsentResponse {
            schema: CONSENT_SCHEMA.into(),
            session: session.view(),
            block,
            declined,
        })
    };

    if request.stage != ConsentStage::Publish || !request.agree {
        let mut s = session.lock().expect("session lock poisoned");
        let declined = match request.stage {
            ConsentStage::SelfCitations => s.answer_self(request.agree).map(|_| None)?,
            ConsentStage::Retracted => s.answer_retracted(request.agree).map(|_| None)?,
            ConsentStage::Ack => s.acknowledge_metrics().map(|_| None)?,
            ConsentStage::Publish => match s.answer_publish(false, &NoSigner, now)? {
                PublishOutcome::Declined(view) => Some(view),
                PublishOutcome::Published(_) => unreachable!("declined publish never signs"),
            },
        };
        return Ok(respond(&s, None, declined));
    }

    let signature = request
        .signature
        .as_deref()
        .map(AuthorSignature::from_hex)
        .transpose()
        .map_err(|e| ApiError::bad_request(format!("signature: {e}")))?;
    let decided_at = request.decided_at.unwrap_or(now);

    // Node lock first, then the session; no await while the session is held.
    let mut node = app.node.lock().await;
    let (response, block, peers) = {
        let mut s = session.lock().expect("session lock poisoned");
        let author_ref = s.author().author_ref().to_string();
        let public_key = app.keys.public_key(&author_ref);
        let presigned;
        let signer: &dyn AttestationSigner = match (&signature, &public_key) {
            (Some(sig), Some(pk)) => {
                presigned = Presigned {
                    signature: sig.clone(),
                    public_key: pk,
                };
                &presigned
            }
            (Some(_), None) => &NoSigner,
            (None, _) => match app.keys.signing_key(&author_ref) {
                Some(key) => key,
                None => &NoSigner,
            },
        };
        // Work on a copy so a failed append leaves the session answerable.
        let mut draft = s.clone();
        let payload = match draft.answer_publish(true, signer, decided_at)? {
            PublishOutcome::Published(payload) => payload,
            PublishOutcome::Declined(_) => unreachable!("affirmative publish"),
        };
        let chain = append_block(&node.chain, payload, &author_ref, app.clock.as_ref(), &app.keys)?;
        chain.persist(&app.chain_path)?;
        node.chain = chain;
        *s = draft;
        let block = node.chain.head().clone();
        let peers: Vec<PeerAddr> = node.peers().iter().cloned().collect();
        (respond(&s, Some(block.clone()), None), block, peers)
    };
    drop(node);
    spawn_announce(block, peers);
    Ok(response)
}

fn spawn_announce(block: Block, peers: Vec<PeerAddr>) {
    if peers.is_empty() {
        return;
    }
    tokio::task::spawn_blocking(move || {
        let client = HttpPeerClient::default();
        for peer in &peers {
            match client.deliver_block(peer, &block) {
                Ok(outcome) => tracing::debug!(%peer, ?outcome, index = block.index, "announced"),
                Err(e) => tracing::warn!(%peer, error = %e, "announce failed"),
            }
        }
    });
}

async fn get_chain(State(app): State<Shared>) -> Response {
    let bytes = app.node.lock().await.chain.encode();
    ([(header::CONTENT_TYPE, "application/json")], bytes).into_response()
}

async fn validate(State(app): State<Shared>) -> Response {
    let node = app.node.lock().await;
    ok(VerdictResponse {
        schema: VERDICT_SCHEMA.into(),
        length: node.chain.len(),
        verdict: validate_chain(node.chain.blocks(), &app.keys),
    })
}

async fn post_block(State(app): State<Shared>, body: Bytes) -> Result<Response, ApiError> {
    let block = Block::decode(&body)?;
    let mut node = app.node.lock().await;
    let previous = node.chain.clone();
    let outcome = receive_block(&mut node, block.clone(), &app.keys);
    let mut forward = None;
    if outcome == ReceiveOutcome::Accepted {
        if let Err(e) = node.chain.persist(&app.chain_path) {
            node.chain = previous;
            return Err(e.into());
        }
        forward = Some(node.peers().iter().cloned().collect::<Vec<_>>());
    }
    drop(node);
    let status = match outcome {
        ReceiveOutcome::Accepted | ReceiveOutcome::Rejected(RejectReason::Duplicate) => StatusCode::OK,
        ReceiveOutcome::NeedSync => {
            let app = Arc::clone(&app);
            tokio::spawn(async move {
                if let Err(e) = run_sync(&app).await {
                    tracing::warn!(error = %e.message, "background sync failed");
                }
            });
            StatusCode::ACCEPTED
        }
        ReceiveOutcome::Rejected(_) => StatusCode::CONFLICT,
    };
    if let Some(peers) = forward {
        spawn_announce(block, peers);
    }
    Ok((
        status,
        Json(ReceiveResponse {
            schema: RECEIVE_SCHEMA.into(),
            outcome,
        }),
    )
        .into_response())
}

fn peers_response(peers: impl IntoIterator<Item = PeerAddr>) -> Response {
    ok(PeersResponse {
        schema: PEERS_SCHEMA.into(),
        peers: peers.into_iter().collect(),
    })
}

async fn list_peers(State(app): State<Shared>) -> Response {
    let node = app.node.lock().await;
    peers_response(node.peers().iter().cloned())
}

async fn add_peer(State(app): State<Shared>, body: Bytes) -> Result<Response, ApiError> {
    let raw: PeerAddr = parse_body(&body)?;
    let peer = PeerAddr::new(raw.host, raw.port).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let mut node = app.node.lock().await;
    match node.add_peer(peer) {
        Ok(_) => Ok(peers_response(node.peers().iter().cloned())),
        Err(e @ SyncError::SelfPeer) => Err(ApiError::new(StatusCode::BAD_REQUEST, "self_peer", e.to_string())),
        Err(e) => Err(ApiError::bad_request(e.to_string())),
    }
}

async fn run_sync(app: &Shared) -> Result<SyncResponse, ApiError> {
    let peers: Vec<PeerAddr> = app.node.lock().await.peers().iter().cloned().collect();
    // Fetch without holding the chain lock; adoption re-checks against the current head.
    let candidates = tokio::task::spawn_blocking(move || fetch_peer_chains(&peers, &HttpPeerClient::default()))
        .await
        .map_err(|e| ApiError::internal(e.to_string()))?;
    let mut node = app.node.lock().await;
    let previous = node.chain.clone();
    let report = adopt_longest_valid(&mut node, candidates, &app.keys);
    if report.adopted_from.is_some() {
        if let Err(e) = node.chain.persist(&app.chain_path) {
            node.chain = previous;
            return Err(e.into());
        }
    }
    Ok(SyncResponse {
        schema: SYNC_SCHEMA.into(),
        report,
    })
}

async fn sync(State(app): State<Shared>) -> Result<Response, ApiError> {
    Ok(ok(run_sync(&app).await?))
}

async fn author_metrics(State(app): State<Shared>, UrlPath(id): UrlPath<String>) -> Result<Response, ApiError> {
    let node = app.node.lock().await;
    let block = node
        .chain
        .latest_for_author(&id)
        .ok_or_else(|| ApiError::not_found(format!("no published metrics for {id}")))?;
    Ok(ok(AuthorMetricsResponse {
        schema: METRICS_SCHEMA.into(),
        author_ref: id.clone(),
        block_index: block.index,
        block_hash: block.hash.clone(),
        timestamp: block.timestamp,
        metrics: *block.metrics().expect("non-genesis blocks carry a payload"),
    }))
}
