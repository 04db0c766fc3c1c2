//! Proof-of-Reference consent sessions.
//!
//! A session walks the author through three decisions in a fixed order:
//! whether self citations count, whether retracted citations count, and
//! whether the resulting metrics are published. Only the last one, when
//! affirmative, yields a [`BlockPayload`] for the ledger.
//!
//! ```text
//! AwaitSelf -> AwaitRetracted -> MetricsReady -> AwaitPublish -> Published
//!                                                            \-> Declined
//! ```
//!
//! A payload is admissible iff its attestation signature verifies, the
//! evidence digest recomputes, and the metrics recompute from the embedded
//! evidence under the attested flags. See [`verify_attestation`].
//!
//! # Canonical attestation encoding
//!
//! The signed bytes are UTF-8 text, one `name:value` line per field, each
//! terminated by `\n`, in exactly this order:
//!
//! ```text
//! por.attestation.v1
//! include_self:<0|1>
//! include_retracted:<0|1>
//! publish:<0|1>
//! dataset_digest:<64 lowercase hex>
//! decided_at:<decimal milliseconds since epoch>
//! ```

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bibdata::{AuthorProfile, Doi};
use crate::clock::Millis;
use crate::conflate::{compute_metrics, h_index, Breakdown, CitationKey, ConflateResult, InvariantViolation, UnifiedMetrics};
use crate::keys::{AuthorKey, AuthorPublicKey, AuthorSignature};
use crate::ledger::fingerprint;

pub const ATTESTATION_HEADER: &str = "por.attestation.v1";
pub const EVIDENCE_DOMAIN: &[u8] = b"por.evidence.v1\n";
pub const SESSION_SCHEMA: &str = "por.session.v1";
pub const DEFAULT_IDLE_TIMEOUT_MS: Millis = 60 * 60 * 1000;

#[derive(Debug, Error)]
pub enum PorError {
    #[error("{op} is not allowed in state {from}")]
    IllegalTransition { from: SessionState, op: &'static str },
    #[error("attestation could not be signed: {0}")]
    SignatureFailure(String),
    #[error(transparent)]
    InvalidConflate(#[from] InvariantViolation),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum SessionState {
    AwaitSelf,
    AwaitRetracted,
    MetricsReady,
    AwaitPublish,
    Published,
    Declined,
}

impl SessionState {
    pub fn is_terminal(self) -> bool {
        matches!(self, SessionState::Published | SessionState::Declined)
    }
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SessionState::AwaitSelf => "AWAIT_SELF",
            SessionState::AwaitRetracted => "AWAIT_RETRACTED",
            SessionState::MetricsReady => "METRICS_READY",
            SessionState::AwaitPublish => "AWAIT_PUBLISH",
            SessionState::Published => "PUBLISHED",
            SessionState::Declined => "DECLINED",
        };
        f.write_str(s)
    }
}

/// One kept citation with its classification, as embedded in a block.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CitationEvidence {
    pub cited_doi: Doi,
    pub citing_doi: Doi,
    pub self_citation: bool,
    pub retracted: bool,
}

impl CitationEvidence {
    pub fn key(&self) -> CitationKey {
        CitationKey {
            cited_doi: self.cited_doi.clone(),
            citing_doi: self.citing_doi.clone(),
        }
    }
}

/// Sorted publication DOIs and classified citation keys: enough for any
/// peer to recompute the metrics without the full records.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetEvidence {
    pub publications: Vec<Doi>,
    pub citations: Vec<CitationEvidence>,
}

impl DatasetEvidence {
    pub fn from_conflate(result: &ConflateResult) -> Self {
        let publications = result.unified_pub_dois.iter().cloned().collect();
        let citations = result
            .citations_by_pub
            .values()
            .flatten()
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(|key| CitationEvidence {
                cited_doi: key.cited_doi.clone(),
                citing_doi: key.citing_doi.clone(),
                self_citation: result.self_citation_keys.contains(key),
                retracted: result.retracted_citation_keys.contains(key),
            })
            .collect();
        DatasetEvidence { publications, citations }
    }

    /// Strictly sorted, duplicate-free, and every citation targets a listed publication.
    pub fn is_well_formed(&self) -> bool {
        let pubs_sorted = self.publications.windows(2).all(|w| w[0] < w[1]);
        let cites_sorted = self.citations.windows(2).all(|w| w[0].key() < w[1].key());
        let pubs: BTreeSet<&Doi> = self.publications.iter().collect();
        pubs_sorted && cites_sorted && self.citations.iter().all(|c| pubs.contains(&c.cited_doi))
    }

    pub fn digest(&self) -> String {
        let mut bytes = EVIDENCE_DOMAIN.to_vec();
        bytes.extend(serde_json::to_vec(self).expect("evidence serializes"));
        fingerprint(&bytes)
    }

    pub fn metrics(&self, include_self: bool, include_retracted: bool) -> UnifiedMetrics {
        let mut counts: BTreeMap<&Doi, u64> = self.publications.iter().map(|d| (d, 0)).collect();
        for c in &self.citations {
            if (c.self_citation && !include_self) || (c.retracted && !include_retracted) {
                continue;
            }
            if let Some(n) = counts.get_mut(&c.cited_doi) {
                *n += 1;
            }
        }
        let counts: Vec<u64> = counts.into_values().collect();
        UnifiedMetrics {
            h_index: h_index(&counts),
            publication_count: counts.len() as u64,
            citation_count: counts.iter().sum(),
            included_self: include_self,
            included_retracted: include_retracted,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnsignedAttestation {
    pub include_self: bool,
    pub include_retracted: bool,
    pub publish: bool,
    pub dataset_digest: String,
    pub decided_at: Millis,
}

impl UnsignedAttestation {
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let bit = |b: bool| if b { '1' } else { '0' };
        format!(
            "{ATTESTATION_HEADER}\ninclude_self:{}\ninclude_retracted:{}\npublish:{}\ndataset_digest:{}\ndecided_at:{}\n",
            bit(self.include_self),
            bit(self.include_retracted),
            bit(self.publish),
            self.dataset_digest,
            self.decided_at,
        )
        .into_bytes()
    }

    pub fn sign_with(self, signature: AuthorSignature) -> ConsentAttestation {
        ConsentAttestation {
            include_self: self.include_self,
            include_retracted: self.include_retracted,
            publish: self.publish,
            dataset_digest: self.dataset_digest,
            author_signature: signature,
            decided_at: self.decided_at,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentAttestation {
    pub include_self: bool,
    pub include_retracted: bool,
    pub publish: bool,
    pub dataset_digest: String,
    pub author_signature: AuthorSignature,
    pub decided_at: Millis,
}

impl ConsentAttestation {
    pub fn unsigned(&self) -> UnsignedAttestation {
        UnsignedAttestation {
            include_self: self.include_self,
            include_retracted: self.include_retracted,
            publish: self.publish,
            dataset_digest: self.dataset_digest.clone(),
            decided_at: self.decided_at,
        }
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        self.unsigned().canonical_bytes()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockPayload {
    pub metrics: UnifiedMetrics,
    pub attestation: ConsentAttestation,
    pub evidence: DatasetEvidence,
}

/// What the author sees when they decline to publish.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsView {
    pub metrics: UnifiedMetrics,
    pub breakdown: Breakdown,
    pub audit_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PublishOutcome {
    Published(BlockPayload),
    Declined(MetricsView),
}

/// Produces the detached signature over canonical attestation bytes.
pub trait AttestationSigner {
    fn sign_attestation(&self, canonical: &[u8]) -> Result<AuthorSignature, PorError>;
}

impl AttestationSigner for AuthorKey {
    fn sign_attestation(&self, canonical: &[u8]) -> Result<AuthorSignature, PorError> {
        Ok(self.sign(canonical))
    }
}

/// A signature the author produced elsewhere; accepted only if it verifies.
pub struct Presigned<'a> {
    pub signature: AuthorSignature,
    pub public_key: &'a AuthorPublicKey,
}

impl AttestationSigner for Presigned<'_> {
    fn sign_attestation(&self, canonical: &[u8]) -> Result<AuthorSignature, PorError> {
        if self.public_key.verify(canonical, &self.signature) {
            Ok(self.signature.clone())
        } else {
            Err(PorError::SignatureFailure(
                "supplied signature does not verify against the registered key".into(),
            ))
        }
    }
}

/// Used when no signing key is available for the author.
pub struct NoSigner;

impl AttestationSigner for NoSigner {
    fn sign_attestation(&self, _: &[u8]) -> Result<AuthorSignature, PorError> {
        Err(PorError::SignatureFailure("no signing key available for author".into()))
    }
}

#[derive(Debug, Clone)]
pub struct ConsentSession {
    session_id: String,
    author: AuthorProfile,
    conflate: ConflateResult,
    evidence: DatasetEvidence,
    state: SessionState,
    include_self: Option<bool>,
    include_retracted: Option<bool>,
    metrics: Option<UnifiedMetrics>,
    created_at: Millis,
}

pub fn open_session(
    author: AuthorProfile,
    conflate: ConflateResult,
    now: Millis,
) -> Result<ConsentSession, PorError> {
    conflate.check_invariants()?;
    let evidence = DatasetEvidence::from_conflate(&conflate);
    Ok(ConsentSession {
        session_id: uuid::Uuid::new_v4().simple().to_string(),
        author,
        conflate,
        evidence,
        state: SessionState::AwaitSelf,
        include_self: None,
        include_retracted: None,
        metrics: None,
        created_at: now,
    })
}

impl ConsentSession {
    pub fn session_id(&self) -> &str {
        &self.session_id
    }

    pub fn author(&self) -> &AuthorProfile {
        &self.author
    }

    pub fn conflate(&self) -> &ConflateResult {
        &self.conflate
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn include_self(&self) -> Option<bool> {
        self.include_self
    }

    pub fn include_retracted(&self) -> Option<bool> {
        self.include_retracted
    }

    pub fn metrics(&self) -> Option<&UnifiedMetrics> {
        self.metrics.as_ref()
    }

    pub fn created_at(&self) -> Millis {
        self.created_at
    }

    pub fn audit_flag(&self) -> bool {
        self.conflate.audit_flag
    }

    pub fn dataset_digest(&self) -> String {
        self.evidence.digest()
    }

    fn expect(&self, state: SessionState, op: &'static str) -> Result<(), PorError> {
        if self.state == state {
            Ok(())
        } else {
            Err(PorError::IllegalTransition { from: self.state, op })
        }
    }

    pub fn answer_self(&mut self, agree: bool) -> Result<(), PorError> {
        self.expect(SessionState::AwaitSelf, "answer_self")?;
        self.include_self = Some(agree);
        self.state = SessionState::AwaitRetracted;
        Ok(())
    }

    pub fn answer_retracted(&mut self, agree: bool) -> Result<(), PorError> {
        self.expect(SessionState::AwaitRetracted, "answer_retracted")?;
        let include_self = self.include_self.expect("set before AwaitRetracted");
        self.include_retracted = Some(agree);
        self.metrics = Some(compute_metrics(&self.conflate, include_self, agree));
        self.state = SessionState::MetricsReady;
        Ok(())
    }

    /// The author has seen the metrics; publish consent may now be asked.
    pub fn acknowledge_metrics(&mut self) -> Result<(), PorError> {
        self.expect(SessionState::MetricsReady, "acknowledge_metrics")?;
        self.state = SessionState::AwaitPublish;
        Ok(())
    }

    /// The attestation an affirmative publish decision at `decided_at` would sign.
    pub fn pending_attestation(&self, decided_at: Millis) -> Result<UnsignedAttestation, PorError> {
        self.expect(SessionState::AwaitPublish, "pending_attestation")?;
        Ok(UnsignedAttestation {
            include_self: self.include_self.expect("answered"),
            include_retracted: self.include_retracted.expect("answered"),
            publish: true,
            dataset_digest: self.evidence.digest(),
            decided_at,
        })
    }

    pub fn metrics_view(&self) -> Option<MetricsView> {
        self.metrics.map(|metrics| MetricsView {
            metrics,
            breakdown: self.conflate.breakdown(),
            audit_flag: self.conflate.audit_flag,
        })
    }

    /// A signing failure leaves the session waiting for the publish answer.
    pub fn answer_publish(
        &mut self,
        agree: bool,
        signer: &dyn AttestationSigner,
        decided_at: Millis,
    ) -> Result<PublishOutcome, PorError> {
        self.expect(SessionState::AwaitPublish, "answer_publish")?;
        if !agree {
            self.state = SessionState::Declined;
            return Ok(PublishOutcome::Declined(self.metrics_view().expect("metrics computed")));
        }
        let unsigned = self.pending_attestation(decided_at)?;
        let signature = signer.sign_attestation(&unsigned.canonical_bytes())?;
        let payload = BlockPayload {
            metrics: self.metrics.expect("metrics computed"),
            attestation: unsigned.sign_with(signature),
            evidence: self.evidence.clone(),
        };
        self.state = SessionState::Published;
        Ok(PublishOutcome::Published(payload))
    }

    pub fn view(&self) -> SessionView {
        let digest_visible = matches!(self.state, SessionState::AwaitPublish | SessionState::Published);
        SessionView {
            schema: SESSION_SCHEMA.into(),
            session_id: self.session_id.clone(),
            state: self.state,
            author: self.author.clone(),
            audit_flag: self.conflate.audit_flag,
            breakdown: self.conflate.breakdown(),
            include_self: self.include_self,
            include_retracted: self.include_retracted,
            metrics: self.metrics,
            dataset_digest: digest_visible.then(|| self.evidence.digest()),
            created_at: self.created_at,
        }
    }
}

/// Serializable snapshot of a session for clients.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionView {
    pub schema: String,
    pub session_id: String,
    pub state: SessionState,
    pub author: AuthorProfile,
    pub audit_flag: bool,
    pub breakdown: Breakdown,
    pub include_self: Option<bool>,
    pub include_retracted: Option<bool>,
    pub metrics: Option<UnifiedMetrics>,
    pub dataset_digest: Option<String>,
    pub created_at: Millis,
}

/// The Proof-of-Reference validity rule for a payload.
pub fn verify_attestation(payload: &BlockPayload, public_key: &AuthorPublicKey) -> bool {
    let att = &payload.attestation;
    att.publish
        && payload.evidence.is_well_formed()
        && payload.evidence.digest() == att.dataset_digest
        && public_key.verify(&att.canonical_bytes(), &att.author_signature)
        && payload.evidence.metrics(att.include_self, att.include_retracted) == payload.metrics
}

struct Slot {
    session: Arc<Mutex<ConsentSession>>,
    last_active: Millis,
}

/// Concurrent session registry with idle expiry. Each session has its own
/// lock so answers to one session are serialized while others proceed.
pub struct SessionStore {
    slots: Mutex<HashMap<String, Slot>>,
    idle_timeout_ms: Millis,
}

impl Default for SessionStore {
    fn default() -> Self {
        Self::new(DEFAULT_IDLE_TIMEOUT_MS)
    }
}

impl SessionStore {
    pub fn new(idle_timeout_ms: Millis) -> Self {
        SessionStore {
            slots: Mutex::new(HashMap::new()),
            idle_timeout_ms,
        }
    }

    pub fn insert(&self, session: ConsentSession, now: Millis) -> Arc<Mutex<ConsentSession>> {
        let id = session.session_id().to_string();
        let shared = Arc::new(Mutex::new(session));
        let mut slots = self.slots.lock().expect("session store poisoned");
        Self::purge(&mut slots, now, self.idle_timeout_ms);
        slots.insert(
            id,
            Slot {
                session: Arc::clone(&shared),
                last_active: now,
            },
        );
        shared
    }

    /// Looks up a live session and marks it active.
    pub fn get(&self, id: &str, now: Millis) -> Option<Arc<Mutex<ConsentSession>>> {
        let mut slots = self.slots.lock().expect("session store poisoned");
        Self::purge(&mut slots, now, self.idle_timeout_ms);
        let slot = slots.get_mut(id)?;
        slot.last_active = now;
        Some(Arc::clone(&slot.session))
    }

    pub fn len(&self) -> usize {
        self.slots.lock().expect("session store poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn purge(slots: &mut HashMap<String, Slot>, now: Millis, timeout: Millis) {
        slots.retain(|_, slot| now.saturating_sub(slot.last_active) < timeout);
    }
}
