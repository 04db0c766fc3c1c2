//! The demo author dataset shipped with the crate.
//!
//! Publications: `a` (both sources), `b` (Scopus only), `c` (WoS only), and
//! one Scopus record without a DOI. Kept citations: `a` has one authentic,
//! one self, and one retracted citation; `b` has two authentic ones; `c` has
//! none. Two citation keys appear in both sources.

use crate::bibdata::{AuthorProfile, BibDocument, CitationRecord, PublicationRecord, SourceTag};
use crate::clock::Millis;
use crate::conflate::{conflate, ConflateResult};
use crate::keys::AuthorKey;
use crate::por::{open_session, BlockPayload, PublishOutcome};

pub const PROFILE: &str = include_str!("../fixtures/profile.json");
pub const SCOPUS_A: &str = include_str!("../fixtures/scopus_a.json");
pub const WOS_A: &str = include_str!("../fixtures/wos_a.json");
pub const WOS_CITES_A: &str = include_str!("../fixtures/wos_cites_a.json");
pub const WOS_CITES_DISJOINT: &str = include_str!("../fixtures/wos_cites_disjoint.json");

pub fn profile() -> AuthorProfile {
    serde_json::from_str(PROFILE).expect("fixture profile parses")
}

fn records(docs: &[(&str, SourceTag)]) -> (Vec<PublicationRecord>, Vec<CitationRecord>) {
    let mut pubs = Vec::new();
    let mut cites = Vec::new();
    for (text, source) in docs {
        let doc = BibDocument::parse(text).expect("fixture parses");
        pubs.extend(doc.publications(*source).expect("fixture publications").records);
        cites.extend(doc.citations(*source).expect("fixture citations").records);
    }
    (pubs, cites)
}

pub fn canonical_records() -> (Vec<PublicationRecord>, Vec<CitationRecord>) {
    records(&[
        (SCOPUS_A, SourceTag::Scopus),
        (WOS_A, SourceTag::Wos),
        (WOS_CITES_A, SourceTag::Wos),
    ])
}

pub fn canonical_conflate() -> ConflateResult {
    let (pubs, cites) = canonical_records();
    conflate(&profile(), pubs, &cites)
}

/// Same publications, but the two sources share no citation.
pub fn disjoint_conflate() -> ConflateResult {
    let (pubs, cites) = records(&[
        (SCOPUS_A, SourceTag::Scopus),
        (WOS_A, SourceTag::Wos),
        (WOS_CITES_DISJOINT, SourceTag::Wos),
    ]);
    conflate(&profile(), pubs, &cites)
}

/// A bare profile with the given identifiers.
pub fn profile_with_ids(scopus_id: &str, wos_id: &str) -> AuthorProfile {
    AuthorProfile::new(scopus_id, wos_id, "Test Author").expect("valid identifiers")
}

/// Deterministic key for the demo author.
pub fn author_key() -> AuthorKey {
    AuthorKey::from_seed(*b"por-demo-author-key-seed-0000001")
}

/// Walks a full consent session on `result` and returns the signed payload.
pub fn signed_payload(
    result: &ConflateResult,
    key: &AuthorKey,
    include_self: bool,
    include_retracted: bool,
    decided_at: Millis,
) -> BlockPayload {
    let mut session = open_session(profile(), result.clone(), decided_at).expect("valid conflate");
    session.answer_self(include_self).expect("fresh session");
    session.answer_retracted(include_retracted).expect("in order");
    session.acknowledge_metrics().expect("in order");
    match session.answer_publish(true, key, decided_at).expect("signable") {
        PublishOutcome::Published(payload) => payload,
        PublishOutcome::Declined(_) => unreachable!("publish was affirmative"),
    }
}
