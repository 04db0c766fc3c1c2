//! Citation conflation and the Proof-of-Reference metrics ledger.
//!
//! Publication and citation records for one author are merged across two
//! bibliographic sources ([`conflate`]), the author walks through three
//! consent decisions ([`por`]), and an affirmative outcome becomes a signed,
//! fingerprinted block on an append-only chain ([`ledger`]) that peers
//! replicate under a longest-valid-chain rule ([`netsync`]).

pub mod bibdata;
pub mod clock;
pub mod conflate;
pub mod fixtures;
pub mod keys;
pub mod ledger;
pub mod netsync;
pub mod por;

pub use bibdata::{AuthorProfile, CitationRecord, Doi, PublicationRecord, SourceTag};
pub use clock::{Clock, ClockSpec, FixedClock, Millis, SystemClock};
pub use conflate::{compute_metrics, CitationKey, ConflateResult, UnifiedMetrics};
pub use keys::{AuthorKey, AuthorPublicKey, KeyResolver, Keyring};
pub use ledger::{append_block, validate_chain, Block, Chain, Verdict};
pub use netsync::{NodeState, PeerAddr, PeerClient, ReceiveOutcome};
pub use por::{open_session, verify_attestation, BlockPayload, ConsentSession, PublishOutcome, SessionState};
