//! Input generators shared by the benchmarks.

use std::collections::BTreeSet;

use por_core::bibdata::{validate_doi, CitationRecord, PublicationRecord, SourceTag};
use por_core::conflate::{conflate, ConflateResult};
use por_core::fixtures;
use por_core::keys::Keyring;
use por_core::ledger::{append_block, Chain};
use por_core::FixedClock;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_counts(len: usize, max: u64, seed: u64) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.gen_range(0..=max)).collect()
}

/// An author with `pubs` publications in both sources and up to
/// `max_cites` citations each, some of them self citations.
pub fn author_records(pubs: usize, max_cites: usize, seed: u64) -> (Vec<PublicationRecord>, Vec<CitationRecord>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let profile = fixtures::profile();
    let mut publications = Vec::new();
    let mut citations = Vec::new();
    for p in 0..pubs {
        let doi = validate_doi(&format!("10.5000/bench.p{p}")).expect("valid DOI");
        for source in SourceTag::ALL {
            publications.push(PublicationRecord {
                source,
                doi: Some(doi.clone()),
                title: String::new(),
                year: 2020,
                author_ids: BTreeSet::new(),
            });
        }
        for c in 0..rng.gen_range(0..=max_cites) {
            let mut authors = BTreeSet::new();
            if rng.gen_bool(0.1) {
                authors.insert(profile.scopus_id.clone());
            }
            citations.push(CitationRecord {
                source: SourceTag::ALL[c % 2],
                cited_doi: doi.clone(),
                citing_doi: Some(validate_doi(&format!("10.6000/bench.p{p}.c{c}")).expect("valid DOI")),
                citing_author_ids: authors,
                retracted: rng.gen_bool(0.05),
            });
        }
    }
    (publications, citations)
}

pub fn author_conflate(pubs: usize, max_cites: usize, seed: u64) -> ConflateResult {
    let (p, c) = author_records(pubs, max_cites, seed);
    conflate(&fixtures::profile(), p, &c)
}

pub fn keyring() -> Keyring {
    let mut ring = Keyring::new();
    ring.register(fixtures::profile().author_ref(), fixtures::author_key().public_key());
    ring
}

/// A valid chain of `len` blocks including genesis.
pub fn chain_of(len: usize) -> Chain {
    let keys = keyring();
    let result = fixtures::canonical_conflate();
    let author = fixtures::profile().author_ref().to_string();
    (1..len as u64).fold(Chain::genesis(), |chain, n| {
        let t = 1_700_000_000_000 + n;
        let payload = fixtures::signed_payload(&result, &fixtures::author_key(), n.is_multiple_of(2), true, t);
        append_block(&chain, payload, &author, &FixedClock(t), &keys).expect("valid block")
    })
}
