use std::collections::BTreeSet;

use por_core::bibdata::{validate_doi, BibDocument, CitationRecord, Doi, PublicationRecord, SourceTag};
use por_core::conflate::{compute_metrics, conflate, h_index, unify_publications, ConflateResult};
use por_core::fixtures;
use por_core::por::{verify_attestation, DatasetEvidence};
use proptest::prelude::*;

fn h_oracle(counts: &[u64]) -> u64 {
    (0..=counts.len() as u64)
        .filter(|&h| counts.iter().filter(|&&c| c >= h).count() as u64 >= h)
        .max()
        .unwrap_or(0)
}

fn doi(n: u32) -> Doi {
    validate_doi(&format!("10.5000/p{n}")).unwrap()
}

fn source() -> impl Strategy<Value = SourceTag> {
    prop_oneof![Just(SourceTag::Scopus), Just(SourceTag::Wos)]
}

fn publication() -> impl Strategy<Value = PublicationRecord> {
    (source(), proptest::option::weighted(0.85, 0u32..12), 1500i32..=2200).prop_map(|(source, d, year)| {
        PublicationRecord {
            source,
            doi: d.map(doi),
            title: "t".into(),
            year,
            author_ids: BTreeSet::new(),
        }
    })
}

fn citation() -> impl Strategy<Value = CitationRecord> {
    (
        source(),
        0u32..14,
        proptest::option::weighted(0.9, 100u32..130),
        prop_oneof![Just("S-1"), Just("W-1"), Just("X"), Just("Y")],
        proptest::bool::weighted(0.2),
    )
        .prop_map(|(source, cited, citing, who, retracted)| CitationRecord {
            source,
            cited_doi: doi(cited),
            citing_doi: citing.map(doi),
            citing_author_ids: [who.to_string()].into(),
            retracted,
        })
}

fn dataset() -> impl Strategy<Value = (Vec<PublicationRecord>, Vec<CitationRecord>)> {
    (
        proptest::collection::vec(publication(), 0..16),
        proptest::collection::vec(citation(), 0..40),
    )
}

fn run(pubs: Vec<PublicationRecord>, cites: &[CitationRecord]) -> ConflateResult {
    conflate(&fixtures::profile_with_ids("S-1", "W-1"), pubs, cites)
}

proptest! {
    #[test]
    fn doi_normalization_is_idempotent(raw in "\\s{0,2}10\\.[0-9]{4,9}/[A-Za-z0-9._-]{1,12}\\s{0,2}") {
        let once = validate_doi(&raw).unwrap();
        let twice = validate_doi(once.as_str()).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn doi_acceptance_is_idempotent_on_arbitrary_text(raw in ".{0,24}") {
        if let Ok(once) = validate_doi(&raw) {
            prop_assert_eq!(validate_doi(once.as_str()).unwrap(), once);
        }
    }

    #[test]
    fn h_index_matches_threshold_scan(counts in proptest::collection::vec(0u64..=50, 0..=200)) {
        prop_assert_eq!(h_index(&counts), h_oracle(&counts));
    }

    #[test]
    fn publication_partition_laws(
        s in proptest::collection::vec(0u32..10, 0..20),
        w in proptest::collection::vec(0u32..10, 0..20),
    ) {
        let rec = |src, n: &u32| PublicationRecord {
            source: src, doi: Some(doi(*n)), title: String::new(), year: 2000, author_ids: BTreeSet::new(),
        };
        let sr: Vec<_> = s.iter().map(|n| rec(SourceTag::Scopus, n)).collect();
        let wr: Vec<_> = w.iter().map(|n| rec(SourceTag::Wos, n)).collect();
        let p = unify_publications(&sr, &wr);
        // Membership oracle over the raw multisets.
        for n in 0..10u32 {
            let (in_s, in_w) = (s.contains(&n), w.contains(&n));
            let d = doi(n);
            prop_assert_eq!(p.common.contains(&d), in_s && in_w);
            prop_assert_eq!(p.unique_scopus.contains(&d), in_s && !in_w);
            prop_assert_eq!(p.unique_wos.contains(&d), in_w && !in_s);
            prop_assert_eq!(p.unified.contains(&d), in_s || in_w);
        }
        prop_assert!(p.common.is_disjoint(&p.unique_scopus) && p.common.is_disjoint(&p.unique_wos));
    }

    #[test]
    fn conflate_invariants_and_monotone_exclusion((pubs, cites) in dataset()) {
        let r = run(pubs, &cites);
        prop_assert!(r.check_invariants().is_ok());
        let full = compute_metrics(&r, true, true);
        let max_per_pub = r.per_publication_counts(true, true).into_values().max().unwrap_or(0);
        for (s, t) in [(false, false), (true, false), (false, true), (true, true)] {
            let m = compute_metrics(&r, s, t);
            prop_assert!(m.h_index <= full.h_index);
            prop_assert!(m.citation_count <= full.citation_count);
            prop_assert_eq!(m.publication_count, full.publication_count);
            let local_max = r.per_publication_counts(s, t).into_values().max().unwrap_or(0);
            prop_assert!(m.is_consistent(local_max));
            prop_assert!(local_max <= max_per_pub);
        }
        // Audit flag semantics.
        if r.audit_flag {
            prop_assert_eq!(r.common_citation_count, 0);
        }
    }

    #[test]
    fn conflate_is_order_independent(
        (pubs, cites) in dataset(),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut p2 = pubs.clone();
        let mut c2 = cites.clone();
        p2.shuffle(&mut rng);
        c2.shuffle(&mut rng);
        prop_assert_eq!(run(pubs, &cites), run(p2, &c2));
    }

    #[test]
    fn evidence_route_reproduces_metrics((pubs, cites) in dataset()) {
        let r = run(pubs, &cites);
        let ev = DatasetEvidence::from_conflate(&r);
        prop_assert!(ev.is_well_formed());
        for (s, t) in [(false, false), (true, false), (false, true), (true, true)] {
            prop_assert_eq!(ev.metrics(s, t), compute_metrics(&r, s, t));
        }
    }

    #[test]
    fn published_payloads_always_verify(
        (pubs, cites) in dataset(),
        s in any::<bool>(),
        t in any::<bool>(),
        seed in any::<[u8; 32]>(),
    ) {
        let r = run(pubs, &cites);
        let key = por_core::AuthorKey::from_seed(seed);
        let payload = fixtures::signed_payload(&r, &key, s, t, 1_700_000_000_000);
        prop_assert!(verify_attestation(&payload, &key.public_key()));
    }

    #[test]
    fn ingest_round_trip(
        pubs in proptest::collection::vec(publication(), 0..8),
        cites in proptest::collection::vec(citation(), 0..8),
    ) {
        let pubs: Vec<_> = pubs.into_iter().map(|mut p| { p.source = SourceTag::Wos; p }).collect();
        let cites: Vec<_> = cites.into_iter().map(|mut c| { c.source = SourceTag::Wos; c }).collect();
        let text = BibDocument::from_records(SourceTag::Wos, &pubs, &cites).to_json_pretty();
        let doc = BibDocument::parse(&text).unwrap();
        prop_assert_eq!(doc.publications(SourceTag::Wos).unwrap().records, pubs);
        prop_assert_eq!(doc.citations(SourceTag::Wos).unwrap().records, cites);
    }
}
