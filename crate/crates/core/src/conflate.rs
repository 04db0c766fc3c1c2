//! Cross-source conflation of one author's publications and citations.
//!
//! The pipeline runs in a fixed order: DOI filtering of publications,
//! publication unification, DOI filtering and deduplication of citations
//! against the unified publication set, citation classification, and finally
//! metric computation under the author's inclusion choices.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bibdata::{AuthorProfile, CitationRecord, Doi, PublicationRecord, SourceTag};

pub const AUDIT_SCHEMA: &str = "por.audit.v1";

#[derive(Debug, Error, PartialEq, Eq)]
#[error("conflate result violates invariant: {0}")]
pub struct InvariantViolation(pub String);

/// Cross-source identity of a citation.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CitationKey {
    pub cited_doi: Doi,
    pub citing_doi: Doi,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PublicationPartition {
    pub common: BTreeSet<Doi>,
    pub unique_scopus: BTreeSet<Doi>,
    pub unique_wos: BTreeSet<Doi>,
    pub unified: BTreeSet<Doi>,
}

/// Citations kept after the second DOI filter, deduplicated across sources.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CitationFragment {
    pub citations_by_pub: BTreeMap<Doi, BTreeSet<CitationKey>>,
    pub keys_by_source: BTreeMap<SourceTag, BTreeSet<CitationKey>>,
    pub common_citation_count: u64,
    pub rejected_citation_count: u64,
}

impl CitationFragment {
    pub fn all_keys(&self) -> impl Iterator<Item = &CitationKey> {
        self.citations_by_pub.values().flatten()
    }

    /// Zero overlap only matters when both sources actually contributed.
    pub fn audit_flag(&self) -> bool {
        let both = SourceTag::ALL
            .iter()
            .all(|s| self.keys_by_source.get(s).is_some_and(|k| !k.is_empty()));
        both && self.common_citation_count == 0
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CitationClasses {
    pub self_citation_keys: BTreeSet<CitationKey>,
    pub retracted_citation_keys: BTreeSet<CitationKey>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConflateResult {
    pub unified_pub_dois: BTreeSet<Doi>,
    pub common_pub_dois: BTreeSet<Doi>,
    pub unique_pub_dois_by_source: BTreeMap<SourceTag, BTreeSet<Doi>>,
    pub rejected_pub_count: u64,
    pub citations_by_pub: BTreeMap<Doi, BTreeSet<CitationKey>>,
    pub common_citation_count: u64,
    pub self_citation_keys: BTreeSet<CitationKey>,
    pub retracted_citation_keys: BTreeSet<CitationKey>,
    pub audit_flag: bool,
    #[serde(default)]
    pub rejected_citation_count: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnifiedMetrics {
    pub h_index: u64,
    pub publication_count: u64,
    pub citation_count: u64,
    pub included_self: bool,
    pub included_retracted: bool,
}

impl UnifiedMetrics {
    /// Checks the structural bounds every honest metrics triple satisfies,
    /// given the largest per-publication citation count.
    pub fn is_consistent(&self, max_per_publication: u64) -> bool {
        self.h_index <= self.publication_count
            && self.h_index <= max_per_publication
            && self.citation_count >= self.h_index * self.h_index
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReport {
    pub schema: String,
    pub common_citation_count: u64,
    pub audit_flag: bool,
    pub rejected_publications: u64,
    pub rejected_citations: u64,
}

/// Counts shown to the author before any consent is given.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Breakdown {
    pub unified_publications: u64,
    pub common_publications: u64,
    pub unique_scopus_publications: u64,
    pub unique_wos_publications: u64,
    pub rejected_publications: u64,
    pub total_citations: u64,
    pub self_citations: u64,
    pub retracted_citations: u64,
    pub authentic_citations: u64,
    pub common_citations: u64,
    pub rejected_citations: u64,
}

/// Largest `h` such that at least `h` entries are `>= h`.
pub fn h_index(counts: &[u64]) -> u64 {
    let mut sorted = counts.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    sorted
        .iter()
        .enumerate()
        .take_while(|(rank, &c)| c > *rank as u64)
        .count() as u64
}

pub fn filter_by_doi(pubs: Vec<PublicationRecord>) -> (Vec<PublicationRecord>, u64) {
    let total = pubs.len();
    let kept: Vec<_> = pubs.into_iter().filter(|p| p.doi.is_some()).collect();
    let rejected = (total - kept.len()) as u64;
    (kept, rejected)
}

fn doi_set(records: &[PublicationRecord]) -> BTreeSet<Doi> {
    records.iter().filter_map(|p| p.doi.clone()).collect()
}

pub fn unify_publications(
    scopus: &[PublicationRecord],
    wos: &[PublicationRecord],
) -> PublicationPartition {
    let s = doi_set(scopus);
    let w = doi_set(wos);
    PublicationPartition {
        common: s.intersection(&w).cloned().collect(),
        unique_scopus: s.difference(&w).cloned().collect(),
        unique_wos: w.difference(&s).cloned().collect(),
        unified: s.union(&w).cloned().collect(),
    }
}

pub fn unify_citations(citations: &[CitationRecord], unified_pubs: &BTreeSet<Doi>) -> CitationFragment {
    let mut fragment = CitationFragment::default();
    for doi in unified_pubs {
        fragment.citations_by_pub.insert(doi.clone(), BTreeSet::new());
    }
    for record in citations {
        let Some(citing) = &record.citing_doi else {
            fragment.rejected_citation_count += 1;
            continue;
        };
        let Some(bucket) = fragment.citations_by_pub.get_mut(&record.cited_doi) else {
            fragment.rejected_citation_count += 1;
            continue;
        };
        let key = CitationKey {
            cited_doi: record.cited_doi.clone(),
            citing_doi: citing.clone(),
        };
        bucket.insert(key.clone());
        fragment.keys_by_source.entry(record.source).or_default().insert(key);
    }
    let empty = BTreeSet::new();
    let scopus = fragment.keys_by_source.get(&SourceTag::Scopus).unwrap_or(&empty);
    let wos = fragment.keys_by_source.get(&SourceTag::Wos).unwrap_or(&empty);
    fragment.common_citation_count = scopus.intersection(wos).count() as u64;
    fragment
}

/// A key is a self citation if any contributing record names one of the
/// author's identifiers, and retracted if any contributing record says so.
pub fn classify_citations(
    fragment: &CitationFragment,
    profile: &AuthorProfile,
    citations: &[CitationRecord],
) -> CitationClasses {
    let ids = profile.identifiers();
    let kept: BTreeSet<&CitationKey> = fragment.all_keys().collect();
    let mut classes = CitationClasses::default();
    for record in citations {
        let Some(citing) = &record.citing_doi else { continue };
        let key = CitationKey {
            cited_doi: record.cited_doi.clone(),
            citing_doi: citing.clone(),
        };
        if !kept.contains(&key) {
            continue;
        }
        if record.citing_author_ids.iter().any(|a| ids.contains(a.as_str())) {
            classes.self_citation_keys.insert(key.clone());
        }
        if record.retracted {
            classes.retracted_citation_keys.insert(key);
        }
    }
    classes
}

impl ConflateResult {
    pub fn assemble(
        partition: PublicationPartition,
        rejected_pub_count: u64,
        fragment: CitationFragment,
        classes: CitationClasses,
    ) -> Self {
        let audit_flag = fragment.audit_flag();
        let mut unique = BTreeMap::new();
        unique.insert(SourceTag::Scopus, partition.unique_scopus);
        unique.insert(SourceTag::Wos, partition.unique_wos);
        ConflateResult {
            unified_pub_dois: partition.unified,
            common_pub_dois: partition.common,
            unique_pub_dois_by_source: unique,
            rejected_pub_count,
            citations_by_pub: fragment.citations_by_pub,
            common_citation_count: fragment.common_citation_count,
            self_citation_keys: classes.self_citation_keys,
            retracted_citation_keys: classes.retracted_citation_keys,
            audit_flag,
            rejected_citation_count: fragment.rejected_citation_count,
        }
    }

    pub fn check_invariants(&self) -> Result<(), InvariantViolation> {
        let fail = |m: &str| Err(InvariantViolation(m.to_string()));
        if !self.common_pub_dois.is_subset(&self.unified_pub_dois) {
            return fail("common publications not within unified set");
        }
        let mut rebuilt = self.common_pub_dois.clone();
        for (source, unique) in &self.unique_pub_dois_by_source {
            if !unique.is_disjoint(&self.common_pub_dois) {
                return fail(&format!("unique {source} publications overlap common set"));
            }
            rebuilt.extend(unique.iter().cloned());
        }
        if rebuilt != self.unified_pub_dois {
            return fail("unified set is not common plus per-source unique sets");
        }
        for (doi, keys) in &self.citations_by_pub {
            if !self.unified_pub_dois.contains(doi) {
                return fail(&format!("citations recorded for {doi} outside unified set"));
            }
            if keys.iter().any(|k| &k.cited_doi != doi) {
                return fail(&format!("citation filed under {doi} cites another publication"));
            }
        }
        let all: BTreeSet<&CitationKey> = self.citations_by_pub.values().flatten().collect();
        if !self.self_citation_keys.iter().all(|k| all.contains(k)) {
            return fail("self citation keys not among kept citations");
        }
        if !self.retracted_citation_keys.iter().all(|k| all.contains(k)) {
            return fail("retracted citation keys not among kept citations");
        }
        if self.common_citation_count > all.len() as u64 {
            return fail("common citation count exceeds kept citations");
        }
        if self.audit_flag && self.common_citation_count != 0 {
            return fail("audit flag raised with non-zero common citations");
        }
        Ok(())
    }

    /// Effective citation count per unified publication after exclusions.
    pub fn per_publication_counts(&self, include_self: bool, include_retracted: bool) -> BTreeMap<Doi, u64> {
        self.unified_pub_dois
            .iter()
            .map(|doi| {
                let count = self
                    .citations_by_pub
                    .get(doi)
                    .into_iter()
                    .flatten()
                    .filter(|k| include_self || !self.self_citation_keys.contains(k))
                    .filter(|k| include_retracted || !self.retracted_citation_keys.contains(k))
                    .count() as u64;
                (doi.clone(), count)
            })
            .collect()
    }

    pub fn audit_report(&self) -> AuditReport {
        AuditReport {
            schema: AUDIT_SCHEMA.to_string(),
            common_citation_count: self.common_citation_count,
            audit_flag: self.audit_flag,
            rejected_publications: self.rejected_pub_count,
            rejected_citations: self.rejected_citation_count,
        }
    }

    pub fn breakdown(&self) -> Breakdown {
        let all: BTreeSet<&CitationKey> = self.citations_by_pub.values().flatten().collect();
        let authentic = all
            .iter()
            .filter(|k| !self.self_citation_keys.contains(k) && !self.retracted_citation_keys.contains(k))
            .count();
        let unique = |s| self.unique_pub_dois_by_source.get(&s).map_or(0, |d| d.len() as u64);
        Breakdown {
            unified_publications: self.unified_pub_dois.len() as u64,
            common_publications: self.common_pub_dois.len() as u64,
            unique_scopus_publications: unique(SourceTag::Scopus),
            unique_wos_publications: unique(SourceTag::Wos),
            rejected_publications: self.rejected_pub_count,
            total_citations: all.len() as u64,
            self_citations: self.self_citation_keys.len() as u64,
            retracted_citations: self.retracted_citation_keys.len() as u64,
            authentic_citations: authentic as u64,
            common_citations: self.common_citation_count,
            rejected_citations: self.rejected_citation_count,
        }
    }
}

pub fn compute_metrics(result: &ConflateResult, include_self: bool, include_retracted: bool) -> UnifiedMetrics {
    let counts: Vec<u64> = result
        .per_publication_counts(include_self, include_retracted)
        .into_values()
        .collect();
    UnifiedMetrics {
        h_index: h_index(&counts),
        publication_count: counts.len() as u64,
        citation_count: counts.iter().sum(),
        included_self: include_self,
        included_retracted: include_retracted,
    }
}

/// Runs the whole pipeline over tagged records from both sources.
pub fn conflate(
    profile: &AuthorProfile,
    publications: Vec<PublicationRecord>,
    citations: &[CitationRecord],
) -> ConflateResult {
    let (kept, rejected) = filter_by_doi(publications);
    let (scopus, wos): (Vec<_>, Vec<_>) = kept.into_iter().partition(|p| p.source == SourceTag::Scopus);
    let partition = unify_publications(&scopus, &wos);
    let fragment = unify_citations(citations, &partition.unified);
    let classes = classify_citations(&fragment, profile, citations);
    ConflateResult::assemble(partition, rejected, fragment, classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bibdata::validate_doi;

    fn doi(s: &str) -> Doi {
        validate_doi(&format!("10.1000/{s}")).unwrap()
    }

    fn publication(source: SourceTag, d: Option<&str>) -> PublicationRecord {
        PublicationRecord {
            source,
            doi: d.map(doi),
            title: "t".into(),
            year: 2020,
            author_ids: BTreeSet::new(),
        }
    }

    fn cite(source: SourceTag, cited: &str, citing: Option<&str>, authors: &[&str], retracted: bool) -> CitationRecord {
        CitationRecord {
            source,
            cited_doi: doi(cited),
            citing_doi: citing.map(doi),
            citing_author_ids: authors.iter().map(|s| s.to_string()).collect(),
            retracted,
        }
    }

    fn set(items: &[&str]) -> BTreeSet<Doi> {
        items.iter().map(|s| doi(s)).collect()
    }

    // Brute-force threshold scan, independent of the sort-based route.
    fn h_oracle(counts: &[u64]) -> u64 {
        (0..=counts.len() as u64)
            .filter(|&h| counts.iter().filter(|&&c| c >= h).count() as u64 >= h)
            .max()
            .unwrap_or(0)
    }

    #[test]
    fn h_index_examples() {
        assert_eq!(h_index(&[3, 2, 0]), 2);
        assert_eq!(h_oracle(&[3, 2, 0]), 2);
        assert_eq!(h_index(&[1, 2, 0]), 1);
        assert_eq!(h_index(&[]), 0);
        assert_eq!(h_index(&[0, 0]), 0);
        assert_eq!(h_index(&[10, 10, 10]), 3);
    }

    #[test]
    fn filter_by_doi_counts_rejections() {
        let pubs = vec![
            publication(SourceTag::Scopus, Some("a")),
            publication(SourceTag::Scopus, Some("b")),
            publication(SourceTag::Scopus, None),
        ];
        let (kept, rejected) = filter_by_doi(pubs);
        assert_eq!((kept.len(), rejected), (2, 1));
        assert_eq!(filter_by_doi(vec![]), (vec![], 0));
        let (_, r) = filter_by_doi(vec![publication(SourceTag::Wos, Some("a"))]);
        assert_eq!(r, 0);
    }

    #[test]
    fn unify_publications_example() {
        let s = [publication(SourceTag::Scopus, Some("a")), publication(SourceTag::Scopus, Some("b"))];
        let w = [publication(SourceTag::Wos, Some("a")), publication(SourceTag::Wos, Some("c"))];
        let p = unify_publications(&s, &w);
        assert_eq!(p.common, set(&["a"]));
        assert_eq!(p.unique_scopus, set(&["b"]));
        assert_eq!(p.unique_wos, set(&["c"]));
        assert_eq!(p.unified, set(&["a", "b", "c"]));

        let same = unify_publications(&s, &s);
        assert!(same.unique_scopus.is_empty() && same.unique_wos.is_empty());

        let one = unify_publications(&s, &[]);
        assert!(one.common.is_empty());
        assert_eq!(one.unified, set(&["a", "b"]));
    }

    #[test]
    fn duplicate_citation_across_sources_collapses() {
        let unified = set(&["a"]);
        let cites = [
            cite(SourceTag::Scopus, "a", Some("c1"), &[], false),
            cite(SourceTag::Wos, "a", Some("c1"), &[], false),
        ];
        let f = unify_citations(&cites, &unified);
        assert_eq!(f.citations_by_pub[&doi("a")].len(), 1);
        assert_eq!(f.common_citation_count, 1);
        assert!(!f.audit_flag());
    }

    #[test]
    fn citation_without_citing_doi_or_outside_unified_is_rejected() {
        let unified = set(&["a"]);
        let cites = [
            cite(SourceTag::Scopus, "a", None, &[], false),
            cite(SourceTag::Scopus, "zzz", Some("c1"), &[], false),
        ];
        let f = unify_citations(&cites, &unified);
        assert_eq!(f.rejected_citation_count, 2);
        assert_eq!(f.all_keys().count(), 0);
    }

    #[test]
    fn disjoint_sources_raise_audit() {
        let unified = set(&["a"]);
        let cites = [
            cite(SourceTag::Scopus, "a", Some("c1"), &[], false),
            cite(SourceTag::Wos, "a", Some("c2"), &[], false),
        ];
        let f = unify_citations(&cites, &unified);
        assert_eq!(f.common_citation_count, 0);
        assert!(f.audit_flag());
    }

    #[test]
    fn single_source_zero_overlap_is_vacuous() {
        let unified = set(&["a"]);
        let f = unify_citations(&[cite(SourceTag::Wos, "a", Some("c2"), &[], false)], &unified);
        assert!(!f.audit_flag());
    }

    #[test]
    fn classification_is_any_source_disjunction() {
        let profile = AuthorProfile::new("S-1", "W-1", "A").unwrap();
        let unified = set(&["a"]);
        let cites = [
            cite(SourceTag::Scopus, "a", Some("c1"), &["S-1"], false),
            cite(SourceTag::Scopus, "a", Some("c2"), &["X"], false),
            cite(SourceTag::Wos, "a", Some("c2"), &["Y"], true),
            cite(SourceTag::Wos, "a", Some("c3"), &["Z"], false),
        ];
        let f = unify_citations(&cites, &unified);
        let c = classify_citations(&f, &profile, &cites);
        let key = |s: &str| CitationKey { cited_doi: doi("a"), citing_doi: doi(s) };
        assert_eq!(c.self_citation_keys, [key("c1")].into());
        assert_eq!(c.retracted_citation_keys, [key("c2")].into());
    }

    #[test]
    fn exclusion_union_counts_once() {
        let profile = AuthorProfile::new("S-1", "", "A").unwrap();
        let pubs = vec![publication(SourceTag::Scopus, Some("a"))];
        let cites = [
            cite(SourceTag::Scopus, "a", Some("c1"), &["S-1"], true),
            cite(SourceTag::Scopus, "a", Some("c2"), &[], false),
        ];
        let r = conflate(&profile, pubs, &cites);
        assert_eq!(compute_metrics(&r, false, false).citation_count, 1);
        assert_eq!(compute_metrics(&r, true, false).citation_count, 1);
        assert_eq!(compute_metrics(&r, false, true).citation_count, 1);
        assert_eq!(compute_metrics(&r, true, true).citation_count, 2);
    }

    #[test]
    fn metrics_with_exclusions() {
        // a: 1 authentic + 1 self + 1 retracted; b: 2 authentic; c: none.
        let profile = AuthorProfile::new("S-1", "W-1", "A").unwrap();
        let pubs = vec![
            publication(SourceTag::Scopus, Some("a")),
            publication(SourceTag::Scopus, Some("b")),
            publication(SourceTag::Wos, Some("c")),
        ];
        let cites = [
            cite(SourceTag::Scopus, "a", Some("x1"), &["Q"], false),
            cite(SourceTag::Scopus, "a", Some("x2"), &["W-1"], false),
            cite(SourceTag::Wos, "a", Some("x3"), &["R"], true),
            cite(SourceTag::Wos, "b", Some("y1"), &["R"], false),
            cite(SourceTag::Wos, "b", Some("y2"), &["R"], false),
        ];
        let r = conflate(&profile, pubs, &cites);
        r.check_invariants().unwrap();
        let all = compute_metrics(&r, true, true);
        assert_eq!((all.h_index, all.citation_count, all.publication_count), (2, 5, 3));
        let none = compute_metrics(&r, false, false);
        assert_eq!((none.h_index, none.citation_count, none.publication_count), (1, 3, 3));
    }

    #[test]
    fn empty_everything() {
        let profile = AuthorProfile::new("S-1", "", "A").unwrap();
        let r = conflate(&profile, vec![], &[]);
        r.check_invariants().unwrap();
        let m = compute_metrics(&r, true, true);
        assert_eq!((m.h_index, m.publication_count, m.citation_count), (0, 0, 0));
        assert!(!r.audit_flag);
    }

    #[test]
    fn invariant_checker_catches_overlap() {
        let mut r = ConflateResult {
            unified_pub_dois: set(&["a"]),
            common_pub_dois: set(&["a"]),
            ..ConflateResult::default()
        };
        r.unique_pub_dois_by_source.insert(SourceTag::Scopus, set(&["a"]));
        assert!(r.check_invariants().is_err());
    }

    #[test]
    fn result_serde_round_trip() {
        let profile = AuthorProfile::new("S-1", "", "A").unwrap();
        let r = conflate(
            &profile,
            vec![publication(SourceTag::Scopus, Some("a"))],
            &[cite(SourceTag::Scopus, "a", Some("c"), &["S-1"], false)],
        );
        let text = serde_json::to_string(&r).unwrap();
        let back: ConflateResult = serde_json::from_str(&text).unwrap();
        assert_eq!(back, r);
    }
}
