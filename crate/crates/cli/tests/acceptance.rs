//! Acceptance suite. Runs without the libtest harness so that every
//! criterion prints exactly one PASS or FAIL line.

use std::collections::BTreeSet;
use std::io::{BufRead, BufReader};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Stdio};
use std::time::{Duration, Instant};

use por_core::bibdata::{validate_doi, AuthorProfile, CitationRecord, Doi, PublicationRecord, SourceTag};
use por_core::clock::ClockSpec;
use por_core::conflate::{compute_metrics, conflate, UnifiedMetrics};
use por_core::fixtures;
use por_core::keys::{key_file_json, Keyring};
use por_core::ledger::{append_block, validate_encoded_blocks, Chain, Verdict};
use por_core::netsync::{simulate, SimEvent, Transcript};
use por_core::por::{open_session, verify_attestation, BlockPayload, PublishOutcome, SessionState};
use por_core::FixedClock;
use por_node::wire::{ConsentRequest, ConsentStage, SessionRequest, SESSION_REQUEST_SCHEMA};
use por_node::{start_background, NodeConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

type Check = Result<String, String>;
type Alteration = (&'static str, fn(&mut BlockPayload));
type Criterion = (&'static str, fn() -> Check);

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if !$cond {
            return Err(format!($($msg)+));
        }
    };
}

const T0: u64 = 1_700_000_000_000;

fn doi(s: &str) -> Doi {
    validate_doi(s).expect("generated DOI is valid")
}

// ---------------------------------------------------------------------------
// h-index oracle

struct GeneratedCitation {
    self_citation: bool,
    retracted: bool,
}

struct GeneratedAuthor {
    profile: AuthorProfile,
    publications: Vec<PublicationRecord>,
    citations: Vec<CitationRecord>,
    /// Ground truth per unified publication.
    truth: Vec<Vec<GeneratedCitation>>,
}

fn pick_sources(rng: &mut ChaCha8Rng) -> &'static [SourceTag] {
    match rng.gen_range(0..3) {
        0 => &[SourceTag::Scopus],
        1 => &[SourceTag::Wos],
        _ => &[SourceTag::Scopus, SourceTag::Wos],
    }
}

fn random_author(i: usize, rng: &mut ChaCha8Rng) -> GeneratedAuthor {
    let scopus_id = format!("S{i}");
    let wos_id = format!("W-{i}");
    let profile = fixtures::profile_with_ids(&scopus_id, &wos_id);
    let mut publications = Vec::new();
    let mut citations = Vec::new();
    let mut truth = Vec::new();
    for p in 0..rng.gen_range(0..=200usize) {
        let cited = format!("10.5000/a{i}.p{p}");
        for &source in pick_sources(rng) {
            publications.push(PublicationRecord {
                source,
                doi: Some(doi(&cited)),
                title: format!("work {p}"),
                year: 2000 + (p % 20) as i32,
                author_ids: [scopus_id.clone()].into(),
            });
        }
        let mut cites = Vec::new();
        for c in 0..rng.gen_range(0..=50usize) {
            let self_citation = rng.gen_bool(0.15);
            let retracted = rng.gen_bool(0.1);
            let mut authors: BTreeSet<String> = [format!("X{}", rng.gen::<u32>())].into();
            if self_citation {
                authors.insert(if rng.gen() { scopus_id.clone() } else { wos_id.clone() });
            }
            for &source in pick_sources(rng) {
                citations.push(CitationRecord {
                    source,
                    cited_doi: doi(&cited),
                    citing_doi: Some(doi(&format!("10.6000/a{i}.p{p}.c{c}"))),
                    citing_author_ids: authors.clone(),
                    retracted,
                });
            }
            cites.push(GeneratedCitation {
                self_citation,
                retracted,
            });
        }
        truth.push(cites);
    }
    GeneratedAuthor {
        profile,
        publications,
        citations,
        truth,
    }
}

/// Largest h such that at least h publications have at least h citations,
/// found by trying every threshold.
fn oracle_h(counts: &[u64]) -> u64 {
    (0..=counts.len() as u64)
        .filter(|&h| counts.iter().filter(|&&c| c >= h).count() as u64 >= h)
        .max()
        .unwrap_or(0)
}

fn h_index_oracle() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0001);
    let authors: Vec<GeneratedAuthor> = (0..1000).map(|i| random_author(i, &mut rng)).collect();
    let mut max_h = 0;
    let started = Instant::now();
    for (i, author) in authors.into_iter().enumerate() {
        let include_self = rng.gen();
        let include_retracted = rng.gen();
        let result = conflate(&author.profile, author.publications, &author.citations);
        let metrics = compute_metrics(&result, include_self, include_retracted);
        let counts: Vec<u64> = author
            .truth
            .iter()
            .map(|cites| {
                cites
                    .iter()
                    .filter(|c| (include_self || !c.self_citation) && (include_retracted || !c.retracted))
                    .count() as u64
            })
            .collect();
        let expected_h = oracle_h(&counts);
        ensure!(
            metrics.h_index == expected_h,
            "author {i}: h_index {} but oracle says {expected_h}",
            metrics.h_index
        );
        ensure!(
            metrics.publication_count == author.truth.len() as u64
                && metrics.citation_count == counts.iter().sum::<u64>(),
            "author {i}: counts {:?} disagree with generated data",
            metrics
        );
        max_h = max_h.max(expected_h);
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(10), "took {elapsed:.2?}, limit 10s");
    Ok(format!("1000 authors agree with the threshold-scan oracle (max h {max_h}) in {elapsed:.2?}"))
}

// ---------------------------------------------------------------------------
// Consent matrix

fn consent_matrix() -> Check {
    let result = fixtures::canonical_conflate();
    let key = fixtures::author_key();
    let public = key.public_key();
    // Hand-derived from the fixture: a has 1 authentic + 1 self + 1 retracted
    // citation, b has 2 authentic, c has none.
    let oracle = |s: bool, t: bool| -> (u64, u64) {
        let a = 1 + s as u64 + t as u64;
        let counts = [a, 2, 0];
        (oracle_h(&counts), counts.iter().sum())
    };
    let mut seen = Vec::new();
    for include_self in [false, true] {
        for include_retracted in [false, true] {
            for publish in [false, true] {
                let combo = format!("(self={include_self}, retracted={include_retracted}, publish={publish})");
                let mut session =
                    open_session(fixtures::profile(), result.clone(), T0).map_err(|e| format!("{combo}: {e}"))?;
                session.answer_self(include_self).map_err(|e| e.to_string())?;
                session.answer_retracted(include_retracted).map_err(|e| e.to_string())?;
                session.acknowledge_metrics().map_err(|e| e.to_string())?;
                let outcome = session.answer_publish(publish, &key, T0).map_err(|e| e.to_string())?;
                let (h, citations) = oracle(include_self, include_retracted);
                let metrics: UnifiedMetrics = match (&outcome, publish) {
                    (PublishOutcome::Published(payload), true) => {
                        ensure!(session.state() == SessionState::Published, "{combo}: not published");
                        ensure!(verify_attestation(payload, &public), "{combo}: attestation does not verify");
                        payload.metrics
                    }
                    (PublishOutcome::Declined(view), false) => {
                        ensure!(session.state() == SessionState::Declined, "{combo}: not declined");
                        view.metrics
                    }
                    _ => return Err(format!("{combo}: wrong outcome")),
                };
                ensure!(
                    metrics.h_index == h && metrics.citation_count == citations && metrics.publication_count == 3,
                    "{combo}: got {metrics:?}, expected h {h} and {citations} citations"
                );
                ensure!(
                    session.answer_self(true).is_err() && session.answer_publish(true, &key, T0).is_err(),
                    "{combo}: terminal state accepted another answer"
                );
                seen.push(((include_self, include_retracted), metrics));
            }
        }
    }
    let get = |s, t| seen.iter().find(|(k, _)| *k == (s, t)).expect("combo ran").1;
    ensure!(get(true, true).h_index == 2, "include-both h_index is not 2");
    ensure!(get(false, false).h_index == 1, "exclude-both h_index is not 1");
    for ((s, t), m) in &seen {
        for (s2, t2) in [(true, *t), (*s, true)] {
            let wider = get(s2, t2);
            ensure!(
                m.h_index <= wider.h_index && m.citation_count <= wider.citation_count,
                "excluding more raised metrics: {m:?} vs {wider:?}"
            );
        }
    }
    Ok("8 combinations terminate; published h_index 2 (include both) and 1 (exclude both); exclusion monotone".into())
}

// ---------------------------------------------------------------------------
// Pipeline on the canonical fixture

fn pipeline() -> Check {
    let result = fixtures::canonical_conflate();
    let expected_unified: BTreeSet<Doi> = [
        "10.1109/access.2021.3051234",
        "10.1016/j.joi.2020.101045",
        "10.1007/s11192-021-03901-2",
    ]
    .into_iter()
    .map(doi)
    .collect();
    ensure!(result.unified_pub_dois == expected_unified, "unified set {:?}", result.unified_pub_dois);
    ensure!(
        result.common_pub_dois == [doi("10.1109/access.2021.3051234")].into(),
        "common set {:?}",
        result.common_pub_dois
    );
    ensure!(result.rejected_pub_count == 1, "rejected {}", result.rejected_pub_count);
    ensure!(!result.audit_flag, "canonical fixture raised the audit flag");
    let disjoint = fixtures::disjoint_conflate();
    ensure!(disjoint.common_citation_count == 0, "disjoint fixture shares citations");
    ensure!(disjoint.audit_flag, "zero citation overlap did not raise the audit flag");
    Ok(format!(
        "unified {}, common {}, rejected {}; zero overlap raises audit_flag",
        result.unified_pub_dois.len(),
        result.common_pub_dois.len(),
        result.rejected_pub_count
    ))
}

// ---------------------------------------------------------------------------
// Tamper suite

fn keyring() -> Keyring {
    let mut ring = Keyring::new();
    ring.register(fixtures::profile().author_ref(), fixtures::author_key().public_key());
    ring
}

fn tamper_suite() -> Check {
    let keys = keyring();
    let author = fixtures::profile().author_ref().to_string();
    let result = fixtures::canonical_conflate();
    let mut chain = Chain::genesis();
    for n in 0..5u64 {
        let payload = fixtures::signed_payload(&result, &fixtures::author_key(), n.is_multiple_of(2), n.is_multiple_of(3), T0 + n);
        chain = append_block(&chain, payload, &author, &FixedClock(T0 + n), &keys).map_err(|e| e.to_string())?;
    }
    ensure!(chain.len() == 6, "chain has {} blocks", chain.len());
    let encoded: Vec<Vec<u8>> = chain.blocks().iter().map(|b| b.encode()).collect();
    ensure!(validate_encoded_blocks(&encoded, &keys) == Verdict::Valid, "untouched chain is not valid");

    let mut rng = ChaCha8Rng::seed_from_u64(0x7a3e);
    let mut flips = 0usize;
    for index in 1..encoded.len() {
        for pos in 0..encoded[index].len() {
            let random_mask = rng.gen_range(1..=255u8);
            for mask in [0x01u8, 0x80, random_mask] {
                let mut tampered = encoded.clone();
                tampered[index][pos] ^= mask;
                match validate_encoded_blocks(&tampered, &keys) {
                    Verdict::Violation { index: got, .. } if got == index as u64 => flips += 1,
                    other => {
                        return Err(format!("block {index} byte {pos} ^ {mask:#04x}: got {other:?}"));
                    }
                }
            }
        }
    }

    let original = chain.blocks()[1].payload.clone().expect("payload");
    let public = fixtures::author_key().public_key();
    ensure!(verify_attestation(&original, &public), "untouched payload rejected");
    let alterations: Vec<Alteration> = vec![
        ("h_index+1", |p| p.metrics.h_index += 1),
        ("h_index-1", |p| p.metrics.h_index = p.metrics.h_index.wrapping_sub(1)),
        ("publication_count", |p| p.metrics.publication_count += 1),
        ("citation_count", |p| p.metrics.citation_count += 1),
        ("included_self", |p| p.metrics.included_self ^= true),
        ("included_retracted", |p| p.metrics.included_retracted ^= true),
        ("include_self flag", |p| p.attestation.include_self ^= true),
        ("include_retracted flag", |p| p.attestation.include_retracted ^= true),
        ("publish flag", |p| p.attestation.publish ^= true),
        ("both flags with matching metrics", |p| {
            p.attestation.include_self ^= true;
            p.attestation.include_retracted ^= true;
            p.metrics = p.evidence.metrics(p.attestation.include_self, p.attestation.include_retracted);
        }),
    ];
    for (name, alter) in &alterations {
        let mut payload = original.clone();
        alter(&mut payload);
        ensure!(!verify_attestation(&payload, &public), "altered {name} still verifies");
    }
    Ok(format!(
        "{flips} single-byte flips over 5 blocks each reported at their block; {} payload alterations rejected",
        alterations.len()
    ))
}

// ---------------------------------------------------------------------------
// Convergence

fn publish(node: usize, n: u64) -> SimEvent {
    SimEvent::Publish {
        node,
        author_ref: fixtures::profile().author_ref().to_string(),
        payload: fixtures::signed_payload(
            &fixtures::canonical_conflate(),
            &fixtures::author_key(),
            n.is_multiple_of(2),
            true,
            T0 + n,
        ),
    }
}

fn sync_round() -> [SimEvent; 3] {
    [SimEvent::Sync { node: 0 }, SimEvent::Sync { node: 1 }, SimEvent::Sync { node: 2 }]
}

/// Sync rounds after heal needed until all heads agree, if they ever do.
fn rounds_to_converge(t: &Transcript, heal_step: usize, rounds: usize) -> Option<usize> {
    (0..=rounds).find(|r| t.steps[heal_step + 3 * r].converged())
}

fn convergence() -> Check {
    let keys = keyring();
    let mut scripts: Vec<(String, Vec<SimEvent>)> = Vec::new();
    // One side of the partition ends strictly longer.
    scripts.push((
        "{0} vs {1,2}".into(),
        vec![
            publish(0, 1),
            SimEvent::Partition { group: [0].into() },
            publish(0, 2),
            publish(0, 3),
            publish(1, 4),
            publish(2, 5),
            publish(1, 6),
            SimEvent::Heal,
        ],
    ));
    let mut rng = ChaCha8Rng::seed_from_u64(0xc0de);
    for k in 0..20 {
        let lone = rng.gen_range(0..3usize);
        let others: Vec<usize> = (0..3).filter(|&i| i != lone).collect();
        let short = rng.gen_range(0..4u64);
        let (long_side_lone, mut events) = (rng.gen::<bool>(), vec![SimEvent::Partition { group: [lone].into() }]);
        let mut n = 100 * (k + 1);
        let (lone_count, pair_count) = if long_side_lone { (short + 1, short) } else { (short, short + 1) };
        for _ in 0..lone_count {
            n += 1;
            events.push(publish(lone, n));
        }
        for _ in 0..pair_count {
            n += 1;
            events.push(publish(others[rng.gen_range(0..2)], n));
        }
        events.push(SimEvent::Heal);
        scripts.push((format!("random #{k}"), events));
    }

    let mut worst = 0;
    for (name, mut script) in scripts {
        let heal_step = script.len();
        for _ in 0..2 {
            script.extend(sync_round());
        }
        for seed in [1u64, 42, 2024] {
            let t = simulate(3, &script, seed, &keys).map_err(|e| format!("{name}: {e}"))?;
            ensure!(t.always_safe(), "{name} seed {seed}: a node held an invalid chain");
            let again = simulate(3, &script, seed, &keys).map_err(|e| e.to_string())?;
            ensure!(t == again, "{name} seed {seed}: transcript is not deterministic");
            let rounds = rounds_to_converge(&t, heal_step, 2)
                .ok_or_else(|| format!("{name} seed {seed}: heads still differ after 2 sync rounds"))?;
            ensure!(t.last().converged(), "{name} seed {seed}: diverged again");
            worst = worst.max(rounds);
        }
    }
    Ok(format!(
        "21 partition/heal scripts x 3 seeds converge within {worst} sync round(s); always safe; deterministic"
    ))
}

// ---------------------------------------------------------------------------
// Defaults and CLI/HTTP parity

fn fixture_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures").join(name)
}

fn por() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_por"));
    cmd.env_remove("POR_NODE_PORT").env_remove("POR_DATA_DIR");
    cmd
}

fn run_por(args: &[&str]) -> Result<Vec<u8>, String> {
    let out = por().args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("por {args:?}: {}", String::from_utf8_lossy(&out.stderr)));
    }
    Ok(out.stdout)
}

fn default_port_and_ui_origin() -> Result<String, String> {
    ensure!(NodeConfig::default().port == 8080, "library default port is not 8080");
    ensure!(
        NodeConfig::default().ui_origin == "http://localhost:5000" && por_node::DEFAULT_UI_PORT == 5000,
        "UI origin is not http://localhost:5000"
    );
    let dir = TempDir::new().map_err(|e| e.to_string())?;
    let data = dir.path().join("data");
    let mut child = por()
        .args(["node", "serve", "--data-dir", data.to_str().unwrap()])
        .stdout(Stdio::piped())
        .stderr(Stdio::piped())
        .spawn()
        .map_err(|e| e.to_string())?;
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .map_err(|e| e.to_string())?;
    let checked = (|| {
        if line.is_empty() {
            let mut err = String::new();
            let _ = std::io::Read::read_to_string(child.stderr.as_mut().unwrap(), &mut err);
            return Err(format!("node did not start with default flags: {err}"));
        }
        let listening: serde_json::Value = serde_json::from_str(&line).map_err(|e| e.to_string())?;
        ensure!(listening["addr"] == "127.0.0.1:8080", "listening on {}", listening["addr"]);
        let http = reqwest::blocking::Client::new();
        let status = http.get("http://127.0.0.1:8080/status").send().map_err(|e| e.to_string())?;
        ensure!(status.status().is_success(), "status endpoint answered {}", status.status());
        let preflight = http
            .request(reqwest::Method::OPTIONS, "http://127.0.0.1:8080/sessions")
            .header("origin", "http://localhost:5000")
            .header("access-control-request-method", "POST")
            .header("access-control-request-headers", "content-type")
            .send()
            .map_err(|e| e.to_string())?;
        let allowed = preflight.headers().get("access-control-allow-origin").cloned();
        ensure!(
            allowed.as_ref().map(|v| v == "http://localhost:5000").unwrap_or(false),
            "CORS preflight from the UI origin answered {allowed:?}"
        );
        Ok(())
    })();
    let _ = child.kill();
    let _ = child.wait();
    checked?;
    Ok("node binds 127.0.0.1:8080 by default; CORS admits http://localhost:5000".into())
}

fn parity() -> Result<String, String> {
    let dir = TempDir::new().map_err(|e| e.to_string())?;
    let author = fixtures::profile();
    let key = fixtures::author_key();

    // Node A signs with its keyring; driven over HTTP.
    let mut signing = Keyring::new();
    signing.register_signing(author.author_ref(), key.clone());
    let ring_a = dir.path().join("ring_a.json");
    std::fs::write(&ring_a, signing.to_json()).map_err(|e| e.to_string())?;
    // Node B holds only the public key; driven by the CLI with --key.
    let ring_b = dir.path().join("ring_b.json");
    std::fs::write(&ring_b, signing.public_only().to_json()).map_err(|e| e.to_string())?;

    let node = |name: &str, ring: PathBuf| {
        start_background(NodeConfig {
            port: 0,
            data_dir: dir.path().join(name),
            keyring: Some(ring),
            clock: ClockSpec::Fixed(T0),
            ..NodeConfig::default()
        })
        .map_err(|e| e.to_string())
    };
    let a = node("a", ring_a)?;
    let b = node("b", ring_b)?;

    let client = a.client();
    let opened = client
        .open_session(&SessionRequest {
            schema: SESSION_REQUEST_SCHEMA.into(),
            author: author.clone(),
            conflate: Some(fixtures::canonical_conflate()),
            scopus: vec![],
            wos: vec![],
        })
        .map_err(|e| e.to_string())?;
    let id = opened.session.session_id;
    let mut http_block = None;
    for (stage, agree) in [
        (ConsentStage::SelfCitations, true),
        (ConsentStage::Retracted, true),
        (ConsentStage::Ack, true),
        (ConsentStage::Publish, true),
    ] {
        let req = ConsentRequest {
            stage,
            agree,
            signature: None,
            decided_at: None,
        };
        http_block = client.consent(&id, &req).map_err(|e| e.to_string())?.block;
    }
    let http_block = http_block.ok_or("HTTP walkthrough produced no block")?;

    let result = dir.path().join("result.json");
    let key_path = dir.path().join("author.key.json");
    std::fs::write(&key_path, key_file_json(author.author_ref(), &key)).map_err(|e| e.to_string())?;
    let p = |path: &Path| path.to_str().unwrap().to_string();
    run_por(&[
        "conflate",
        "--scopus",
        &p(&fixture_path("scopus_a.json")),
        "--wos",
        &p(&fixture_path("wos_a.json")),
        "--wos",
        &p(&fixture_path("wos_cites_a.json")),
        "--author",
        &p(&fixture_path("profile.json")),
        "--out",
        &p(&result),
    ])?;
    run_por(&[
        "session",
        "run",
        "--conflate",
        &p(&result),
        "--self",
        "yes",
        "--retracted",
        "yes",
        "--publish",
        "yes",
        "--key",
        &p(&key_path),
        "--clock",
        &format!("fixed:{T0}"),
        "--node",
        &b.base_url(),
    ])?;
    let cli_blocks = b.client().chain_blocks().map_err(|e| e.to_string())?;
    let cli_block = cli_blocks.last().ok_or("CLI node has an empty chain")?;
    ensure!(cli_blocks.len() == 2, "CLI node has {} blocks", cli_blocks.len());
    ensure!(
        cli_block.encode() == http_block.encode(),
        "blocks differ:\n http {}\n cli  {}",
        String::from_utf8_lossy(&http_block.encode()),
        String::from_utf8_lossy(&cli_block.encode())
    );
    let chain_a = a.client().chain_bytes().map_err(|e| e.to_string())?;
    let chain_b = b.client().chain_bytes().map_err(|e| e.to_string())?;
    ensure!(chain_a == chain_b, "stored chains differ");
    Ok(format!("CLI and HTTP blocks byte-identical ({} bytes, hash {})", cli_block.encode().len(), &cli_block.hash[..16]))
}

fn defaults() -> Check {
    let bind = default_port_and_ui_origin()?;
    let parity = parity()?;
    Ok(format!("{bind}; {parity}"))
}

// ---------------------------------------------------------------------------

fn main() -> ExitCode {
    let criteria: [Criterion; 6] = [
        ("h-index oracle equivalence", h_index_oracle),
        ("consent matrix", consent_matrix),
        ("conflation pipeline", pipeline),
        ("tamper suite", tamper_suite),
        ("convergence", convergence),
        ("defaults and CLI/HTTP parity", defaults),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let took = started.elapsed();
        match outcome {
            Ok(detail) => println!("PASS  {name} [{took:.2?}]: {detail}"),
            Err(reason) => {
                failed += 1;
                println!("FAIL  {name} [{took:.2?}]: {reason}");
            }
        }
    }
    println!("acceptance: {} passed, {failed} failed", 6 - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
