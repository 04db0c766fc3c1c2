//! `por`: ingestion, conflation, scripted consent sessions, node control and
//! chain inspection.
//!
//! Results go to stdout as JSON documents. Failures print a `por.error.v1`
//! document on stderr and exit nonzero.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use por_core::bibdata::{load_document, AuthorProfile, BibDocument, SourceTag};
use por_core::clock::ClockSpec;
use por_core::conflate::{conflate, AuditReport, ConflateResult};
use por_core::keys::{key_file_json, load_key_file, AuthorKey, Keyring};
use por_core::ledger::{validate_encoded_blocks, Verdict, CHAIN_SCHEMA};
use por_core::netsync::PeerAddr;
use por_core::por::{SessionState, UnsignedAttestation};
use por_node::wire::{
    ConsentRequest, ConsentStage, SessionRequest, VerdictResponse, ERROR_SCHEMA, SESSION_REQUEST_SCHEMA,
    VERDICT_SCHEMA,
};
use por_node::{ClientError, NodeClient, NodeConfig, NodeError};
use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

const CONFLATE_SCHEMA: &str = "por.conflate.v1";
const DEFAULT_NODE: &str = "http://127.0.0.1:8080";

/// Exit code for a chain that fails validation.
const EXIT_INVALID_CHAIN: u8 = 2;

#[derive(Parser)]
#[command(name = "por", version, about = "Proof-of-Reference metrics ledger")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Normalize a por.bib.v1 document from one source.
    Ingest {
        #[arg(long, value_enum)]
        source: Source,
        /// Input document.
        #[arg(long = "in")]
        input: PathBuf,
        /// Where to write the normalized document.
        #[arg(long)]
        out: PathBuf,
    },
    /// Unify publications and citations from both sources for one author.
    Conflate {
        /// Scopus document; repeat for several files.
        #[arg(long, required = true)]
        scopus: Vec<PathBuf>,
        /// Web of Science document; repeat for several files.
        #[arg(long, required = true)]
        wos: Vec<PathBuf>,
        /// Author profile with scopus_id and/or wos_id.
        #[arg(long)]
        author: PathBuf,
        /// Where to write the por.conflate.v1 result.
        #[arg(long)]
        out: PathBuf,
    },
    /// Consent sessions.
    #[command(subcommand)]
    Session(SessionCommand),
    /// Chain inspection.
    #[command(subcommand)]
    Chain(ChainCommand),
    /// Run a ledger node.
    #[command(subcommand)]
    Node(NodeCommand),
    /// Peer registration.
    #[command(subcommand)]
    Peers(PeersCommand),
    /// Author signing keys.
    #[command(subcommand)]
    Keys(KeysCommand),
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    Scopus,
    Wos,
}

impl From<Source> for SourceTag {
    fn from(s: Source) -> Self {
        match s {
            Source::Scopus => SourceTag::Scopus,
            Source::Wos => SourceTag::Wos,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum YesNo {
    Yes,
    No,
}

impl YesNo {
    fn agree(self) -> bool {
        self == YesNo::Yes
    }
}

#[derive(Subcommand)]
enum SessionCommand {
    /// Drive a full consent session against a node without interaction.
    Run {
        /// por.conflate.v1 document from `por conflate`.
        #[arg(long)]
        conflate: PathBuf,
        /// Include self-citations.
        #[arg(long = "self", value_enum)]
        include_self: YesNo,
        /// Include citations from retracted works.
        #[arg(long = "retracted", value_enum)]
        include_retracted: YesNo,
        /// Publish the metrics to the chain.
        #[arg(long, value_enum)]
        publish: YesNo,
        /// Author key file; the attestation is signed locally. Without it
        /// the node signs with its keyring.
        #[arg(long)]
        key: Option<PathBuf>,
        #[arg(long, default_value = DEFAULT_NODE)]
        node: String,
        /// Clock for the publish decision time: `system` or `fixed:<millis>`.
        #[arg(long, default_value = "system")]
        clock: ClockSpec,
    },
}

#[derive(Args)]
struct ChainSource {
    /// Node base URL.
    #[arg(long, conflicts_with = "file")]
    node: Option<String>,
    /// Stored chain file.
    #[arg(long)]
    file: Option<PathBuf>,
}

#[derive(Subcommand)]
enum ChainCommand {
    /// Print the chain document.
    Show {
        #[command(flatten)]
        source: ChainSource,
    },
    /// Validate every block; exits 2 and prints the violating index on failure.
    Validate {
        #[command(flatten)]
        source: ChainSource,
        /// Keyring with the authors' public keys. With --node and no keyring
        /// the node's own verdict is reported.
        #[arg(long)]
        keyring: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum NodeCommand {
    /// Start a node and serve until interrupted.
    Serve(ServeArgs),
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long, env = "POR_NODE_PORT", default_value_t = por_node::DEFAULT_PORT)]
    port: u16,
    #[arg(long, default_value = por_node::DEFAULT_HOST)]
    host: String,
    #[arg(long, env = "POR_DATA_DIR", default_value = "por-data")]
    data_dir: PathBuf,
    /// Comma-separated host:port list.
    #[arg(long, value_delimiter = ',')]
    peers: Vec<PeerAddr>,
    #[arg(long)]
    keyring: Option<PathBuf>,
    /// `system` or `fixed:<millis>`.
    #[arg(long, default_value = "system")]
    clock: ClockSpec,
    /// Origin allowed by CORS.
    #[arg(long, default_value_t = por_node::default_ui_origin())]
    ui_origin: String,
    /// Host peers should use to reach this node.
    #[arg(long, default_value = por_node::DEFAULT_HOST)]
    advertise_host: String,
}

#[derive(Subcommand)]
enum PeersCommand {
    /// Register a peer with a node.
    Add {
        peer: PeerAddr,
        #[arg(long, default_value = DEFAULT_NODE)]
        node: String,
    },
}

#[derive(Subcommand)]
enum KeysCommand {
    /// Create a new author key file and optionally register it in a keyring.
    Generate {
        #[arg(long)]
        author_ref: String,
        #[arg(long)]
        out: PathBuf,
        /// Keyring to create or update with the public key.
        #[arg(long)]
        keyring: Option<PathBuf>,
        /// Also store the secret key in the keyring, so a node can sign.
        #[arg(long, requires = "keyring")]
        node_signs: bool,
    },
}

#[derive(Debug)]
struct CliError {
    code: &'static str,
    message: String,
    exit: u8,
}

impl CliError {
    fn new(code: &'static str, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
            exit: 1,
        }
    }
}

impl From<por_core::bibdata::BibError> for CliError {
    fn from(e: por_core::bibdata::BibError) -> Self {
        CliError::new("bibdata", e.to_string())
    }
}

impl From<por_core::keys::KeyError> for CliError {
    fn from(e: por_core::keys::KeyError) -> Self {
        CliError::new("key", e.to_string())
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        match e {
            ClientError::Api { body, status } => CliError::new("node", format!("{status} {}: {}", body.code, body.message)),
            other => CliError::new("transport", other.to_string()),
        }
    }
}

impl From<NodeError> for CliError {
    fn from(e: NodeError) -> Self {
        CliError::new(e.code(), e.to_string())
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> CliResult {
    fs::write(path, text).map_err(|e| CliError::new("io", format!("{}: {e}", path.display())))
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("output serializes"));
}

#[derive(Serialize, Deserialize)]
struct ConflateDoc {
    schema: String,
    author: AuthorProfile,
    result: ConflateResult,
    audit: AuditReport,
}

fn ingest(source: SourceTag, input: &Path, out: &Path) -> CliResult {
    let doc = load_document(input)?;
    let pubs = doc.publications(source)?;
    let cites = doc.citations(source)?;
    let normalized = BibDocument::from_records(source, &pubs.records, &cites.records);
    write(out, &normalized.to_json_pretty())?;
    print_json(&serde_json::json!({
        "schema": "por.ingest-report.v1",
        "source": source,
        "publications": pubs.report,
        "citations": cites.report,
    }));
    Ok(())
}

fn run_conflate(scopus: &[PathBuf], wos: &[PathBuf], author: &Path, out: &Path) -> CliResult {
    let profile = AuthorProfile::load(author)?;
    let mut publications = Vec::new();
    let mut citations = Vec::new();
    for (source, paths) in [(SourceTag::Scopus, scopus), (SourceTag::Wos, wos)] {
        for path in paths {
            let doc = load_document(path)?;
            publications.extend(doc.publications(source)?.records);
            citations.extend(doc.citations(source)?.records);
        }
    }
    let result = conflate(&profile, publications, &citations);
    let audit = result.audit_report();
    let doc = ConflateDoc {
        schema: CONFLATE_SCHEMA.into(),
        author: profile,
        result,
        audit,
    };
    write(out, &serde_json::to_string_pretty(&doc).expect("result serializes"))?;
    print_json(&doc.audit);
    Ok(())
}

struct RunArgs {
    conflate: PathBuf,
    include_self: bool,
    include_retracted: bool,
    publish: bool,
    key: Option<PathBuf>,
    node: String,
    clock: ClockSpec,
}

fn session_run(args: RunArgs) -> CliResult {
    let doc: ConflateDoc = serde_json::from_str(&read(&args.conflate)?)
        .map_err(|e| CliError::new("schema_violation", format!("{}: {e}", args.conflate.display())))?;
    if doc.schema != CONFLATE_SCHEMA {
        return Err(CliError::new("schema_violation", format!("unexpected schema {:?}", doc.schema)));
    }
    let key = match &args.key {
        Some(path) => {
            let (author_ref, key) = load_key_file(path)?;
            if author_ref != doc.author.author_ref() {
                return Err(CliError::new(
                    "key",
                    format!("key belongs to {author_ref:?}, session author is {:?}", doc.author.author_ref()),
                ));
            }
            Some(key)
        }
        None => None,
    };
    let client = NodeClient::new(&args.node);
    let opened = client.open_session(&SessionRequest {
        schema: SESSION_REQUEST_SCHEMA.into(),
        author: doc.author,
        conflate: Some(doc.result),
        scopus: vec![],
        wos: vec![],
    })?;
    let id = opened.session.session_id;
    let ask = |stage, agree| ConsentRequest {
        stage,
        agree,
        signature: None,
        decided_at: None,
    };
    client.consent(&id, &ask(ConsentStage::SelfCitations, args.include_self))?;
    client.consent(&id, &ask(ConsentStage::Retracted, args.include_retracted))?;
    let ready = client.consent(&id, &ask(ConsentStage::Ack, true))?;
    let mut publish = ask(ConsentStage::Publish, args.publish);
    if let (true, Some(key)) = (args.publish, &key) {
        let view = &ready.session;
        if view.state != SessionState::AwaitPublish {
            return Err(CliError::new("node", format!("session is {} instead of awaiting publish", view.state)));
        }
        let digest = view
            .dataset_digest
            .clone()
            .ok_or_else(|| CliError::new("node", "node did not report the dataset digest"))?;
        let decided_at = args.clock.build().now_ms();
        let unsigned = UnsignedAttestation {
            include_self: args.include_self,
            include_retracted: args.include_retracted,
            publish: true,
            dataset_digest: digest,
            decided_at,
        };
        publish.signature = Some(key.sign(&unsigned.canonical_bytes()).to_hex());
        publish.decided_at = Some(decided_at);
    }
    let outcome = client.consent(&id, &publish)?;
    print_json(&outcome);
    Ok(())
}

#[derive(Deserialize)]
struct RawChain<'a> {
    schema: String,
    #[serde(borrow)]
    blocks: Vec<&'a RawValue>,
}

fn chain_bytes(source: &ChainSource) -> CliResult<Vec<u8>> {
    match (&source.node, &source.file) {
        (_, Some(path)) => fs::read(path).map_err(|e| CliError::new("io", format!("{}: {e}", path.display()))),
        (node, None) => Ok(NodeClient::new(node.as_deref().unwrap_or(DEFAULT_NODE)).chain_bytes()?),
    }
}

fn validate_bytes(bytes: &[u8], keys: &Keyring) -> CliResult<VerdictResponse> {
    let raw: RawChain<'_> = serde_json::from_slice(bytes)
        .map_err(|e| CliError::new("storage_corrupt", format!("not a chain document: {e}")))?;
    if raw.schema != CHAIN_SCHEMA {
        return Err(CliError::new("storage_corrupt", format!("unexpected schema {:?}", raw.schema)));
    }
    let encoded: Vec<&[u8]> = raw.blocks.iter().map(|b| b.get().as_bytes()).collect();
    Ok(VerdictResponse {
        schema: VERDICT_SCHEMA.into(),
        length: encoded.len(),
        verdict: validate_encoded_blocks(&encoded, keys),
    })
}

fn chain_validate(source: &ChainSource, keyring: Option<&Path>) -> CliResult {
    let response = match (keyring, &source.file) {
        (None, None) => NodeClient::new(source.node.as_deref().unwrap_or(DEFAULT_NODE)).validate()?,
        _ => {
            let keys = match keyring {
                Some(path) => Keyring::load(path)?,
                None => Keyring::new(),
            };
            validate_bytes(&chain_bytes(source)?, &keys)?
        }
    };
    print_json(&response);
    match response.verdict {
        Verdict::Valid => Ok(()),
        Verdict::Violation { index, reason } => Err(CliError {
            code: "chain_invalid",
            message: format!("block {index} violates the chain rules: {reason}"),
            exit: EXIT_INVALID_CHAIN,
        }),
    }
}

fn chain_show(source: &ChainSource) -> CliResult {
    let bytes = chain_bytes(source)?;
    let value: serde_json::Value = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::new("storage_corrupt", format!("not a chain document: {e}")))?;
    print_json(&value);
    Ok(())
}

fn node_serve(args: ServeArgs) -> CliResult {
    let config = NodeConfig {
        host: args.host,
        port: args.port,
        data_dir: args.data_dir,
        peers: args.peers,
        keyring: args.keyring,
        clock: args.clock,
        ui_origin: args.ui_origin,
        advertise_host: args.advertise_host,
    };
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::new("io", e.to_string()))?;
    runtime.block_on(async move {
        let handle = por_node::serve(config).await?;
        println!(
            "{}",
            serde_json::json!({"schema": "por.listening.v1", "addr": handle.local_addr().to_string()})
        );
        handle
            .run_until(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| CliError::new("io", e.to_string()))
    })
}

fn keys_generate(author_ref: &str, out: &Path, keyring: Option<&Path>, node_signs: bool) -> CliResult {
    if author_ref.is_empty() || author_ref.chars().any(char::is_whitespace) {
        return Err(CliError::new("key", "author_ref must be non-empty without whitespace"));
    }
    let key = AuthorKey::generate();
    write(out, &key_file_json(author_ref, &key))?;
    if let Some(path) = keyring {
        let mut ring = if path.exists() { Keyring::load(path)? } else { Keyring::new() };
        if node_signs {
            ring.register_signing(author_ref, key.clone());
        } else {
            ring.register(author_ref, key.public_key());
        }
        write(path, &ring.to_json())?;
    }
    print_json(&serde_json::json!({
        "schema": "por.public-key.v1",
        "author_ref": author_ref,
        "public_key": key.public_key().to_hex(),
    }));
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Ingest { source, input, out } => ingest(source.into(), &input, &out),
        Command::Conflate {
            scopus,
            wos,
            author,
            out,
        } => run_conflate(&scopus, &wos, &author, &out),
        Command::Session(SessionCommand::Run {
            conflate,
            include_self,
            include_retracted,
            publish,
            key,
            node,
            clock,
        }) => session_run(RunArgs {
            conflate,
            include_self: include_self.agree(),
            include_retracted: include_retracted.agree(),
            publish: publish.agree(),
            key,
            node,
            clock,
        }),
        Command::Chain(ChainCommand::Show { source }) => chain_show(&source),
        Command::Chain(ChainCommand::Validate { source, keyring }) => chain_validate(&source, keyring.as_deref()),
        Command::Node(NodeCommand::Serve(args)) => node_serve(args),
        Command::Peers(PeersCommand::Add { peer, node }) => {
            print_json(&NodeClient::new(node).add_peer(&peer)?);
            Ok(())
        }
        Command::Keys(KeysCommand::Generate {
            author_ref,
            out,
            keyring,
            node_signs,
        }) => keys_generate(&author_ref, &out, keyring.as_deref(), node_signs),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let doc = serde_json::json!({"schema": ERROR_SCHEMA, "code": e.code, "message": e.message});
            eprintln!("{doc}");
            ExitCode::from(e.exit)
        }
    }
}
