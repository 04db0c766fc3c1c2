//! The ledger node: an HTTP service around the chain, consent sessions and
//! peer sync.
//!
//! [`serve`] runs inside an existing tokio runtime; [`start_background`]
//! owns its own runtime on a dedicated thread, for synchronous callers.

use std::io;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread;

use por_core::clock::ClockSpec;
use por_core::keys::{KeyError, Keyring};
use por_core::ledger::{Chain, LedgerError};
use por_core::netsync::{NodeState, PeerAddr};
use por_core::por::SessionStore;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::oneshot;

mod api;
pub mod client;
pub mod wire;

use api::router;
pub use client::{ClientError, HttpPeerClient, NodeClient};

pub const DEFAULT_PORT: u16 = 8080;
pub const DEFAULT_HOST: &str = "127.0.0.1";
/// Where the consent web application is served from.
pub const DEFAULT_UI_PORT: u16 = 5000;
pub const CHAIN_FILE: &str = "chain.json";

pub fn default_ui_origin() -> String {
    format!("http://localhost:{DEFAULT_UI_PORT}")
}

#[derive(Debug, Clone)]
pub struct NodeConfig {
    pub host: String,
    pub port: u16,
    pub data_dir: PathBuf,
    pub peers: Vec<PeerAddr>,
    pub keyring: Option<PathBuf>,
    pub clock: ClockSpec,
    /// Origin allowed by CORS.
    pub ui_origin: String,
    /// Host this node gives peers for reaching it back.
    pub advertise_host: String,
}

impl Default for NodeConfig {
    fn default() -> Self {
        NodeConfig {
            host: DEFAULT_HOST.into(),
            port: DEFAULT_PORT,
            data_dir: PathBuf::from("por-data"),
            peers: Vec::new(),
            keyring: None,
            clock: ClockSpec::System,
            ui_origin: default_ui_origin(),
            advertise_host: DEFAULT_HOST.into(),
        }
    }
}

impl NodeConfig {
    pub fn chain_path(&self) -> PathBuf {
        self.data_dir.join(CHAIN_FILE)
    }
}

#[derive(Debug, Error)]
pub enum NodeError {
    #[error("port {port} is already in use")]
    PortInUse { port: u16 },
    #[error(transparent)]
    StorageCorrupt(LedgerError),
    #[error("keyring {path}: {source}")]
    Keyring { path: PathBuf, source: KeyError },
    #[error("{context}: {source}")]
    Io { context: String, source: io::Error },
    #[error("invalid configuration: {0}")]
    Config(String),
}

impl NodeError {
    fn io(context: impl Into<String>, source: io::Error) -> Self {
        NodeError::Io {
            context: context.into(),
            source,
        }
    }

    /// Short machine-readable code.
    pub fn code(&self) -> &'static str {
        match self {
            NodeError::PortInUse { .. } => "port_in_use",
            NodeError::StorageCorrupt(_) => "storage_corrupt",
            NodeError::Keyring { .. } => "keyring",
            NodeError::Io { .. } => "io",
            NodeError::Config(_) => "config",
        }
    }
}

pub(crate) struct AppState {
    pub node: tokio::sync::Mutex<NodeState>,
    pub sessions: SessionStore,
    pub keys: Keyring,
    pub clock: Box<dyn por_core::Clock>,
    pub chain_path: PathBuf,
    pub data_dir: PathBuf,
}

fn load_keyring(path: Option<&Path>) -> Result<Keyring, NodeError> {
    let Some(path) = path else {
        return Ok(Keyring::new());
    };
    Keyring::load(path).map_err(|source| NodeError::Keyring {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads keyring and chain and prepares the shared state, without binding.
fn prepare(config: &NodeConfig, port: u16) -> Result<Arc<AppState>, NodeError> {
    std::fs::create_dir_all(&config.data_dir)
        .map_err(|e| NodeError::io(format!("creating {}", config.data_dir.display()), e))?;
    let data_dir = config
        .data_dir
        .canonicalize()
        .map_err(|e| NodeError::io(format!("resolving {}", config.data_dir.display()), e))?;
    let keys = load_keyring(config.keyring.as_deref())?;
    let chain_path = data_dir.join(CHAIN_FILE);
    let chain = match Chain::load_or_genesis(&chain_path, &keys) {
        Ok(chain) => chain,
        Err(e @ LedgerError::StorageCorrupt(_)) => return Err(NodeError::StorageCorrupt(e)),
        Err(LedgerError::Io { path, source }) => {
            return Err(NodeError::io(format!("reading {}", path.display()), source))
        }
        Err(other) => return Err(NodeError::Config(other.to_string())),
    };
    if !chain_path.exists() {
        chain
            .persist(&chain_path)
            .map_err(|e| NodeError::Config(format!("data directory not writable: {e}")))?;
    }
    let self_addr = PeerAddr::new(config.advertise_host.clone(), port).ok();
    let node_id = match &self_addr {
        Some(addr) => addr.to_string(),
        None => format!("{}:{}", config.advertise_host, port),
    };
    let mut node = NodeState::new(node_id, chain, self_addr);
    for peer in &config.peers {
        node.add_peer(peer.clone())
            .map_err(|e| NodeError::Config(format!("peer {peer}: {e}")))?;
    }
    Ok(Arc::new(AppState {
        node: tokio::sync::Mutex::new(node),
        sessions: SessionStore::default(),
        keys,
        clock: config.clock.build(),
        chain_path,
        data_dir,
    }))
}

async fn bind(config: &NodeConfig) -> Result<TcpListener, NodeError> {
    TcpListener::bind((config.host.as_str(), config.port))
        .await
        .map_err(|e| match e.kind() {
            io::ErrorKind::AddrInUse => NodeError::PortInUse { port: config.port },
            _ => NodeError::io(format!("binding {}:{}", config.host, config.port), e),
        })
}

/// A running node inside the caller's runtime.
pub struct NodeHandle {
    local_addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    task: tokio::task::JoinHandle<io::Result<()>>,
}

impl NodeHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub async fn shutdown(mut self) -> io::Result<()> {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        self.task.await.unwrap_or(Ok(()))
    }

    /// Serves until `signal` resolves, then shuts down gracefully.
    pub async fn run_until(mut self, signal: impl std::future::Future<Output = ()>) -> io::Result<()> {
        tokio::select! {
            res = &mut self.task => return res.unwrap_or(Ok(())),
            _ = signal => {}
        }
        self.shutdown().await
    }
}

pub async fn serve(config: NodeConfig) -> Result<NodeHandle, NodeError> {
    let listener = bind(&config).await?;
    let local_addr = listener
        .local_addr()
        .map_err(|e| NodeError::io("reading bound address", e))?;
    let state = prepare(&config, local_addr.port())?;
    let app = router(state, &config.ui_origin)?;
    let (tx, rx) = oneshot::channel::<()>();
    let task = tokio::spawn(async move {
        axum::serve(listener, app)
            .with_graceful_shutdown(async {
                let _ = rx.await;
            })
            .await
    });
    tracing::info!(%local_addr, "node listening");
    Ok(NodeHandle {
        local_addr,
        shutdown: Some(tx),
        task,
    })
}

/// A node running on its own thread and runtime. Stops when dropped.
pub struct BackgroundNode {
    local_addr: SocketAddr,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<thread::JoinHandle<()>>,
}

impl BackgroundNode {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn base_url(&self) -> String {
        format!("http://{}", self.local_addr)
    }

    pub fn client(&self) -> NodeClient {
        NodeClient::new(self.base_url())
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for BackgroundNode {
    fn drop(&mut self) {
        self.stop();
    }
}

pub fn start_background(config: NodeConfig) -> Result<BackgroundNode, NodeError> {
    let (ready_tx, ready_rx) = std::sync::mpsc::channel::<Result<SocketAddr, NodeError>>();
    let (stop_tx, stop_rx) = oneshot::channel::<()>();
    let thread = thread::spawn(move || {
        let runtime = match tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()
        {
            Ok(rt) => rt,
            Err(e) => {
                let _ = ready_tx.send(Err(NodeError::io("starting runtime", e)));
                return;
            }
        };
        runtime.block_on(async move {
            match serve(config).await {
                Ok(handle) => {
                    let _ = ready_tx.send(Ok(handle.local_addr()));
                    let _ = stop_rx.await;
                    let _ = handle.shutdown().await;
                }
                Err(e) => {
                    let _ = ready_tx.send(Err(e));
                }
            }
        });
    });
    match ready_rx.recv() {
        Ok(Ok(local_addr)) => Ok(BackgroundNode {
            local_addr,
            shutdown: Some(stop_tx),
            thread: Some(thread),
        }),
        Ok(Err(e)) => {
            let _ = thread.join();
            Err(e)
        }
        Err(_) => Err(NodeError::Config("node thread exited during startup".into())),
    }
}
