//! Live guidance over WebSocket. Each connection gets its own session, which
//! advances one tick per received `pose_update`. See `protocol.md` for the
//! message catalogue and `schema/wire.schema.json` for the machine-readable form.

pub mod handler;
pub mod protocol;

use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread;

use tungstenite::{Message, WebSocket};
use vguide_core::session::ReplanMode;
use vguide_core::{GuideMixture, Scenario};

pub use handler::Handler;
pub use protocol::{Kind, WireMessage};

/// Port used when neither a flag nor `VGUIDE_PORT` is given.
pub const DEFAULT_PORT: u16 = 8765;
pub const PORT_ENV: &str = "VGUIDE_PORT";

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("websocket: {0}")]
    WebSocket(Box<tungstenite::Error>),
    #[error("{0}")]
    Guide(#[from] vguide_core::GuideError),
}

impl From<tungstenite::Error> for ServiceError {
    fn from(e: tungstenite::Error) -> Self {
        ServiceError::WebSocket(Box::new(e))
    }
}

/// Port from `VGUIDE_PORT`, falling back to the default.
pub fn port_from_env() -> u16 {
    std::env::var(PORT_ENV).ok().and_then(|p| p.parse().ok()).unwrap_or(DEFAULT_PORT)
}

#[derive(Clone, Debug)]
pub struct ServerConfig {
    pub scenario: Scenario,
    pub mixture: GuideMixture,
    pub replan_mode: ReplanMode,
}

pub struct Server {
    listener: TcpListener,
    cfg: Arc<ServerConfig>,
    next_id: Arc<AtomicU64>,
}

impl Server {
    pub fn bind<A: ToSocketAddrs>(addr: A, cfg: ServerConfig) -> Result<Self, ServiceError> {
        cfg.scenario.validate()?;
        Ok(Self { listener: TcpListener::bind(addr)?, cfg: Arc::new(cfg), next_id: Arc::new(AtomicU64::new(1)) })
    }

    pub fn local_addr(&self) -> std::io::Result<std::net::SocketAddr> {
        self.listener.local_addr()
    }

    /// Accepts connections forever, one thread per connection.
    pub fn run(self) -> Result<(), ServiceError> {
        for stream in self.listener.incoming() {
            let stream = stream?;
            let cfg = Arc::clone(&self.cfg);
            let id = format!("s{}", self.next_id.fetch_add(1, Ordering::Relaxed));
            thread::spawn(move || {
                // a failed connection only ends its own session
                let _ = serve_connection(stream, &cfg, id);
            });
        }
        Ok(())
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(self) -> thread::JoinHandle<Result<(), ServiceError>> {
        thread::spawn(move || self.run())
    }
}

fn serve_connection(stream: TcpStream, cfg: &ServerConfig, id: String) -> Result<(), ServiceError> {
    stream.set_nodelay(true)?;
    let mut ws: WebSocket<TcpStream> =
        tungstenite::accept(stream).map_err(|e| ServiceError::Io(std::io::Error::other(e.to_string())))?;
    let mut handler = Handler::new(id, cfg.scenario.clone(), cfg.mixture.clone(), cfg.replan_mode);
    loop {
        let msg = match ws.read() {
            Ok(m) => m,
            Err(tungstenite::Error::ConnectionClosed | tungstenite::Error::AlreadyClosed) => return Ok(()),
            Err(e) => return Err(e.into()),
        };
        let replies = match msg {
            Message::Text(t) => handler.handle_text(t.as_str()),
            Message::Binary(b) => match std::str::from_utf8(&b) {
                Ok(t) => handler.handle_text(t),
                Err(_) => handler.handle_text(""),
            },
            Message::Close(_) => return Ok(()),
            _ => continue,
        };
        for r in replies {
            ws.send(Message::text(r.to_text()))?;
        }
    }
}
