//! Operator control socket.
//!
//! One port speaks two protocols. A connection whose first byte starts an
//! HTTP request line is handed to the HTTP stack (WebSocket at `/control`,
//! snapshot at `/state`, static UI files otherwise); anything else is the
//! newline-delimited command protocol. Both receive every status broadcast.

use std::path::PathBuf;
use std::sync::Arc;
use std::time::Duration;

use anyhow::{Context, Result};
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::State;
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use hyper_util::rt::TokioIo;
use hyper_util::service::TowerToHyperService;
use tokio::io::{AsyncBufReadExt, AsyncWriteExt, BufReader};
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::broadcast::error::RecvError;
use tokio::sync::{broadcast, mpsc, oneshot, watch};
use tower_http::services::ServeDir;
use tracing::{debug, warn};

use crate::runtime::CommandRequest;

const GET_STATE: &str = r#"{"cmd":"get_state"}"#;
const SNIFF_TIMEOUT: Duration = Duration::from_millis(250);

#[derive(Clone)]
pub struct ControlContext {
    commands: mpsc::Sender<CommandRequest>,
    status: broadcast::Sender<Arc<str>>,
}

impl ControlContext {
    pub fn new(commands: mpsc::Sender<CommandRequest>, status: broadcast::Sender<Arc<str>>) -> Self {
        Self { commands, status }
    }

    async fn request(&self, raw: String) -> String {
        request(&self.commands, raw)
            .await
            .unwrap_or_else(|e| serde_json::json!({"type": "error", "message": e.to_string()}).to_string())
    }
}

pub async fn request(commands: &mpsc::Sender<CommandRequest>, raw: String) -> Result<String> {
    let (reply, rx) = oneshot::channel();
    commands
        .send(CommandRequest { raw, reply })
        .await
        .ok()
        .context("engine stopped")?;
    rx.await.context("engine stopped")
}

pub fn router(ctx: ControlContext, ui: Option<PathBuf>) -> Router {
    let r = Router::new()
        .route("/control", get(websocket))
        .route("/state", get(state));
    let r = match ui {
        Some(dir) => r.fallback_service(ServeDir::new(dir)),
        None => r,
    };
    r.with_state(ctx)
}

async fn state(State(ctx): State<ControlContext>) -> Response {
    (
        [(axum::http::header::CONTENT_TYPE, "application/json")],
        ctx.request(GET_STATE.into()).await,
    )
        .into_response()
}

async fn websocket(ws: WebSocketUpgrade, State(ctx): State<ControlContext>) -> Response {
    ws.on_upgrade(move |socket| websocket_session(socket, ctx))
}

/// New WebSocket clients get the current state first, then replies and
/// broadcasts as they happen.
async fn websocket_session(mut socket: WebSocket, ctx: ControlContext) {
    let mut status = ctx.status.subscribe();
    let initial = ctx.request(GET_STATE.into()).await;
    if socket.send(Message::Text(initial.into())).await.is_err() {
        return;
    }
    loop {
        tokio::select! {
            msg = socket.recv() => match msg {
                Some(Ok(Message::Text(text))) => {
                    let reply = ctx.request(text.to_string()).await;
                    if socket.send(Message::Text(reply.into())).await.is_err() {
                        return;
                    }
                }
                Some(Ok(Message::Close(_))) | None | Some(Err(_)) => return,
                Some(Ok(_)) => {}
            },
            b = status.recv() => match b {
                Ok(line) => {
                    if socket.send(Message::Text(line.to_string().into())).await.is_err() {
                        return;
                    }
                }
                Err(RecvError::Lagged(n)) => debug!("websocket client skipped {n} broadcasts"),
                Err(RecvError::Closed) => return,
            },
        }
    }
}

async fn line_session(stream: TcpStream, ctx: ControlContext, mut shutdown: watch::Receiver<bool>) {
    let mut status = ctx.status.subscribe();
    let (rd, mut wr) = stream.into_split();
    let mut lines = BufReader::new(rd).lines();
    loop {
        let out = tokio::select! {
            l = lines.next_line() => match l {
                Ok(Some(l)) if l.trim().is_empty() => continue,
                Ok(Some(l)) => ctx.request(l).await,
                Ok(None) | Err(_) => return,
            },
            b = status.recv() => match b {
                Ok(line) => line.to_string(),
                Err(RecvError::Lagged(n)) => {
                    debug!("control client skipped {n} broadcasts");
                    continue;
                }
                Err(RecvError::Closed) => return,
            },
            _ = shutdown.changed() => return,
        };
        if wr.write_all(out.as_bytes()).await.is_err() || wr.write_all(b"\n").await.is_err() {
            return;
        }
    }
}

async fn connection(stream: TcpStream, ctx: ControlContext, router: Router, mut shutdown: watch::Receiver<bool>) {
    let mut first = [0u8; 1];
    // HTTP clients speak first; a silent client is a line-protocol listener.
    let is_http = match tokio::time::timeout(SNIFF_TIMEOUT, stream.peek(&mut first)).await {
        Ok(Ok(0) | Err(_)) => return,
        Ok(Ok(_)) => first[0].is_ascii_uppercase(),
        Err(_) => false,
    };
    if !is_http {
        line_session(stream, ctx, shutdown).await;
        return;
    }
    let service = TowerToHyperService::new(router);
    let conn = hyper::server::conn::http1::Builder::new()
        .serve_connection(TokioIo::new(stream), service)
        .with_upgrades();
    tokio::select! {
        r = conn => if let Err(e) = r { debug!("http connection ended: {e}") },
        _ = shutdown.changed() => {}
    }
}

pub async fn serve(listener: TcpListener, ctx: ControlContext, router: Router, mut shutdown: watch::Receiver<bool>) {
    loop {
        tokio::select! {
            accepted = listener.accept() => match accepted {
                Ok((stream, peer)) => {
                    debug!("control client {peer}");
                    let _ = stream.set_nodelay(true);
                    tokio::spawn(connection(stream, ctx.clone(), router.clone(), shutdown.clone()));
                }
                Err(e) => warn!("accept failed: {e}"),
            },
            _ = shutdown.changed() => break,
        }
    }
}
