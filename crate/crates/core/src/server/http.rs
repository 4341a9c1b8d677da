use std::net::SocketAddr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::State;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::Value;
use tokio::sync::oneshot;

use super::{catalogue, Catalogue, Dispatcher, RpcError, RpcRequest, RpcResponse};
use crate::error::{Error, Result};
use crate::hub::ResourceHub;

/// A server running on its own runtime thread. Dropping the handle shuts it down.
#[derive(Debug)]
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<Result<()>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    /// Stop accepting, drain in-flight requests, and join the runtime thread.
    pub fn shutdown(mut self) -> Result<()> {
        self.stop_and_join()
    }

    /// Block until the server stops on its own (Ctrl-C when enabled).
    pub fn wait(mut self) -> Result<()> {
        match self.thread.take() {
            Some(t) => t.join().map_err(|_| Error::Server("server thread panicked".into()))?,
            None => Ok(()),
        }
    }

    fn stop_and_join(&mut self) -> Result<()> {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        match self.thread.take() {
            Some(t) => t.join().map_err(|_| Error::Server("server thread panicked".into()))?,
            None => Ok(()),
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        let _ = self.stop_and_join();
    }
}

async fn rpc(State(d): State<Dispatcher>, body: Bytes) -> Json<RpcResponse> {
    // Registry calls block (locks, scripts, model calls), so they leave the async workers.
    let resp = tokio::task::spawn_blocking(move || d.dispatch_bytes(&body))
        .await
        .unwrap_or_else(|e| {
            RpcResponse::err(
                Value::Null,
                RpcError {
                    code: Error::Server(String::new()).code(),
                    message: format!("handler failed: {e}"),
                    data: None,
                },
            )
        });
    Json(resp)
}

async fn list_catalogue() -> Json<Catalogue> {
    Json(catalogue())
}

/// Bind `addr` and serve `POST /rpc` and `GET /catalogue` until shut down.
/// Port 0 picks a free port; see [`ServerHandle::addr`].
pub fn serve(addr: &str, hub: Arc<ResourceHub>, stop_on_ctrl_c: bool) -> Result<ServerHandle> {
    let bind_err = |e: std::io::Error| Error::Bind {
        addr: addr.to_string(),
        message: e.to_string(),
    };
    let std_listener = std::net::TcpListener::bind(addr).map_err(bind_err)?;
    std_listener.set_nonblocking(true).map_err(bind_err)?;
    let local = std_listener.local_addr().map_err(bind_err)?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| Error::Server(e.to_string()))?;
    let (tx, rx) = oneshot::channel::<()>();
    let app = Router::new()
        .route("/rpc", post(rpc))
        .route("/catalogue", get(list_catalogue))
        .with_state(Dispatcher::new(hub));
    let thread = std::thread::Builder::new()
        .name("agp-server".into())
        .spawn(move || {
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::from_std(std_listener).map_err(|e| Error::Server(e.to_string()))?;
                let stop = async move {
                    if stop_on_ctrl_c {
                        tokio::select! {
                            _ = rx => {}
                            _ = tokio::signal::ctrl_c() => {}
                        }
                    } else {
                        let _ = rx.await;
                    }
                };
                tracing::info!(addr = %local, "control plane listening");
                axum::serve(listener, app)
                    .with_graceful_shutdown(stop)
                    .await
                    .map_err(|e| Error::Server(e.to_string()))
            })
        })
        .map_err(|e| Error::Server(e.to_string()))?;
    Ok(ServerHandle {
        addr: local,
        stop: Some(tx),
        thread: Some(thread),
    })
}

/// Blocking client for a running control plane.
#[derive(Debug)]
pub struct RpcClient {
    base: String,
    agent: ureq::Agent,
    next_id: AtomicU64,
}

impl RpcClient {
    pub fn new(base_url: impl Into<String>) -> Self {
        RpcClient {
            base: base_url.into().trim_end_matches('/').to_string(),
            agent: ureq::Agent::new_with_defaults(),
            next_id: AtomicU64::new(1),
        }
    }

    pub fn send(&self, request: &RpcRequest) -> Result<RpcResponse> {
        let mut resp = self
            .agent
            .post(format!("{}/rpc", self.base))
            .header("Content-Type", "application/json")
            .send_json(request)
            .map_err(|e| Error::Server(e.to_string()))?;
        resp.body_mut()
            .read_json::<RpcResponse>()
            .map_err(|e| Error::Server(e.to_string()))
    }

    /// Call `method`; an error response becomes [`Error::Server`] carrying code and message.
    pub fn call(&self, method: &str, params: Value) -> Result<Value> {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        self.send(&RpcRequest::new(id, method, params))?
            .into_result()
            .map_err(|e| Error::Server(format!("{} {}", e.code, e.message)))
    }

    pub fn catalogue(&self) -> Result<Catalogue> {
        let mut resp = self
            .agent
            .get(format!("{}/catalogue", self.base))
            .call()
            .map_err(|e| Error::Server(e.to_string()))?;
        resp.body_mut()
            .read_json::<Catalogue>()
            .map_err(|e| Error::Server(e.to_string()))
    }
}
