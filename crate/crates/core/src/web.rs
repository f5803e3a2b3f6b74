//! Shared HTTP plumbing: server lifecycle and the fabric checkpoint for inbound requests.

use std::io;
use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::Router;
use tokio::net::TcpListener;
use tokio::task::JoinHandle;

use crate::netfabric::{Delivery, Fabric};

/// Request header naming the calling fabric node.
pub const NODE_HEADER: &str = "x-twin-node";

#[derive(Debug, Clone)]
struct Checkpoint {
    fabric: Arc<Fabric>,
    node: String,
}

async fn checkpoint(State(cp): State<Checkpoint>, req: Request, next: Next) -> Response {
    let Some(src) = req.headers().get(NODE_HEADER).and_then(|v| v.to_str().ok()).map(str::to_owned) else {
        return (StatusCode::FORBIDDEN, "missing x-twin-node").into_response();
    };
    let verdict = cp.fabric.deliver(&src, &cp.node, req.uri().path().as_bytes());
    match verdict {
        Ok(Delivery::Delivered(_)) => next.run(req).await,
        Ok(Delivery::Blocked(rule)) => (StatusCode::FORBIDDEN, format!("blocked by {rule}")).into_response(),
        Err(e) => (StatusCode::FORBIDDEN, e.to_string()).into_response(),
    }
}

/// Gates every route of `router` behind the fabric, with `node` as destination.
pub fn gated(router: Router, fabric: Option<Arc<Fabric>>, node: &str) -> Router {
    match fabric {
        Some(fabric) => {
            router.layer(middleware::from_fn_with_state(Checkpoint { fabric, node: node.to_string() }, checkpoint))
        }
        None => router,
    }
}

#[derive(Debug)]
pub struct HttpServer {
    local_addr: SocketAddr,
    task: JoinHandle<()>,
}

impl HttpServer {
    pub async fn bind(addr: SocketAddr, router: Router) -> io::Result<Self> {
        let listener = TcpListener::bind(addr).await?;
        let local_addr = listener.local_addr()?;
        let task = tokio::spawn(async move {
            if let Err(e) = axum::serve(listener, router).await {
                log::error!("http server {local_addr}: {e}");
            }
        });
        Ok(HttpServer { local_addr, task })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.local_addr)
    }

    pub fn shutdown(&self) {
        self.task.abort();
    }
}

impl Drop for HttpServer {
    fn drop(&mut self) {
        self.task.abort();
    }
}

/// Shared reqwest client configuration.
pub fn http_client() -> reqwest::Client {
    reqwest::Client::builder()
        .timeout(std::time::Duration::from_secs(10))
        .pool_max_idle_per_host(4)
        .build()
        .expect("http client")
}
