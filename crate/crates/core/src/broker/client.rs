//! Broker client over HTTP or an in-process link.

use std::sync::Arc;

use reqwest::StatusCode;

use super::{Broker, BrokerError};
use crate::netfabric::Gate;
use crate::web::NODE_HEADER;
use crate::Scalar;

#[derive(Debug, Clone)]
enum Link {
    Http { base: String, client: reqwest::Client, node: String },
    Local { broker: Arc<Broker>, gate: Option<Gate> },
}

#[derive(Debug, Clone)]
pub struct BrokerClient {
    link: Link,
}

impl BrokerClient {
    /// `node` is sent as the caller identity the server-side checkpoint evaluates.
    pub fn http(base: &str, node: &str, client: reqwest::Client) -> Self {
        BrokerClient {
            link: Link::Http { base: base.trim_end_matches('/').to_string(), client, node: node.to_string() },
        }
    }

    pub fn local(broker: Arc<Broker>, gate: Option<Gate>) -> Self {
        BrokerClient { link: Link::Local { broker, gate } }
    }

    fn path(thing: &str, feature: &str, property: &str) -> String {
        format!("/api/2/things/{thing}/features/{feature}/properties/{property}")
    }

    fn pass_local(broker: &Broker, gate: &Option<Gate>, path: &str) -> Result<(), BrokerError> {
        if let Some(g) = gate {
            g.pass(path.as_bytes()).map_err(BrokerError::Blocked)?;
        }
        broker.note_served();
        Ok(())
    }

    pub async fn get_property(&self, thing: &str, feature: &str, property: &str) -> Result<Scalar, BrokerError> {
        let path = Self::path(thing, feature, property);
        match &self.link {
            Link::Local { broker, gate } => {
                Self::pass_local(broker, gate, &path)?;
                broker.get_property(thing, feature, property)
            }
            Link::Http { base, client, node } => {
                let resp = client
                    .get(format!("{base}{path}"))
                    .header(NODE_HEADER, node)
                    .send()
                    .await
                    .map_err(|e| BrokerError::Transport(e.to_string()))?;
                let status = resp.status();
                let body = resp.bytes().await.map_err(|e| BrokerError::Transport(e.to_string()))?;
                check(status, &body, &path)?;
                super::http::parse_scalar(&body).map_err(|e| BrokerError::Transport(e.to_string()))
            }
        }
    }

    pub async fn put_property(
        &self,
        thing: &str,
        feature: &str,
        property: &str,
        value: Scalar,
    ) -> Result<u64, BrokerError> {
        let path = Self::path(thing, feature, property);
        match &self.link {
            Link::Local { broker, gate } => {
                Self::pass_local(broker, gate, &path)?;
                broker.put_property(thing, feature, property, value)
            }
            Link::Http { base, client, node } => {
                let resp = client
                    .put(format!("{base}{path}"))
                    .header(NODE_HEADER, node)
                    .header(reqwest::header::CONTENT_TYPE, "application/json")
                    .body(value.to_json().to_string())
                    .send()
                    .await
                    .map_err(|e| BrokerError::Transport(e.to_string()))?;
                let status = resp.status();
                let etag = resp.headers().get(reqwest::header::ETAG).and_then(|v| v.to_str().ok()).map(str::to_owned);
                let body = resp.bytes().await.map_err(|e| BrokerError::Transport(e.to_string()))?;
                check(status, &body, &path)?;
                etag.as_deref()
                    .and_then(|t| t.trim_matches('"').strip_prefix("rev:"))
                    .and_then(|r| r.parse().ok())
                    .ok_or_else(|| BrokerError::Transport("missing revision etag".into()))
            }
        }
    }

    pub async fn thing_ids(&self) -> Result<Vec<String>, BrokerError> {
        match &self.link {
            Link::Local { broker, gate } => {
                Self::pass_local(broker, gate, "/api/2/things")?;
                Ok(broker.thing_ids())
            }
            Link::Http { base, client, node } => {
                let resp = client
                    .get(format!("{base}/api/2/things"))
                    .header(NODE_HEADER, node)
                    .send()
                    .await
                    .map_err(|e| BrokerError::Transport(e.to_string()))?;
                let status = resp.status();
                let body = resp.bytes().await.map_err(|e| BrokerError::Transport(e.to_string()))?;
                check(status, &body, "/api/2/things")?;
                serde_json::from_slice(&body).map_err(|e| BrokerError::Transport(e.to_string()))
            }
        }
    }
}

fn check(status: StatusCode, body: &[u8], path: &str) -> Result<(), BrokerError> {
    let text = || String::from_utf8_lossy(body).into_owned();
    match status {
        s if s.is_success() => Ok(()),
        StatusCode::NOT_FOUND => Err(BrokerError::NotFound(path.to_string())),
        StatusCode::FORBIDDEN => Err(BrokerError::Blocked(text())),
        StatusCode::BAD_REQUEST => Err(BrokerError::BadRequest(text())),
        StatusCode::CONFLICT => Err(BrokerError::Conflict(text())),
        s => Err(BrokerError::Transport(format!("{s}: {}", text()))),
    }
}
