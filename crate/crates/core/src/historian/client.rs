//! Historian API client used by the EMS and by operator tools.

use std::sync::Arc;

use reqwest::StatusCode;
use serde::Deserialize;

use super::{CommandRequest, DatapointInfo, HistorianError, HistorianService, Sample};
use crate::netfabric::Gate;
use crate::sim::SimTime;
use crate::web::NODE_HEADER;
use crate::Scalar;

#[derive(Debug, Clone)]
enum Link {
    Http { base: String, client: reqwest::Client, node: String },
    Local { service: Arc<HistorianService>, gate: Option<Gate> },
}

#[derive(Debug, Clone)]
pub struct ScadaClient {
    link: Link,
}

#[derive(Deserialize)]
struct LatestBody {
    timestamp: f64,
    value: f64,
}

#[derive(Deserialize)]
struct CommandAck {
    revision: Option<u64>,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: String,
}

impl ScadaClient {
    pub fn http(base: &str, node: &str, client: reqwest::Client) -> Self {
        ScadaClient {
            link: Link::Http { base: base.trim_end_matches('/').to_string(), client, node: node.to_string() },
        }
    }

    pub fn local(service: Arc<HistorianService>, gate: Option<Gate>) -> Self {
        ScadaClient { link: Link::Local { service, gate } }
    }

    fn pass(service: &HistorianService, gate: &Option<Gate>, path: &str) -> Result<(), HistorianError> {
        if let Some(g) = gate {
            g.pass(path.as_bytes()).map_err(HistorianError::Blocked)?;
        }
        service.store.note_served();
        Ok(())
    }

    async fn send(&self, req: reqwest::RequestBuilder, node: &str) -> Result<Vec<u8>, HistorianError> {
        let resp = req.header(NODE_HEADER, node).send().await.map_err(|e| HistorianError::Transport(e.to_string()))?;
        let status = resp.status();
        let body = resp.bytes().await.map_err(|e| HistorianError::Transport(e.to_string()))?.to_vec();
        if status.is_success() {
            return Ok(body);
        }
        let msg = serde_json::from_slice::<ErrorBody>(&body)
            .map(|b| b.error)
            .unwrap_or_else(|_| String::from_utf8_lossy(&body).into_owned());
        Err(match status {
            StatusCode::NOT_FOUND => HistorianError::NotFound(msg),
            StatusCode::CONFLICT => HistorianError::NoData(msg),
            StatusCode::BAD_REQUEST => HistorianError::BadValue(msg),
            StatusCode::FORBIDDEN => HistorianError::Blocked(msg),
            _ => HistorianError::CommandFailed(msg),
        })
    }

    pub async fn get_all(&self) -> Result<Vec<DatapointInfo>, HistorianError> {
        match &self.link {
            Link::Local { service, gate } => {
                Self::pass(service, gate, "/datapoint/getAll")?;
                Ok(service.store.get_all())
            }
            Link::Http { base, client, node } => {
                let body = self.send(client.get(format!("{base}/datapoint/getAll")), node).await?;
                serde_json::from_slice(&body).map_err(|e| HistorianError::Transport(e.to_string()))
            }
        }
    }

    pub async fn latest(&self, xid: &str) -> Result<Sample, HistorianError> {
        match &self.link {
            Link::Local { service, gate } => {
                Self::pass(service, gate, &format!("/datapoint/{xid}/latest"))?;
                service.store.get_latest(xid)
            }
            Link::Http { base, client, node } => {
                let body = self.send(client.get(format!("{base}/datapoint/{xid}/latest")), node).await?;
                let b: LatestBody =
                    serde_json::from_slice(&body).map_err(|e| HistorianError::Transport(e.to_string()))?;
                Ok(Sample { timestamp: SimTime::from_secs_f64(b.timestamp), value: b.value })
            }
        }
    }

    /// Issues a command; returns the broker revision for broker targets.
    pub async fn command(&self, target: &str, value: Scalar) -> Result<Option<u64>, HistorianError> {
        let cmd = CommandRequest { target: target.to_string(), value };
        match &self.link {
            Link::Local { service, gate } => {
                Self::pass(service, gate, "/command")?;
                service.commands.issue(&cmd).await
            }
            Link::Http { base, client, node } => {
                let req = client
                    .post(format!("{base}/command"))
                    .header(reqwest::header::CONTENT_TYPE, "application/json")
                    .body(serde_json::to_string(&cmd).expect("command serializes"));
                let body = self.send(req, node).await?;
                let ack: CommandAck =
                    serde_json::from_slice(&body).map_err(|e| HistorianError::Transport(e.to_string()))?;
                Ok(ack.revision)
            }
        }
    }
}
