//! Twin-state broker: the latest reported state of every thing, change events
//! for subscribers, and an HTTP API in the `/api/2/things` shape.

mod client;
mod http;
mod journal;

use std::collections::BTreeMap;
use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::mpsc;

use crate::netfabric::Gate;
use crate::sim::{SimNow, SimTime};
use crate::Scalar;

pub use client::BrokerClient;
pub use http::router;
pub use journal::{replay, JournalEntry};

/// Per-subscription buffer; overflowing it disconnects the subscriber.
pub const SUBSCRIPTION_BUFFER: usize = 1024;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BrokerError {
    #[error("thing `{0}` already exists")]
    Conflict(String),
    #[error("invalid thing id `{0}`: expected namespace:name")]
    InvalidId(String),
    #[error("not found: {0}")]
    NotFound(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("blocked by {0}")]
    Blocked(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("journal: {0}")]
    Journal(String),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct ThingId(String);

impl ThingId {
    pub fn parse(raw: &str) -> Result<Self, BrokerError> {
        let ok_part = |p: &str| !p.is_empty() && p.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        match raw.split_once(':') {
            Some((ns, name)) if ok_part(ns) && ok_part(name) => Ok(ThingId(raw.to_string())),
            _ => Err(BrokerError::InvalidId(raw.to_string())),
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for ThingId {
    type Error = BrokerError;
    fn try_from(s: String) -> Result<Self, Self::Error> {
        ThingId::parse(&s)
    }
}

impl From<ThingId> for String {
    fn from(id: ThingId) -> String {
        id.0
    }
}

impl fmt::Display for ThingId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

pub type Features = BTreeMap<String, BTreeMap<String, Scalar>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThingState {
    pub thing_id: ThingId,
    pub features: Features,
    pub revision: u64,
    pub last_modified: SimTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChangeEvent {
    pub thing_id: ThingId,
    pub feature: String,
    pub property: String,
    pub old: Option<Scalar>,
    pub new: Scalar,
    pub revision: u64,
    pub timestamp: SimTime,
}

/// `thing[/feature[/property]]`, each segment literal or `*`; missing trailing
/// segments match anything.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PathFilter(Vec<String>);

impl PathFilter {
    pub fn parse(raw: &str) -> Self {
        PathFilter(raw.split('/').filter(|s| !s.is_empty()).map(str::to_string).collect())
    }

    pub fn matches(&self, thing: &str, feature: &str, property: &str) -> bool {
        self.0.iter().zip([thing, feature, property]).all(|(pat, v)| pat == "*" || pat == v)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SubscriptionError {
    #[error("subscriber fell behind and was disconnected")]
    Lagged,
    #[error("broker closed the subscription")]
    Closed,
}

struct Subscriber {
    filter: PathFilter,
    tx: mpsc::Sender<ChangeEvent>,
    lagged: Arc<AtomicBool>,
}

/// Ordered stream of change events matching a filter.
#[derive(Debug)]
pub struct Subscription {
    rx: mpsc::Receiver<ChangeEvent>,
    lagged: Arc<AtomicBool>,
    gate: Option<Gate>,
}

impl Subscription {
    /// Attaches a fabric path that each delivered event must pass.
    pub fn gated(mut self, gate: Gate) -> Self {
        self.gate = Some(gate);
        self
    }

    fn end(&self) -> SubscriptionError {
        if self.lagged.load(Ordering::Acquire) {
            SubscriptionError::Lagged
        } else {
            SubscriptionError::Closed
        }
    }

    fn admit(&self, ev: &ChangeEvent) -> bool {
        match &self.gate {
            None => true,
            Some(g) => match g.pass(ev.new.to_string().as_bytes()) {
                Ok(()) => true,
                Err(rule) => {
                    log::warn!(
                        "event {}/{} rev {} to {} blocked by {rule}",
                        ev.thing_id,
                        ev.feature,
                        ev.revision,
                        g.dst()
                    );
                    false
                }
            },
        }
    }

    pub async fn recv(&mut self) -> Result<ChangeEvent, SubscriptionError> {
        loop {
            match self.rx.recv().await {
                Some(ev) if self.admit(&ev) => return Ok(ev),
                Some(_) => continue,
                None => return Err(self.end()),
            }
        }
    }

    /// Next buffered event, if any.
    pub fn try_recv(&mut self) -> Result<Option<ChangeEvent>, SubscriptionError> {
        loop {
            match self.rx.try_recv() {
                Ok(ev) if self.admit(&ev) => return Ok(Some(ev)),
                Ok(_) => continue,
                Err(mpsc::error::TryRecvError::Empty) => return Ok(None),
                Err(mpsc::error::TryRecvError::Disconnected) => return Err(self.end()),
            }
        }
    }
}

/// In-memory thing store. Writers to one thing are serialized; readers of
/// different things never contend.
pub struct Broker {
    things: RwLock<BTreeMap<ThingId, Arc<Mutex<ThingState>>>>,
    subscribers: Mutex<Vec<Subscriber>>,
    now: SimNow,
    journal: Option<journal::Journal>,
    served: AtomicU64,
}

impl fmt::Debug for Broker {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Broker").field("things", &self.thing_ids()).finish_non_exhaustive()
    }
}

impl Broker {
    pub fn new(now: SimNow) -> Self {
        Broker {
            things: RwLock::new(BTreeMap::new()),
            subscribers: Mutex::new(Vec::new()),
            now,
            journal: None,
            served: AtomicU64::new(0),
        }
    }

    /// Appends every creation and write to `path` as JSON lines.
    pub fn with_journal(mut self, path: &std::path::Path) -> Result<Self, BrokerError> {
        self.journal = Some(journal::Journal::create(path)?);
        Ok(self)
    }

    pub fn create_thing(&self, id: &str, features: Features) -> Result<ThingState, BrokerError> {
        let thing_id = ThingId::parse(id)?;
        let mut things = self.things.write().unwrap();
        if things.contains_key(&thing_id) {
            return Err(BrokerError::Conflict(id.to_string()));
        }
        let state = ThingState { thing_id: thing_id.clone(), features, revision: 0, last_modified: self.now.get() };
        if let Some(j) = &self.journal {
            j.append(&JournalEntry::Created { state: state.clone() })?;
        }
        things.insert(thing_id, Arc::new(Mutex::new(state.clone())));
        Ok(state)
    }

    fn entry(&self, thing: &str) -> Result<Arc<Mutex<ThingState>>, BrokerError> {
        let id = ThingId::parse(thing).map_err(|_| BrokerError::NotFound(thing.to_string()))?;
        self.things.read().unwrap().get(&id).cloned().ok_or_else(|| BrokerError::NotFound(thing.to_string()))
    }

    /// Stores `value`, bumps the revision and notifies subscribers. The feature must exist.
    pub fn put_property(&self, thing: &str, feature: &str, property: &str, value: Scalar) -> Result<u64, BrokerError> {
        let entry = self.entry(thing)?;
        let mut state = entry.lock().unwrap();
        let props =
            state.features.get_mut(feature).ok_or_else(|| BrokerError::NotFound(format!("{thing}/{feature}")))?;
        let old = props.insert(property.to_string(), value.clone());
        state.revision += 1;
        state.last_modified = self.now.get();
        let ev = ChangeEvent {
            thing_id: state.thing_id.clone(),
            feature: feature.to_string(),
            property: property.to_string(),
            old,
            new: value,
            revision: state.revision,
            timestamp: state.last_modified,
        };
        if let Some(j) = &self.journal {
            j.append(&JournalEntry::Write { event: ev.clone() })?;
        }
        // still under the thing lock: per-thing delivery order equals revision order
        self.publish(&ev);
        Ok(ev.revision)
    }

    fn publish(&self, ev: &ChangeEvent) {
        let mut subs = self.subscribers.lock().unwrap();
        subs.retain(|s| {
            if !s.filter.matches(ev.thing_id.as_str(), &ev.feature, &ev.property) {
                return !s.tx.is_closed();
            }
            match s.tx.try_send(ev.clone()) {
                Ok(()) => true,
                Err(mpsc::error::TrySendError::Full(_)) => {
                    log::warn!("subscriber on {:?} lagged; disconnecting", s.filter);
                    s.lagged.store(true, Ordering::Release);
                    false
                }
                Err(mpsc::error::TrySendError::Closed(_)) => false,
            }
        });
    }

    pub fn get_property(&self, thing: &str, feature: &str, property: &str) -> Result<Scalar, BrokerError> {
        let entry = self.entry(thing)?;
        let state = entry.lock().unwrap();
        state
            .features
            .get(feature)
            .and_then(|p| p.get(property))
            .cloned()
            .ok_or_else(|| BrokerError::NotFound(format!("{thing}/{feature}/{property}")))
    }

    pub fn thing(&self, thing: &str) -> Result<ThingState, BrokerError> {
        Ok(self.entry(thing)?.lock().unwrap().clone())
    }

    pub fn thing_ids(&self) -> Vec<String> {
        self.things.read().unwrap().keys().map(|k| k.to_string()).collect()
    }

    pub fn subscribe(&self, filter: &str) -> Subscription {
        self.subscribe_with_capacity(filter, SUBSCRIPTION_BUFFER)
    }

    pub fn subscribe_with_capacity(&self, filter: &str, capacity: usize) -> Subscription {
        let (tx, rx) = mpsc::channel(capacity.max(1));
        let lagged = Arc::new(AtomicBool::new(false));
        self.subscribers.lock().unwrap().push(Subscriber {
            filter: PathFilter::parse(filter),
            tx,
            lagged: lagged.clone(),
        });
        Subscription { rx, lagged, gate: None }
    }

    pub(crate) fn note_served(&self) {
        self.served.fetch_add(1, Ordering::Relaxed);
    }

    /// Requests handled through an API link (HTTP or in-process).
    pub fn served(&self) -> u64 {
        self.served.load(Ordering::Relaxed)
    }

    /// Rebuilds a store from a journal written by [`Broker::with_journal`].
    pub fn from_journal(path: &std::path::Path, now: SimNow) -> Result<Self, BrokerError> {
        let broker = Broker::new(now);
        {
            let mut things = broker.things.write().unwrap();
            for state in replay(path)? {
                things.insert(state.thing_id.clone(), Arc::new(Mutex::new(state)));
            }
        }
        Ok(broker)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn panel() -> Features {
        BTreeMap::from([("panel".to_string(), BTreeMap::from([("power".to_string(), Scalar::Number(0.0))]))])
    }

    #[test]
    fn create_validates_and_rejects_duplicates() {
        let b = Broker::new(SimNow::default());
        let st = b.create_thing("FDT:solar-panel-1", panel()).unwrap();
        assert_eq!(st.revision, 0);
        assert_eq!(
            b.create_thing("FDT:solar-panel-1", panel()),
            Err(BrokerError::Conflict("FDT:solar-panel-1".into()))
        );
        assert!(matches!(b.create_thing("nonamespace", panel()), Err(BrokerError::InvalidId(_))));
        assert!(matches!(b.create_thing("a:b:c", panel()), Err(BrokerError::InvalidId(_))));
    }

    #[test]
    fn put_get_revisions() {
        let now = SimNow::default();
        let b = Broker::new(now.clone());
        b.create_thing("FDT:solar-panel-1", panel()).unwrap();
        now.set(SimTime::from_secs(10));
        assert_eq!(b.put_property("FDT:solar-panel-1", "panel", "power", 42000.0.into()).unwrap(), 1);
        assert_eq!(b.put_property("FDT:solar-panel-1", "panel", "power", 41000.0.into()).unwrap(), 2);
        assert_eq!(b.get_property("FDT:solar-panel-1", "panel", "power").unwrap(), Scalar::Number(41000.0));
        let st = b.thing("FDT:solar-panel-1").unwrap();
        assert_eq!((st.revision, st.last_modified), (2, SimTime::from_secs(10)));
        assert!(matches!(b.get_property("FDT:solar-panel-1", "panel", "voltage"), Err(BrokerError::NotFound(_))));
        assert!(matches!(b.put_property("FDT:ghost", "panel", "power", 1.0.into()), Err(BrokerError::NotFound(_))));
        assert_eq!(b.thing("FDT:solar-panel-1").unwrap().revision, 2);
    }

    #[test]
    fn subscription_filters_and_orders() {
        let b = Broker::new(SimNow::default());
        let pack = BTreeMap::from([("battery-pack".to_string(), BTreeMap::new())]);
        b.create_thing("FDT:energy-store-1", pack).unwrap();
        b.create_thing("FDT:solar-panel-1", panel()).unwrap();
        let mut sub = b.subscribe("FDT:energy-store-1/battery-pack");
        b.put_property("FDT:solar-panel-1", "panel", "power", 1.0.into()).unwrap();
        assert_eq!(sub.try_recv().unwrap(), None);
        for m in ["charge", "idle", "discharge"] {
            b.put_property("FDT:energy-store-1", "battery-pack", "mode", m.into()).unwrap();
        }
        let revs: Vec<u64> = (0..3).map(|_| sub.try_recv().unwrap().unwrap().revision).collect();
        assert_eq!(revs, vec![1, 2, 3]);
    }

    #[test]
    fn overflow_disconnects_with_lag_error() {
        let b = Broker::new(SimNow::default());
        b.create_thing("FDT:solar-panel-1", panel()).unwrap();
        let mut sub = b.subscribe_with_capacity("*", 2);
        for i in 0..3 {
            b.put_property("FDT:solar-panel-1", "panel", "power", (i as f64).into()).unwrap();
        }
        assert!(sub.try_recv().unwrap().is_some());
        assert!(sub.try_recv().unwrap().is_some());
        assert_eq!(sub.try_recv(), Err(SubscriptionError::Lagged));
    }

    #[test]
    fn filters() {
        let f = PathFilter::parse("FDT:a/*/mode");
        assert!(f.matches("FDT:a", "x", "mode"));
        assert!(!f.matches("FDT:a", "x", "level"));
        assert!(PathFilter::parse("*").matches("any:thing", "f", "p"));
        assert!(PathFilter::parse("FDT:a").matches("FDT:a", "f", "p"));
    }
}
