//! Policy-checked virtual network.
//!
//! Nodes sit in exactly one segment; cross-segment traffic is decided by the
//! highest-priority matching firewall rule. Unmatched traffic within a segment
//! is allowed, everything else hits the terminal default-deny. Return traffic
//! of an established (allowed) flow is always allowed.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FabricError {
    #[error("unknown segment `{0}`")]
    UnknownSegment(String),
    #[error("node `{0}` is not attached")]
    UnknownNode(String),
    #[error("address `{0}` is bound to node `{1}`")]
    AddressTaken(String, String),
    #[error("policy file: {0}")]
    Policy(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Segment {
    Client,
    Dmz,
    Control,
    Field,
    Internet,
    Management,
}

impl Segment {
    pub const ALL: [Segment; 6] =
        [Segment::Client, Segment::Dmz, Segment::Control, Segment::Field, Segment::Internet, Segment::Management];

    pub fn name(self) -> &'static str {
        match self {
            Segment::Client => "client",
            Segment::Dmz => "dmz",
            Segment::Control => "control",
            Segment::Field => "field",
            Segment::Internet => "internet",
            Segment::Management => "management",
        }
    }
}

impl FromStr for Segment {
    type Err = FabricError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Segment::ALL
            .into_iter()
            .find(|seg| seg.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| FabricError::UnknownSegment(s.to_string()))
    }
}

impl fmt::Display for Segment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Allow,
    Deny,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirewallRule {
    pub src: Segment,
    pub dst: Segment,
    pub verdict: Verdict,
    pub priority: i32,
}

/// Which rule decided a verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum RuleRef {
    /// Index into the policy's rule list as loaded.
    Rule(usize),
    Established,
    IntraSegment,
    DefaultDeny,
}

impl fmt::Display for RuleRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RuleRef::Rule(i) => write!(f, "rule#{i}"),
            RuleRef::Established => f.write_str("established"),
            RuleRef::IntraSegment => f.write_str("intra-segment"),
            RuleRef::DefaultDeny => f.write_str("default-deny"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub verdict: Verdict,
    pub rule: RuleRef,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Policy {
    rules: Vec<FirewallRule>,
    // indices into `rules`, highest priority first, ties in declaration order
    order: Vec<usize>,
}

impl Policy {
    pub fn new(rules: Vec<FirewallRule>) -> Self {
        let mut order: Vec<usize> = (0..rules.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse(rules[i].priority));
        Policy { rules, order }
    }

    pub fn empty() -> Self {
        Policy::new(Vec::new())
    }

    pub fn rules(&self) -> &[FirewallRule] {
        &self.rules
    }

    /// The campus segmentation: field devices cannot reach the Internet and only
    /// accept connections from the control network.
    pub fn campus_default() -> Self {
        use Segment::*;
        use Verdict::*;
        let r = |src, dst, verdict, priority| FirewallRule { src, dst, verdict, priority };
        Policy::new(vec![
            r(Field, Internet, Deny, 100),
            r(Client, Field, Deny, 100),
            r(Dmz, Field, Deny, 100),
            r(Control, Field, Allow, 90),
            r(Field, Control, Allow, 90),
            r(Management, Control, Allow, 80),
            r(Client, Dmz, Allow, 70),
            r(Client, Internet, Allow, 70),
            r(Dmz, Internet, Allow, 70),
            r(Control, Dmz, Allow, 70),
        ])
    }

    pub fn from_json(text: &str) -> Result<Self, FabricError> {
        let rules: Vec<FirewallRule> = serde_json::from_str(text).map_err(|e| FabricError::Policy(e.to_string()))?;
        Ok(Policy::new(rules))
    }

    pub fn load(path: &Path) -> Result<Self, FabricError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| FabricError::Policy(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.rules).expect("rules serialize")
    }

    /// Verdict for traffic from `src` to `dst`; a pure function of its arguments.
    pub fn decide(&self, src: Segment, dst: Segment, established: bool) -> Decision {
        if established {
            return Decision { verdict: Verdict::Allow, rule: RuleRef::Established };
        }
        if let Some(&i) = self.order.iter().find(|&&i| self.rules[i].src == src && self.rules[i].dst == dst) {
            return Decision { verdict: self.rules[i].verdict, rule: RuleRef::Rule(i) };
        }
        if src == dst {
            Decision { verdict: Verdict::Allow, rule: RuleRef::IntraSegment }
        } else {
            Decision { verdict: Verdict::Deny, rule: RuleRef::DefaultDeny }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: String,
    pub segment: Segment,
    #[serde(default)]
    pub addresses: Vec<String>,
}

/// Verdict for `src → dst`.
pub fn permits(policy: &Policy, src: &Node, dst: &Node, established: bool) -> Decision {
    policy.decide(src.segment, dst.segment, established)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Delivery {
    Delivered(RuleRef),
    Blocked(RuleRef),
}

impl Delivery {
    pub fn is_delivered(&self) -> bool {
        matches!(self, Delivery::Delivered(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockedDelivery {
    pub src: String,
    pub dst: String,
    pub rule: RuleRef,
    pub bytes: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FabricStats {
    pub delivered: u64,
    pub blocked: u64,
    pub blocked_by_rule: BTreeMap<String, u64>,
    pub delivered_by_pair: BTreeMap<(String, String), u64>,
}

const BLOCKED_LOG_CAP: usize = 10_000;

/// Enforcement point shared by every client in a run.
#[derive(Debug, Default)]
pub struct Fabric {
    policy: Policy,
    nodes: RwLock<BTreeMap<String, Node>>,
    by_address: RwLock<HashMap<String, String>>,
    flows: RwLock<HashSet<(String, String)>>,
    delivered: AtomicU64,
    blocked: AtomicU64,
    blocked_by_rule: Mutex<BTreeMap<String, u64>>,
    delivered_by_pair: Mutex<BTreeMap<(String, String), u64>>,
    blocked_log: Mutex<Vec<BlockedDelivery>>,
}

impl Fabric {
    pub fn new(policy: Policy) -> Self {
        Fabric { policy, ..Default::default() }
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    /// Attaches `id` to `segment`; re-attaching moves the node and replaces its addresses.
    pub fn attach(&self, id: &str, segment: &str, addresses: &[String]) -> Result<Node, FabricError> {
        let segment: Segment = segment.parse()?;
        let mut by_addr = self.by_address.write().unwrap();
        if let Some((a, owner)) =
            addresses.iter().find_map(|a| by_addr.get(a).filter(|o| o.as_str() != id).map(|o| (a.clone(), o.clone())))
        {
            return Err(FabricError::AddressTaken(a, owner));
        }
        let mut nodes = self.nodes.write().unwrap();
        if let Some(old) = nodes.get(id) {
            for a in &old.addresses {
                by_addr.remove(a);
            }
        }
        for a in addresses {
            by_addr.insert(a.clone(), id.to_string());
        }
        let node = Node { id: id.to_string(), segment, addresses: addresses.to_vec() };
        nodes.insert(id.to_string(), node.clone());
        drop(nodes);
        // a moved node starts with no established flows
        self.flows.write().unwrap().retain(|(s, d)| s != id && d != id);
        Ok(node)
    }

    pub fn detach(&self, id: &str) -> Option<Node> {
        let node = self.nodes.write().unwrap().remove(id)?;
        let mut by_addr = self.by_address.write().unwrap();
        for a in &node.addresses {
            by_addr.remove(a);
        }
        self.flows.write().unwrap().retain(|(s, d)| s != id && d != id);
        Some(node)
    }

    pub fn node(&self, id: &str) -> Option<Node> {
        self.nodes.read().unwrap().get(id).cloned()
    }

    pub fn resolve(&self, address: &str) -> Option<String> {
        self.by_address.read().unwrap().get(address).cloned()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.read().unwrap().len()
    }

    /// Verdict without side effects.
    pub fn permits(&self, src: &str, dst: &str) -> Result<Decision, FabricError> {
        let nodes = self.nodes.read().unwrap();
        let s = nodes.get(src).ok_or_else(|| FabricError::UnknownNode(src.to_string()))?;
        let d = nodes.get(dst).ok_or_else(|| FabricError::UnknownNode(dst.to_string()))?;
        let established = self.flows.read().unwrap().contains(&(dst.to_string(), src.to_string()));
        Ok(permits(&self.policy, s, d, established))
    }

    /// The checkpoint every cross-module message passes through exactly once.
    pub fn deliver(&self, src: &str, dst: &str, payload: &[u8]) -> Result<Delivery, FabricError> {
        let decision = self.permits(src, dst)?;
        match decision.verdict {
            Verdict::Allow => {
                if decision.rule != RuleRef::Established {
                    let key = (src.to_string(), dst.to_string());
                    if !self.flows.read().unwrap().contains(&key) {
                        self.flows.write().unwrap().insert(key);
                    }
                }
                self.delivered.fetch_add(1, Ordering::Relaxed);
                *self.delivered_by_pair.lock().unwrap().entry((src.to_string(), dst.to_string())).or_default() += 1;
                Ok(Delivery::Delivered(decision.rule))
            }
            Verdict::Deny => {
                self.blocked.fetch_add(1, Ordering::Relaxed);
                *self.blocked_by_rule.lock().unwrap().entry(decision.rule.to_string()).or_default() += 1;
                log::warn!("blocked {src} -> {dst} by {}", decision.rule);
                let mut log = self.blocked_log.lock().unwrap();
                if log.len() < BLOCKED_LOG_CAP {
                    log.push(BlockedDelivery {
                        src: src.to_string(),
                        dst: dst.to_string(),
                        rule: decision.rule,
                        bytes: payload.len(),
                    });
                }
                Ok(Delivery::Blocked(decision.rule))
            }
        }
    }

    pub fn drain_blocked(&self) -> Vec<BlockedDelivery> {
        std::mem::take(&mut *self.blocked_log.lock().unwrap())
    }

    pub fn delivered(&self) -> u64 {
        self.delivered.load(Ordering::Relaxed)
    }

    pub fn blocked(&self) -> u64 {
        self.blocked.load(Ordering::Relaxed)
    }

    pub fn stats(&self) -> FabricStats {
        FabricStats {
            delivered: self.delivered(),
            blocked: self.blocked(),
            blocked_by_rule: self.blocked_by_rule.lock().unwrap().clone(),
            delivered_by_pair: self.delivered_by_pair.lock().unwrap().clone(),
        }
    }
}

/// A fixed `src → dst` path through a fabric, held by a client link.
#[derive(Debug, Clone)]
pub struct Gate {
    fabric: Arc<Fabric>,
    src: String,
    dst: String,
}

impl Gate {
    pub fn new(fabric: Arc<Fabric>, src: &str, dst: &str) -> Self {
        Gate { fabric, src: src.to_string(), dst: dst.to_string() }
    }

    pub fn src(&self) -> &str {
        &self.src
    }

    pub fn dst(&self) -> &str {
        &self.dst
    }

    /// Passes one message through the checkpoint.
    pub fn pass(&self, payload: &[u8]) -> Result<(), String> {
        match self.fabric.deliver(&self.src, &self.dst, payload) {
            Ok(Delivery::Delivered(_)) => Ok(()),
            Ok(Delivery::Blocked(rule)) => Err(rule.to_string()),
            Err(e) => Err(e.to_string()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn campus() -> Fabric {
        let f = Fabric::new(Policy::campus_default());
        f.attach("ems", "control", &["ems.http".into()]).unwrap();
        f.attach("broker", "control", &["broker.http".into()]).unwrap();
        f.attach("cabinet-A", "field", &["cabinet-A.modbus".into()]).unwrap();
        f.attach("solar-ctrl", "field", &[]).unwrap();
        f.attach("isp", "internet", &[]).unwrap();
        f.attach("laptop", "client", &[]).unwrap();
        f.attach("web", "dmz", &[]).unwrap();
        f
    }

    #[test]
    fn campus_policy_examples() {
        let f = campus();
        assert_eq!(f.permits("cabinet-A", "isp").unwrap().verdict, Verdict::Deny);
        assert_eq!(f.permits("ems", "cabinet-A").unwrap().verdict, Verdict::Allow);
        assert_eq!(f.permits("laptop", "cabinet-A").unwrap().verdict, Verdict::Deny);
    }

    #[test]
    fn deliver_counts_and_logs() {
        let f = campus();
        assert!(f.deliver("ems", "cabinet-A", b"req").unwrap().is_delivered());
        assert!(f.deliver("solar-ctrl", "broker", b"put").unwrap().is_delivered());
        assert_eq!(f.deliver("solar-ctrl", "isp", b"GET /").unwrap(), Delivery::Blocked(RuleRef::Rule(0)));
        assert_eq!((f.delivered(), f.blocked()), (2, 1));
        let blocked = f.drain_blocked();
        assert_eq!(blocked.len(), 1);
        assert_eq!(blocked[0].bytes, 5);
        assert_eq!(f.stats().blocked_by_rule.get("rule#0"), Some(&1));
    }

    #[test]
    fn return_traffic_is_stateful() {
        let policy = Policy::new(vec![FirewallRule {
            src: Segment::Field,
            dst: Segment::Control,
            verdict: Verdict::Allow,
            priority: 1,
        }]);
        let f = Fabric::new(policy);
        f.attach("ctrl", "field", &[]).unwrap();
        f.attach("broker", "control", &[]).unwrap();
        assert_eq!(f.permits("broker", "ctrl").unwrap().verdict, Verdict::Deny);
        f.deliver("ctrl", "broker", b"").unwrap();
        assert_eq!(
            f.permits("broker", "ctrl").unwrap(),
            Decision { verdict: Verdict::Allow, rule: RuleRef::Established }
        );
    }

    #[test]
    fn attach_errors_and_moves() {
        let f = campus();
        assert_eq!(f.attach("x", "ot", &[]), Err(FabricError::UnknownSegment("ot".into())));
        f.attach("new-client", "client", &[]).unwrap();
        assert!(f.deliver("new-client", "web", b"").unwrap().is_delivered());
        // re-attach field -> control: now follows control rules
        assert_eq!(f.permits("solar-ctrl", "web").unwrap().verdict, Verdict::Deny);
        f.attach("solar-ctrl", "control", &[]).unwrap();
        assert_eq!(f.permits("solar-ctrl", "web").unwrap().verdict, Verdict::Allow);
        assert!(matches!(f.deliver("ghost", "web", b""), Err(FabricError::UnknownNode(_))));
        assert!(f.attach("other", "field", &["cabinet-A.modbus".into()]).is_err());
    }

    #[test]
    fn policy_json_round_trip() {
        let p = Policy::campus_default();
        assert_eq!(Policy::from_json(&p.to_json()).unwrap(), p);
        assert!(Policy::from_json(r#"[{"src":"ot","dst":"field","verdict":"allow","priority":1}]"#).is_err());
    }

    fn segment() -> impl Strategy<Value = Segment> {
        prop::sample::select(Segment::ALL.to_vec())
    }

    fn rule() -> impl Strategy<Value = FirewallRule> {
        (segment(), segment(), any::<bool>(), -50i32..50).prop_map(|(src, dst, allow, priority)| FirewallRule {
            src,
            dst,
            verdict: if allow { Verdict::Allow } else { Verdict::Deny },
            priority,
        })
    }

    proptest! {
        #[test]
        fn empty_policy_only_allows_intra_segment(a in segment(), b in segment()) {
            let d = Policy::empty().decide(a, b, false);
            prop_assert_eq!(d.verdict == Verdict::Allow, a == b);
        }

        #[test]
        fn lower_priority_rules_never_override(
            rules in prop::collection::vec(rule(), 0..12),
            extra in rule(),
            a in segment(),
            b in segment(),
        ) {
            let base = Policy::new(rules.clone());
            let before = base.decide(a, b, false);
            let min = rules.iter().map(|r| r.priority).min().unwrap_or(0);
            let mut extended = rules.clone();
            extended.push(FirewallRule { priority: min - 1, ..extra });
            let after = Policy::new(extended).decide(a, b, false);
            if let RuleRef::Rule(_) = before.rule {
                prop_assert_eq!(before, after);
            }
        }
    }
}
