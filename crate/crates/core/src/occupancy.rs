//! Human layer: campus turnout, the client population it implies, and the
//! stochastic building load `E = B + Σ C·Pᵢ` over ⌈T/C⌉ clusters.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;
use std::sync::Arc;

use chrono::{Datelike, NaiveDateTime, Timelike};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netfabric::Fabric;

const WEEK_HOURS: f64 = 168.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OccupancyError {
    #[error("schedule: {0}")]
    Schedule(String),
    #[error("turnout model: {0}")]
    Model(String),
}

/// Turnout anchors over one week, interpolated linearly and cyclically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    /// `(hour of week, persons)`, hour 0 = Monday 00:00, strictly increasing.
    anchors: Vec<(f64, f64)>,
}

const WEEKDAY: [(f64, f64); 9] = [
    (7.0, 0.0),
    (8.0, 400.0),
    (9.0, 800.0),
    (10.0, 1000.0),
    (12.0, 1200.0),
    (17.0, 1200.0),
    (18.0, 800.0),
    (19.0, 300.0),
    (20.0, 0.0),
];

impl Schedule {
    pub fn new(mut anchors: Vec<(f64, f64)>) -> Result<Self, OccupancyError> {
        if anchors.is_empty() {
            return Err(OccupancyError::Schedule("no anchors".into()));
        }
        anchors.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in anchors.windows(2) {
            if w[0].0 == w[1].0 {
                return Err(OccupancyError::Schedule(format!("duplicate anchor at week hour {}", w[0].0)));
            }
        }
        if let Some(bad) = anchors.iter().find(|(h, p)| !(0.0..WEEK_HOURS).contains(h) || !(*p >= 0.0)) {
            return Err(OccupancyError::Schedule(format!("invalid anchor {bad:?}")));
        }
        Ok(Schedule { anchors })
    }

    /// Weekday trapezoid peaking at 1200 persons; weekends at 10% of it.
    pub fn campus_default() -> Self {
        let mut anchors = Vec::new();
        for day in 0..7 {
            let k = if day < 5 { 1.0 } else { 0.1 };
            anchors.extend(WEEKDAY.iter().map(|(h, p)| (day as f64 * 24.0 + h, p * k)));
        }
        Schedule::new(anchors).expect("default schedule is valid")
    }

    /// `day_of_week,hour,persons` with 0 = Monday; `hour` may be fractional.
    pub fn parse_csv(text: &str) -> Result<Self, OccupancyError> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == "day_of_week,hour,persons" => {}
            _ => return Err(OccupancyError::Schedule("expected header `day_of_week,hour,persons`".into())),
        }
        let mut anchors = Vec::new();
        for (i, line) in lines {
            let cols: Vec<&str> = line.split(',').map(str::trim).collect();
            let parsed = match cols.as_slice() {
                [d, h, p] => d.parse::<u8>().ok().zip(h.parse::<f64>().ok()).zip(p.parse::<f64>().ok()),
                _ => None,
            };
            let ((day, hour), persons) =
                parsed.ok_or_else(|| OccupancyError::Schedule(format!("line {}: malformed row `{line}`", i + 1)))?;
            if day > 6 || !(0.0..24.0).contains(&hour) {
                return Err(OccupancyError::Schedule(format!("line {}: day or hour out of range", i + 1)));
            }
            anchors.push((day as f64 * 24.0 + hour, persons));
        }
        Schedule::new(anchors)
    }

    pub fn load(path: &Path) -> Result<Self, OccupancyError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| OccupancyError::Schedule(format!("{}: {e}", path.display())))?;
        Self::parse_csv(&text)
    }

    pub fn anchors(&self) -> &[(f64, f64)] {
        &self.anchors
    }

    /// Persons at `week_hour`, wrapping from Sunday night into Monday.
    pub fn at_week_hour(&self, week_hour: f64) -> f64 {
        let h = week_hour.rem_euclid(WEEK_HOURS);
        let a = &self.anchors;
        let idx = a.partition_point(|(x, _)| *x <= h);
        let (prev, next) = if idx == 0 {
            let (x, y) = a[a.len() - 1];
            ((x - WEEK_HOURS, y), a[0])
        } else if idx == a.len() {
            let (x, y) = a[0];
            (a[idx - 1], (x + WEEK_HOURS, y))
        } else {
            (a[idx - 1], a[idx])
        };
        if next.0 == prev.0 {
            return prev.1;
        }
        prev.1 + (next.1 - prev.1) * (h - prev.0) / (next.0 - prev.0)
    }
}

fn week_hour(at: NaiveDateTime) -> f64 {
    at.weekday().num_days_from_monday() as f64 * 24.0
        + at.hour() as f64
        + at.minute() as f64 / 60.0
        + at.second() as f64 / 3600.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnoutModel {
    /// Persons per client entity (C).
    pub cluster_size: u32,
    /// Constant building load B, kW.
    pub base_load_kw: f64,
    /// Mean draw per person μ, W.
    pub mu_w: f64,
    /// Standard deviation σ, W.
    pub sigma_w: f64,
    pub schedule: Schedule,
    pub seed: u64,
}

impl Default for TurnoutModel {
    fn default() -> Self {
        TurnoutModel {
            cluster_size: 10,
            base_load_kw: 1.5,
            mu_w: 25.0,
            sigma_w: 5.0,
            schedule: Schedule::campus_default(),
            seed: 0,
        }
    }
}

impl TurnoutModel {
    pub fn validate(&self) -> Result<(), OccupancyError> {
        if self.cluster_size < 1 {
            return Err(OccupancyError::Model("cluster size must be at least 1".into()));
        }
        if !(self.base_load_kw >= 0.0) || !(self.sigma_w >= 0.0) || !self.mu_w.is_finite() {
            return Err(OccupancyError::Model("base load and sigma must be non-negative".into()));
        }
        Ok(())
    }

    /// ⌈T/C⌉.
    pub fn clusters(&self, persons: f64) -> usize {
        (persons.max(0.0) / self.cluster_size as f64).ceil() as usize
    }

    fn normal(&self) -> Normal<f64> {
        Normal::new(self.mu_w, self.sigma_w).expect("validated sigma")
    }

    /// One cluster's load `C·max(0, Pᵢ)`, W.
    pub fn draw_cluster_load<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.cluster_size as f64 * self.normal().sample(rng).max(0.0)
    }
}

pub fn turnout_at(model: &TurnoutModel, at: NaiveDateTime) -> f64 {
    model.schedule.at_week_hour(week_hour(at))
}

/// `E = B + Σ C·Pᵢ` over ⌈T/C⌉ clusters, kW.
pub fn building_load<R: Rng + ?Sized>(model: &TurnoutModel, persons: f64, rng: &mut R) -> f64 {
    let clusters = model.clusters(persons);
    let watts: f64 = (0..clusters).map(|_| model.draw_cluster_load(rng)).sum();
    model.base_load_kw + watts / 1000.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientEntity {
    pub id: String,
    /// Building whose cabinet feeds this client.
    pub cabinet: String,
    /// W.
    pub load: f64,
    pub active: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SyncDiff {
    pub spawned: Vec<String>,
    pub retired: Vec<String>,
    pub activated: Vec<String>,
    pub deactivated: Vec<String>,
}

impl SyncDiff {
    pub fn is_empty(&self) -> bool {
        self.spawned.is_empty() && self.retired.is_empty() && self.activated.is_empty() && self.deactivated.is_empty()
    }
}

/// Client entities: slot `i` lives in building `i mod n`; retirement is LIFO.
#[derive(Debug)]
pub struct Population {
    model: TurnoutModel,
    buildings: Vec<String>,
    clients: Vec<ClientEntity>,
    tripped: BTreeSet<String>,
    next_id: u64,
    rng: ChaCha8Rng,
    fabric: Option<Arc<Fabric>>,
}

impl Population {
    pub fn new(model: TurnoutModel, buildings: Vec<String>) -> Result<Self, OccupancyError> {
        model.validate()?;
        if buildings.is_empty() {
            return Err(OccupancyError::Model("no buildings".into()));
        }
        let rng = ChaCha8Rng::seed_from_u64(model.seed);
        Ok(Population {
            model,
            buildings,
            clients: Vec::new(),
            tripped: BTreeSet::new(),
            next_id: 0,
            rng,
            fabric: None,
        })
    }

    /// Active clients are attached to the `client` segment of `fabric`.
    pub fn with_fabric(mut self, fabric: Arc<Fabric>) -> Self {
        self.fabric = Some(fabric);
        self
    }

    pub fn model(&self) -> &TurnoutModel {
        &self.model
    }

    pub fn clients(&self) -> &[ClientEntity] {
        &self.clients
    }

    pub fn active_count(&self) -> usize {
        self.clients.iter().filter(|c| c.active).count()
    }

    fn set_network(&self, id: &str, up: bool) {
        if let Some(f) = &self.fabric {
            if up {
                if let Err(e) = f.attach(id, "client", &[]) {
                    log::warn!("attach {id}: {e}");
                }
            } else {
                f.detach(id);
            }
        }
    }

    /// Brings the population to ⌈T/C⌉ entities, deactivating those in tripped buildings.
    pub fn sync_clients(&mut self, persons: f64) -> SyncDiff {
        let target = self.model.clusters(persons);
        let mut diff = SyncDiff::default();
        while self.clients.len() > target {
            let c = self.clients.pop().expect("len > target >= 0");
            if c.active {
                self.set_network(&c.id, false);
            }
            diff.retired.push(c.id);
        }
        while self.clients.len() < target {
            let slot = self.clients.len();
            let id = format!("client-{:06}", self.next_id);
            self.next_id += 1;
            let cabinet = self.buildings[slot % self.buildings.len()].clone();
            let load = self.model.draw_cluster_load(&mut self.rng);
            let active = !self.tripped.contains(&cabinet);
            if active {
                self.set_network(&id, true);
            }
            diff.spawned.push(id.clone());
            self.clients.push(ClientEntity { id, cabinet, load, active });
        }
        for i in 0..self.clients.len() {
            let want = !self.tripped.contains(&self.clients[i].cabinet);
            if self.clients[i].active != want {
                self.clients[i].active = want;
                self.set_network(&self.clients[i].id, want);
                let id = self.clients[i].id.clone();
                if want {
                    diff.activated.push(id);
                } else {
                    diff.deactivated.push(id);
                }
            }
        }
        diff
    }

    /// Marks `building` tripped and deactivates its clients immediately.
    pub fn trip(&mut self, building: &str) -> Vec<String> {
        self.tripped.insert(building.to_string());
        let mut out = Vec::new();
        for i in 0..self.clients.len() {
            if self.clients[i].cabinet == building && self.clients[i].active {
                self.clients[i].active = false;
                self.set_network(&self.clients[i].id, false);
                out.push(self.clients[i].id.clone());
            }
        }
        out
    }

    /// Clears the trip mark; clients come back at the next sync.
    pub fn reset_trip(&mut self, building: &str) {
        self.tripped.remove(building);
    }

    pub fn is_tripped(&self, building: &str) -> bool {
        self.tripped.contains(building)
    }

    /// Σ load of active clients attached to `building`, W.
    pub fn active_load(&self, building: &str) -> f64 {
        self.clients.iter().filter(|c| c.active && c.cabinet == building).map(|c| c.load).sum()
    }

    pub fn loads_by_building(&self) -> BTreeMap<String, f64> {
        self.buildings.iter().map(|b| (b.clone(), self.active_load(b))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::NaiveDate;
    use proptest::prelude::*;

    fn monday(h: u32, m: u32) -> NaiveDateTime {
        NaiveDate::from_ymd_opt(2016, 6, 6).unwrap().and_hms_opt(h, m, 0).unwrap()
    }

    #[test]
    fn schedule_examples() {
        let m = TurnoutModel::default();
        assert_eq!(turnout_at(&m, monday(12, 0)), 1200.0);
        assert_eq!(turnout_at(&m, monday(3, 0)), 0.0);
        assert_eq!(turnout_at(&m, monday(8, 30)), 600.0);
        let saturday = NaiveDate::from_ymd_opt(2016, 6, 11).unwrap().and_hms_opt(12, 0, 0).unwrap();
        assert!((turnout_at(&m, saturday) - 120.0).abs() < 1e-9);
    }

    #[test]
    fn schedule_wraps_around_week() {
        let s = Schedule::new(vec![(10.0, 100.0), (160.0, 200.0)]).unwrap();
        // from 160 (200) to 178 == 10 next week (100)
        assert!((s.at_week_hour(169.0) - (200.0 - 100.0 * 9.0 / 18.0)).abs() < 1e-9);
        assert!((s.at_week_hour(1.0) - (200.0 - 100.0 * 9.0 / 18.0)).abs() < 1e-9);
    }

    #[test]
    fn schedule_csv() {
        let s = Schedule::parse_csv("day_of_week,hour,persons\n0,8,400\n0,9.5,800\n").unwrap();
        assert_eq!(s.anchors(), &[(8.0, 400.0), (9.5, 800.0)]);
        assert!(Schedule::parse_csv("day,hour,persons\n").is_err());
        assert!(Schedule::parse_csv("day_of_week,hour,persons\n7,1,1\n").is_err());
    }

    #[test]
    fn degenerate_normal_is_exact() {
        let m = TurnoutModel { sigma_w: 0.0, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!((building_load(&m, 100.0, &mut rng) - 4.0).abs() < 1e-12);
        assert_eq!(building_load(&m, 0.0, &mut rng), 1.5);
        // 101 persons is 11 clusters
        assert!((building_load(&m, 101.0, &mut rng) - (1.5 + 11.0 * 0.25)).abs() < 1e-12);
    }

    #[test]
    fn sync_spawns_retires_and_trips() {
        let buildings: Vec<String> = "ABCDEF".chars().map(String::from).collect();
        let mut p = Population::new(TurnoutModel::default(), buildings).unwrap();
        let d = p.sync_clients(100.0);
        assert_eq!(d.spawned.len(), 10);
        assert_eq!(d.spawned[0], "client-000000");
        assert!(p.sync_clients(100.0).is_empty());
        assert_eq!(p.clients()[7].cabinet, "B");
        let off = p.trip("B");
        assert_eq!(off.len(), 2);
        assert_eq!(p.active_count(), 8);
        assert_eq!(p.active_load("B"), 0.0);
        let d = p.sync_clients(100.0);
        assert!(d.is_empty());
        let d = p.sync_clients(50.0);
        assert_eq!(
            d.retired,
            vec!["client-000009", "client-000008", "client-000007", "client-000006", "client-000005"]
        );
        p.reset_trip("B");
        assert_eq!(p.sync_clients(50.0).activated, vec!["client-000001"]);
    }

    #[test]
    fn attaches_clients_to_fabric() {
        let fabric = Arc::new(Fabric::new(crate::netfabric::Policy::campus_default()));
        fabric.attach("web", "dmz", &[]).unwrap();
        let mut p = Population::new(TurnoutModel::default(), vec!["A".into()]).unwrap().with_fabric(fabric.clone());
        p.sync_clients(20.0);
        assert!(fabric.deliver("client-000001", "web", b"GET").unwrap().is_delivered());
        p.trip("A");
        assert!(fabric.node("client-000001").is_none());
    }

    proptest! {
        #[test]
        fn active_count_matches_target(
            steps in prop::collection::vec((0.0f64..1500.0, prop::option::of(0usize..6)), 1..30),
        ) {
            let buildings: Vec<String> = "ABCDEF".chars().map(String::from).collect();
            let mut p = Population::new(TurnoutModel::default(), buildings.clone()).unwrap();
            for (persons, trip) in steps {
                if let Some(b) = trip {
                    p.trip(&buildings[b]);
                }
                p.sync_clients(persons);
                let target = p.model().clusters(persons);
                let in_tripped = p.clients().iter().filter(|c| p.is_tripped(&c.cabinet)).count();
                prop_assert_eq!(p.clients().len(), target);
                prop_assert_eq!(p.active_count(), target - in_tripped);
            }
        }

        #[test]
        fn same_seed_same_population(seed in any::<u64>(), persons in 0.0f64..1200.0) {
            let m = TurnoutModel { seed, ..Default::default() };
            let mut a = Population::new(m.clone(), vec!["A".into(), "B".into()]).unwrap();
            let mut b = Population::new(m, vec!["A".into(), "B".into()]).unwrap();
            a.sync_clients(persons);
            b.sync_clients(persons);
            prop_assert_eq!(a.clients(), b.clients());
        }
    }
}
