//! Builds every service of a scenario and connects them over TCP or in-process links.

use std::collections::BTreeMap;
use std::net::{Ipv4Addr, SocketAddr};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::RunError;
use crate::broker::{self, Broker, BrokerClient, Features};
use crate::devices::{FieldController, Plant, SmartCabinet, TripPlc};
use crate::ems::EmsProcess;
use crate::historian::{self, CommandRouter, Historian, HistorianService, HostPoller, PollLink, ScadaClient};
use crate::modbus::{ModbusClient, ModbusEndpoint, ModbusServer};
use crate::netfabric::{Fabric, Gate};
use crate::occupancy::Population;
use crate::scenario::Scenario;
use crate::sim::{SimNow, SimTime};
use crate::web::{self, HttpServer};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Transport {
    /// Loopback TCP: HTTP for broker and historian, Modbus/TCP for cabinets.
    #[default]
    Tcp,
    /// In-process calls through the same codecs and checkpoints.
    Local,
}

/// Where a run's services listen; written to `endpoints.json`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Endpoints {
    pub transport: Transport,
    pub broker: Option<String>,
    pub historian: Option<String>,
    pub modbus: BTreeMap<String, String>,
    /// Node an operator client should present.
    pub operator: String,
}

pub struct Cabinet {
    pub device: SmartCabinet,
    pub plc: TripPlc,
    pub endpoint: ModbusEndpoint,
    /// Last sampled consumption, W.
    pub last_w: f64,
}

pub struct Wiring {
    pub now: SimNow,
    pub fabric: Arc<Fabric>,
    pub broker: Arc<Broker>,
    pub historian: Arc<Historian>,
    pub plant: Arc<Mutex<Plant>>,
    pub population: Arc<Mutex<Population>>,
    pub cabinets: Vec<Cabinet>,
    pub controllers: Vec<FieldController>,
    pub pollers: Vec<HostPoller>,
    pub ems: EmsProcess,
    pub turnout: BrokerClient,
    pub operator: ScadaClient,
    pub endpoints: Endpoints,
    modbus_servers: Vec<ModbusServer>,
    historian_server: Option<HttpServer>,
    broker_server: Option<HttpServer>,
}

fn loopback(port: u16) -> SocketAddr {
    SocketAddr::from((Ipv4Addr::LOCALHOST, port))
}

fn startup(what: &str, e: impl std::fmt::Display) -> RunError {
    RunError::Startup(format!("{what}: {e}"))
}

impl Wiring {
    pub async fn build(
        sc: &Scenario,
        series_dir: &std::path::Path,
        transport: Transport,
        ephemeral: bool,
    ) -> Result<Self, RunError> {
        let port = |p: u16| if ephemeral { 0 } else { p };
        let now = SimNow::new();
        let fabric = Arc::new(Fabric::new(sc.policy()?));
        for n in &sc.network.nodes {
            fabric.attach(&n.id, n.segment.name(), &[]).map_err(|e| startup("network", e))?;
        }
        let http = web::http_client();
        let mut endpoints = Endpoints { transport, operator: sc.operator.clone(), ..Default::default() };

        let broker = Arc::new(Broker::new(now.clone()));
        let broker_server = match transport {
            Transport::Tcp => {
                let router = web::gated(broker::router(broker.clone()), Some(fabric.clone()), &sc.broker.node);
                let s = HttpServer::bind(loopback(port(sc.broker.port)), router)
                    .await
                    .map_err(|e| startup(&format!("broker port {}", sc.broker.port), e))?;
                endpoints.broker = Some(s.url());
                Some(s)
            }
            Transport::Local => None,
        };
        let broker_client = |node: &str| match &broker_server {
            Some(s) => BrokerClient::http(&s.url(), node, http.clone()),
            None => BrokerClient::local(broker.clone(), Some(Gate::new(fabric.clone(), node, &sc.broker.node))),
        };

        let plant = Arc::new(Mutex::new(sc.build_plant()?));
        let buildings: Vec<String> = sc.devices.cabinets.iter().map(|c| c.building.clone()).collect();
        let population = Arc::new(Mutex::new(
            Population::new(sc.turnout_model()?, buildings)
                .map_err(|e| startup("population", e))?
                .with_fabric(fabric.clone()),
        ));

        let scada = sc.historian.node.as_str();
        let scan = SimTime::from_secs_f64(sc.devices.plc_scan_period);
        let mut cabinets = Vec::new();
        let mut modbus_servers = Vec::new();
        let mut modbus_clients: BTreeMap<String, Arc<ModbusClient>> = BTreeMap::new();
        for c in &sc.devices.cabinets {
            let device = SmartCabinet::new(&c.building, c.base_load_w, c.max_consumption_w, population.clone());
            let endpoint = ModbusEndpoint::new(device.registers.clone());
            let gate = Some(Gate::new(fabric.clone(), scada, &c.node));
            let client = match transport {
                Transport::Tcp => {
                    let server = ModbusServer::bind(loopback(port(c.port)), endpoint.clone())
                        .await
                        .map_err(|e| startup(&format!("modbus port {} for {}", c.port, c.node), e))?;
                    let addr = server.local_addr();
                    endpoints.modbus.insert(c.node.clone(), addr.to_string());
                    modbus_servers.push(server);
                    ModbusClient::tcp(addr, c.unit, gate)
                }
                Transport::Local => ModbusClient::local(endpoint.clone(), c.unit, gate),
            };
            modbus_clients.insert(c.node.clone(), Arc::new(client));
            cabinets.push(Cabinet { device, plc: TripPlc::new(scan), endpoint, last_w: 0.0 });
        }

        let historian = Arc::new(Historian::with_series_dir(series_dir).map_err(|e| startup("historian", e))?);
        let mut groups: Vec<(String, Vec<historian::DatapointSpec>)> = Vec::new();
        for dp in &sc.historian.datapoints {
            historian.register(dp.clone()).map_err(|e| startup("historian", e))?;
            if let Some(host) = dp.source.host() {
                match groups.iter_mut().find(|(h, _)| h == host) {
                    Some((_, pts)) => pts.push(dp.clone()),
                    None => groups.push((host.to_string(), vec![dp.clone()])),
                }
            }
        }
        let pollers = groups
            .into_iter()
            .map(|(host, pts)| {
                let link = match modbus_clients.get(&host) {
                    Some(c) => PollLink::Modbus(c.clone()),
                    None => PollLink::Broker(broker_client(scada)),
                };
                HostPoller::new(&host, pts, link)
            })
            .collect();
        let service = Arc::new(HistorianService {
            store: historian.clone(),
            commands: CommandRouter::new(Some(broker_client(scada)), modbus_clients),
        });
        let historian_server = match transport {
            Transport::Tcp => {
                let router = web::gated(historian::router(service.clone()), Some(fabric.clone()), scada);
                let s = HttpServer::bind(loopback(port(sc.historian.port)), router)
                    .await
                    .map_err(|e| startup(&format!("historian port {}", sc.historian.port), e))?;
                endpoints.historian = Some(s.url());
                Some(s)
            }
            Transport::Local => None,
        };
        let scada_client = |node: &str| match &historian_server {
            Some(s) => ScadaClient::http(&s.url(), node, http.clone()),
            None => ScadaClient::local(service.clone(), Some(Gate::new(fabric.clone(), node, scada))),
        };

        let publish = SimTime::from_secs_f64(sc.devices.publish_period);
        let mut controllers = Vec::new();
        let mut things: BTreeMap<String, Features> = BTreeMap::new();
        for c in &sc.devices.controllers {
            let mut ctrl =
                FieldController::new(&c.node, c.kind, plant.clone(), broker_client(&c.node)).with_period(publish);
            if let Some(filter) = ctrl.command_filter() {
                let sub = broker.subscribe(&filter).gated(Gate::new(fabric.clone(), &sc.broker.node, &c.node));
                ctrl = ctrl.with_commands(sub);
            }
            let (thing, features) = ctrl.initial_state();
            let entry = things.entry(thing).or_default();
            for (f, props) in features {
                entry.entry(f).or_default().extend(props);
            }
            controllers.push(ctrl);
        }
        let target = sc.turnout.target.split('/').collect::<Vec<_>>();
        if let [thing, feature, property] = target.as_slice() {
            things
                .entry(thing.to_string())
                .or_default()
                .entry(feature.to_string())
                .or_default()
                .insert(property.to_string(), Scalar::Number(0.0));
        }
        for (thing, features) in things {
            broker.create_thing(&thing, features).map_err(|e| startup("broker", e))?;
        }

        let ems = EmsProcess::new(sc.ems.config.clone(), sc.ems.bindings.clone(), scada_client(&sc.ems.node))
            .map_err(|e| startup("ems", e))?;
        let turnout = broker_client(&sc.turnout.publisher);
        let operator = scada_client(&sc.operator);

        Ok(Wiring {
            now,
            fabric,
            broker,
            historian,
            plant,
            population,
            cabinets,
            controllers,
            pollers,
            ems,
            turnout,
            operator,
            endpoints,
            modbus_servers,
            historian_server,
            broker_server,
        })
    }

    /// Requests handled by every service, counted at the receiving end.
    pub fn served(&self) -> BTreeMap<String, u64> {
        let mut out = BTreeMap::new();
        out.insert("broker".to_string(), self.broker.served());
        out.insert("historian".to_string(), self.historian.served());
        for c in &self.cabinets {
            out.insert(format!("modbus:{}", c.device.building), c.endpoint.served());
        }
        for c in &self.controllers {
            let s = c.stats();
            out.insert(format!("events:{}", c.node), s.applied + s.rejected);
        }
        out
    }

    /// Stops servers in order: field devices, historian, broker.
    pub fn shutdown(&mut self) {
        for s in self.modbus_servers.drain(..) {
            s.shutdown();
        }
        if let Some(s) = self.historian_server.take() {
            s.shutdown();
        }
        if let Some(s) = self.broker_server.take() {
            s.shutdown();
        }
    }
}
