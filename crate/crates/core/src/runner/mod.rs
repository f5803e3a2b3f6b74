//! The accelerated runner: drives every periodic task of a scenario from one
//! discrete-event queue, paced by the simulation clock, and writes the run artifacts.

mod artifacts;
mod schedule;
mod wiring;

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use chrono::NaiveDateTime;
use serde_json::json;
use thiserror::Error;

use crate::ems::TickOutcome;
use crate::occupancy::turnout_at;
use crate::scenario::{Scenario, ScenarioError};
use crate::sim::{SimClock, SimTime};

pub use artifacts::{
    datapoints_csv, export, read_ticks, summarize, summary_csv, DaySummary, ExportError, Manifest, ManifestPoint,
    TickRow, COUNTERS, DATAPOINTS, ENDPOINTS, EVENTS, MANIFEST, SERIES_DIR, SUMMARY, SUMMARY_HEADER, TICKS,
    TICKS_HEADER,
};
pub use schedule::{Scheduler, Task};
pub use wiring::{Endpoints, Transport, Wiring};

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("startup failed: {0}")]
    Startup(String),
    #[error("run aborted at t={at}: {reason}")]
    Abort { at: SimTime, reason: String },
    #[error(transparent)]
    Export(#[from] ExportError),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> RunError {
    RunError::Io { path: path.display().to_string(), message: e.to_string() }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out: PathBuf,
    pub duration: Option<f64>,
    pub scale: Option<f64>,
    pub seed: Option<u64>,
    pub transport: Transport,
    /// Bind every service to an OS-assigned port.
    pub ephemeral_ports: bool,
    /// When false, events run back to back regardless of the clock scale.
    pub paced: bool,
}

impl RunOptions {
    pub fn new(out: impl Into<PathBuf>) -> Self {
        RunOptions {
            out: out.into(),
            duration: None,
            scale: None,
            seed: None,
            transport: Transport::Tcp,
            ephemeral_ports: false,
            paced: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub out: PathBuf,
    pub sim_end: SimTime,
    pub wall: Duration,
    pub events: u64,
    pub ems_ticks: u64,
    pub trips: u64,
    pub delivered: u64,
    pub blocked: u64,
    pub served: u64,
}

/// Applies command-line overrides to a scenario.
pub fn apply_overrides(sc: &mut Scenario, opts: &RunOptions) {
    if let Some(d) = opts.duration {
        sc.duration = d;
    }
    if let Some(s) = opts.scale {
        sc.clock.scale = s;
    }
    if let Some(s) = opts.seed {
        sc.seed = s;
    }
}

/// Sleeps until the simulation clock reaches an event's time.
struct Pacer {
    clock: SimClock,
    last: Instant,
    enabled: bool,
}

impl Pacer {
    fn new(scale: f64, tick: f64, enabled: bool) -> Self {
        Pacer { clock: SimClock::new(scale, tick), last: Instant::now(), enabled }
    }

    fn advance(&mut self) -> SimTime {
        let now = Instant::now();
        let t = self.clock.advance(now - self.last);
        self.last = now;
        t
    }

    async fn wait_for(&mut self, t: SimTime) {
        if !self.enabled {
            return;
        }
        loop {
            let now = self.advance();
            if now >= t {
                return;
            }
            let real = Duration::from_secs_f64((t - now).as_secs_f64() / self.clock.scale());
            // sub-millisecond leads are not worth a timer
            if real < Duration::from_millis(1) {
                return;
            }
            tokio::time::sleep(real).await;
        }
    }
}

struct EventLog {
    w: BufWriter<File>,
}

impl EventLog {
    fn line(&mut self, at: SimTime, kind: &str, msg: impl std::fmt::Display) {
        let _ = writeln!(self.w, "{at}\t{kind}\t{msg}");
    }
}

struct Loop<'a> {
    sc: &'a Scenario,
    w: Wiring,
    events: EventLog,
    ticks: BufWriter<File>,
    trips: u64,
    processed: u64,
}

fn ms(secs: f64) -> SimTime {
    SimTime::from_secs_f64(secs)
}

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

impl Loop<'_> {
    fn calendar(&self, t: SimTime) -> NaiveDateTime {
        self.sc.start + chrono::Duration::milliseconds(t.as_millis() as i64)
    }

    fn write_tick(&mut self, t: SimTime) {
        let (window, level, mode, running) = {
            let mut p = self.w.plant.lock().unwrap();
            (p.take_window(), p.storage_level(), p.storage_mode(), p.turbine_running())
        };
        if window.seconds > 0.0 {
            let row = TickRow::from_window(t, &window, level, mode.as_str(), running);
            let _ = writeln!(self.ticks, "{}", row.to_csv());
        }
    }

    async fn run_task(&mut self, t: SimTime, task: Task) -> Result<(), String> {
        match task {
            Task::Occupancy => {
                let persons = turnout_at(self.w.population.lock().unwrap().model(), self.calendar(t));
                self.w.population.lock().unwrap().sync_clients(persons);
                let target: Vec<&str> = self.sc.turnout.target.split('/').collect();
                if let Err(e) = self.w.turnout.put_property(target[0], target[1], target[2], persons.into()).await {
                    log::warn!("t={t}: turnout publish failed: {e}");
                    self.events.line(t, "turnout", format!("publish failed: {e}"));
                }
            }
            Task::Cabinets => {
                for c in &mut self.w.cabinets {
                    c.last_w = c.device.sample();
                    let scan = c.plc.scan(&c.device);
                    if scan.tripped_now {
                        self.trips += 1;
                        self.events.line(
                            t,
                            "trip",
                            format!("cabinet {} tripped at {:.0} W", c.device.building, c.last_w),
                        );
                    }
                    if scan.reset_now {
                        self.events.line(t, "trip", format!("cabinet {} reset", c.device.building));
                    }
                }
            }
            Task::Controllers => {
                for c in &mut self.w.controllers {
                    if let Err(e) = c.publish(t).await {
                        self.events.line(t, "publish", format!("{} failed: {e}", c.node));
                    }
                }
            }
            Task::Poll => {
                for p in &self.w.pollers {
                    p.poll(&self.w.historian, t).await;
                }
                self.w.historian.sample_derived(t);
            }
            Task::Ems => {
                self.write_tick(t);
                match self.w.ems.tick(t).await {
                    TickOutcome::Acted { actions, failed_commands, .. } => {
                        let msg = format!(
                            "storage={} turbine={} dissipate={} grid_expected={:.3}{}",
                            actions.storage_mode,
                            actions.turbine_command,
                            actions.dissipate_surplus,
                            actions.grid_import_expected,
                            if failed_commands > 0 {
                                format!(" failed_commands={failed_commands}")
                            } else {
                                String::new()
                            }
                        );
                        self.events.line(t, "ems", msg);
                    }
                    TickOutcome::Skipped(reason) => self.events.line(t, "ems", format!("skipped: {reason}")),
                }
            }
            Task::Injection(i) => {
                let inj = &self.sc.injections[i];
                match self.w.operator.command(&inj.target, inj.value.clone()).await {
                    Ok(rev) => self.events.line(
                        t,
                        "inject",
                        format!(
                            "{} = {} ok{}",
                            inj.target,
                            inj.value,
                            rev.map(|r| format!(" rev {r}")).unwrap_or_default()
                        ),
                    ),
                    Err(e) => self.events.line(t, "inject", format!("{} = {} failed: {e}", inj.target, inj.value)),
                }
            }
            Task::Plant => {
                for c in &mut self.w.controllers {
                    if let Err(e) = c.apply_pending() {
                        self.events.line(t, "command", format!("{}: {e}", c.node));
                    }
                }
                let load_kw: f64 = self.w.cabinets.iter().map(|c| c.last_w).sum::<f64>() / 1000.0;
                self.w.plant.lock().unwrap().step(t, load_kw, 1.0).map_err(|e| format!("plant step: {e}"))?;
            }
        }
        Ok(())
    }

    fn drain_blocked(&mut self, t: SimTime) {
        for b in self.w.fabric.drain_blocked() {
            self.events.line(t, "blocked", format!("{} -> {} by {} ({} bytes)", b.src, b.dst, b.rule, b.bytes));
        }
    }
}

fn period(task: Task, sc: &Scenario, poll: SimTime) -> Option<SimTime> {
    match task {
        Task::Occupancy => Some(ms(sc.turnout.period)),
        Task::Cabinets => Some(ms(sc.devices.plc_scan_period)),
        Task::Controllers => Some(ms(sc.devices.publish_period)),
        Task::Poll => Some(poll),
        Task::Ems => Some(ms(sc.ems.config.timer_period)),
        Task::Injection(_) => None,
        Task::Plant => Some(SimTime::from_secs(1)),
    }
}

/// Runs a validated scenario to completion and writes its artifacts to `opts.out`.
pub async fn run(mut sc: Scenario, opts: &RunOptions) -> Result<RunReport, RunError> {
    apply_overrides(&mut sc, opts);
    sc.validate()?;
    let out = opts.out.clone();
    fs::create_dir_all(&out).map_err(|e| io_err(&out, e))?;
    let series = out.join(SERIES_DIR);
    if series.exists() {
        fs::remove_dir_all(&series).map_err(|e| io_err(&series, e))?;
    }
    let wall = Instant::now();
    let w = Wiring::build(&sc, &series, opts.transport, opts.ephemeral_ports).await?;
    let endpoints_path = out.join(ENDPOINTS);
    fs::write(&endpoints_path, serde_json::to_string_pretty(&w.endpoints).expect("endpoints serialize") + "\n")
        .map_err(|e| io_err(&endpoints_path, e))?;
    let manifest = Manifest {
        scenario: sc.name.clone(),
        start: sc.start,
        duration: sc.duration,
        seed: sc.seed,
        datapoints: sc
            .historian
            .datapoints
            .iter()
            .map(|d| ManifestPoint { xid: d.xid.clone(), name: d.name.clone(), poll_period: d.poll_period })
            .collect(),
    };
    manifest.write(&out)?;
    let events_path = out.join(EVENTS);
    let events = EventLog { w: BufWriter::new(File::create(&events_path).map_err(|e| io_err(&events_path, e))?) };
    let ticks_path = out.join(TICKS);
    let mut ticks = BufWriter::new(File::create(&ticks_path).map_err(|e| io_err(&ticks_path, e))?);
    writeln!(ticks, "{TICKS_HEADER}").map_err(|e| io_err(&ticks_path, e))?;

    let poll = SimTime(
        sc.historian.datapoints.iter().map(|d| ms(d.poll_period).as_millis()).filter(|p| *p > 0).fold(0, gcd).max(1),
    );
    let mut q = Scheduler::new();
    for task in [Task::Occupancy, Task::Cabinets, Task::Controllers, Task::Poll, Task::Ems, Task::Plant] {
        q.push(SimTime::ZERO, task);
    }
    for (i, inj) in sc.injections.iter().enumerate() {
        q.push(ms(inj.at), Task::Injection(i));
    }
    let end = ms(sc.duration);
    let mut pacer = Pacer::new(sc.clock.scale, sc.clock.tick, opts.paced);
    let mut lp = Loop { sc: &sc, w, events, ticks, trips: 0, processed: 0 };
    log::info!("running {} for {} s at scale {} over {:?}", sc.name, sc.duration, sc.clock.scale, opts.transport);
    let mut abort = None;
    let mut next_day = 86_400_000;
    let mut last_t = SimTime::ZERO;
    while let Some((t, task)) = q.pop_before(end) {
        pacer.wait_for(t).await;
        lp.w.now.set(t);
        if let Err(reason) = lp.run_task(t, task).await {
            log::error!("t={t}: {reason}");
            lp.events.line(t, "abort", &reason);
            abort = Some(RunError::Abort { at: t, reason });
            break;
        }
        lp.processed += 1;
        if let Some(p) = period(task, &sc, poll) {
            q.push(t + p, task);
        }
        if t.as_millis() >= next_day {
            lp.drain_blocked(t);
            log::info!("day {} simulated after {:.1} s wall", t.as_millis() / 86_400_000, wall.elapsed().as_secs_f64());
            next_day += 86_400_000;
        }
        last_t = t;
    }
    let sim_end = if abort.is_some() { last_t } else { end };
    if abort.is_none() {
        lp.w.now.set(end);
        lp.write_tick(end);
    }
    lp.drain_blocked(sim_end);
    lp.w.shutdown();
    lp.ticks.flush().map_err(|e| io_err(&ticks_path, e))?;
    lp.events.w.flush().map_err(|e| io_err(&events_path, e))?;
    lp.w.historian.flush().map_err(|e| io_err(&series, e))?;

    let served = lp.w.served();
    let served_total: u64 = served.values().sum();
    let stats = lp.w.fabric.stats();
    let controllers: BTreeMap<String, _> = lp.w.controllers.iter().map(|c| (c.node.clone(), c.stats())).collect();
    let gaps: BTreeMap<String, u64> = sc
        .historian
        .datapoints
        .iter()
        .map(|d| (d.xid.clone(), lp.w.historian.gap_count(&d.xid).unwrap_or(0)))
        .collect();
    let samples: BTreeMap<String, u64> = sc
        .historian
        .datapoints
        .iter()
        .map(|d| (d.xid.clone(), lp.w.historian.sample_count(&d.xid).unwrap_or(0)))
        .collect();
    let counters = json!({
        "sim_end": sim_end.as_secs_f64(),
        "wall_secs": wall.elapsed().as_secs_f64(),
        "events": lp.processed,
        "trips": lp.trips,
        "fabric": {
            "delivered": stats.delivered,
            "blocked": stats.blocked,
            "blocked_by_rule": stats.blocked_by_rule,
            "delivered_by_pair": stats.delivered_by_pair.iter().map(|((s, d), n)| (format!("{s}->{d}"), *n)).collect::<BTreeMap<_, _>>(),
        },
        "served": served,
        "served_total": served_total,
        "controllers": controllers,
        "ems": { "ticks": lp.w.ems.ticks(), "skipped": lp.w.ems.skipped(), "command_failures": lp.w.ems.command_failures() },
        "historian": { "errors": lp.w.historian.error_count(), "gaps": gaps, "samples": samples },
        "aborted": abort.is_some(),
    });
    let counters_path = out.join(COUNTERS);
    fs::write(&counters_path, serde_json::to_string_pretty(&counters).expect("counters serialize") + "\n")
        .map_err(|e| io_err(&counters_path, e))?;
    export(&out, &out)?;
    if let Some(e) = abort {
        return Err(e);
    }
    let report = RunReport {
        out,
        sim_end,
        wall: wall.elapsed(),
        events: lp.processed,
        ems_ticks: lp.w.ems.ticks(),
        trips: lp.trips,
        delivered: stats.delivered,
        blocked: stats.blocked,
        served: served_total,
    };
    log::info!("run finished: {} events, {:.1} s wall", report.events, report.wall.as_secs_f64());
    Ok(report)
}
