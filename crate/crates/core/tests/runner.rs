use std::fs;
use std::path::{Path, PathBuf};

use twinsim::netfabric::Segment;
use twinsim::runner::{self, export, read_ticks, RunOptions, Transport, DATAPOINTS, SUMMARY};
use twinsim::scenario::{Injection, Scenario};
use twinsim::Scalar;

fn spm() -> Scenario {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/spm.json");
    Scenario::load(&path).expect("bundled scenario loads")
}

fn options(out: &Path, duration: f64, transport: Transport) -> RunOptions {
    let mut o = RunOptions::new(out);
    o.duration = Some(duration);
    o.transport = transport;
    o.ephemeral_ports = true;
    o.paced = false;
    o
}

/// `(seconds, value)` samples of one datapoint from an exported `datapoints.csv`.
fn series(run: &Path, xid: &str) -> Vec<(f64, String)> {
    let text = fs::read_to_string(run.join(DATAPOINTS)).unwrap();
    text.lines()
        .skip(1)
        .filter_map(|l| {
            let mut f = l.splitn(3, ',');
            let (t, x, v) = (f.next()?, f.next()?, f.next()?);
            (x == xid).then(|| (t.parse().unwrap(), v.to_string()))
        })
        .collect()
}

fn counters(run: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(run.join("counters.json")).unwrap()).unwrap()
}

fn tmp() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    (dir, out)
}

#[tokio::test(flavor = "multi_thread")]
async fn local_run_produces_consistent_artifacts() {
    let (_d, out) = tmp();
    let report = runner::run(spm(), &options(&out, 3600.0, Transport::Local)).await.unwrap();
    assert_eq!(report.ems_ticks, 60);
    assert_eq!(report.blocked, 0);
    assert_eq!(report.delivered, report.served);

    let ticks = read_ticks(&out).unwrap();
    assert_eq!(ticks.len(), 60);
    for t in &ticks {
        assert!(t.residual_kw.abs() < 1e-9, "{t:?}");
        assert!((t.window_s - 60.0).abs() < 1e-9);
    }
    // 15 points sampled every 10 s over [0, 3600)
    let text = fs::read_to_string(out.join(DATAPOINTS)).unwrap();
    assert_eq!(text.lines().count(), 1 + 15 * 360);
    let c = counters(&out);
    assert_eq!(c["served_total"], c["fabric"]["delivered"]);
}

#[tokio::test(flavor = "multi_thread")]
async fn export_is_a_pure_function_of_the_run() {
    let (dir, out) = tmp();
    runner::run(spm(), &options(&out, 1800.0, Transport::Local)).await.unwrap();
    let again = dir.path().join("again");
    let written = export(&out, &again).unwrap();
    assert_eq!(written.len(), 2);
    for name in [DATAPOINTS, SUMMARY] {
        assert_eq!(fs::read(out.join(name)).unwrap(), fs::read(again.join(name)).unwrap(), "{name}");
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn transports_agree_byte_for_byte() {
    let (dir, local) = tmp();
    let tcp = dir.path().join("tcp");
    runner::run(spm(), &options(&local, 1800.0, Transport::Local)).await.unwrap();
    runner::run(spm(), &options(&tcp, 1800.0, Transport::Tcp)).await.unwrap();
    for name in [DATAPOINTS, SUMMARY] {
        assert_eq!(fs::read(local.join(name)).unwrap(), fs::read(tcp.join(name)).unwrap(), "{name}");
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn turbine_start_injection_spins_the_turbine() {
    let (_d, out) = tmp();
    let mut sc = spm();
    sc.injections.push(Injection {
        at: 125.0,
        target: "FDT:gas-turbine-1/turbine/command".into(),
        value: Scalar::Text("start".into()),
    });
    runner::run(sc, &options(&out, 600.0, Transport::Tcp)).await.unwrap();

    // discharge ticks leave the turbine alone; the first idle tick (t = 300) stops it
    let running = series(&out, "DP_TURBINE_RUNNING");
    let on: Vec<f64> = running.iter().filter(|(_, v)| v == "1").map(|(t, _)| *t).collect();
    assert_eq!(on, (13..=30).map(|k| k as f64 * 10.0).collect::<Vec<_>>());
    let rpm = series(&out, "DP_TURBINE_RPM");
    let peak = rpm.iter().map(|(_, v)| v.parse::<f64>().unwrap()).fold(0.0, f64::max);
    assert!(peak > 1000.0, "rpm peak {peak}");
    let log = fs::read_to_string(out.join("events.log")).unwrap();
    assert!(log.contains("125\tinject\tFDT:gas-turbine-1/turbine/command = \"start\" ok"), "{log}");
}

#[tokio::test(flavor = "multi_thread")]
async fn master_coil_off_cuts_the_building_feed() {
    let (_d, out) = tmp();
    let mut sc = spm();
    sc.injections.push(Injection {
        at: 95.0,
        target: "modbus:cabinet-A/coil/101".into(),
        value: Scalar::Text("off".into()),
    });
    runner::run(sc, &options(&out, 300.0, Transport::Tcp)).await.unwrap();

    for (t, v) in series(&out, "DP_BUILDING_A_CONSUMPTION") {
        let w: f64 = v.parse().unwrap();
        if t < 95.0 {
            assert!(w >= 1500.0, "t={t} w={w}");
        } else {
            assert_eq!(w, 0.0, "t={t}");
        }
    }
    for (t, v) in series(&out, "DP_BUILDING_B_CONSUMPTION") {
        assert!(v.parse::<f64>().unwrap() >= 1500.0, "t={t}");
    }
}

#[tokio::test(flavor = "multi_thread")]
async fn operator_on_the_client_segment_is_blocked() {
    let (_d, out) = tmp();
    let mut sc = spm();
    let op = sc.network.nodes.iter_mut().find(|n| n.id == "operator-ws").unwrap();
    op.segment = Segment::Client;
    sc.injections.push(Injection {
        at: 50.0,
        target: "modbus:cabinet-A/coil/101".into(),
        value: Scalar::Text("off".into()),
    });
    let report = runner::run(sc, &options(&out, 200.0, Transport::Tcp)).await.unwrap();

    assert_eq!(report.blocked, 1);
    let log = fs::read_to_string(out.join("events.log")).unwrap();
    assert!(log.lines().any(|l| l.starts_with("50\tinject") && l.contains("failed")), "{log}");
    assert!(series(&out, "DP_BUILDING_A_CONSUMPTION").iter().all(|(_, v)| v != "0"));
    let c = counters(&out);
    assert_eq!(
        c["fabric"]["blocked_by_rule"].as_object().unwrap().values().map(|v| v.as_u64().unwrap()).sum::<u64>(),
        1
    );
}

#[tokio::test(flavor = "multi_thread")]
async fn occupied_hours_raise_campus_load() {
    let (_d, out) = tmp();
    let mut sc = spm();
    sc.duration = 86_400.0;
    runner::run(sc, &options(&out, 86_400.0, Transport::Local)).await.unwrap();
    let campus = series(&out, "DP_CAMPUS_CONSUMPTION");
    let at = |h: f64| campus.iter().find(|(t, _)| *t == h * 3600.0).unwrap().1.parse::<f64>().unwrap();
    assert_eq!(at(3.0), 9000.0);
    assert!(at(11.0) > 20_000.0, "{}", at(11.0));
}
