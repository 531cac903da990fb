use std::path::Path;
use std::process::{Command, Output};

use qlinksim::{resolve, run_scenario, Cell, Scenario};
use qlinksim_core::repeater::{link_rate, LinkArchitecture, RepeaterConfig};
use qlinksim_core::wcp::{optimal_mu, ChannelModel, WcpProtocol};

fn qlinksim(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_qlinksim"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn num(c: &Cell) -> f64 {
    c.as_f64().expect("numeric cell")
}

#[test]
fn minimal_herald_config_validates_with_defaults() {
    let r = resolve("[herald]\npair_p = 1e-3\n", &[], Scenario::Herald).unwrap();
    assert_eq!(r.base.herald.attenuation_db_per_km, 0.2);
    assert_eq!(r.base.herald.detection_eff, 0.8);
    assert_eq!(r.base.herald.coupling, 0.9);
    assert_eq!(r.base.herald.repetition_rate_hz, 10e9);
    let table = run_scenario(&r).unwrap();
    assert_eq!(table.rows.len(), 1);
    let f = num(table.column("fidelity_to_bell").unwrap()[0]);
    assert!((0.0..=1.0).contains(&f));
}

#[test]
fn negative_attenuation_is_a_config_error_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "bad.toml", "[herald]\nattenuation_db_per_km = -1\n");
    let out = qlinksim(&["herald", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("attenuation_db_per_km") && err.contains("line 2"), "{err}");
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "typo.toml", "[wcp]\ndistance = 10\n");
    let out = qlinksim(&["wcp-rate", "--config", &cfg]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("distance"));
    let out = qlinksim(&["wcp-rate", "--set", "wcp.detector_efficiency=0.5"]);
    assert_eq!(out.status.code(), Some(2));
    let out = qlinksim(&["wcp-rate", "--set", "extra.key=1"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fifty_step_log_sweep_gives_fifty_rows() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "sweep.toml",
        "[herald]\non_demand = true\n\n[sweep]\npath = \"herald.distance_km\"\nstart = 1\nstop = 100\nsteps = 50\nscale = \"log\"\n",
    );
    let csv = dir.path().join("out.csv");
    let out = qlinksim(&["herald", "--config", &cfg, "--out", csv.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 52);
    let distances: Vec<f64> = text
        .lines()
        .skip(2)
        .map(|l| l.split(',').next().unwrap().parse().unwrap())
        .collect();
    assert_eq!(distances.len(), 50);
    assert!((distances[0] - 1.0).abs() < 1e-12 && (distances[49] - 100.0).abs() < 1e-9);
    assert!(distances.windows(2).all(|w| w[1] > w[0]));
}

#[test]
fn empty_sweep_writes_comment_and_header_only() {
    let out = qlinksim(&[
        "wcp-rate",
        "--set",
        "sweep.path=wcp.distance_km",
        "--set",
        "sweep.start=0",
        "--set",
        "sweep.stop=10",
        "--set",
        "sweep.steps=0",
    ]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("# qlinksim "));
    assert_eq!(lines[1], "protocol,distance_km,t,mu_opt,rate_bits_per_s");
}

#[test]
fn same_config_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(
        dir.path(),
        "rep.toml",
        "[repeater]\np1 = 0.9\n\n[sweep]\npath = \"repeater.total_length_km\"\nstart = 200\nstop = 1000\nsteps = 5\n",
    );
    let run = |jobs: &str| {
        let out = qlinksim(&["repeater-rate", "--config", &cfg, "--jobs", jobs]);
        assert!(out.status.success());
        out.stdout
    };
    let first = run("1");
    assert_eq!(first, run("1"));
    assert_eq!(first, run("4"));
    assert_eq!(String::from_utf8(first).unwrap().lines().count(), 2 + 10);
}

#[test]
fn digest_tracks_effective_config() {
    let a = qlinksim(&["chsh-threshold"]).stdout;
    let b = qlinksim(&["chsh-threshold", "--set", "herald.pair_p=2e-3"]).stdout;
    let first = |v: &[u8]| String::from_utf8_lossy(v).lines().next().unwrap().to_string();
    assert_ne!(first(&a), first(&b));
}

#[test]
fn chsh_threshold_is_a_single_row_near_0_8284() {
    let out = qlinksim(&["chsh-threshold"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    let rows: Vec<_> = text.lines().skip(2).collect();
    assert_eq!(rows.len(), 1);
    let eta: f64 = rows[0].split(',').next().unwrap().parse().unwrap();
    assert!((eta - 0.8284).abs() < 5e-4);
}

#[test]
fn wcp_bb84_at_25_km_matches_module() {
    let r = resolve("[wcp]\nprotocol = \"bb84\"\ndistance_km = 25\n", &[], Scenario::WcpRate).unwrap();
    let table = run_scenario(&r).unwrap();
    assert_eq!(table.rows.len(), 1);
    let t = num(table.column("t").unwrap()[0]);
    assert!((t - 10f64.powf(-0.5)).abs() < 1e-15);
    let channel = ChannelModel::fiber(25.0).unwrap();
    let opt = optimal_mu(WcpProtocol::Bb84, &channel, r.base.wcp.detector_eff).unwrap();
    assert_eq!(num(table.column("mu_opt").unwrap()[0]), opt.mu);
    assert_eq!(
        num(table.column("rate_bits_per_s").unwrap()[0]),
        opt.rate_per_pulse * 10e9
    );
}

#[test]
fn single_link_chain_is_the_bare_link() {
    let text = "[repeater]\nlink_count = 1\ntotal_length_km = 62.5\narchitectures = [\"dlcz\"]\n";
    let table = run_scenario(&resolve(text, &[], Scenario::RepeaterRate).unwrap()).unwrap();
    let config = RepeaterConfig {
        total_length_km: 62.5,
        link_count: 1,
        ..Default::default()
    };
    let p = num(table.column("p").unwrap()[0]);
    let bare = link_rate(&LinkArchitecture::Dlcz { p }, &config).unwrap();
    assert_eq!(num(table.column("rate_hz").unwrap()[0]), bare.rate_hz);
    assert!((bare.rate_hz - 29.872479135064548).abs() < 1e-9);
}

#[test]
fn infeasible_chain_exits_with_numerical_code() {
    let out = qlinksim(&["repeater-rate", "--set", "repeater.dlcz_p=0.5"]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("repeater-rate"));
}

#[test]
fn diqkd_rate_header_and_curves() {
    let text = "[search]\npair_p_steps = 2\nbs_transmission_steps = 2\nsps_pair_p_steps = 1\n";
    let table = run_scenario(&resolve(text, &[], Scenario::DiqkdRate).unwrap()).unwrap();
    assert_eq!(
        &table.columns[..7],
        [
            "distance_km",
            "variant",
            "detection_eff",
            "herald_prob",
            "S",
            "qber",
            "key_rate_bits_per_s"
        ]
    );
    assert_eq!(table.rows.len(), 4);
}
