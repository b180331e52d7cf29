use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use maccoop_cli::scenario_file::{PowerEntry, PowerMode, ReceiverEntry, ReceiverType, ScenarioFile, UserEntry};
use proptest::prelude::*;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios").join(name)
}

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_maccoop")).args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn summary(o: &Output) -> serde_json::Value {
    let text = stdout(o);
    let start = text.rfind("\n{").map(|i| i + 1).unwrap_or(0);
    serde_json::from_str(&text[start..]).unwrap()
}

#[test]
fn partition_count() {
    let o = run(&["partitions", "--k", "4", "--count-only"]);
    assert!(o.status.success());
    assert_eq!(stdout(&o), "15\n");
    let o = run(&["partitions", "--k", "3"]);
    assert!(stdout(&o).contains("\"{{1,2},{3}}\""));
}

#[test]
fn symmetric_four_user_core_is_empty() {
    let sym4 = scenario("sym4.toml");
    let o = run(&["core", "--scenario", sym4.to_str().unwrap(), "--model", "rational"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&o);
    assert_eq!(s["verdict"], "empty");
    assert!(s["allocation"].is_null());
    let weights = s["certificate"]["weights"].as_array().unwrap();
    assert!(!weights.is_empty());
    assert!(s["certificate"]["margin"].as_f64().unwrap() > 0.0);
    assert!(stdout(&o).contains("## certificate.csv"));
    let keys: Vec<&String> = s.as_object().unwrap().keys().collect();
    assert_eq!(keys.len(), 7);
}

#[test]
fn three_db_region_contains_equal_split() {
    let path = scenario("sym3_ts_3db.toml");
    let dir = tempfile::tempdir().unwrap();
    let o = run(&[
        "region",
        "--scenario",
        path.to_str().unwrap(),
        "--model",
        "rational",
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(dir.path().join("region.csv")).unwrap();
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let vertices: Vec<[f64; 3]> = rdr
        .records()
        .map(|r| {
            let r = r.unwrap();
            [r[1].parse().unwrap(), r[2].parse().unwrap(), r[3].parse().unwrap()]
        })
        .collect();
    assert!(vertices.len() >= 3);
    // the equal split lies inside when every edge keeps it on the same side
    let p = [0.981479659722, 0.981479659722];
    let mut sign = 0.0f64;
    for i in 0..vertices.len() {
        let (a, b) = (vertices[i], vertices[(i + 1) % vertices.len()]);
        let cross = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        assert!(cross * sign >= -1e-12, "equal split outside the polygon");
        if cross.abs() > 1e-12 {
            sign = cross.signum();
        }
    }
    let s: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(s["verdict"], "nonempty");
    assert_eq!(summary(&o), s);
}

#[test]
fn bits_rescale_utilities() {
    let path = scenario("sym3_ts_3db.toml");
    let nats = summary(&run(&["least-core", "--scenario", path.to_str().unwrap()]));
    let bits = summary(&run(&["least-core", "--scenario", path.to_str().unwrap(), "--bits"]));
    let a = nats["epsilon_star"].as_f64().unwrap();
    let b = bits["epsilon_star"].as_f64().unwrap();
    assert!((a / std::f64::consts::LN_2 - b).abs() < 1e-9);
}

#[test]
fn exit_codes() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["--version"]).status.code(), Some(0));
    let o = run(&["core", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(run(&["nonsense"]).status.code(), Some(1));
    assert_eq!(
        run(&["core", "--scenario", "/nonexistent/file.toml"]).status.code(),
        Some(1)
    );
    assert_eq!(run(&["partitions", "--k", "13"]).status.code(), Some(1));
    let sym4 = scenario("sym4.toml");
    let o = run(&["region", "--scenario", sym4.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    // eight users under time sharing exceed the guard
    let dir = tempfile::tempdir().unwrap();
    let big = dir.path().join("ts8.toml");
    std::fs::write(&big, file_with(8, ReceiverType::SicTimeshare).to_text()).unwrap();
    let o = run(&["utilities", "--scenario", big.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("partition"));
}

#[test]
fn field_anchored_errors() {
    let mut f = file_with(2, ReceiverType::Sud);
    f.users[1].channel = vec![vec![1.0, 2.0]];
    let err = f.to_scenario().unwrap_err().to_string();
    assert!(err.starts_with("users[1].channel[0]"), "{err}");
    let text = "rx_antennas = 1\nnoise_N0 = 1.0\ncolour = 3\n";
    let err = ScenarioFile::parse(text).unwrap_err().to_string();
    assert!(err.contains("colour") && err.contains("line 3"), "{err}");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let path = scenario("sym4.toml");
    let p = path.to_str().unwrap();
    for args in [
        vec!["utilities", "--scenario", p],
        vec!["externalities", "--scenario", p, "--trials", "20", "--seed", "7"],
        vec![
            "sweep",
            "--k",
            "3,4",
            "--snr-from",
            "-10",
            "--snr-to",
            "10",
            "--snr-step",
            "5",
        ],
    ] {
        let a = run(&args);
        let b = run(&args);
        assert!(a.status.success(), "{}", String::from_utf8_lossy(&a.stderr));
        assert_eq!(a.stdout, b.stdout);
    }
}

fn file_with(k: usize, kind: ReceiverType) -> ScenarioFile {
    ScenarioFile {
        rx_antennas: 1,
        noise_n0: 1.0,
        receiver: ReceiverEntry {
            kind,
            base_order: (kind == ReceiverType::SicFixed).then(|| (1..=k).collect()),
            weights: None,
        },
        users: (1..=k)
            .map(|id| UserEntry {
                id,
                antennas: 1,
                channel: vec![vec![1.0]],
                power: PowerEntry {
                    mode: PowerMode::Sum,
                    values: vec![1.0],
                },
            })
            .collect(),
    }
}

fn arb_file() -> impl Strategy<Value = ScenarioFile> {
    (
        1usize..=4,
        1usize..=3,
        1usize..=2,
        0.01f64..10.0,
        0usize..3,
        any::<bool>(),
    )
        .prop_flat_map(|(k, m, n, noise, kind, per_antenna)| {
            let users = proptest::collection::vec(
                (
                    proptest::collection::vec(proptest::collection::vec(-3.0f64..3.0, n), m),
                    proptest::collection::vec(0.1f64..5.0, n),
                ),
                k,
            );
            let order = Just((1..=k).collect::<Vec<_>>()).prop_shuffle();
            (users, order).prop_map(move |(users, order)| {
                let kind = [ReceiverType::Sud, ReceiverType::SicFixed, ReceiverType::SicTimeshare][kind];
                ScenarioFile {
                    rx_antennas: m,
                    noise_n0: noise,
                    receiver: ReceiverEntry {
                        kind,
                        base_order: (kind == ReceiverType::SicFixed).then_some(order),
                        weights: None,
                    },
                    users: users
                        .into_iter()
                        .enumerate()
                        .map(|(i, (channel, caps))| UserEntry {
                            id: i + 1,
                            antennas: n,
                            channel,
                            power: if per_antenna {
                                PowerEntry {
                                    mode: PowerMode::PerAntenna,
                                    values: caps,
                                }
                            } else {
                                PowerEntry {
                                    mode: PowerMode::Sum,
                                    values: vec![caps.iter().sum()],
                                }
                            },
                        })
                        .collect(),
                }
            })
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn canonical_files_round_trip(f in arb_file()) {
        let text = f.to_text();
        let parsed = ScenarioFile::parse(&text).unwrap();
        prop_assert_eq!(&parsed, &f);
        prop_assert_eq!(parsed.to_text(), text.clone());
        let sc = parsed.to_scenario().unwrap();
        prop_assert_eq!(ScenarioFile::from_scenario(&sc).to_text(), text);
    }
}

#[test]
fn bundled_scenarios_are_canonical() {
    for name in ["sym4.toml", "sym3_ts_3db.toml", "sud_mimo3.toml"] {
        let text = std::fs::read_to_string(scenario(name)).unwrap();
        let f = ScenarioFile::parse(&text).unwrap();
        assert_eq!(f.to_text(), text, "{name}");
        f.to_scenario().unwrap();
    }
}
