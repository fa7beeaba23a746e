use std::fs;
use std::process::{Command, Output};

use odtload::model::KEYS;

fn odtload(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odtload")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn reference_cfg() -> String {
    format!("{}/../../configs/reference.cfg", env!("CARGO_MANIFEST_DIR"))
}

fn value(text: &str, name: &str) -> f64 {
    text.lines()
        .find_map(|l| {
            let mut it = l.split_whitespace();
            (it.next() == Some(name)).then(|| it.next().unwrap().parse().unwrap())
        })
        .unwrap_or_else(|| panic!("no {name} in\n{text}"))
}

#[test]
fn characterize_slow_beam_current() {
    let cfg = reference_cfg();
    let o = odtload(&["characterize", "--config", &cfg, "--set", "beam.v_b=1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!((value(&text, "I_c") - 1.3).abs() < 0.05 * 1.3);
    assert!((value(&text, "z_R") - 2.642e-3).abs() < 1e-6);
    assert!(value(&text, "U_esc") > value(&text, "well_minimum"));
    // The override is echoed in the header.
    assert!(text.contains("# beam.v_b = 1e0 m/s"));
    assert!(text.contains("# fingerprint: "));
}

#[test]
fn config_errors_exit_two() {
    let o = odtload(&["characterize", "--set", "beam.speed=3"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("beam.speed"));

    let o = odtload(&["characterize", "--set", "beam.v_b=fast"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("beam.v_b"));

    let o = odtload(&["characterize", "--config", "/nonexistent/odtload.cfg"]);
    assert_eq!(o.status.code(), Some(2));

    let o = odtload(&["levitate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn untrappable_exits_three() {
    let o = odtload(&["characterize", "--set", "odt.depth=0.1mK"]);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("untrappable"));
    let o = odtload(&["simulate", "--n", "10", "--set", "odt.depth=0.1mK"]);
    assert_eq!(o.status.code(), Some(3));
}

#[test]
fn help_lists_every_key_with_units() {
    let o = odtload(&["--help"]);
    assert!(o.status.success());
    let text = stdout(&o);
    for k in KEYS {
        assert!(text.contains(k.key), "{}", k.key);
        assert!(text.contains(k.quantity.accepted_units()), "{}", k.key);
    }
}

#[test]
fn simulate_json_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let dump = dir.path().join("traj.csv");
    let common = ["simulate", "--n", "60", "--seed", "42", "--set", "beam.T_r=0.125mK"];
    let run = |out: &std::path::Path, extra: &[&str]| {
        let mut args = common.to_vec();
        args.extend_from_slice(&["--output", out.to_str().unwrap()]);
        args.extend_from_slice(extra);
        let o = odtload(&args);
        assert!(o.status.success(), "{}", stderr(&o));
    };
    run(&a, &["--workers", "1", "--dump-trajectories", dump.to_str().unwrap()]);
    run(&b, &["--workers", "3"]);
    let text = fs::read(&a).unwrap();
    assert_eq!(text, fs::read(&b).unwrap());

    let v: serde_json::Value = serde_json::from_slice(&text).unwrap();
    assert_eq!(v["master_seed"], 42);
    assert_eq!(v["n_total"], 60);
    assert_eq!(v["configuration"]["beam.T_r"], "1.25e-4 K");
    assert!(v["config_fingerprint"].as_str().unwrap().len() == 16);
    let captured = v["outcome_histogram"]["Captured"].as_u64().unwrap();
    assert_eq!(v["n_captured"].as_u64().unwrap(), captured);

    let dump = fs::read_to_string(&dump).unwrap();
    let rows: Vec<&str> = dump.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "index,outcome,trigger,x,y,z,vx,vy,vz,E_after");
    assert_eq!(rows.len(), 61);
    assert_eq!(rows.iter().filter(|r| r.contains(",Captured,")).count() as u64, captured);
}

#[test]
fn sweep_writes_one_row_per_point() {
    let o = odtload(&["sweep", "--n", "20", "--seed", "5", "--grid", "T_r=0.5mK,1mK", "--grid", "v_b=4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("# seed: 5"));
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert!(rows[0].starts_with("v_b_mps,T_r_K"));
    assert_eq!(rows.len(), 3);
    let seeds: Vec<&str> = rows[1..].iter().map(|r| r.rsplit(',').next().unwrap()).collect();
    assert_eq!(seeds, ["5", "6"]);
    assert!(rows[1].starts_with("4e0,5e-4,"));

    let o = odtload(&["sweep", "--n", "20", "--grid", "B=1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn potential_map_grid() {
    let o = odtload(&["potential-map", "--plane", "xz", "--mj", "-3", "--resolution", "4x5", "--extent", "-1mm,1mm,-2mm,2mm"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("# plane: xz, mj: -3"));
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows.len(), 20);
    assert_eq!(rows[0].split(',').next(), Some("-1e-3"));

    let o = odtload(&["potential-map", "--mj", "5", "--resolution", "2x2"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sample_check_matches_seeded_streams() {
    let o = odtload(&["sample-check", "--n", "50", "--seed", "9"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "x,y,z,vx,vy,vz");
    assert_eq!(rows.len(), 51);

    let c = odtload::model::Configuration::reference_defaults();
    let s = odtload::sampling::sample_initial_state(&mut odtload::sampling::make_rng_stream(9, 7), &c).state;
    let fields: Vec<f64> = rows[8].split(',').map(|f| f.parse().unwrap()).collect();
    assert_eq!(fields, [s.position.x, s.position.y, s.position.z, s.velocity.x, s.velocity.y, s.velocity.z]);
}
