//! End-to-end checks of the command-line surface: exit codes, file formats,
//! schema round-trips and byte determinism.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn hbnet() -> Command {
    Command::new(env!("CARGO_BIN_EXE_hbnet"))
}

fn write_config(dir: &Path, name: &str, contents: &str) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, contents).unwrap();
    path
}

fn tmpdir(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("hbnet-cli-{tag}-{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn wc_node_config() -> &'static str {
    r#"{
        "model": {
            "type": "wilson_cowan",
            "kappa": 0.5, "w_uu": 1.0, "w_vu": 2.0, "w_uv": 1.0, "w_vv": 0.25,
            "i_u": -0.05, "i_v": -0.3, "beta": 20.0, "tau_intra": 0.2
        },
        "numerics": { "m": 20 },
        "task": {
            "solve": { "guess": { "type": "simulate", "t_end": 120.0, "history_offset": 0.05 } }
        }
    }"#
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("spawn hbnet")
}

#[test]
fn malformed_config_exits_with_code_one() {
    let dir = tmpdir("badcfg");
    // kappa = 0 violates the schema's physical range
    let cfg = write_config(
        &dir,
        "bad.json",
        &wc_node_config().replace("\"kappa\": 0.5", "\"kappa\": 0.0"),
    );
    let out = run(hbnet().args(["solve", "--config"]).arg(&cfg).arg("--out").arg(&dir));
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("kappa"), "stderr should name the field: {stderr}");
}

#[test]
fn missing_arguments_exit_with_code_one() {
    let out = run(hbnet().arg("solve"));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn solve_then_spectrum_round_trips_the_orbit() {
    let dir = tmpdir("roundtrip");
    let cfg = write_config(&dir, "cfg.json", wc_node_config());
    let out = run(hbnet()
        .args(["solve", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&dir));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let orbit_path = dir.join("orbit.json");
    assert!(orbit_path.exists());

    // the orbit file is accepted unchanged by spectrum
    let out = run(hbnet()
        .args(["spectrum", "--config"])
        .arg(&cfg)
        .arg("--orbit")
        .arg(&orbit_path)
        .arg("--out")
        .arg(&dir)
        .args(["--q", "0"]));
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(dir.join("spectrum_q0.csv").exists());
    let roots = std::fs::read_to_string(dir.join("roots.json")).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&roots).unwrap();
    assert!(parsed.as_array().map_or(false, |a| !a.is_empty()));

    // scan CSV carries the documented header
    let csv = std::fs::read_to_string(dir.join("spectrum_q0.csv")).unwrap();
    assert!(csv.starts_with("q,nu,omega,re_indicator,im_indicator\n"));

    // verify accepts it too and reports a small deviation for this stable orbit
    let out = run(hbnet()
        .args(["verify", "--config"])
        .arg(&cfg)
        .arg("--orbit")
        .arg(&orbit_path)
        .arg("--out")
        .arg(&dir));
    assert!(out.status.success());
    let verify: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("verify.json")).unwrap()).unwrap();
    assert!(verify["max_deviation"].as_f64().unwrap() < 1e-1);
}

#[test]
fn spectrum_rejects_truncation_mismatch_with_code_four() {
    let dir = tmpdir("mismatch");
    let cfg = write_config(&dir, "cfg.json", wc_node_config());
    let out = run(hbnet()
        .args(["solve", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&dir));
    assert!(out.status.success());
    // demand a different truncation in the config
    let out = run(hbnet()
        .args(["spectrum", "--config"])
        .arg(&cfg)
        .args(["--override", "numerics.m=25"])
        .arg("--orbit")
        .arg(dir.join("orbit.json"))
        .arg("--out")
        .arg(&dir));
    assert_eq!(out.status.code(), Some(4));
}

#[test]
fn equilibrium_seed_exits_with_code_three() {
    let dir = tmpdir("collapse");
    // a sinusoid of zero-ish amplitude around the steady state collapses
    let cfg = write_config(
        &dir,
        "cfg.json",
        &wc_node_config().replace(
            r#""guess": { "type": "simulate", "t_end": 120.0, "history_offset": 0.05 }"#,
            r#""guess": { "type": "sinusoid", "amplitude": 1e-12, "period": 3.0 }"#,
        ),
    );
    let out = run(hbnet()
        .args(["solve", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&dir));
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn uncoupled_ring_solve_matches_single_node() {
    let dir = tmpdir("eps0");
    let cfg_node = write_config(&dir, "node.json", wc_node_config());
    let ring_json = wc_node_config().replace(
        r#""numerics": { "m": 20 },"#,
        r#""numerics": { "m": 20 },
        "topology": { "n": 7, "eps": 0.0, "total_weight": 0.2,
                      "profile": { "type": "exp_decay", "rate": 2.0 },
                      "tau_inter": 1.3 },"#,
    );
    let cfg_ring = write_config(&dir, "ring.json", &ring_json);
    let out_node = dir.join("node");
    let out_ring = dir.join("ring");
    assert!(run(hbnet().args(["solve", "--config"]).arg(&cfg_node).arg("--out").arg(&out_node))
        .status
        .success());
    assert!(run(hbnet().args(["solve", "--config"]).arg(&cfg_ring).arg("--out").arg(&out_ring))
        .status
        .success());
    let a: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_node.join("orbit.json")).unwrap())
            .unwrap();
    let b: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out_ring.join("orbit.json")).unwrap())
            .unwrap();
    let ca = a["coefficients"].as_array().unwrap();
    let cb = b["coefficients"].as_array().unwrap();
    assert_eq!(ca.len(), cb.len());
    for (x, y) in ca.iter().zip(cb) {
        for k in 0..2 {
            let (va, vb) = (x[k].as_f64().unwrap(), y[k].as_f64().unwrap());
            assert!((va - vb).abs() < 1e-10, "{va} vs {vb}");
        }
    }
}

#[test]
fn simulate_is_byte_deterministic() {
    let dir = tmpdir("determinism");
    let ring_json = wc_node_config().replace(
        r#""numerics": { "m": 20 },"#,
        r#""numerics": { "m": 20, "dt_out": 0.2 },
        "topology": { "n": 5, "total_weight": 0.2,
                      "profile": { "type": "exp_decay", "rate": 2.0 },
                      "tau_inter": 1.1, "tau_intra": 1.5 },"#,
    );
    let ring_json = ring_json.replace(
        r#""task": {
            "solve": { "guess": { "type": "simulate", "t_end": 120.0, "history_offset": 0.05 } }
        }"#,
        r#""task": {
            "simulate": { "t_end": 120.0, "seed": { "type": "random", "scale": 1e-3, "rng_seed": 7 } }
        }"#,
    );
    let cfg = write_config(&dir, "cfg.json", &ring_json);
    let out1 = dir.join("run1");
    let out2 = dir.join("run2");
    for out in [&out1, &out2] {
        let res = run(hbnet()
            .args(["simulate", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(out));
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    }
    let a = std::fs::read(out1.join("simulation.csv")).unwrap();
    let b = std::fs::read(out2.join("simulation.csv")).unwrap();
    assert_eq!(a, b, "identical config + seed must give identical bytes");
    let header = String::from_utf8_lossy(&a);
    assert!(header.starts_with("t,u_1,v_1,u_2,v_2,u_3,v_3,u_4,v_4,u_5,v_5\n"));
}

#[test]
fn overrides_reach_nested_fields() {
    let dir = tmpdir("override");
    let cfg = write_config(&dir, "cfg.json", wc_node_config());
    // an override that breaks the schema proves it was applied
    let out = run(hbnet()
        .args(["solve", "--config"])
        .arg(&cfg)
        .args(["--override", "model.kappa=-1.0"])
        .arg("--out")
        .arg(&dir));
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("kappa"));
}
