use std::fs;
use std::path::Path;

use lanekit::cli::run;
use lanekit::config::Schema;
use lanekit::io::sha256_hex;
use lanekit::pipeline::Manifest;
use lanekit::RunConfig;

fn lanekit(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("lanekit").chain(args.iter().copied());
    let code = run(argv, &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(lanekit(&["frobnicate"]).0, 2);
    assert_eq!(lanekit(&["sweep", "--lo", "abc"]).0, 2);
    assert_eq!(lanekit(&[]).0, 2);
    let (code, out, _) = lanekit(&["--help"]);
    assert_eq!(code, 0);
    assert!(out.contains("simulate"));
}

#[test]
fn missing_upstream_exits_3_with_report() {
    let dir = tempfile::tempdir().unwrap();
    for stage in ["label", "featurize", "train", "eval", "simulate", "sweep"] {
        let (code, _, err) = lanekit(&[stage, "--out", s(dir.path())]);
        assert_eq!(code, 3, "{stage}: {err}");
        let report: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
        assert_eq!(report["kind"], "missing_artifact");
        assert_eq!(report["exit_code"], 3);
    }
    let (code, _, _) = lanekit(&["ingest", "--out", s(dir.path()), "--data", s(&dir.path().join("absent.csv"))]);
    assert_eq!(code, 3);
}

#[test]
fn validation_failures_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "[split]\ntest_fraction = 2.0\n").unwrap();
    let (code, _, err) = lanekit(&["--config", s(&cfg), "eval", "--out", s(dir.path())]);
    assert_eq!(code, 1);
    assert!(err.contains("test_fraction"));

    let data = dir.path().join("rows.csv");
    fs::write(&data, "vehicle_id,frame,x,y,speed,lane_id,length,width\n1,0,0,1.8,20,1,4.5,2\n1,1,2,one,20,1,4.5,2\n").unwrap();
    let (code, _, err) = lanekit(&["ingest", "--out", s(dir.path()), "--data", s(&data)]);
    assert_eq!(code, 1);
    let report: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
    assert_eq!(report["kind"], "parse");
    assert!(report["message"].as_str().unwrap().contains("row 2"));
}

#[test]
fn manifests_hash_what_was_written() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = lanekit(&["all", "--out", s(dir.path()), "--seed", "3"]);
    assert_eq!(code, 0, "{err}");
    for stage in ["synth", "ingest", "label", "featurize", "train", "eval", "simulate", "sweep"] {
        let m: Manifest = serde_json::from_slice(&fs::read(dir.path().join(format!("manifests/{stage}.json"))).unwrap()).unwrap();
        assert_eq!(m.seed, 3);
        assert!(!m.outputs.is_empty());
        for (name, hash) in m.outputs.iter().chain(&m.inputs) {
            assert_eq!(&sha256_hex(&fs::read(dir.path().join(name)).unwrap()), hash, "{stage}: {name}");
        }
        assert!(dir.path().join(format!("manifests/{stage}.meta.json")).exists());
    }
    let ingest: Manifest = serde_json::from_slice(&fs::read(dir.path().join("manifests/ingest.json")).unwrap()).unwrap();
    assert!(ingest.inputs.contains_key("synth/tracks.csv"));
}

#[test]
fn seed_changes_the_artifacts() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(lanekit(&["synth", "--out", s(a.path()), "--seed", "1"]).0, 0);
    assert_eq!(lanekit(&["synth", "--out", s(b.path()), "--seed", "2"]).0, 0);
    assert_ne!(fs::read(a.path().join("synth/tracks.csv")).unwrap(), fs::read(b.path().join("synth/tracks.csv")).unwrap());
}

#[test]
fn data_root_resolves_relative_paths() {
    let root = tempfile::tempdir().unwrap();
    let out = tempfile::tempdir().unwrap();
    assert_eq!(lanekit(&["synth", "--out", s(root.path())]).0, 0);
    let (code, _, err) = lanekit(&["ingest", "--out", s(out.path()), "--data-root", s(root.path()), "--data", "synth/tracks.csv"]);
    assert_eq!(code, 0, "{err}");
    let report: serde_json::Value = serde_json::from_slice(&fs::read(out.path().join("ingest/report.json")).unwrap()).unwrap();
    assert_eq!(report["tracks"], 6);
}

#[test]
fn feet_schema_is_converted_on_ingest() {
    let dir = tempfile::tempdir().unwrap();
    let schema = Schema::ngsim();
    let mut text = String::from("Vehicle_ID,Frame_ID,Local_X,Local_Y,v_Vel,Lane_ID,v_Length,v_Width\n");
    for k in 0..20 {
        text.push_str(&format!("7,{},6.0,{},50.0,1,15.0,6.0\n", k + 100, 5.0 * k as f64));
    }
    let data = dir.path().join("ngsim.csv");
    fs::write(&data, text).unwrap();
    let cfg = RunConfig { schema, ..Default::default() };
    let cfg_path = dir.path().join("run.toml");
    fs::write(&cfg_path, cfg.to_toml().unwrap()).unwrap();
    let (code, _, err) = lanekit(&["--config", s(&cfg_path), "ingest", "--out", s(dir.path()), "--data", s(&data)]);
    assert_eq!(code, 0, "{err}");
    let tracks: Vec<lanekit_core::trajdata::VehicleTrack> = serde_json::from_slice(&fs::read(dir.path().join("ingest/tracks.json")).unwrap()).unwrap();
    assert_eq!(tracks.len(), 1);
    let first = tracks[0].samples[0];
    assert_eq!(first.length, 15.0 * 0.3048);
    assert_eq!(first.width, 6.0 * 0.3048);
    let header = fs::read_to_string(dir.path().join("ingest/tracks.csv")).unwrap();
    assert!(header.starts_with("Vehicle_ID,Frame_ID,Local_Y,Local_X,v_Vel,Lane_ID,v_Length,v_Width,segment,lateral_speed\n"));
}

#[test]
fn sweep_flags_override_the_range() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(lanekit(&["all", "--out", s(dir.path())]).0, 0);
    let (code, _, err) = lanekit(&["sweep", "--out", s(dir.path()), "--feature", "x_RL", "--lo", "-5", "--hi", "5", "--step", "1"]);
    assert_eq!(code, 0, "{err}");
    let csv = fs::read_to_string(dir.path().join("sweep/sensitivity.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "x_RL,p_lane_keep,p_lane_change");
    assert_eq!(lines.len(), 12);
    assert!(lines[1].starts_with("-5,"));
}

#[test]
fn config_subcommand_prints_effective_toml() {
    let (code, out, _) = lanekit(&["config", "--seed", "9"]);
    assert_eq!(code, 0);
    let cfg = RunConfig::from_toml(&out).unwrap();
    assert_eq!(cfg.seed, 9);
    assert_eq!(cfg.forest.seed, 9);
    assert_eq!(cfg.planner.horizon, 30);
}
