use std::process::Command;

fn flatsim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_flatsim"))
}

fn run(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv: Vec<&str> = std::iter::once("flatsim").chain(args.iter().copied()).collect();
    let code = flatsim_cli::run_cli(argv, &[], &mut out, &mut err);
    (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
}

const SMALL: &[&str] = &["--seq", "512", "--dim", "64", "--batch", "1", "--heads", "8"];

fn small(extra: &[&str]) -> Vec<String> {
    let mut v: Vec<String> = vec!["run".into()];
    v.extend(SMALL.iter().map(|s| s.to_string()));
    v.extend(extra.iter().map(|s| s.to_string()));
    v
}

fn cycles_of(stdout: &str) -> u64 {
    let line = stdout.lines().find(|l| l.starts_with("cycles")).unwrap();
    line.split_whitespace().nth(1).unwrap().parse().unwrap()
}

#[test]
fn run_prints_summary() {
    let args = small(&["--dataflow", "flatcoll", "--group", "8x8"]);
    let argv: Vec<&str> = args.iter().map(String::as_str).collect();
    let (code, out, err) = run(&argv);
    assert_eq!(code, 0, "{err}");
    for key in ["cycles", "utilization", "hbm", "exposed", "group=8x8"] {
        assert!(out.contains(key), "missing {key}: {out}");
    }
}

#[test]
fn flat_single_tile_matches_fa2() {
    let a = small(&["--dataflow", "fa2"]);
    let b = small(&["--dataflow", "flat", "--group", "1x1"]);
    let (ca, oa, _) = run(&a.iter().map(String::as_str).collect::<Vec<_>>());
    let (cb, ob, _) = run(&b.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!((ca, cb), (0, 0));
    assert_eq!(cycles_of(&oa), cycles_of(&ob));
}

#[test]
fn malformed_config_exits_2_with_field_path() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    let text = flatsim::arch::Preset::Table1.document().replace("x = 32", "x = \"wide\"");
    std::fs::write(&path, text).unwrap();
    let (code, _, err) = run(&["run", "--arch", path.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("mesh.x"), "{err}");

    let (code, _, err) = run(&["run", "--preset", "nope"]);
    assert_eq!(code, 2);
    assert!(err.contains("unknown preset"), "{err}");
}

#[test]
fn bad_flags_exit_2() {
    assert_eq!(run(&["run", "--dataflow", "fa9"]).0, 2);
    assert_eq!(run(&["run", "--group", "3by3"]).0, 2);
    assert_eq!(run(&["frobnicate"]).0, 2);
    assert_eq!(run(&["--help"]).0, 0);
}

#[test]
fn infeasible_plan_exits_2() {
    let (code, _, err) = run(&["run", "--seq", "4096", "--dim", "16384"]);
    assert_eq!(code, 2);
    assert!(err.contains("l1_capacity"), "{err}");
}

#[test]
fn env_override_reaches_config() {
    let out = flatsim()
        .args(["run", "--dataflow", "fa2"])
        .args(SMALL)
        .env("HBM__CHANNELS_WEST", "99")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hbm.channels_west"));

    let base = flatsim().args(["run", "--dataflow", "fa2"]).args(SMALL).output().unwrap();
    let slow = flatsim()
        .args(["run", "--dataflow", "fa2"])
        .args(SMALL)
        .env("HBM__CHANNEL_BYTES_PER_CYCLE", "16")
        .output()
        .unwrap();
    assert!(base.status.success() && slow.status.success());
    let c = |o: &std::process::Output| cycles_of(&String::from_utf8_lossy(&o.stdout));
    assert!(c(&slow) > c(&base));
}

#[test]
fn report_trace_and_dump_files() {
    let dir = tempfile::tempdir().unwrap();
    let rep = dir.path().join("r.json");
    let tr = dir.path().join("t.ndjson");
    let dump = dir.path().join("plan.txt");
    let args = small(&[
        "--dataflow",
        "flatasyn",
        "--group",
        "4x4",
        "--report",
        rep.to_str().unwrap(),
        "--trace",
        tr.to_str().unwrap(),
        "--plan-dump",
        dump.to_str().unwrap(),
    ]);
    let (code, _, err) = run(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(code, 0, "{err}");

    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&rep).unwrap()).unwrap();
    assert_eq!(r["schema_version"], 1);
    assert_eq!(r["arch"]["mesh_x"], 32);
    assert_eq!(r["layer"]["seq_len"], 512);
    assert_eq!(r["metrics"]["hbm_bytes"], r["predicted_hbm_bytes"]);

    let trace = std::fs::read_to_string(&tr).unwrap();
    let n = trace.lines().count() as u64;
    assert_eq!(n, r["task_count"].as_u64().unwrap());
    let first: serde_json::Value = serde_json::from_str(trace.lines().next().unwrap()).unwrap();
    assert!(first["end"].as_u64().unwrap() >= first["start"].as_u64().unwrap());

    let plan = std::fs::read_to_string(&dump).unwrap();
    assert!(plan.contains("gemm") && plan.contains("noc_multicast"));

    // `trace` re-emits the same records.
    let args = vec!["trace", "--dataflow", "flatasyn", "--group", "4x4"]
        .into_iter()
        .chain(SMALL.iter().copied())
        .collect::<Vec<_>>();
    let (code, out, _) = run(&args);
    assert_eq!(code, 0);
    assert_eq!(out, trace);
}

#[test]
fn collectives_flag_switches_mode() {
    let hw = small(&["--dataflow", "flat", "--group", "8x8", "--collectives", "hw"]);
    let sw = small(&["--dataflow", "flatcoll", "--group", "8x8", "--collectives", "sw"]);
    let coll = small(&["--dataflow", "flatcoll", "--group", "8x8"]);
    let flat = small(&["--dataflow", "flat", "--group", "8x8"]);
    let c = |a: &Vec<String>| cycles_of(&run(&a.iter().map(String::as_str).collect::<Vec<_>>()).1);
    assert_eq!(c(&hw), c(&coll));
    assert_eq!(c(&sw), c(&flat));
    assert!(c(&sw) > c(&hw));
}

#[test]
fn account_transpose_adds_traffic() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.json");
    let b = dir.path().join("b.json");
    let x = small(&["--dataflow", "flatcoll", "--group", "4x4", "--report", a.to_str().unwrap()]);
    let y = small(&["--dataflow", "flatcoll", "--group", "4x4", "--account-transpose", "--report", b.to_str().unwrap()]);
    assert_eq!(run(&x.iter().map(String::as_str).collect::<Vec<_>>()).0, 0);
    assert_eq!(run(&y.iter().map(String::as_str).collect::<Vec<_>>()).0, 0);
    let read = |p: &std::path::Path| -> serde_json::Value { serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap() };
    let (ra, rb) = (read(&a), read(&b));
    let diff = rb["metrics"]["hbm_bytes"].as_u64().unwrap() - ra["metrics"]["hbm_bytes"].as_u64().unwrap();
    assert_eq!(diff, 2 * 8 * 512 * 64 * 2);
}

#[test]
fn sweep_empty_grid_fails() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("g.toml");
    std::fs::write(&grid, "archs = [\"table1\"]\ndataflows = []\n").unwrap();
    let (code, _, err) = run(&["sweep", grid.to_str().unwrap()]);
    assert_eq!(code, 2);
    assert!(err.contains("no points"), "{err}");
}

#[test]
fn sweep_records_infeasible_rows() {
    let dir = tempfile::tempdir().unwrap();
    let grid = dir.path().join("g.toml");
    let arch = dir.path().join("small.toml");
    let mut cfg = flatsim::arch::Preset::Table1.config();
    cfg.name = Some("mesh8".into());
    cfg.mesh_x = 8;
    cfg.mesh_y = 8;
    cfg.hbm_channels_west = 4;
    cfg.hbm_channels_south = 4;
    std::fs::write(&arch, cfg.to_toml_string()).unwrap();
    std::fs::write(
        &grid,
        "archs = [\"small.toml\"]\ndataflows = [\"flatcoll\"]\ngroups = [\"4x4\", \"16x16\"]\nseq = [256]\ndim = [64]\nbatch = [1]\nheads = [4]\n",
    )
    .unwrap();
    let csv = dir.path().join("o.csv");
    let (code, out, err) = run(&["sweep", grid.to_str().unwrap(), "--csv", csv.to_str().unwrap()]);
    assert_eq!(code, 0, "{err}");
    assert!(out.contains("best mesh8 flatcoll") && out.contains("group 4x4"), "{out}");
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), flatsim::analytics::CSV_COLUMNS.join(","));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 2);
    assert!(rows[0].starts_with("mesh8,flatcoll,4x4,256,64,1,4,") && rows[0].ends_with(','));
    assert!(rows[1].contains("does not tile"), "{}", rows[1]);
}

#[test]
fn oracle_check_passes_and_detects_corruption() {
    let (code, out, _) = run(&["oracle-check"]);
    assert_eq!(code, 0);
    assert_eq!(out.matches("PASS").count(), 5);

    let (code, out, _) = run(&["oracle-check", "--seq", "1", "--dim", "8"]);
    assert_eq!(code, 0);
    assert!(out.contains("max_rel_err=0.000e0"), "{out}");

    let (code, out, err) = run(&["oracle-check", "--corrupt", "--variants", "fa2,flatasyn"]);
    assert_eq!(code, 1);
    assert_eq!(out.matches("FAIL").count(), 2);
    assert!(err.contains("verification failed"));
}

#[test]
fn io_model_report() {
    let dir = tempfile::tempdir().unwrap();
    let rep = dir.path().join("io.json");
    let (code, out, _) = run(&["io-model", "--tiles", "1,64,1024", "--report", rep.to_str().unwrap()]);
    assert_eq!(code, 0);
    assert!(out.contains("33/5 = 6.6") && out.contains("33/2 = 16.5") && out.contains("1/1 = 1"));
    let r: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&rep).unwrap()).unwrap();
    assert_eq!(r["rows"][1]["flat"]["ratio_vs_baseline"]["num"], 33);
    assert_eq!(run(&["io-model", "--tiles", "8"]).0, 2);
}
