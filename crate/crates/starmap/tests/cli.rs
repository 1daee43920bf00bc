//! End-to-end runs of the `starmap` binary: exit codes, output formats,
//! and byte-identical reruns.

use std::path::{Path, PathBuf};
use std::process::Output;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn run<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    std::process::Command::new(env!("CARGO_BIN_EXE_starmap"))
        .args(args)
        .output()
        .expect("binary runs")
}

/// Runs with `dir` as the working directory, so relative output paths
/// (which end up inside the recorded config) match across runs.
fn run_in<I, S>(dir: &Path, args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    std::process::Command::new(env!("CARGO_BIN_EXE_starmap"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8(output.stdout.clone()).expect("stdout is utf-8")
}

fn stderr(output: &Output) -> String {
    String::from_utf8(output.stderr.clone()).expect("stderr is utf-8")
}

fn code(output: &Output) -> i32 {
    output.status.code().expect("process was not killed")
}

fn assert_ok(output: &Output) {
    assert_eq!(code(output), 0, "stderr: {}", stderr(output));
}

fn same_bytes(a: &Path, b: &Path) {
    assert_eq!(
        std::fs::read(a).unwrap(),
        std::fs::read(b).unwrap(),
        "{} and {} differ",
        a.display(),
        b.display()
    );
}

fn sidecar(path: &Path) -> serde_json::Value {
    let mut name = path.as_os_str().to_owned();
    name.push(".meta.json");
    let text = std::fs::read_to_string(PathBuf::from(name)).expect("sidecar exists");
    serde_json::from_str(&text).expect("sidecar is json")
}

#[test]
fn ingest_reports_pinned_counts_and_reruns_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let first = dir.path().join("a.map.json");
    let second = dir.path().join("b.map.json");

    let out = run([
        "ingest",
        fixture("lakeside.osm.xml").to_str().unwrap(),
        "--origin",
        "49.0,8.0",
        "--output",
        first.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let text = stdout(&out);
    assert!(text.contains("kept 7 features"), "stdout: {text}");
    assert!(text.contains("building: 4"), "stdout: {text}");
    assert!(text.contains("park: 1"), "stdout: {text}");
    assert!(text.contains("primary: 2"), "stdout: {text}");
    assert!(
        text.contains("dropped: 2 unmatched, 0 outside bbox, 1 incomplete; demoted 0 polygons"),
        "stdout: {text}"
    );

    let out = run([
        "ingest",
        fixture("lakeside.osm.xml").to_str().unwrap(),
        "--origin",
        "49.0,8.0",
        "--output",
        second.to_str().unwrap(),
    ]);
    assert_ok(&out);
    same_bytes(&first, &second);

    let meta = sidecar(&first);
    assert_eq!(meta["config"]["command"], "ingest");
    assert_eq!(meta["config"]["format"], "osm_xml");

    // The Overpass rendering of the same extract produces the same map.
    let json = dir.path().join("c.map.json");
    let out = run([
        "ingest",
        fixture("lakeside_overpass.json").to_str().unwrap(),
        "--format",
        "overpass_json",
        "--origin",
        "49.0,8.0",
        "--output",
        json.to_str().unwrap(),
    ]);
    assert_ok(&out);
    same_bytes(&first, &json);
}

#[test]
fn ingest_usage_errors_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let out_path = dir.path().join("out.json");

    // Wrong format flag for the content gets a pointed hint.
    let out = run([
        "ingest",
        fixture("lakeside.osm.xml").to_str().unwrap(),
        "--format",
        "overpass_json",
        "--origin",
        "49.0,8.0",
        "--output",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("use --format osm_xml"), "stderr: {}", stderr(&out));

    let out = run([
        "ingest",
        dir.path().join("missing.xml").to_str().unwrap(),
        "--origin",
        "49.0,8.0",
        "--output",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);

    let out = run([
        "ingest",
        fixture("lakeside.osm.xml").to_str().unwrap(),
        "--origin",
        "49.0",
        "--output",
        out_path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("lat,lon"), "stderr: {}", stderr(&out));
}

#[test]
fn ingest_without_matches_exits_three() {
    let dir = tempfile::tempdir().unwrap();
    let mapping = dir.path().join("rail.toml");
    std::fs::write(
        &mapping,
        "[[rules]]\nkey = \"railway\"\ntag = \"rail\"\nkind = \"polyline\"\n",
    )
    .unwrap();
    let out = run([
        "ingest",
        fixture("lakeside.osm.xml").to_str().unwrap(),
        "--origin",
        "49.0,8.0",
        "--mapping",
        mapping.to_str().unwrap(),
        "--output",
        dir.path().join("out.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("no feature matched"), "stderr: {}", stderr(&out));
}

/// Builds the archive used by the field/query/render tests: three raster
/// fields over the lakeside map at a small resolution.
fn build_archive(dir: &Path, seed: u64) -> PathBuf {
    let map = dir.join("lakeside.map.json");
    if !map.exists() {
        let out = run([
            "ingest",
            fixture("lakeside.osm.xml").to_str().unwrap(),
            "--origin",
            "49.0,8.0",
            "--output",
            map.to_str().unwrap(),
        ]);
        assert_ok(&out);
    }
    let archive = dir.join(format!("lakeside.{seed}.starmap.json"));
    let out = run([
        "field",
        map.to_str().unwrap(),
        "--relation",
        "over:park",
        "--relation",
        "distance:building",
        "--relation",
        "distance:primary",
        "--n-samples",
        "24",
        "--resolution",
        "16",
        "--seed",
        &seed.to_string(),
        "--output",
        archive.to_str().unwrap(),
    ]);
    assert_ok(&out);
    archive
}

#[test]
fn field_builds_exports_and_reruns_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let map = dir.path().join("lakeside.map.json");
    let out = run([
        "ingest",
        fixture("lakeside.osm.xml").to_str().unwrap(),
        "--origin",
        "49.0,8.0",
        "--output",
        map.to_str().unwrap(),
    ]);
    assert_ok(&out);

    let field_args = vec![
        "field".to_string(),
        map.to_str().unwrap().to_string(),
        "--relation".into(),
        "over:park".into(),
        "--relation".into(),
        "distance:primary".into(),
        "--n-samples".into(),
        "24".into(),
        "--resolution".into(),
        "16".into(),
        "--seed".into(),
        "7".into(),
        "--output".into(),
        "sm.json".into(),
        "--export-field".into(),
        "distance:primary:mean".into(),
        "--export-csv".into(),
        "f.csv".into(),
        "--export-geojson".into(),
        "f.geojson".into(),
        "--threshold".into(),
        "distance:primary>30".into(),
        "--threshold-csv".into(),
        "t.csv".into(),
    ];

    // Identical invocations in two directories: every output, including
    // the embedded configs, must match byte for byte.
    let dir_a = dir.path().join("a");
    let dir_b = dir.path().join("b");
    std::fs::create_dir_all(&dir_a).unwrap();
    std::fs::create_dir_all(&dir_b).unwrap();

    let out = run_in(&dir_a, &field_args);
    assert_ok(&out);
    let text = stdout(&out);
    assert!(text.contains("built over:park (raster backend)"), "stdout: {text}");
    assert!(text.contains("built distance:primary (raster backend)"), "stdout: {text}");
    // Two 16x16 rasters at 24 realizations each.
    assert!(text.contains("12288 relation samples recorded"), "stdout: {text}");

    let out = run_in(&dir_b, &field_args);
    assert_ok(&out);
    for name in ["sm.json", "sm.json.meta.json", "f.csv", "f.geojson", "t.csv"] {
        same_bytes(&dir_a.join(name), &dir_b.join(name));
    }

    // The sidecar and the GeoJSON metadata both carry the resolved config.
    let meta = sidecar(&dir_a.join("sm.json"));
    assert_eq!(meta["config"]["command"], "field");
    assert_eq!(meta["config"]["seed"], 7);
    assert_eq!(meta["config"]["n_samples"], 24);
    let geojson: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir_a.join("f.geojson")).unwrap()).unwrap();
    assert_eq!(geojson["type"], "FeatureCollection");
    assert_eq!(geojson["metadata"]["config"]["command"], "field");
    assert_eq!(geojson["metadata"], serde_json::to_value(&meta).unwrap());

    // The threshold raster holds probabilities.
    let threshold = std::fs::read_to_string(dir_a.join("t.csv")).unwrap();
    assert!(threshold.starts_with("x,y,value\r\n"), "header: {threshold:.40}");
    for line in threshold.lines().skip(1) {
        let value: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&value), "not a probability: {line}");
    }

    // Asking to export a field that was not built fails cleanly.
    let mut bad = field_args.clone();
    let pos = bad.iter().position(|a| a == "distance:primary:mean").unwrap();
    bad[pos] = "distance:water:mean".to_string();
    let out = run_in(&dir_a, &bad);
    assert_eq!(code(&out), 4);
    assert!(stderr(&out).contains("distance:water"), "stderr: {}", stderr(&out));
}

#[test]
fn field_usage_and_load_failures() {
    let dir = tempfile::tempdir().unwrap();
    let map = ingest_map(dir.path());

    // Unknown backend is a usage error.
    let out = run([
        "field",
        map.to_str().unwrap(),
        "--relation",
        "distance:primary",
        "--backend",
        "spline",
        "--output",
        dir.path().join("o.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 2);

    // A map file that does not parse is a field failure.
    let broken = dir.path().join("broken.json");
    std::fs::write(&broken, "{not json").unwrap();
    let out = run([
        "field",
        broken.to_str().unwrap(),
        "--relation",
        "distance:primary",
        "--output",
        dir.path().join("o.json").to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 4);
}

fn ingest_map(dir: &Path) -> PathBuf {
    let map = dir.join("lakeside.map.json");
    let out = run([
        "ingest",
        fixture("lakeside.osm.xml").to_str().unwrap(),
        "--origin",
        "49.0,8.0",
        "--output",
        map.to_str().unwrap(),
    ]);
    assert_ok(&out);
    map
}

#[test]
fn query_at_a_point_prints_the_exact_answer() {
    let dir = tempfile::tempdir().unwrap();
    let archive = build_archive(dir.path(), 0);

    // airspace.pl defines all of its spatial atoms explicitly, so the
    // answer is independent of the archive contents.
    let out = run([
        "query",
        archive.to_str().unwrap(),
        fixture("airspace.pl").to_str().unwrap(),
        "--query",
        "airspace(x)",
        "--at",
        "40,60",
        "--mode",
        "exact",
    ]);
    assert_ok(&out);
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).expect("stdout is json");
    assert_eq!(doc["config"]["command"], "query");
    assert_eq!(doc["result"]["atom"], "airspace(x)");
    assert_eq!(doc["result"]["method"], "exact");
    assert_eq!(doc["result"]["mc_samples"], 0);
    let p = doc["result"]["probability"].as_f64().unwrap();
    assert!((p - 0.9956532342719345).abs() < 1e-12, "p = {p}");

    // Auto mode picks the same exact path here.
    let out = run([
        "query",
        archive.to_str().unwrap(),
        fixture("airspace.pl").to_str().unwrap(),
        "--query",
        "airspace(x)",
        "--at",
        "40,60",
    ]);
    assert_ok(&out);
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).expect("stdout is json");
    assert_eq!(doc["result"]["method"], "exact");

    // Forced Monte-Carlo agrees within a few standard errors.
    let out = run([
        "query",
        archive.to_str().unwrap(),
        fixture("airspace.pl").to_str().unwrap(),
        "--query",
        "airspace(x)",
        "--at",
        "40,60",
        "--mode",
        "monte_carlo",
        "--mc-samples",
        "200000",
        "--seed",
        "5",
    ]);
    assert_ok(&out);
    let doc: serde_json::Value = serde_json::from_str(&stdout(&out)).expect("stdout is json");
    assert_eq!(doc["result"]["method"], "monte_carlo");
    assert_eq!(doc["result"]["mc_samples"], 200000);
    let mc = doc["result"]["probability"].as_f64().unwrap();
    let stderr_mc = doc["result"]["mc_stderr"].as_f64().unwrap();
    assert!((mc - p).abs() < 5.0 * stderr_mc, "mc = {mc}, exact = {p}");
}

#[test]
fn query_rasterizes_programs_that_read_map_fields() {
    let dir = tempfile::tempdir().unwrap();
    let archive = build_archive(dir.path(), 0);
    let csv_a = dir.path().join("a.csv");
    let csv_b = dir.path().join("b.csv");

    let query = |csv: &Path| {
        run([
            "query",
            archive.to_str().unwrap(),
            fixture("landing.pl").to_str().unwrap(),
            "--query",
            "landing(x)",
            "--resolution",
            "8",
            "--mc-samples",
            "4000",
            "--seed",
            "3",
            "--csv",
            csv.to_str().unwrap(),
        ])
    };
    let out = query(&csv_a);
    assert_ok(&out);
    let text = stdout(&out);
    // landing.pl shares a fact between rules, so auto falls back to
    // sampling.
    assert!(text.contains("method: monte_carlo"), "stdout: {text}");
    assert!(text.contains("values in ["), "stdout: {text}");

    let out = query(&csv_b);
    assert_ok(&out);
    same_bytes(&csv_a, &csv_b);

    let text = std::fs::read_to_string(&csv_a).unwrap();
    assert_eq!(text.lines().count(), 1 + 8 * 8);
    for line in text.lines().skip(1) {
        let value: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!((0.0..=1.0).contains(&value), "not a probability: {line}");
    }

    // Raster mode with nowhere to write is a usage error.
    let out = run([
        "query",
        archive.to_str().unwrap(),
        fixture("landing.pl").to_str().unwrap(),
        "--query",
        "landing(x)",
    ]);
    assert_eq!(code(&out), 2);
}

#[test]
fn query_failures_use_the_documented_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let archive = build_archive(dir.path(), 0);

    // Archive that does not load.
    let out = run([
        "query",
        dir.path().join("missing.json").to_str().unwrap(),
        fixture("airspace.pl").to_str().unwrap(),
        "--query",
        "airspace(x)",
        "--at",
        "0,0",
    ]);
    assert_eq!(code(&out), 4);

    // Query atom no rule or fact defines.
    let out = run([
        "query",
        archive.to_str().unwrap(),
        fixture("airspace.pl").to_str().unwrap(),
        "--query",
        "nonsense(x)",
        "--at",
        "0,0",
    ]);
    assert_eq!(code(&out), 5);
    assert!(stderr(&out).contains("nonsense"), "stderr: {}", stderr(&out));

    // Program that does not parse.
    let broken = dir.path().join("broken.pl");
    std::fs::write(&broken, "landing(X) :- over(X, park\n").unwrap();
    let out = run([
        "query",
        archive.to_str().unwrap(),
        broken.to_str().unwrap(),
        "--query",
        "landing(x)",
        "--at",
        "0,0",
    ]);
    assert_eq!(code(&out), 5);

    // Program needing a field the archive does not have.
    let wet = dir.path().join("wet.pl");
    std::fs::write(&wet, "wet(X) :- distance(X, water) < 5.\n").unwrap();
    let out = run([
        "query",
        archive.to_str().unwrap(),
        wet.to_str().unwrap(),
        "--query",
        "wet(x)",
        "--at",
        "40,60",
    ]);
    assert_eq!(code(&out), 6);
    assert!(stderr(&out).contains("water"), "stderr: {}", stderr(&out));
}

#[test]
fn render_produces_a_stable_pixmap() {
    let dir = tempfile::tempdir().unwrap();
    let archive = build_archive(dir.path(), 0);
    let csv = dir.path().join("p.csv");
    let out = run([
        "query",
        archive.to_str().unwrap(),
        fixture("landing.pl").to_str().unwrap(),
        "--query",
        "landing(x)",
        "--resolution",
        "8",
        "--mc-samples",
        "1000",
        "--csv",
        csv.to_str().unwrap(),
    ]);
    assert_ok(&out);

    let ppm_a = dir.path().join("a.ppm");
    let ppm_b = dir.path().join("b.ppm");
    let out = run(["render", csv.to_str().unwrap(), "--output", ppm_a.to_str().unwrap()]);
    assert_ok(&out);
    assert!(stdout(&out).contains("legend: blue = "), "stdout: {}", stdout(&out));

    let bytes = std::fs::read(&ppm_a).unwrap();
    let header = b"P6\n8 8\n255\n";
    assert_eq!(&bytes[..header.len()], header);
    assert_eq!(bytes.len(), header.len() + 8 * 8 * 3);

    let out = run(["render", csv.to_str().unwrap(), "--output", ppm_b.to_str().unwrap()]);
    assert_ok(&out);
    same_bytes(&ppm_a, &ppm_b);
    assert_eq!(sidecar(&ppm_a)["config"]["command"], "render");

    // A CSV that is not a grid is a render failure.
    let ragged = dir.path().join("ragged.csv");
    std::fs::write(&ragged, "x,y,value\r\n0,0,1\r\n1,0,2\r\n0,1,3\r\n").unwrap();
    let out = run(["render", ragged.to_str().unwrap(), "--output", ppm_b.to_str().unwrap()]);
    assert_eq!(code(&out), 4);
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let map = ingest_map(dir.path());
    let field = |threads: &str, out_name: &str| {
        let path = dir.path().join(out_name);
        let out = std::process::Command::new(env!("CARGO_BIN_EXE_starmap"))
            .env("STARMAP_THREADS", threads)
            .args([
                "field",
                map.to_str().unwrap(),
                "--relation",
                "distance:building",
                "--n-samples",
                "16",
                "--resolution",
                "12",
                "--seed",
                "11",
                "--output",
                path.to_str().unwrap(),
            ])
            .output()
            .expect("binary runs");
        assert_ok(&out);
        path
    };
    let single = field("1", "single.json");
    let several = field("4", "several.json");
    same_bytes(&single, &several);
}

#[test]
fn bench_sweeps_write_a_results_table() {
    let dir = tempfile::tempdir().unwrap();
    let map = ingest_map(dir.path());
    let csv = dir.path().join("bench.csv");
    let out = run([
        "bench",
        map.to_str().unwrap(),
        "--relation",
        "distance:primary",
        "--n-samples",
        "2",
        "--seed-points",
        "24",
        "--batch",
        "8",
        "--rounds",
        "2",
        "--output",
        csv.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("method,setting,relation_samples,seconds,mae"));
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    // Five grid resolutions, the 256 reference, and rounds 0..=2.
    assert_eq!(rows.len(), 5 + 1 + 3);
    let grid: Vec<&Vec<&str>> = rows.iter().filter(|r| r[0] == "grid").collect();
    let gp: Vec<&Vec<&str>> = rows.iter().filter(|r| r[0] == "gp").collect();
    assert_eq!(grid.len(), 6);
    assert_eq!(gp.len(), 3);
    assert_eq!(grid[0][1], "8");
    assert_eq!(grid[5][1], "256");
    assert_eq!(grid[5][4], "0.0", "the reference scores itself");
    assert_eq!(gp[0][2], "48", "24 seed points at 2 realizations");
    assert_eq!(gp[2][2], "80", "24 + 2*8 points at 2 realizations");

    // The default relation names a tag the bundled extract lacks.
    let out = run([
        "bench",
        map.to_str().unwrap(),
        "--output",
        csv.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 4);
}
