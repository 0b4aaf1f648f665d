use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cape_core::bridge::forward_backward;
use cape_core::cape_loss::{cape_forward, CapeConfig};
use cape_core::grid::io::{read_cgrd, write_cgrd};
use cape_core::grid::{ScalarGrid, Shape};
use cape_core::gt_graph::io::{read_graph_json, write_graph_json};
use cape_core::gt_graph::GroundTruthGraph;
use serde_json::Value;
use tempfile::TempDir;

fn cape(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cape"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn json(o: &Output) -> Value {
    assert!(o.status.success(), "stderr: {}", stderr(o));
    serde_json::from_slice(&o.stdout).expect("stdout is JSON")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A one-gap synthetic sample written by the binary itself.
fn sample(dir: &TempDir, seed: u64) -> PathBuf {
    let out = dir.path().join(format!("sample{seed}"));
    let o = cape(&[
        "synth",
        s(&out),
        "--seed",
        &seed.to_string(),
        "--n-curves",
        "1",
        "--loop-prob",
        "0",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

fn read_dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn perfect_prediction_has_zero_total() {
    let dir = TempDir::new().unwrap();
    let smp = sample(&dir, 1);
    let o = cape(&["loss", s(&smp.join("graph.json")), s(&smp.join("gt_map.cgrd"))]);
    assert!(o.status.success());
    assert!(stdout(&o).starts_with("total 0.000000\n"), "{}", stdout(&o));
}

#[test]
fn gap_fixture_reports_one_row_per_sampled_path() {
    let dir = TempDir::new().unwrap();
    let smp = sample(&dir, 2);
    let graph = smp.join("graph.json");
    let pred = smp.join("corrupted.cgrd");
    let v = json(&cape(&["--format", "json", "--seed", "5", "loss", s(&graph), s(&pred)]));
    let total = v["total"].as_f64().unwrap();
    assert!(total > 0.0);
    let core = cape_forward(
        &read_graph_json(&graph).unwrap(),
        &read_cgrd(&pred).unwrap(),
        &CapeConfig {
            seed: 5,
            ..CapeConfig::default()
        },
    )
    .unwrap();
    assert_eq!(v["paths"].as_array().unwrap().len(), core.records.len());
    assert_eq!(total, core.total_loss);

    let text = stdout(&cape(&["--seed", "5", "loss", s(&graph), s(&pred)]));
    assert_eq!(text.lines().count(), 2 + core.records.len());
}

#[test]
fn bridge_loss_is_bit_equal_to_the_cli() {
    let dir = TempDir::new().unwrap();
    let smp = sample(&dir, 3);
    let graph = smp.join("graph.json");
    let pred = smp.join("corrupted.cgrd");
    let v = json(&cape(&["--format", "json", "--seed", "9", "loss", s(&graph), s(&pred)]));

    let g = read_graph_json(&graph).unwrap();
    let grid = read_cgrd(&pred).unwrap();
    let buf: Vec<f32> = grid.data().iter().map(|&x| x as f32).collect();
    let nodes: Vec<f64> = g.nodes().iter().flat_map(|p| p[1..].to_vec()).collect();
    let edges: Vec<u64> = g.edges().iter().flat_map(|e| [e.a as u64, e.b as u64]).collect();
    let (loss, grad) =
        forward_backward(&buf, grid.shape().extents(), &nodes, &edges, &CapeConfig::default(), 9).unwrap();
    assert_eq!(loss.to_bits(), v["total"].as_f64().unwrap().to_bits());

    let grad_path = dir.path().join("g.cgrd");
    let o = cape(&["--seed", "9", "grad", s(&graph), s(&pred), s(&grad_path)]);
    assert!(o.status.success());
    let cli_grad: Vec<f32> = read_cgrd(&grad_path).unwrap().data().iter().map(|&x| x as f32).collect();
    assert_eq!(cli_grad, grad);
}

#[test]
fn grad_matches_loss_with_grad_out() {
    let dir = TempDir::new().unwrap();
    let smp = sample(&dir, 4);
    let (graph, pred) = (smp.join("graph.json"), smp.join("corrupted.cgrd"));
    let a = dir.path().join("a.cgrd");
    let b = dir.path().join("b.cgrd");
    assert!(cape(&["loss", s(&graph), s(&pred), "--grad-out", s(&a)]).status.success());
    assert!(cape(&["grad", s(&graph), s(&pred), s(&b), "--preview"]).status.success());
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert!(dir.path().join("b.pgm").exists());
}

#[test]
fn missing_file_exits_2_and_names_it() {
    let dir = TempDir::new().unwrap();
    let smp = sample(&dir, 1);
    let missing = dir.path().join("absent.cgrd");
    let o = cape(&["loss", s(&smp.join("graph.json")), s(&missing)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("absent.cgrd"), "{}", stderr(&o));
}

#[test]
fn malformed_graph_exits_2() {
    let dir = TempDir::new().unwrap();
    let smp = sample(&dir, 1);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, "{\"ndim\":2,\"nodes\":[[0,0]]").unwrap();
    let o = cape(&["loss", s(&bad), s(&smp.join("gt_map.cgrd"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("bad.json"));
}

#[test]
fn unknown_flags_are_rejected() {
    let o = cape(&["loss", "--bogus", "a", "b"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn shape_mismatch_exits_3() {
    let dir = TempDir::new().unwrap();
    let smp = sample(&dir, 1);
    let small = dir.path().join("small.cgrd");
    write_cgrd(&small, &ScalarGrid::zeros(Shape::new2(40, 40))).unwrap();
    let o = cape(&["loss", s(&smp.join("graph.json")), s(&small)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    let o = cape(&["metrics", s(&smp.join("graph.json")), s(&smp.join("gt_mask.cgrd")), s(&small)]);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn split_corridor_exits_4() {
    // A thin diagonal corridor is 8-connected only, so a 4-connected search
    // cannot cross it.
    let dir = TempDir::new().unwrap();
    let graph = dir.path().join("diag.json");
    let g = GroundTruthGraph::from_coords(2, &[vec![2.0, 2.0], vec![12.0, 12.0]], &[(0, 1)]).unwrap();
    write_graph_json(&graph, &g).unwrap();
    let pred = dir.path().join("p.cgrd");
    write_cgrd(&pred, &ScalarGrid::filled(Shape::new2(16, 16), 1.0)).unwrap();
    let o = cape(&[
        "loss",
        s(&graph),
        s(&pred),
        "--connectivity",
        "face",
        "--dilation-radius",
        "0.5",
    ]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn metrics_of_the_clean_map_are_perfect() {
    let dir = TempDir::new().unwrap();
    let smp = sample(&dir, 6);
    let args = |pred: &str| {
        vec![
            "--format".to_string(),
            "json".into(),
            "metrics".into(),
            s(&smp.join("graph.json")).into(),
            s(&smp.join("gt_mask.cgrd")).into(),
            s(&smp.join(pred)).into(),
        ]
    };
    let run = |pred: &str| {
        let a = args(pred);
        json(&cape(&a.iter().map(String::as_str).collect::<Vec<_>>()))
    };
    let clean = run("gt_map.cgrd");
    for key in ["dice", "correctness", "completeness", "quality", "apls", "tlts"] {
        assert_eq!(clean[key].as_f64(), Some(100.0), "{key}: {clean}");
    }
    let broken = run("corrupted.cgrd");
    assert!(broken["apls"].as_f64().unwrap() < clean["apls"].as_f64().unwrap());

    let empty = smp.join("empty.cgrd");
    let shape = read_cgrd(smp.join("gt_map.cgrd")).unwrap().shape();
    write_cgrd(&empty, &ScalarGrid::filled(shape, 50.0)).unwrap();
    let none = run("empty.cgrd");
    assert_eq!(none["dice"].as_f64(), Some(0.0));
    assert_eq!(none["apls"].as_f64(), Some(0.0));
}

#[test]
fn synth_is_byte_identical_for_a_seed() {
    let dir = TempDir::new().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        assert!(cape(&["--seed", "7", "--preview", "synth", s(out)]).status.success());
    }
    assert_eq!(read_dir_bytes(&a), read_dir_bytes(&b));
    assert!(a.join("corrupted.pgm").exists());
}

#[test]
fn gradcheck_passes_on_the_clean_map_and_reports_failure() {
    let dir = TempDir::new().unwrap();
    let smp = sample(&dir, 8);
    let (graph, clean) = (smp.join("graph.json"), smp.join("gt_map.cgrd"));
    let v = json(&cape(&["--format", "json", "gradcheck", s(&graph), s(&clean)]));
    assert_eq!(v["pass"], Value::Bool(true));
    assert!(v["checked"].as_u64().unwrap() > 0);
    let o = cape(&["gradcheck", s(&graph), s(&clean), "--tol=-1"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn repair_trace_has_one_row_per_step_plus_the_start() {
    let dir = TempDir::new().unwrap();
    let smp = sample(&dir, 0);
    let out = dir.path().join("rep");
    let v = json(&cape(&["--format", "json", "repair", s(&smp), "--out", s(&out), "--steps", "25"]));
    let csv = fs::read_to_string(out.join("trace.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 26);
    assert!(csv.starts_with("step,total,cape,apls\n"));
    assert!(v["final"]["cape"].as_f64().unwrap() < v["initial"]["cape"].as_f64().unwrap());
    assert!(out.join("repaired.cgrd").exists());
}

#[test]
fn extract_graph_writes_a_readable_graph() {
    let dir = TempDir::new().unwrap();
    let smp = sample(&dir, 2);
    let out = dir.path().join("pred_graph.json");
    let o = cape(&["extract-graph", s(&smp.join("corrupted.cgrd")), s(&out)]);
    assert!(o.status.success());
    let g = read_graph_json(&out).unwrap();
    assert!(g.component_count() >= 2, "the gap splits the structure");
}

#[test]
fn verbose_prints_the_resolved_configuration() {
    let dir = TempDir::new().unwrap();
    let smp = sample(&dir, 1);
    let o = cape(&[
        "--verbose",
        "--seed",
        "4",
        "loss",
        s(&smp.join("graph.json")),
        s(&smp.join("gt_map.cgrd")),
        "--window-radius",
        "2",
    ]);
    let cfg: Value = serde_json::from_str(&stderr(&o)).unwrap();
    assert_eq!(cfg["loss"]["window_radius"], 2);
    assert_eq!(cfg["loss"]["seed"], 4);
    assert_eq!(cfg["loss"]["dilation_radius"], 10.0);
}

#[test]
fn thread_count_does_not_change_results() {
    let dir = TempDir::new().unwrap();
    let smp = sample(&dir, 5);
    let (graph, pred) = (smp.join("graph.json"), smp.join("corrupted.cgrd"));
    let mut outputs = Vec::new();
    for threads in ["1", "8"] {
        let grad = dir.path().join(format!("grad{threads}.cgrd"));
        let rep = dir.path().join(format!("rep{threads}"));
        let base = ["--format", "json", "--seed", "3", "--threads", threads];
        let loss = cape(&[&base[..], &["loss", s(&graph), s(&pred), "--grad-out", s(&grad)]].concat());
        let metrics = cape(
            &[
                &base[..],
                &["metrics", s(&graph), s(&smp.join("gt_mask.cgrd")), s(&pred)],
            ]
            .concat(),
        );
        let repair = cape(&[&base[..], &["repair", s(&smp), "--out", s(&rep), "--steps", "20"]].concat());
        outputs.push((
            stdout(&loss),
            fs::read(&grad).unwrap(),
            stdout(&metrics),
            stdout(&repair),
            read_dir_bytes(&rep),
        ));
    }
    assert_eq!(outputs[0], outputs[1]);
}
