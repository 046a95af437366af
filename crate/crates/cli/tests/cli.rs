//! End-to-end runs of the `dcsbm` binary: each stage consumes the files
//! the previous stage wrote.

use std::path::Path;
use std::process::{Command, Output};

fn dcsbm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcsbm"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn run(dir: &Path, args: &[&str]) -> String {
    let out = dcsbm(dir, args);
    assert!(
        out.status.success(),
        "dcsbm {args:?} failed:\n{}{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr),
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn read_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn undirected_pipeline_recovers_planted_communities() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    run(
        root,
        &[
            "--seed",
            "5",
            "simulate",
            "--nodes",
            "400",
            "--block-matrix",
            "0.35,0.05;0.05,0.30",
            "--rho",
            "uniform:0.7,1",
        ],
    );
    run(
        root,
        &["--seed", "5", "embed", "--input", "graph.csv", "--dim-m", "3"],
    );
    run(root, &["transform", "--input", "embedding.csv"]);
    let select_out = run(
        root,
        &[
            "--seed",
            "5",
            "select",
            "--input",
            "angles.csv",
            "--kmax",
            "3",
            "--restarts",
            "4",
        ],
    );
    assert!(select_out.contains("selected d ="), "{select_out}");
    let eval_out = run(
        root,
        &[
            "evaluate",
            "--truth",
            "truth_labels.csv",
            "--predicted",
            "selection_labels.csv",
        ],
    );
    assert!(eval_out.contains("joined by node key"), "{eval_out}");
    let report = read_json(&root.join("evaluation.json"));
    assert_eq!(report["metric"], "adjusted_rand_index");
    let ari = report["value"].as_f64().unwrap();
    assert!(
        ari > 0.8,
        "well-separated planted communities barely recovered: ARI {ari}"
    );
    // The grid argmin lands on the planted structure: one angle column,
    // two communities.
    let selection = read_json(&root.join("selection.json"));
    assert_eq!(selection["k_hat"], 2);
}

#[test]
fn bipartite_pipeline_embeds_both_sides() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    run(
        root,
        &[
            "--seed",
            "9",
            "simulate",
            "--bipartite",
            "--nodes",
            "120",
            "--right-nodes",
            "150",
            "--block-matrix",
            "0.40,0.05,0.30;0.05,0.35,0.05",
            "--rho",
            "uniform:0.6,1",
        ],
    );
    assert!(root.join("truth_labels_right.csv").exists());
    run(
        root,
        &[
            "--seed",
            "9",
            "embed",
            "--input",
            "graph.csv",
            "--mode",
            "bipartite",
            "--dim-m",
            "2",
        ],
    );
    for side in ["left", "right"] {
        let meta = read_json(&root.join(format!("embedding_{side}_meta.json")));
        assert_eq!(meta["m"], 2);
        assert_eq!(meta["side"], side);
        assert!(meta["nodes"].as_array().unwrap().len() >= 120);
    }
    // The right side flows through the same downstream stages.
    run(root, &["transform", "--input", "embedding_right.csv"]);
    run(
        root,
        &[
            "--seed",
            "9",
            "fit",
            "--input",
            "angles.csv",
            "--dim",
            "1",
            "--communities",
            "2",
        ],
    );
    let fit = read_json(&root.join("fit.json"));
    assert!(fit["log_likelihood"].as_f64().unwrap().is_finite());
    assert_eq!(fit["k"], 2);
}

#[test]
fn config_file_overrides_flags() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    std::fs::write(
        root.join("run.toml"),
        "seed = 11\n\n[simulate]\nnodes = 40\nblock_matrix = \"0.6,0.1;0.1,0.6\"\n",
    )
    .unwrap();
    run(
        root,
        &[
            "--config",
            "run.toml",
            "simulate",
            "--nodes",
            "9999",
            "--block-matrix",
            "0.1",
        ],
    );
    let truth = read_json(&root.join("truth.json"));
    assert_eq!(truth["z"].as_array().unwrap().len(), 40);
    // The sized hint in the edge list reflects the configured node count.
    let graph = std::fs::read_to_string(root.join("graph.csv")).unwrap();
    assert!(graph.starts_with("# n_nodes=40"), "{graph}");
}

#[test]
fn experiment_smoke_run_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    let out = run(
        root,
        &[
            "--seed",
            "3",
            "experiment",
            "--name",
            "model-comparison",
            "--replications",
            "1",
        ],
    );
    assert!(out.contains("model-comparison: 1 replications"), "{out}");
    let summary = read_json(&root.join("model-comparison_summary.json"));
    assert_eq!(summary["name"], "model-comparison");
    assert!(root.join("model-comparison_replications.csv").exists());
}

#[test]
fn evaluate_reports_mardia_tests() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    // A deterministic low-discrepancy point cloud: close enough to
    // a bounded elliptical cloud for finite statistics.
    let mut rows = String::from("x1,x2\n");
    for i in 0..200 {
        let u = (i as f64 * 0.618_033_988_749_894_8).fract() - 0.5;
        let v = (i as f64 * 0.324_717_957_244_746_03).fract() - 0.5;
        rows.push_str(&format!("{u},{v}\n"));
    }
    std::fs::write(root.join("cloud.csv"), rows).unwrap();
    let out = run(root, &["evaluate", "--normality", "cloud.csv"]);
    assert!(out.contains("Mardia skewness"), "{out}");
    let report = read_json(&root.join("evaluation.json"));
    assert_eq!(report["metric"], "mardia");
    assert!(report["kurtosis"]["p_value"].as_f64().unwrap() <= 1.0);
}

#[test]
fn unknown_experiment_name_fails_with_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dcsbm(
        dir.path(),
        &["experiment", "--name", "no-such-study", "--replications", "1"],
    );
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("no-such-study"), "{stderr}");
}

#[test]
fn missing_required_value_names_the_flag() {
    let dir = tempfile::tempdir().unwrap();
    let out = dcsbm(dir.path(), &["simulate"]);
    assert!(!out.status.success());
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("--nodes"), "{stderr}");
}
