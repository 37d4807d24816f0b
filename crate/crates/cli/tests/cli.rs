use std::path::Path;
use std::process::{Command, Output};

fn flowsift(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_flowsift"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
}

fn stderr_json(o: &Output) -> Vec<serde_json::Value> {
    String::from_utf8_lossy(&o.stderr)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap_or_else(|e| panic!("log line `{l}` is not JSON: {e}")))
        .collect()
}

fn synth(dir: &Path) {
    let o = flowsift(dir, &["synth", "--rows", "80,40,20", "--features", "6", "--seed", "1", "--out", "o"]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn stage_commands_chain_through_artifacts() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d);
    let steps: [&[&str]; 6] = [
        &["ingest", "--input", "o/synth/synthetic.csv", "--out", "o"],
        &["preprocess", "--input", "o/ingest/dataset.csv", "--out", "o"],
        &["split", "--input", "o/preprocess/dataset.csv", "--out", "o"],
        &["balance", "--input", "o/split/train.csv", "--out", "o"],
        &["train", "--input", "o/balance/dataset.csv", "--validation", "o/split/validation.csv", "--out", "o"],
        &["evaluate", "--model", "o/train/model.json", "--test", "o/split/test.csv", "--out", "o"],
    ];
    for args in steps {
        let o = flowsift(d, args);
        assert_eq!(o.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        stderr_json(&o);
    }
    for file in [
        "ingest/summary.json",
        "preprocess/norm_stats.json",
        "preprocess/clean_report.json",
        "split/test.csv",
        "balance/report.json",
        "train/model.json",
        "evaluate/report.json",
        "evaluate/report.txt",
        "evaluate/confusion.json",
    ] {
        assert!(d.join("o").join(file).is_file(), "missing {file}");
    }
    let text = std::fs::read_to_string(d.join("o/evaluate/report.txt")).unwrap();
    assert!(text.contains("Average"));
}

#[test]
fn select_and_reduce_write_their_models() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d);
    let o = flowsift(d, &["select", "--input", "o/synth/synthetic.csv", "--out", "o"]);
    assert_eq!(o.status.code(), Some(0));
    let subset: serde_json::Value = serde_json::from_slice(&std::fs::read(d.join("o/select/subset.json")).unwrap()).unwrap();
    assert!(!subset["selected_names"].as_array().unwrap().is_empty());

    let o = flowsift(d, &["reduce", "--input", "o/synth/synthetic.csv", "--components", "2", "--out", "o"]);
    assert_eq!(o.status.code(), Some(0));
    let header = std::fs::read_to_string(d.join("o/reduce/dataset.csv")).unwrap();
    assert_eq!(header.lines().next().unwrap().split(',').count(), 3);
}

#[test]
fn pipeline_logs_one_json_line_per_event() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d);
    let config = r#"{"input": "o/synth/synthetic.csv", "output_dir": "run", "seed": 3}"#;
    std::fs::write(d.join("config.json"), config).unwrap();
    let first = flowsift(d, &["--config", "config.json", "pipeline"]);
    assert_eq!(first.status.code(), Some(0), "{}", String::from_utf8_lossy(&first.stderr));
    let lines = stderr_json(&first);
    assert!(lines.iter().any(|l| l["stage"] == "evaluate" && l["event"] == "done"));
    assert!(d.join("run/report/report.json").is_file());
    assert!(d.join("run/pipeline/summary.json").is_file());

    let again = flowsift(d, &["--config", "config.json", "pipeline"]);
    let done: Vec<_> = stderr_json(&again).into_iter().filter(|l| l["event"] == "done").collect();
    assert!(!done.is_empty());
    assert!(done.iter().all(|l| l["cache_hit"] == true), "{done:?}");
}

#[test]
fn tune_resumes_from_trials() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    synth(d);
    flowsift(d, &["split", "--input", "o/synth/synthetic.csv", "--out", "o"]);
    let base = ["tune", "--input", "o/split/train.csv", "--validation", "o/split/validation.csv"];
    let o = flowsift(d, &[&base[..], &["--budget", "4", "--out", "a"]].concat());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let o = flowsift(d, &[&base[..], &["--budget", "6", "--resume", "a/tune/trials.jsonl", "--out", "b"]].concat());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let fresh = flowsift(d, &[&base[..], &["--budget", "6", "--out", "c"]].concat());
    assert_eq!(fresh.status.code(), Some(0));

    let configs = |dir: &str| -> Vec<serde_json::Value> {
        std::fs::read_to_string(d.join(dir).join("tune/trials.jsonl"))
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["config"].clone())
            .collect()
    };
    assert_eq!(configs("b").len(), 6);
    assert_eq!(configs("b"), configs("c"));
    assert!(d.join("b/tune/best.json").is_file());
}

#[test]
fn exit_codes_separate_failure_kinds() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(flowsift(d, &["--help"]).status.code(), Some(0));
    assert_eq!(flowsift(d, &["no-such-command"]).status.code(), Some(1));
    assert_eq!(flowsift(d, &["split", "--input", "x.csv", "--test-fraction", "abc"]).status.code(), Some(1));

    std::fs::write(d.join("bad.json"), "{ not json").unwrap();
    assert_eq!(flowsift(d, &["--config", "bad.json", "pipeline"]).status.code(), Some(1));

    let missing = flowsift(d, &["ingest", "--input", "absent.csv"]);
    assert_eq!(missing.status.code(), Some(2));
    assert_eq!(stderr_json(&missing).last().unwrap()["kind"], "data");

    std::fs::write(d.join("ragged.csv"), "a,b,Label\n1,2,x\n3,y\n").unwrap();
    assert_eq!(flowsift(d, &["ingest", "--input", "ragged.csv"]).status.code(), Some(2));

    synth(d);
    let stage = flowsift(d, &["reduce", "--input", "o/synth/synthetic.csv", "--components", "50", "--out", "o"]);
    assert_eq!(stage.status.code(), Some(3));
    assert_eq!(stderr_json(&stage).last().unwrap()["kind"], "stage");
}
