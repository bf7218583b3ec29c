use std::process::Command;

fn bench() -> Command {
    Command::new(env!("CARGO_BIN_EXE_bench"))
}

#[test]
fn table1_csv_has_twelve_rows() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t1.csv");
    let st = bench()
        .args(["run", "--suite", "table1", "--iters", "7", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(st.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "problem,pipeline,mode,iters,wall_s,stat_res,eq_res,ineq_res,comp_res,objective,status"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 12);
    assert!(rows.iter().all(|r| r.split(',').nth(3) == Some("7")));
    let pipelines: Vec<&str> = rows.iter().take(4).map(|r| r.split(',').nth(1).unwrap()).collect();
    assert_eq!(pipelines, ["baseline", "x0", "x0+full", "x0+part"]);
}

#[test]
fn table2_json_auto_converges() {
    let out = bench()
        .args(["run", "--suite", "table2", "--iters", "auto", "--format", "json"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let recs = v.as_array().unwrap();
    let labels: Vec<&str> = recs.iter().map(|r| r["problem"].as_str().unwrap()).collect();
    assert_eq!(labels, ["QCQP_inf", "QP_4", "QP_6", "QP_8"]);
    assert!(recs.iter().all(|r| r["status"] == "converged"));
}

#[test]
fn exit_code_one_when_not_converged() {
    let out = bench()
        .args(["run", "--suite", "table2", "--iters", "auto", "--mode", "speed", "--problems", "QCQP_inf"])
        .args(["--seed", "4"])
        .output()
        .unwrap();
    let stdout = String::from_utf8_lossy(&out.stdout);
    let converged = stdout.lines().skip(1).all(|l| l.ends_with(",converged"));
    assert_eq!(out.status.success(), converged);
}

#[test]
fn empty_selection_succeeds() {
    let out = bench().args(["run", "--problems"]).output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).lines().count(), 1);
}

#[test]
fn unknown_label_and_bad_path_fail() {
    let st = bench().args(["run", "--problems", "QP_9"]).status().unwrap();
    assert_eq!(st.code(), Some(1));
    let st = bench()
        .args(["run", "--out", "/nonexistent-dir/x.csv"])
        .status()
        .unwrap();
    assert_eq!(st.code(), Some(1));
}

#[test]
fn custom_problem_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("scalar.json");
    std::fs::write(
        &path,
        r#"{"kind":"dense","nv":1,"ne":0,"nb":0,"ng":0,"nq":1,"ns":0,
            "H":{"rows":1,"cols":1,"data":[0.0]},"g":[-1.0],
            "Hq":[{"rows":1,"cols":1,"data":[1.0]}],"gq":[[0.0]],"dq":[0.5]}"#,
    )
    .unwrap();
    let out = bench()
        .args(["run", "--suite", "custom", "--problem-file"])
        .arg(&path)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8_lossy(&out.stdout);
    let row: Vec<&str> = stdout.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(row[0], "scalar");
    assert_eq!(row[1], "dense");
    let obj: f64 = row[9].parse().unwrap();
    assert!((obj + 1.0).abs() < 1e-6);
}

#[test]
fn seeded_reports_are_identical_apart_from_time() {
    let run = || {
        let out = bench().args(["run", "--seed", "11"]).output().unwrap();
        String::from_utf8(out.stdout)
            .unwrap()
            .lines()
            .map(|l| {
                let mut f: Vec<&str> = l.split(',').collect();
                f.remove(4);
                f.join(",")
            })
            .collect::<Vec<_>>()
    };
    assert_eq!(run(), run());
}
