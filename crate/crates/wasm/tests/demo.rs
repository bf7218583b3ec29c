use qcqp_wasm::{history_json, phase_demo_json, trajectory_json};
use serde_json::Value;

#[test]
fn phase_demo_has_four_paths() {
    let v: Value = serde_json::from_str(&phase_demo_json(0, 6, 0.5, false, "balance").unwrap()).unwrap();
    let paths = v["paths"].as_array().unwrap();
    assert_eq!(paths.len(), 4);
    assert_eq!(paths[0]["label"], "QCQP_inf");
    assert!(paths[0]["vertices"].as_array().unwrap().is_empty());
    assert_eq!(paths[3]["vertices"].as_array().unwrap().len(), 8);
    // expanded back to the original problem, so stage 0 carries x̂₀
    assert_eq!(paths[0]["points"].as_array().unwrap().len(), 7);
}

#[test]
fn hard_polygons_stay_inside_the_disk() {
    let v: Value = serde_json::from_str(&phase_demo_json(0, 6, 1.5, true, "balance").unwrap()).unwrap();
    let rho = v["radius"].as_f64().unwrap();
    for path in v["paths"].as_array().unwrap().iter().skip(1) {
        assert_eq!(path["status"], "converged", "{}", path["label"]);
        for p in path["points"].as_array().unwrap() {
            let (a, b) = (p[0].as_f64().unwrap(), p[1].as_f64().unwrap());
            assert!(a.hypot(b) <= rho * (1.0 + 1e-6), "{} {a} {b}", path["label"]);
        }
    }
}

#[test]
fn trajectory_respects_control_bound() {
    let v: Value = serde_json::from_str(&trajectory_json("QCQP_1", 2, 15, 0.3, "balance").unwrap()).unwrap();
    let u = v["controls"].as_array().unwrap();
    assert_eq!(u.len(), 15);
    assert!(u.iter().all(|x| x.as_f64().unwrap().abs() <= 0.3 + 1e-6));
    assert_eq!(v["positions"].as_array().unwrap().len(), 2);
    assert_eq!(v["positions"][0].as_array().unwrap().len(), 16);
}

#[test]
fn history_covers_all_pipelines() {
    let v: Value = serde_json::from_str(&history_json("QP_0", 0, "balance", 5).unwrap()).unwrap();
    let labels: Vec<&str> = v.as_array().unwrap().iter().map(|h| h["pipeline"].as_str().unwrap()).collect();
    assert_eq!(labels, ["baseline", "x0", "x0+full", "x0+part"]);
    assert!(v[0]["records"].as_array().unwrap().len() > 1);
}

#[test]
fn bad_inputs_are_errors() {
    assert!(trajectory_json("QP_9", 0, 5, 0.5, "balance").is_err());
    assert!(history_json("QP_0", 0, "fast", 5).is_err());
    assert!(phase_demo_json(0, 0, 0.5, false, "balance").is_err());
}
