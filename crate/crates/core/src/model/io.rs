//! JSON problem files.
//!
//! A file is one object with `kind: "dense" | "ocp"`, integer dimension
//! fields, and matrices as `{ "rows": r, "cols": c, "data": [row-major] }`.
//! Infinite limits are written as the strings `"inf"` / `"-inf"`. Data fields
//! may be omitted and default to zero (masks default to on, `soft_map` to
//! hard, written as `-1`).
//!
//! OCP fields are per-stage arrays (`A`, `B`, `b` have `N` entries, the rest
//! `N + 1`); `Hq`/`gq` hold the stacked `(u, x)` Hessians and gradients of the
//! quadratic constraints and `dq` their upper limits. An optional `x0` is the
//! nominal initial state; when stage 0 has no states it marks `x0` as fixed.
//! The constant objective term is not stored.

use std::path::Path;

use serde_json::{json, Map, Value};

use super::{DenseDims, DenseQcqp, Dynamics, OcpDims, OcpQcqp, OcpStage, QuadConstraint, Slacks, X0Mode};
use crate::error::QcqpError;
use crate::linalg::Mat;

#[derive(Clone, Debug, PartialEq)]
pub enum ProblemFile {
    Dense(DenseQcqp),
    Ocp(OcpQcqp),
}

pub fn read_problem_file(path: impl AsRef<Path>) -> Result<ProblemFile, QcqpError> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| QcqpError::Io(format!("{}: {e}", path.as_ref().display())))?;
    from_json_str(&text)
}

pub fn write_problem_file(path: impl AsRef<Path>, problem: &ProblemFile) -> Result<(), QcqpError> {
    std::fs::write(path.as_ref(), to_json_string(problem))
        .map_err(|e| QcqpError::Io(format!("{}: {e}", path.as_ref().display())))
}

pub fn from_json_str(text: &str) -> Result<ProblemFile, QcqpError> {
    let root: Value = serde_json::from_str(text).map_err(|e| QcqpError::Parse(e.to_string()))?;
    let obj = root
        .as_object()
        .ok_or_else(|| QcqpError::Parse("top level must be an object".into()))?;
    match obj.get("kind").and_then(Value::as_str) {
        Some("dense") => parse_dense(obj).map(ProblemFile::Dense),
        Some("ocp") => parse_ocp(obj).map(ProblemFile::Ocp),
        Some(other) => Err(QcqpError::Parse(format!("unknown kind `{other}`"))),
        None => Err(QcqpError::Parse("missing `kind`".into())),
    }
}

pub fn to_json_string(problem: &ProblemFile) -> String {
    let v = match problem {
        ProblemFile::Dense(p) => dense_to_json(p),
        ProblemFile::Ocp(p) => ocp_to_json(p),
    };
    serde_json::to_string_pretty(&v).expect("json serialization")
}

fn perr(msg: impl Into<String>) -> QcqpError {
    QcqpError::Parse(msg.into())
}

fn num(v: &Value, what: &str) -> Result<f64, QcqpError> {
    match v {
        Value::Number(n) => n.as_f64().ok_or_else(|| perr(format!("{what}: bad number"))),
        Value::String(s) => match s.as_str() {
            "inf" | "+inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            _ => Err(perr(format!("{what}: expected a number, got \"{s}\""))),
        },
        _ => Err(perr(format!("{what}: expected a number"))),
    }
}

fn num_json(x: f64) -> Value {
    if x == f64::INFINITY {
        json!("inf")
    } else if x == f64::NEG_INFINITY {
        json!("-inf")
    } else {
        json!(x)
    }
}

fn uint(v: &Value, what: &str) -> Result<usize, QcqpError> {
    v.as_u64()
        .map(|u| u as usize)
        .ok_or_else(|| perr(format!("{what}: expected a non-negative integer")))
}

fn arr<'a>(v: &'a Value, what: &str) -> Result<&'a Vec<Value>, QcqpError> {
    v.as_array().ok_or_else(|| perr(format!("{what}: expected an array")))
}

fn vec_f(v: &Value, len: usize, what: &str) -> Result<Vec<f64>, QcqpError> {
    let a = arr(v, what)?;
    if a.len() != len {
        return Err(perr(format!("{what}: expected {len} entries, got {}", a.len())));
    }
    a.iter().map(|x| num(x, what)).collect()
}

fn vec_u(v: &Value, len: usize, what: &str) -> Result<Vec<usize>, QcqpError> {
    let a = arr(v, what)?;
    if a.len() != len {
        return Err(perr(format!("{what}: expected {len} entries, got {}", a.len())));
    }
    a.iter().map(|x| uint(x, what)).collect()
}

fn vec_bool(v: &Value, len: usize, what: &str) -> Result<Vec<bool>, QcqpError> {
    let a = arr(v, what)?;
    if a.len() != len {
        return Err(perr(format!("{what}: expected {len} entries, got {}", a.len())));
    }
    a.iter()
        .map(|x| match x {
            Value::Bool(b) => Ok(*b),
            Value::Number(n) => Ok(n.as_f64() != Some(0.0)),
            _ => Err(perr(format!("{what}: expected a flag"))),
        })
        .collect()
}

fn soft(v: &Value, len: usize, what: &str) -> Result<Vec<Option<usize>>, QcqpError> {
    let a = arr(v, what)?;
    if a.len() != len {
        return Err(perr(format!("{what}: expected {len} entries, got {}", a.len())));
    }
    a.iter()
        .map(|x| {
            let i = x.as_i64().ok_or_else(|| perr(format!("{what}: expected an integer")))?;
            Ok(usize::try_from(i).ok())
        })
        .collect()
}

fn mat(v: &Value, rows: usize, cols: usize, what: &str) -> Result<Mat, QcqpError> {
    let o = v.as_object().ok_or_else(|| perr(format!("{what}: expected a matrix object")))?;
    let r = o.get("rows").map(|x| uint(x, what)).transpose()?.unwrap_or(rows);
    let c = o.get("cols").map(|x| uint(x, what)).transpose()?.unwrap_or(cols);
    if r != rows || c != cols {
        return Err(perr(format!("{what}: expected {rows}x{cols}, got {r}x{c}")));
    }
    let data = vec_f(o.get("data").ok_or_else(|| perr(format!("{what}: missing data")))?, r * c, what)?;
    Ok(Mat::from_row_slice(r, c, &data))
}

fn mat_json(m: &Mat) -> Value {
    json!({
        "rows": m.rows(),
        "cols": m.cols(),
        "data": m.as_slice().iter().map(|x| num_json(*x)).collect::<Vec<_>>(),
    })
}

fn vec_json(v: &[f64]) -> Value {
    Value::Array(v.iter().map(|x| num_json(*x)).collect())
}

fn soft_json(v: &[Option<usize>]) -> Value {
    json!(v.iter().map(|s| s.map_or(-1, |j| j as i64)).collect::<Vec<_>>())
}

fn get_dim(o: &Map<String, Value>, key: &str) -> Result<usize, QcqpError> {
    o.get(key).map_or(Ok(0), |v| uint(v, key))
}

fn opt<'a>(o: &'a Map<String, Value>, key: &str) -> Option<&'a Value> {
    o.get(key).filter(|v| !v.is_null())
}

/// Per-stage array accessor: `o[key][n]` if the key is present.
fn stage_item<'a>(o: &'a Map<String, Value>, key: &str, n: usize, stages: usize) -> Result<Option<&'a Value>, QcqpError> {
    match opt(o, key) {
        None => Ok(None),
        Some(v) => {
            let a = arr(v, key)?;
            if a.len() != stages {
                return Err(perr(format!("{key}: expected {stages} per-stage entries, got {}", a.len())));
            }
            Ok(Some(&a[n]))
        }
    }
}

struct RowFields<'a> {
    lb: &'a mut Vec<f64>,
    ub: &'a mut Vec<f64>,
    quad: &'a mut Vec<QuadConstraint>,
    slacks: &'a mut Slacks,
    soft_map: &'a mut Vec<Option<usize>>,
    mask_lo: &'a mut Vec<bool>,
    mask_up: &'a mut Vec<bool>,
}

/// Reads the row fields shared by both kinds; `get(key)` returns the value
/// for the current stage (or the whole problem).
fn read_rows<'v>(
    get: impl Fn(&str) -> Result<Option<&'v Value>, QcqpError>,
    f: RowFields<'_>,
    nv: usize,
    n_aff: usize,
    ns: usize,
    ctx: &str,
) -> Result<(), QcqpError> {
    let key = |k: &str| format!("{ctx}{k}");
    if let Some(v) = get("lb")? {
        *f.lb = vec_f(v, n_aff, &key("lb"))?;
    }
    if let Some(v) = get("ub")? {
        *f.ub = vec_f(v, n_aff, &key("ub"))?;
    }
    let nq = f.quad.len();
    if let Some(v) = get("Hq")? {
        let a = arr(v, &key("Hq"))?;
        if a.len() != nq {
            return Err(perr(format!("{}: expected {nq} matrices", key("Hq"))));
        }
        for (k, m) in a.iter().enumerate() {
            f.quad[k].hess = mat(m, nv, nv, &key("Hq"))?;
        }
    }
    if let Some(v) = get("gq")? {
        let a = arr(v, &key("gq"))?;
        if a.len() != nq {
            return Err(perr(format!("{}: expected {nq} vectors", key("gq"))));
        }
        for (k, g) in a.iter().enumerate() {
            f.quad[k].grad = vec_f(g, nv, &key("gq"))?;
        }
    }
    if let Some(v) = get("dq")? {
        let d = vec_f(v, nq, &key("dq"))?;
        for (k, dk) in d.into_iter().enumerate() {
            f.quad[k].upper = dk;
        }
    }
    let sl = [
        ("Zl", &mut f.slacks.hess_lo),
        ("Zu", &mut f.slacks.hess_up),
        ("zl", &mut f.slacks.grad_lo),
        ("zu", &mut f.slacks.grad_up),
        ("sl_min", &mut f.slacks.lb_lo),
        ("su_min", &mut f.slacks.lb_up),
    ];
    for (name, field) in sl {
        if let Some(v) = get(name)? {
            *field = vec_f(v, ns, &key(name))?;
        }
    }
    let rows = n_aff + nq;
    if let Some(v) = get("soft_map")? {
        *f.soft_map = soft(v, rows, &key("soft_map"))?;
    }
    if let Some(v) = get("mask_lo")? {
        *f.mask_lo = vec_bool(v, rows, &key("mask_lo"))?;
    }
    if let Some(v) = get("mask_up")? {
        *f.mask_up = vec_bool(v, rows, &key("mask_up"))?;
    }
    Ok(())
}

fn write_rows(o: &mut Map<String, Value>, rows: RowsOut<'_>) {
    o.insert("lb".into(), vec_json(rows.lb));
    o.insert("ub".into(), vec_json(rows.ub));
    o.insert("Hq".into(), Value::Array(rows.quad.iter().map(|q| mat_json(&q.hess)).collect()));
    o.insert("gq".into(), Value::Array(rows.quad.iter().map(|q| vec_json(&q.grad)).collect()));
    o.insert("dq".into(), vec_json(&rows.quad.iter().map(|q| q.upper).collect::<Vec<_>>()));
    o.insert("Zl".into(), vec_json(&rows.slacks.hess_lo));
    o.insert("Zu".into(), vec_json(&rows.slacks.hess_up));
    o.insert("zl".into(), vec_json(&rows.slacks.grad_lo));
    o.insert("zu".into(), vec_json(&rows.slacks.grad_up));
    o.insert("sl_min".into(), vec_json(&rows.slacks.lb_lo));
    o.insert("su_min".into(), vec_json(&rows.slacks.lb_up));
    o.insert("soft_map".into(), soft_json(rows.soft_map));
    o.insert("mask_lo".into(), json!(rows.mask_lo));
    o.insert("mask_up".into(), json!(rows.mask_up));
}

struct RowsOut<'a> {
    lb: &'a [f64],
    ub: &'a [f64],
    quad: &'a [QuadConstraint],
    slacks: &'a Slacks,
    soft_map: &'a [Option<usize>],
    mask_lo: &'a [bool],
    mask_up: &'a [bool],
}

fn parse_dense(o: &Map<String, Value>) -> Result<DenseQcqp, QcqpError> {
    let dims = DenseDims {
        nv: get_dim(o, "nv")?,
        ne: get_dim(o, "ne")?,
        nb: get_dim(o, "nb")?,
        ng: get_dim(o, "ng")?,
        nq: get_dim(o, "nq")?,
        ns: get_dim(o, "ns")?,
    };
    let DenseDims { nv, ne, nb, ng, ns, .. } = dims;
    let mut p = DenseQcqp::new(dims);
    if let Some(v) = opt(o, "H") {
        p.hess = mat(v, nv, nv, "H")?;
    }
    if let Some(v) = opt(o, "g") {
        p.grad = vec_f(v, nv, "g")?;
    }
    if let Some(v) = opt(o, "A") {
        p.eq_mat = mat(v, ne, nv, "A")?;
    }
    if let Some(v) = opt(o, "b") {
        p.eq_rhs = vec_f(v, ne, "b")?;
    }
    if let Some(v) = opt(o, "idxb") {
        p.box_idx = vec_u(v, nb, "idxb")?;
    }
    if let Some(v) = opt(o, "C") {
        p.gen_mat = mat(v, ng, nv, "C")?;
    }
    read_rows(
        |k| Ok(opt(o, k)),
        RowFields {
            lb: &mut p.lb,
            ub: &mut p.ub,
            quad: &mut p.quad,
            slacks: &mut p.slacks,
            soft_map: &mut p.soft_map,
            mask_lo: &mut p.mask_lo,
            mask_up: &mut p.mask_up,
        },
        nv,
        nb + ng,
        ns,
        "",
    )?;
    Ok(p)
}

fn dense_to_json(p: &DenseQcqp) -> Value {
    let mut o = Map::new();
    o.insert("kind".into(), json!("dense"));
    let d = p.dims();
    for (k, v) in [("nv", d.nv), ("ne", d.ne), ("nb", d.nb), ("ng", d.ng), ("nq", d.nq), ("ns", d.ns)] {
        o.insert(k.into(), json!(v));
    }
    o.insert("H".into(), mat_json(&p.hess));
    o.insert("g".into(), vec_json(&p.grad));
    o.insert("A".into(), mat_json(&p.eq_mat));
    o.insert("b".into(), vec_json(&p.eq_rhs));
    o.insert("idxb".into(), json!(p.box_idx));
    o.insert("C".into(), mat_json(&p.gen_mat));
    write_rows(
        &mut o,
        RowsOut {
            lb: &p.lb,
            ub: &p.ub,
            quad: &p.quad,
            slacks: &p.slacks,
            soft_map: &p.soft_map,
            mask_lo: &p.mask_lo,
            mask_up: &p.mask_up,
        },
    );
    Value::Object(o)
}

fn dim_array(o: &Map<String, Value>, key: &str, k: usize) -> Result<Vec<usize>, QcqpError> {
    match opt(o, key) {
        None => Ok(vec![0; k]),
        Some(v) => vec_u(v, k, key),
    }
}

fn parse_ocp(o: &Map<String, Value>) -> Result<OcpQcqp, QcqpError> {
    let horizon = uint(o.get("N").ok_or_else(|| perr("missing `N`"))?, "N")?;
    let k = horizon + 1;
    let dims = OcpDims {
        horizon,
        nx: dim_array(o, "nx", k)?,
        nu: dim_array(o, "nu", k)?,
        nbu: dim_array(o, "nbu", k)?,
        nbx: dim_array(o, "nbx", k)?,
        ng: dim_array(o, "ng", k)?,
        nq: dim_array(o, "nq", k)?,
        ns: dim_array(o, "ns", k)?,
    };
    let mut p = OcpQcqp::new(&dims)?;
    for n in 0..horizon {
        let ctx = |key: &str| format!("{key}[{n}]");
        let (nx0, nx1, nu) = (dims.nx[n], dims.nx[n + 1], dims.nu[n]);
        let dy: &mut Dynamics = &mut p.dynamics[n];
        if let Some(v) = stage_item(o, "A", n, horizon)? {
            dy.a = mat(v, nx1, nx0, &ctx("A"))?;
        }
        if let Some(v) = stage_item(o, "B", n, horizon)? {
            dy.b = mat(v, nx1, nu, &ctx("B"))?;
        }
        if let Some(v) = stage_item(o, "b", n, horizon)? {
            dy.offset = vec_f(v, nx1, &ctx("b"))?;
        }
    }
    for n in 0..k {
        let ctx = |key: &str| format!("{key}[{n}]");
        let sd = dims.stage(n);
        let st: &mut OcpStage = &mut p.stages[n];
        let item = |key: &str| stage_item(o, key, n, k);
        if let Some(v) = item("R")? {
            st.r = mat(v, sd.nu, sd.nu, &ctx("R"))?;
        }
        if let Some(v) = item("S")? {
            st.s = mat(v, sd.nu, sd.nx, &ctx("S"))?;
        }
        if let Some(v) = item("Q")? {
            st.q = mat(v, sd.nx, sd.nx, &ctx("Q"))?;
        }
        if let Some(v) = item("r")? {
            st.rvec = vec_f(v, sd.nu, &ctx("r"))?;
        }
        if let Some(v) = item("q")? {
            st.qvec = vec_f(v, sd.nx, &ctx("q"))?;
        }
        if let Some(v) = item("idxbu")? {
            st.idxbu = vec_u(v, sd.nbu, &ctx("idxbu"))?;
        }
        if let Some(v) = item("idxbx")? {
            st.idxbx = vec_u(v, sd.nbx, &ctx("idxbx"))?;
        }
        if let Some(v) = item("D")? {
            st.d = mat(v, sd.ng, sd.nu, &ctx("D"))?;
        }
        if let Some(v) = item("C")? {
            st.c = mat(v, sd.ng, sd.nx, &ctx("C"))?;
        }
        read_rows(
            &item,
            RowFields {
                lb: &mut st.lb,
                ub: &mut st.ub,
                quad: &mut st.quad,
                slacks: &mut st.slacks,
                soft_map: &mut st.soft_map,
                mask_lo: &mut st.mask_lo,
                mask_up: &mut st.mask_up,
            },
            sd.nu + sd.nx,
            sd.nbu + sd.nbx + sd.ng,
            sd.ns,
            &format!("stage {n}: "),
        )?;
    }
    if let Some(v) = opt(o, "x0") {
        let a = arr(v, "x0")?;
        let x0 = a.iter().map(|x| num(x, "x0")).collect::<Result<Vec<_>, _>>()?;
        if dims.nx[0] == 0 && !x0.is_empty() {
            p.x0_mode = X0Mode::Fixed(x0.clone());
        } else if x0.len() != dims.nx[0] {
            return Err(perr(format!("x0: expected {} entries, got {}", dims.nx[0], x0.len())));
        }
        p.initial_state = Some(x0);
    }
    Ok(p)
}

fn ocp_to_json(p: &OcpQcqp) -> Value {
    let mut o = Map::new();
    o.insert("kind".into(), json!("ocp"));
    o.insert("N".into(), json!(p.horizon()));
    let d = p.dims();
    for (key, v) in [
        ("nx", &d.nx),
        ("nu", &d.nu),
        ("nbu", &d.nbu),
        ("nbx", &d.nbx),
        ("ng", &d.ng),
        ("nq", &d.nq),
        ("ns", &d.ns),
    ] {
        o.insert(key.into(), json!(v));
    }
    let dyn_mats = |f: fn(&Dynamics) -> &Mat| Value::Array(p.dynamics.iter().map(|dy| mat_json(f(dy))).collect());
    o.insert("A".into(), dyn_mats(|d| &d.a));
    o.insert("B".into(), dyn_mats(|d| &d.b));
    o.insert("b".into(), Value::Array(p.dynamics.iter().map(|d| vec_json(&d.offset)).collect()));
    let st_mats = |f: fn(&OcpStage) -> &Mat| Value::Array(p.stages.iter().map(|s| mat_json(f(s))).collect());
    let st_vecs = |f: fn(&OcpStage) -> &[f64]| Value::Array(p.stages.iter().map(|s| vec_json(f(s))).collect());
    o.insert("Q".into(), st_mats(|s| &s.q));
    o.insert("S".into(), st_mats(|s| &s.s));
    o.insert("R".into(), st_mats(|s| &s.r));
    o.insert("q".into(), st_vecs(|s| &s.qvec));
    o.insert("r".into(), st_vecs(|s| &s.rvec));
    o.insert("idxbu".into(), Value::Array(p.stages.iter().map(|s| json!(s.idxbu)).collect()));
    o.insert("idxbx".into(), Value::Array(p.stages.iter().map(|s| json!(s.idxbx)).collect()));
    o.insert("D".into(), st_mats(|s| &s.d));
    o.insert("C".into(), st_mats(|s| &s.c));
    let mut per_stage: Vec<Map<String, Value>> = Vec::new();
    for s in &p.stages {
        let mut m = Map::new();
        write_rows(
            &mut m,
            RowsOut {
                lb: &s.lb,
                ub: &s.ub,
                quad: &s.quad,
                slacks: &s.slacks,
                soft_map: &s.soft_map,
                mask_lo: &s.mask_lo,
                mask_up: &s.mask_up,
            },
        );
        per_stage.push(m);
    }
    for key in ["lb", "ub", "Hq", "gq", "dq", "Zl", "Zu", "zl", "zu", "sl_min", "su_min", "soft_map", "mask_lo", "mask_up"] {
        o.insert(
            key.into(),
            Value::Array(per_stage.iter_mut().map(|m| m.remove(key).unwrap_or(Value::Null)).collect()),
        );
    }
    let x0 = match (&p.x0_mode, &p.initial_state) {
        (X0Mode::Fixed(x), _) => Some(x),
        (X0Mode::Variable, Some(x)) => Some(x),
        _ => None,
    };
    if let Some(x) = x0 {
        o.insert("x0".into(), vec_json(x));
    }
    Value::Object(o)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_dense_file() {
        let text = r#"{
            "kind": "dense", "nv": 2, "nb": 1, "nq": 1, "ns": 1,
            "H": {"rows": 2, "cols": 2, "data": [1, 0, 0, 2]},
            "g": [1, -1],
            "idxb": [1], "lb": ["-inf"], "ub": [0.5],
            "Hq": [{"rows": 2, "cols": 2, "data": [1, 0, 0, 1]}], "gq": [[0, 0]], "dq": [0.5],
            "Zu": [10], "zu": [1], "soft_map": [-1, 0]
        }"#;
        let ProblemFile::Dense(p) = from_json_str(text).unwrap() else {
            panic!("expected dense");
        };
        assert_eq!(p.lb[0], f64::NEG_INFINITY);
        assert_eq!(p.box_idx, vec![1]);
        assert_eq!(p.soft_map, vec![None, Some(0)]);
        assert_eq!(p.quad[0].upper, 0.5);
        assert!(p.validate().is_empty());
        let back = from_json_str(&to_json_string(&ProblemFile::Dense(p.clone()))).unwrap();
        assert_eq!(back, ProblemFile::Dense(p));
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(from_json_str("[]"), Err(QcqpError::Parse(_))));
        assert!(matches!(from_json_str(r#"{"kind":"tree"}"#), Err(QcqpError::Parse(_))));
        let short = r#"{"kind":"dense","nv":2,"g":[1]}"#;
        assert!(from_json_str(short).unwrap_err().to_string().contains("expected 2 entries"));
        let bad_ocp = r#"{"kind":"ocp","N":2,"nx":[1,1],"nu":[1,1,0]}"#;
        assert!(from_json_str(bad_ocp).is_err());
    }

    #[test]
    fn ocp_x0_modes() {
        let text = r#"{"kind":"ocp","N":1,"nx":[1,1],"nu":[1,0],
            "A":[{"rows":1,"cols":1,"data":[2]}],"B":[{"rows":1,"cols":1,"data":[1]}],"x0":[3]}"#;
        let ProblemFile::Ocp(p) = from_json_str(text).unwrap() else {
            panic!()
        };
        assert_eq!(p.x0_mode, X0Mode::Variable);
        assert_eq!(p.initial_state, Some(vec![3.0]));
        let text = r#"{"kind":"ocp","N":1,"nx":[0,1],"nu":[1,0],"x0":[3]}"#;
        let ProblemFile::Ocp(p) = from_json_str(text).unwrap() else {
            panic!()
        };
        assert_eq!(p.x0_mode, X0Mode::Fixed(vec![3.0]));
    }
}
