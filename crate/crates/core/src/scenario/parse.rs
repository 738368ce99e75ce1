use serde::Serialize;
use serde_json::{json, Map, Value};
use std::path::Path;

use crate::control::{ConverterConfig, DEFAULT_EXIT_HYSTERESIS, DEFAULT_MIN_DWELL};
use crate::error::{Error, Result};
use crate::network::{FixedPointOptions, DEFAULT_FAULT_IMPEDANCE};
use crate::phasor::{GridModel, PerUnitBase};
use crate::sim::{ScenarioSpec, SolverSettings, CHANNELS};

use super::fixtures::fixture;

/// A default filled in for a missing key.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DefaultApplied {
    pub pointer: String,
    pub value: Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedScenario {
    pub spec: ScenarioSpec,
    pub provenance: Vec<DefaultApplied>,
}

const TOP_KEYS: [&str; 10] = ["name", "base", "grid", "network", "converters", "events", "solver", "outputs", "expected", "metadata"];
const CONVERTER_REQUIRED: [&str; 11] = ["id", "node", "eta", "alpha", "varphi", "p_star", "q_star", "z_v", "i_lim", "tau", "v_sat"];
const GRID_KEYS: [&str; 5] = ["node", "v_g", "theta_g", "omega_g", "omega_0"];

struct Defaults {
    applied: Vec<DefaultApplied>,
}

impl Defaults {
    fn fill(&mut self, obj: &mut Map<String, Value>, base: &str, key: &str, value: Value) {
        if !obj.contains_key(key) {
            self.applied.push(DefaultApplied { pointer: format!("{base}/{key}"), value: value.clone() });
            obj.insert(key.to_string(), value);
        }
    }
}

fn schema(pointer: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema { pointer: pointer.into(), message: message.into() }
}

fn object<'a>(v: &'a mut Value, pointer: &str) -> Result<&'a mut Map<String, Value>> {
    v.as_object_mut().ok_or_else(|| schema(pointer, "expected an object"))
}

fn check_keys(obj: &Map<String, Value>, pointer: &str, allowed: &[&str]) -> Result<()> {
    match obj.keys().find(|k| !allowed.contains(&k.as_str())) {
        Some(k) => Err(schema(format!("{pointer}/{k}"), "unknown field")),
        None => Ok(()),
    }
}

/// Rewrites `{mag, angle}` objects into `[re, im]` pairs.
fn normalize_complex(v: &mut Value) {
    match v {
        Value::Object(m) => {
            if m.len() == 2 {
                if let (Some(mag), Some(ang)) = (m.get("mag").and_then(Value::as_f64), m.get("angle").and_then(Value::as_f64)) {
                    *v = json!([mag * ang.cos(), mag * ang.sin()]);
                    return;
                }
            }
            m.values_mut().for_each(normalize_complex);
        }
        Value::Array(a) => a.iter_mut().for_each(normalize_complex),
        _ => {}
    }
}

fn to_value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("plain data serializes")
}

fn apply_defaults(doc: &mut Value, d: &mut Defaults) -> Result<()> {
    let root = object(doc, "")?;
    check_keys(root, "", &TOP_KEYS)?;
    if !root.contains_key("name") {
        return Err(schema("/name", "missing field"));
    }
    d.fill(root, "", "base", to_value(&PerUnitBase::default()));
    let freq = root["base"]
        .get("frequency_base")
        .and_then(Value::as_f64)
        .ok_or_else(|| schema("/base/frequency_base", "expected a number"))?;
    d.fill(root, "", "grid", Value::Null);
    d.fill(root, "", "events", json!([]));
    d.fill(root, "", "solver", json!({}));
    d.fill(root, "", "outputs", to_value(&CHANNELS));
    d.fill(root, "", "expected", json!({}));
    d.fill(root, "", "metadata", json!({}));

    if !root["grid"].is_null() {
        let grid = object(root.get_mut("grid").expect("filled"), "/grid")?;
        check_keys(grid, "/grid", &GRID_KEYS)?;
        d.fill(grid, "/grid", "theta_g", json!(0.0));
        d.fill(grid, "/grid", "omega_g", json!(freq));
        d.fill(grid, "/grid", "omega_0", json!(freq));
    }

    let network = object(root.get_mut("network").ok_or_else(|| schema("/network", "missing field"))?, "/network")?;
    d.fill(network, "/network", "shunts", json!([]));

    let conv_keys: Vec<String> = {
        let mut keys: Vec<String> = CONVERTER_REQUIRED.iter().map(|s| s.to_string()).collect();
        keys.extend(["strategy", "v_star", "rating", "frt_overrides", "exit_hysteresis", "min_dwell"].map(String::from));
        keys
    };
    let conv_keys: Vec<&str> = conv_keys.iter().map(String::as_str).collect();
    let convs = root
        .get_mut("converters")
        .ok_or_else(|| schema("/converters", "missing field"))?
        .as_array_mut()
        .ok_or_else(|| schema("/converters", "expected an array"))?;
    for (k, c) in convs.iter_mut().enumerate() {
        let p = format!("/converters/{k}");
        let c = object(c, &p)?;
        check_keys(c, &p, &conv_keys)?;
        if let Some(missing) = CONVERTER_REQUIRED.iter().find(|f| !c.contains_key(**f)) {
            return Err(schema(format!("{p}/{missing}"), "missing field"));
        }
        d.fill(c, &p, "strategy", json!("saturation-informed"));
        d.fill(c, &p, "v_star", json!(1.0));
        d.fill(c, &p, "rating", json!(1.0));
        d.fill(c, &p, "frt_overrides", Value::Null);
        d.fill(c, &p, "exit_hysteresis", json!(DEFAULT_EXIT_HYSTERESIS));
        d.fill(c, &p, "min_dwell", json!(DEFAULT_MIN_DWELL));
    }

    let events = root["events"].as_array_mut().ok_or_else(|| schema("/events", "expected an array"))?;
    for (k, e) in events.iter_mut().enumerate() {
        let p = format!("/events/{k}");
        let e = object(e, &p)?;
        if e.get("kind").and_then(Value::as_str) == Some("shunt-fault-apply") {
            d.fill(e, &p, "impedance", to_value(&DEFAULT_FAULT_IMPEDANCE));
        }
    }

    let solver = object(root.get_mut("solver").expect("filled"), "/solver")?;
    let sd = to_value(&SolverSettings::default());
    let solver_keys: Vec<&str> = sd.as_object().expect("struct").keys().map(String::as_str).collect();
    check_keys(solver, "/solver", &solver_keys)?;
    for (key, value) in sd.as_object().expect("struct") {
        if key != "fixed_point" {
            d.fill(solver, "/solver", key, value.clone());
        }
    }
    d.fill(solver, "/solver", "fixed_point", json!({}));
    let fp = object(solver.get_mut("fixed_point").expect("filled"), "/solver/fixed_point")?;
    let fd = to_value(&FixedPointOptions::default());
    let fp_keys: Vec<&str> = fd.as_object().expect("struct").keys().map(String::as_str).collect();
    check_keys(fp, "/solver/fixed_point", &fp_keys)?;
    for (key, value) in fd.as_object().expect("struct") {
        d.fill(fp, "/solver/fixed_point", key, value.clone());
    }
    Ok(())
}

fn pointer_of(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        match seg {
            Segment::Seq { index } => out.push_str(&format!("/{index}")),
            Segment::Map { key } => out.push_str(&format!("/{key}")),
            Segment::Enum { variant } => out.push_str(&format!("/{variant}")),
            Segment::Unknown => out.push_str("/?"),
        }
    }
    out
}

fn typed<T: serde::de::DeserializeOwned>(v: Value, prefix: &str) -> Result<T> {
    serde_path_to_error::deserialize(v).map_err(|e| {
        let pointer = format!("{prefix}{}", pointer_of(e.path()));
        schema(pointer, e.into_inner().to_string())
    })
}

/// Flattened sections lose field paths in their errors, so they are
/// type-checked on their own first.
fn precheck_flattened(doc: &Value) -> Result<()> {
    for (k, c) in doc["converters"].as_array().into_iter().flatten().enumerate() {
        let mut c = c.clone();
        if let Some(m) = c.as_object_mut() {
            m.remove("id");
            m.remove("node");
        }
        typed::<ConverterConfig>(c, &format!("/converters/{k}"))?;
    }
    if let Some(m) = doc["grid"].as_object() {
        let mut g = m.clone();
        g.remove("node");
        typed::<GridModel>(Value::Object(g), "/grid")?;
    }
    Ok(())
}

pub fn parse_scenario_str(text: &str) -> Result<ParsedScenario> {
    let mut doc: Value = serde_json::from_str(text).map_err(|e| schema("", format!("invalid JSON: {e}")))?;
    normalize_complex(&mut doc);
    let mut d = Defaults { applied: Vec::new() };
    apply_defaults(&mut doc, &mut d)?;
    precheck_flattened(&doc)?;
    let spec: ScenarioSpec = serde_path_to_error::deserialize(doc).map_err(|e| {
        let pointer = pointer_of(e.path());
        schema(pointer, e.into_inner().to_string())
    })?;
    spec.validate()?;
    Ok(ParsedScenario { spec, provenance: d.applied })
}

/// Reads a scenario file.
pub fn parse_scenario(path: &Path) -> Result<ParsedScenario> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario_str(&text)
}

/// Resolves a builtin fixture name or a file path.
pub fn load_scenario(name_or_path: &str) -> Result<ParsedScenario> {
    match fixture(name_or_path) {
        Some(f) => parse_scenario_str(f.source),
        None => parse_scenario(Path::new(name_or_path)),
    }
}

/// Canonical JSON for a resolved scenario.
pub fn emit_scenario(spec: &ScenarioSpec) -> String {
    serde_json::to_string_pretty(spec).expect("scenario serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::control::Strategy;
    use crate::phasor::Phasor;

    const MINIMAL: &str = r#"{
        "name": "minimal",
        "grid": {"node": "g", "v_g": 1.0},
        "network": {
            "nodes": [{"id": "t", "role": "converter-terminal"}, {"id": "g", "role": "grid"}],
            "branches": [{"id": "zg", "from": "t", "to": "g", "z": {"mag": 0.2, "angle": 0.7853981633974483}}]
        },
        "converters": [{
            "id": "c1", "node": "t", "eta": 0.04, "alpha": 5.0, "varphi": 0.7853981633974483,
            "p_star": 0.2, "q_star": 0.0, "z_v": [0.2, 0.0], "i_lim": 1.1, "tau": 0.1, "v_sat": 0.9
        }]
    }"#;

    #[test]
    fn defaults_are_applied_and_echoed() {
        let p = parse_scenario_str(MINIMAL).unwrap();
        assert!(p.spec.events.is_empty());
        assert_eq!(p.spec.solver.dt, 1e-4);
        assert_eq!(p.spec.converters[0].config.strategy, Strategy::SaturationInformed);
        assert_eq!(p.spec.converters[0].config.rating, 1.0);
        let z = p.spec.network.branches[0].z;
        assert!((z - Phasor::from_polar(0.2, std::f64::consts::FRAC_PI_4)).norm() < 1e-15);
        let pointers: Vec<&str> = p.provenance.iter().map(|d| d.pointer.as_str()).collect();
        assert!(pointers.contains(&"/solver/dt"));
        assert!(pointers.contains(&"/converters/0/min_dwell"));
        assert!(pointers.contains(&"/grid/omega_g"));
    }

    #[test]
    fn round_trip_is_identical() {
        let p = parse_scenario_str(MINIMAL).unwrap();
        let text = emit_scenario(&p.spec);
        let q = parse_scenario_str(&text).unwrap();
        assert_eq!(p.spec, q.spec);
        assert!(q.provenance.is_empty());
        assert_eq!(text, emit_scenario(&q.spec));
    }

    #[test]
    fn schema_errors_carry_a_pointer() {
        let bad = MINIMAL.replace("\"alpha\": 5.0", "\"alpha\": \"five\"");
        match parse_scenario_str(&bad) {
            Err(Error::Schema { pointer, .. }) => assert_eq!(pointer, "/converters/0/alpha"),
            other => panic!("{other:?}"),
        }
        let missing = MINIMAL.replace("\"tau\": 0.1, ", "");
        match parse_scenario_str(&missing) {
            Err(Error::Schema { pointer, .. }) => assert_eq!(pointer, "/converters/0/tau"),
            other => panic!("{other:?}"),
        }
        let unknown = MINIMAL.replace("\"tau\": 0.1", "\"tau\": 0.1, \"bogus\": 1");
        match parse_scenario_str(&unknown) {
            Err(Error::Schema { pointer, .. }) => assert_eq!(pointer, "/converters/0/bogus"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn dangling_reference_is_named() {
        let bad = MINIMAL.replace("\"node\": \"t\", \"eta\"", "\"node\": \"nowhere\", \"eta\"");
        match parse_scenario_str(&bad) {
            Err(Error::Reference(m)) => assert!(m.contains("nowhere")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn event_after_end_is_rejected() {
        let bad = MINIMAL.replace(
            "\"converters\"",
            "\"events\": [{\"time\": 9.0, \"kind\": \"grid-voltage-step\", \"magnitude\": 0.3}], \"converters\"",
        );
        assert!(matches!(parse_scenario_str(&bad), Err(Error::Input(_))));
    }
}
