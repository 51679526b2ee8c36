use std::collections::BTreeSet;

use serde_json::Value;

use freebound::potential::{affine_conjugate_potential, Affine, Family, PotentialSpec};

fn schema() -> Value {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../schema/potential.schema.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn examples() -> Vec<PotentialSpec> {
    [
        Family::Zero,
        Family::Obstacle,
        Family::AltPhillips { gamma: 0.5, lambda: 1.0 },
        Family::AltCaffarelli { lambda: 2.0 },
        Family::TwoPhaseAltPhillips {
            gamma: 0.5,
            lambda_minus: 1.0,
            lambda_plus: 2.0,
        },
        Family::StepBounded {
            breakpoints: vec![0.0],
            values: vec![0.0, 1.0],
        },
        Family::LogModulus { amplitude: 0.1 },
        Family::Custom {
            ts: vec![0.0, 1.0],
            values: vec![0.0, 1.0],
        },
    ]
    .into_iter()
    .map(|f| PotentialSpec::new(f).unwrap())
    .collect()
}

fn keys(v: &Value) -> BTreeSet<String> {
    v.as_object().map(|o| o.keys().cloned().collect()).unwrap_or_default()
}

/// Per-family `params` schema, or `None` for families without parameters.
fn params_schema<'a>(schema: &'a Value, family: &str) -> Option<&'a Value> {
    schema["allOf"].as_array().unwrap().iter().find_map(|branch| {
        let cond = &branch["if"]["properties"]["family"];
        let hit = cond["const"] == family || cond["enum"].as_array().is_some_and(|a| a.iter().any(|f| f == family));
        hit.then(|| &branch["then"]["properties"]["params"]).filter(|p| !p.is_null())
    })
}

#[test]
fn every_family_matches_the_schema() {
    let schema = schema();
    let families: BTreeSet<&str> = schema["properties"]["family"]["enum"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    let top = keys(&schema["properties"]);
    let specs = examples();
    assert_eq!(specs.len(), families.len());
    for spec in specs {
        let v = serde_json::to_value(&spec).unwrap();
        assert!(keys(&v).is_subset(&top), "{v}");
        let family = v["family"].as_str().unwrap();
        assert!(families.contains(family), "{family}");
        match params_schema(&schema, family) {
            Some(p) => {
                let declared = keys(&p["properties"]);
                let required: BTreeSet<String> =
                    p["required"].as_array().unwrap().iter().map(|r| r.as_str().unwrap().to_owned()).collect();
                assert_eq!(keys(&v["params"]), declared, "{family}");
                assert_eq!(required, declared, "{family}");
            }
            None => assert!(v.get("params").is_none(), "{v}"),
        }
        assert_eq!(keys(&v["flags"]), keys(&schema["properties"]["flags"]["properties"]));
        let back: PotentialSpec = serde_json::from_value(v).unwrap();
        assert_eq!(back, spec);
    }
}

#[test]
fn transform_matches_the_schema() {
    let spec = PotentialSpec::alt_phillips(0.5, 1.0).unwrap();
    let ell = Affine {
        value: 0.1,
        gradient: [0.2, 0.0],
    };
    let conj = affine_conjugate_potential(&spec, [0.25, 0.0], 0.5, 2.0, &ell).unwrap();
    let v = serde_json::to_value(&conj).unwrap();
    assert_eq!(keys(&v["transform"]), keys(&schema()["$defs"]["transform"]["properties"]));
    let back: PotentialSpec = serde_json::from_value(v).unwrap();
    assert_eq!(back, conj);
}

#[test]
fn inconsistent_declared_flags_are_rejected() {
    let text = r#"{"family":"obstacle","flags":{"one_phase":false,"continuous":true,"vanishes_at_zero":true}}"#;
    assert!(serde_json::from_str::<PotentialSpec>(text).is_err());
}
