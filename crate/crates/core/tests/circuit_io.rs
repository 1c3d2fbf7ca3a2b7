use morphonet::circuit::{load_circuit, save_circuit, GeneCircuit, Interaction};
use morphonet::rd::{MeinhardtParams, RDSystem};
use morphonet::transpile::{assemble_block_circuit, fit_nonlinearities, BlockCircuitSpec, FitDomain, TranspileSettings};
use morphonet::{Error, SearchSettings};
use nalgebra::DMatrix;

/// A full-size transpiled circuit from a cheap fit.
fn transpiled() -> (BlockCircuitSpec, GeneCircuit) {
    let sys = RDSystem::meinhardt(1.0, 50.0, MeinhardtParams::default());
    let settings = TranspileSettings {
        search: SearchSettings::with_budget(2),
        train_points: 20,
        validation_points: 30,
        ..TranspileSettings::default()
    };
    let (p1, p2, _) = fit_nonlinearities(&sys, FitDomain { c1: 3.0, c2: 3.0 }, &settings).unwrap();
    let spec = BlockCircuitSpec::from_sums(&p1, &p2, 1.0, 50.0, settings.decay).unwrap();
    let c = assemble_block_circuit(&spec).unwrap();
    (spec, c)
}

#[test]
fn transpiled_interaction_has_rank_two() {
    let (spec, c) = transpiled();
    assert_eq!(c.m, spec.m1 + spec.m2);
    assert!(matches!(c.k, Interaction::LowRank { rank: 2, .. }));
    let k = DMatrix::from_row_slice(c.m, c.m, &c.k.to_dense(c.m));
    let sv = k.singular_values();
    let mut s: Vec<f64> = sv.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    assert!(s[1] > 0.0);
    assert!(s[2] / s[0] < 1e-10, "sigma3 / sigma1 = {}", s[2] / s[0]);
}

#[test]
fn json_round_trip_is_byte_identical() {
    let (_, c) = transpiled();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("circuit.json");
    save_circuit(&c, &path).unwrap();
    let back = load_circuit(&path).unwrap();
    assert_eq!(back, c);
    assert_eq!(back.to_json().unwrap(), std::fs::read_to_string(&path).unwrap());
}

#[test]
fn sparse_round_trip_keeps_values() {
    let mut c = GeneCircuit::uniform(8);
    c.k = Interaction::from_triplets(8, vec![(0, 3, 0.1 + 0.2), (5, 1, -1e-300), (7, 7, 2.5)]).unwrap();
    let back = GeneCircuit::from_json(&c.to_json().unwrap()).unwrap();
    assert_eq!(back.k.to_dense(8), c.k.to_dense(8));
    assert_eq!(back.to_json().unwrap(), c.to_json().unwrap());
}

fn edit(c: &GeneCircuit, f: impl FnOnce(&mut serde_json::Value)) -> String {
    let mut v: serde_json::Value = serde_json::from_str(&c.to_json().unwrap()).unwrap();
    f(&mut v);
    v.to_string()
}

#[test]
fn non_finite_interaction_is_rejected() {
    let c = GeneCircuit::uniform(3);
    // JSON has no NaN literal; a string in its place must still fail cleanly
    let text = edit(&c, |v| v["K"][4] = "NaN".into());
    assert!(matches!(GeneCircuit::from_json(&text), Err(Error::Schema { .. })));
    let text = c.to_json().unwrap().replacen("0.0", "1e999", 1);
    let err = GeneCircuit::from_json(&text).unwrap_err();
    assert!(matches!(err, Error::Schema { .. }), "{err}");
}

#[test]
fn empty_and_malformed_circuits_are_rejected() {
    let c = GeneCircuit::uniform(2);
    let empty = edit(&c, |v| {
        v["m"] = 0.into();
        v["K"] = serde_json::json!([]);
    });
    assert!(GeneCircuit::from_json(&empty).is_err());
    let short = edit(&c, |v| v["K"] = serde_json::json!([0.0, 0.0, 0.0]));
    match GeneCircuit::from_json(&short) {
        Err(Error::Schema { path, .. }) => assert_eq!(path, "K"),
        other => panic!("{other:?}"),
    }
    let extra = edit(&c, |v| v["colour"] = "red".into());
    assert!(GeneCircuit::from_json(&extra).is_err());
    let missing = edit(&c, |v| {
        v.as_object_mut().unwrap().remove("lambda");
    });
    assert!(GeneCircuit::from_json(&missing).is_err());
}
