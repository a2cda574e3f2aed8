use kflow_web::{analyze_json, builtins, check_json, source_of};

#[test]
fn every_builtin_source_checks_clean() {
    for name in builtins().split(',') {
        let src = source_of(name).unwrap();
        assert_eq!(check_json(&src), serde_json::json!([]), "{name}");
    }
    assert!(source_of("nope").is_err());
}

#[test]
fn ns_attack_in_two_sessions() {
    let v = analyze_json(&source_of("ns").unwrap(), 2, 2).unwrap();
    assert_eq!(v["verdict"], "Attack");
    assert!(v["dot"].as_str().unwrap().starts_with("digraph"));
    let v = analyze_json(&source_of("nsl").unwrap(), 2, 2).unwrap();
    assert_eq!(v["verdict"], "Secure(2)");
}

#[test]
fn diagnostics_carry_positions() {
    let d = check_json("protocol p {\n  rule r premises {} conclude _;\n}");
    assert_eq!(d[0]["kind"], "SyntaxError");
    assert_eq!(d[0]["line"], 2);
    assert!(analyze_json("protocol", 1, 2).is_err());
}
