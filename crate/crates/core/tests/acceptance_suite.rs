use asyncclip::acceptance::{Suite, CRITERIA};

#[test]
fn unknown_ids_are_rejected_and_ids_are_case_insensitive() {
    let suite = Suite::default();
    assert!(suite.run("A11").is_none());
    let r = suite.run("a1").unwrap();
    assert_eq!(r.id, "A1");
    assert!(r.passed, "{r}");
}

#[test]
fn disabled_history_is_reported_not_crashed() {
    let suite = Suite {
        history_capacity: Some(0),
    };
    for id in ["A4", "A5"] {
        let r = suite.run(id).unwrap();
        assert!(!r.passed);
        assert!(r.measured.contains("error"), "{r}");
    }
}

#[test]
fn minimal_history_breaks_the_stale_oracle_only() {
    let suite = Suite {
        history_capacity: Some(1),
    };
    let a4 = suite.run("A4").unwrap();
    assert!(a4.passed, "{a4}");
    let a5 = suite.run("A5").unwrap();
    assert!(!a5.passed);
    assert!(a5.measured.contains("history"), "{a5}");
}

#[test]
fn report_line_names_the_criterion() {
    let r = Suite::default().run("A2").unwrap();
    let line = r.to_string();
    assert!(line.starts_with("A2  PASS"), "{line}");
    assert_eq!(CRITERIA.len(), 10);
}
