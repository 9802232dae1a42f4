mod common;

#[test]
fn identical_config_reproduces_checkpoints_and_reports() {
    let dir = tempfile::tempdir().unwrap();
    let p = common::persistence::check(dir.path());
    assert!(p.passed(), "{p:?}");
}
