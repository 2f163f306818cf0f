use dcnet::gradsuite::{layer_checks, model_check, TOLERANCE};

#[test]
fn every_layer_matches_finite_differences() {
    for line in layer_checks(7).unwrap() {
        println!("{}: max rel {:.3e} over {} coords", line.name, line.report.max_rel_error, line.report.checked);
        assert!(line.passed(), "{} failed: {:?}", line.name, line.report);
    }
}

#[test]
fn composed_loss_matches_finite_differences() {
    let line = model_check(3).unwrap();
    println!("{}: max rel {:.3e} over {} coords", line.name, line.report.max_rel_error, line.report.checked);
    assert!(line.report.max_rel_error < TOLERANCE, "{:?}", line.report);
    assert!(line.report.checked > 100);
}
