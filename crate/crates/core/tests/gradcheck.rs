mod common;

#[test]
fn analytic_gradients_match_central_differences() {
    let (mut model, ex) = common::gradcheck_model();
    let (err, at) = common::gradient_check(&mut model, &ex, 1e-4, 4).unwrap();
    assert!(err < 1e-4, "relative error {err:e} at {at}");
}

#[test]
fn empty_persona_gradients_match() {
    let (mut model, mut ex) = common::gradcheck_model();
    ex.persona.clear();
    let (err, at) = common::gradient_check(&mut model, &ex, 1e-4, 4).unwrap();
    assert!(err < 1e-4, "relative error {err:e} at {at}");
}
