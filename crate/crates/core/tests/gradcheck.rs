use zdgan_core::gradcheck;

const TOL: f64 = 1e-4;
const INSTANCES: u64 = 20;

#[test]
fn layer_gradients_match_finite_differences() {
    for (name, worst) in gradcheck::layer_suite(INSTANCES).unwrap() {
        assert!(worst < TOL, "{name}: worst relative error {worst:e}");
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    for (name, worst) in gradcheck::loss_suite(INSTANCES).unwrap() {
        assert!(worst < TOL, "{name}: worst relative error {worst:e}");
    }
}

#[test]
fn gradient_penalty_double_backward() {
    let worst = (0..INSTANCES).map(|s| gradcheck::gp_double_backward_error(s).unwrap()).fold(0.0, f64::max);
    assert!(worst < 1e-3, "gp double backward: {worst:e}");
}
