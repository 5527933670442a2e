use sparsevox::render::{render_image, RenderConfig};
use sparsevox::scene::{render_oracle, toy_to_field, ToySceneSpec};

fn mean_abs(a: &[[f64; 3]], b: &[[f64; 3]]) -> f64 {
    let s: f64 = a.iter().zip(b).flat_map(|(x, y)| (0..3).map(move |c| (x[c] - y[c]).abs())).sum();
    s / (3 * a.len()) as f64
}

#[test]
fn voxelized_scene_matches_the_analytic_marcher() {
    let spec = ToySceneSpec::default();
    let cam = spec.camera(spec.test_ring.poses()[0], spec.test_ring.radius).unwrap();
    let truth = render_oracle(&spec, &cam, spec.march_step).unwrap();

    let field = toy_to_field(&spec, [128; 3], 1e-6).unwrap();
    let mut rc = RenderConfig::for_field(&field);
    rc.background = spec.background;
    let (img, _) = render_image(&field, &cam, &rc).unwrap();
    let err = mean_abs(&img, &truth);
    assert!(err <= 0.02, "mean abs error {err}");
}

#[test]
fn oracle_is_converged_in_its_march_step() {
    let spec = ToySceneSpec::default();
    for pose in spec.train_ring.poses().iter().step_by(5) {
        let cam = spec.camera(*pose, spec.train_ring.radius).unwrap();
        let a = render_oracle(&spec, &cam, spec.march_step).unwrap();
        let b = render_oracle(&spec, &cam, 0.5 * spec.march_step).unwrap();
        let err = mean_abs(&a, &b);
        assert!(err <= 1e-3, "halving the step moved pixels by {err}");
    }
}
