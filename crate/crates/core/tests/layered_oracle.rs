use rcmwalk::lattice::LatticeBox;
use rcmwalk::layered::{
    green_estimate, kernel_estimate, ondiag_estimate, GreenConfig, KernelMode, LayeredModel, Target,
};
use rcmwalk::oracle::{exact_green, exact_prob, Boundary, GeneratorBox};
use rcmwalk::scenery::SceneryField;
use rcmwalk::walk::kernel;

#[test]
fn constant_scenery_ondiag_is_squared_kernel() {
    let m = LayeredModel::new(1, 1, SceneryField::constant(1.0, 1).unwrap()).unwrap();
    let s = ondiag_estimate(&m, &[2.0, 4.0], 20_000, KernelMode::RaoBlackwell, 7).unwrap();
    for r in &s.records {
        let exact = kernel(1, r.t, &[0], 1.0).unwrap().powi(2);
        assert!((r.estimate - exact).abs() <= 4.0 * r.stderr, "t={} {} vs {}", r.t, r.estimate, exact);
    }
}

#[test]
fn every_mode_matches_the_oracle() {
    let m = LayeredModel::new(1, 1, SceneryField::capped(4, 0.7, 1, 10.0).unwrap()).unwrap();
    let g = GeneratorBox::layered(&m, LatticeBox::cube(2, 20), Boundary::Absorbing, false).unwrap();
    let target = Target::new(&[2], &[1]).unwrap();
    let exact = exact_prob(&g, 3.0, &[0, 0], &[2, 1]).unwrap().value;
    for mode in [KernelMode::RaoBlackwell, KernelMode::RaoBlackwellBridge, KernelMode::DirectGillespie] {
        let e = kernel_estimate(&m, 3.0, &target, 40_000, mode, 11).unwrap();
        assert!((e.mean - exact).abs() <= 4.5 * e.stderr, "{mode:?}: {} +- {} vs {exact}", e.mean, e.stderr);
    }
}

#[test]
fn free_walk_green_near_oracle() {
    // constant conductances: Z^3 free walk killed on leaving the box
    let m = LayeredModel::new(1, 2, SceneryField::constant(1.0, 2).unwrap()).unwrap();
    let g = GeneratorBox::layered(&m, LatticeBox::cube(3, 10), Boundary::Absorbing, false).unwrap();
    let exact = exact_green(&g, &[0, 0, 0], &[5, 0, 0]).unwrap().value;
    let cfg = GreenConfig { n_samples: 20_000, seed: 3, box_radius: Some(10), ..GreenConfig::default() };
    let e = green_estimate(&m, 5, &cfg).unwrap();
    assert!((e.value / exact - 1.0).abs() < 0.1, "{} vs {exact}", e.value);
}
