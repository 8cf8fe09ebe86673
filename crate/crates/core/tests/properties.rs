use proptest::prelude::*;

use rcmwalk::lattice::{LatticeBox, Point};
use rcmwalk::parallel::{reduce_walkers, with_threads};
use rcmwalk::rng::{stream_rng, tags};
use rcmwalk::scenery::SceneryField;
use rcmwalk::stats::{fit_exponent, EstimateRecord, EstimateSeries, FitOptions, RunningStats};
use rcmwalk::walk::{kernel, killed_kernel_1d, simulate_path};

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernel_is_symmetric_and_sub_stochastic(t in 0.01f64..50.0, x in -40i64..40, y in -40i64..40, rate in 0.1f64..5.0) {
        let p = kernel(2, t, &[x, y], rate).unwrap();
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert_eq!(p, kernel(2, t, &[-x, y], rate).unwrap());
        prop_assert_eq!(p, kernel(2, t, &[y, x], rate).unwrap());
    }

    #[test]
    fn kernel_sums_to_one(t in 0.01f64..20.0) {
        let r = 20 + (8.0 * t) as i64;
        let total: f64 = (-r..=r).map(|x| kernel(1, t, &[x], 1.0).unwrap()).sum();
        prop_assert!((total - 1.0).abs() < 1e-10, "{}", total);
    }

    #[test]
    fn killing_only_removes_mass(a in 0.01f64..30.0, r in 1i64..15, x in -15i64..15) {
        prop_assume!(x.abs() <= r);
        let killed = killed_kernel_1d(a, x, r);
        let free = kernel(1, a, &[x], 1.0).unwrap();
        prop_assert!(killed >= -1e-15);
        prop_assert!(killed <= free + 1e-12, "{} > {}", killed, free);
    }

    #[test]
    fn scenery_is_a_pure_function(seed in any::<u64>(), alpha in 0.2f64..4.0, x in -1000i64..1000, y in -1000i64..1000) {
        let f = SceneryField::pareto(seed, alpha, 2).unwrap();
        let g = SceneryField::pareto(seed, alpha, 2).unwrap();
        let z = f.z(&[x, y]);
        prop_assert!(z >= 1.0 && z.is_finite());
        prop_assert_eq!(z.to_bits(), g.z(&[x, y]).to_bits());
        let capped = SceneryField::capped(seed, alpha, 2, 10.0).unwrap();
        prop_assert_eq!(capped.z(&[x, y]), z.min(10.0));
    }

    #[test]
    fn box_index_is_a_bijection(lo in -5i64..0, hi in 0i64..5, k in 0u64..1000) {
        let b = LatticeBox::new(vec![lo, lo, lo], vec![hi, hi, hi]).unwrap();
        let k = k % b.len();
        let p = b.point_at(k);
        prop_assert!(b.contains(&p));
        prop_assert_eq!(b.index_of(&p), Some(k as usize));
    }

    #[test]
    fn concat_then_split(a in prop::collection::vec(-100i64..100, 1..3), b in prop::collection::vec(-100i64..100, 1..3)) {
        let pa = Point::from_slice(&a).unwrap();
        let pb = Point::from_slice(&b).unwrap();
        let (x, y) = Point::concat(&pa, &pb).unwrap().split(a.len());
        prop_assert_eq!(x, pa);
        prop_assert_eq!(y, pb);
    }

    #[test]
    fn paths_are_nearest_neighbour(seed in any::<u64>(), t in 0.1f64..30.0) {
        let mut rng = stream_rng(seed, &[tags::CHECK]);
        let path = simulate_path(Point::origin(2), t, &mut rng).unwrap();
        let mut prev: Option<Point> = None;
        let mut covered = 0.0;
        for (site, from, to) in path.segments() {
            prop_assert!(to >= from);
            covered += to - from;
            if let Some(p) = &prev {
                let step: i64 = p.coords().iter().zip(site.coords()).map(|(a, b)| (a - b).abs()).sum();
                prop_assert_eq!(step, 1);
            }
            prev = Some(*site);
        }
        prop_assert!((covered - t).abs() < 1e-9 * t.max(1.0));
    }

    #[test]
    fn running_stats_merge_is_concatenation(xs in prop::collection::vec(-1e3f64..1e3, 1..60), split in 0usize..60) {
        let split = split.min(xs.len());
        let mut whole = RunningStats::new();
        xs.iter().for_each(|&x| whole.push(x));
        let mut a = RunningStats::new();
        let mut b = RunningStats::new();
        xs[..split].iter().for_each(|&x| a.push(x));
        xs[split..].iter().for_each(|&x| b.push(x));
        a.merge(&b);
        prop_assert_eq!(a.n, whole.n);
        prop_assert!((a.mean - whole.mean).abs() <= 1e-9 * (1.0 + whole.mean.abs()));
        prop_assert!((a.variance() - whole.variance()).abs() <= 1e-6 * (1.0 + whole.variance()));
    }

    #[test]
    fn exact_power_laws_are_recovered(slope in -3.0f64..1.0, c in 0.01f64..10.0) {
        let mut s = EstimateSeries::new(1, "exact");
        for k in 1..8 {
            let t = (1u64 << k) as f64;
            let r = EstimateRecord { t, estimate: c * t.powf(slope), stderr: 0.0, n: 100, hits: 100, seed: 1, mode: None, target: None };
            s.push(r);
        }
        let f = fit_exponent(&s, &FitOptions::default()).unwrap();
        prop_assert!((f.slope - slope).abs() < 1e-9);
    }
}

#[test]
fn reduction_is_bitwise_thread_invariant() {
    let run = || {
        reduce_walkers(
            5_000,
            RunningStats::new,
            |s, w| {
                let mut rng = stream_rng(9, &[tags::CHECK, w]);
                let path = simulate_path(Point::origin(1), 3.0, &mut rng).unwrap();
                s.push(path.jumps() as f64);
            },
            |a, b| a.merge(&b),
        )
    };
    let a = with_threads(1, run);
    let b = with_threads(4, run);
    assert_eq!(a.mean.to_bits(), b.mean.to_bits());
    assert_eq!(a.variance().to_bits(), b.variance().to_bits());
    // Poisson(2 d t) jumps
    assert!((a.mean - 6.0).abs() < 5.0 * a.stderr());
}
