use nalgebra::{DMatrix, DVector, Rotation2};
use proptest::prelude::*;
use replaylab_core::metrics::{gaussian_w2, path_length, reach_time, regions_visited, sliced_wd};
use replaylab_core::process::Trajectory;

fn gaussian(dim: usize) -> impl Strategy<Value = (DVector<f64>, DMatrix<f64>)> {
    (prop::collection::vec(-3.0..3.0f64, dim), prop::collection::vec(-1.0..1.0f64, dim * dim)).prop_map(move |(m, l)| {
        let l = DMatrix::from_vec(dim, dim, l);
        (DVector::from_vec(m), &l * l.transpose() + DMatrix::identity(dim, dim) * 0.05)
    })
}

fn path(len: usize) -> impl Strategy<Value = Trajectory> {
    prop::collection::vec(-2.0..2.0f64, len * 2).prop_map(move |v| Trajectory { dt: 1.0, states: DMatrix::from_row_slice(len, 2, &v), label: None })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gaussian_w2_is_a_metric(a in gaussian(3), b in gaussian(3), c in gaussian(3)) {
        let ab = gaussian_w2(&a.0, &a.1, &b.0, &b.1).unwrap();
        let ba = gaussian_w2(&b.0, &b.1, &a.0, &a.1).unwrap();
        let bc = gaussian_w2(&b.0, &b.1, &c.0, &c.1).unwrap();
        let ac = gaussian_w2(&a.0, &a.1, &c.0, &c.1).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-6 * (1.0 + ab));
        prop_assert!(ac <= ab + bc + 1e-6);
        prop_assert!(gaussian_w2(&a.0, &a.1, &a.0, &a.1).unwrap() < 1e-6);
    }

    #[test]
    fn sliced_wd_is_symmetric(a in path(30), b in path(45), seed in 0u64..1000) {
        let ab = sliced_wd(&a.states, &b.states, 16, seed).unwrap();
        let ba = sliced_wd(&b.states, &a.states, 16, seed).unwrap();
        prop_assert!((ab - ba).abs() < 1e-12);
    }

    #[test]
    fn reach_time_is_rotation_invariant(p in path(40), angle in 0.0..std::f64::consts::TAU, frac in 0.05..0.5f64) {
        let rot = Rotation2::new(angle);
        let r = DMatrix::from_column_slice(2, 2, rot.matrix().transpose().as_slice());
        let rotate = |m: &DMatrix<f64>| m * &r;
        let (start, end) = (DVector::from_vec(vec![0.0, 0.0]), DVector::from_vec(vec![1.0, 0.5]));
        let rp = Trajectory { states: rotate(&p.states), ..p.clone() };
        let (rs, re) = (rot * &start, rot * &end);
        let plain = reach_time(&p, &start, &end, frac).unwrap();
        let turned = reach_time(&rp, &DVector::from_column_slice(rs.as_slice()), &DVector::from_column_slice(re.as_slice()), frac).unwrap();
        // distances within rounding of the tolerance can flip; skip those draws
        let near_edge = (0..p.len()).any(|t| ((p.state(t) - &end).norm() - frac * end.norm()).abs() < 1e-9);
        prop_assume!(!near_edge);
        prop_assert_eq!(plain, turned);
    }

    #[test]
    fn path_length_is_additive(p in path(50), cut in 1usize..49) {
        let head = Trajectory { states: p.states.rows(0, cut + 1).into_owned(), ..p.clone() };
        let tail = Trajectory { states: p.states.rows(cut, p.len() - cut).into_owned(), ..p.clone() };
        prop_assert!((path_length(&p) - path_length(&head) - path_length(&tail)).abs() < 1e-9);
    }

    #[test]
    fn regions_visited_ignores_uniform_scaling(p in path(80), scale in 0.1..10.0f64, dwell in 1usize..6) {
        let ends = vec![DVector::from_vec(vec![0.0, 0.0]), DVector::from_vec(vec![1.0, 0.0]), DVector::from_vec(vec![0.5, 0.8])];
        let scaled = Trajectory { states: &p.states * scale, ..p.clone() };
        let scaled_ends: Vec<DVector<f64>> = ends.iter().map(|e| e * scale).collect();
        prop_assert_eq!(regions_visited(&p, &ends, dwell).unwrap(), regions_visited(&scaled, &scaled_ends, dwell).unwrap());
    }
}
