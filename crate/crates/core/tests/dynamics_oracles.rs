use nalgebra::{DMatrix, DVector};
use rand::Rng;
use replaylab_core::place::{decode, encode, PlaceCellMap, DEFAULT_CELLS};
use replaylab_core::process::EnvironmentSpec;
use replaylab_core::replay::{adaptation_second_order_residual, printed_second_order_rhs, AdaptationSystem, SecondOrderForm};
use replaylab_core::rng::{normal_matrix, normal_vector, rng_from_seed, uniform};
use replaylab_core::rnn::{rollout, Activation, DynamicsConfig, NetState, RnnParams};
use replaylab_core::score::StationaryGaussian;

/// The bare recurrence `r <- kappa r + phi(W r + xi)`, written without the modifier code path.
fn plain_recurrence(p: &RnnParams, r0: &DVector<f64>, horizon: usize, seed: u64) -> DMatrix<f64> {
    let n = r0.len();
    let mut rng = rng_from_seed(seed);
    let mut out = DMatrix::zeros(horizon, n);
    out.row_mut(0).copy_from(&r0.transpose());
    let mut r = r0.clone();
    for k in 1..horizon {
        let xi = normal_vector(&mut rng, n) * p.sigma_r;
        let mut z = &p.w_rec * &r;
        z += xi;
        let mut f = &r * p.kappa;
        f.zip_apply(&z, |fi, zi| *fi += p.activation.apply(zi));
        r = f;
        out.row_mut(k).copy_from(&r.transpose());
    }
    out
}

#[test]
fn modifiers_off_is_bitwise_the_plain_recurrence() {
    let mut rng = rng_from_seed(41);
    let acts = [Activation::Relu, Activation::LeakyRelu(0.01), Activation::Tanh, Activation::Linear];
    for case in 0..100 {
        let n = rng.random_range(2..=24);
        let p = RnnParams {
            w_rec: normal_matrix(&mut rng, n, n) * (0.45 / (n as f64).sqrt()),
            w_in: normal_matrix(&mut rng, n, 2),
            d_out: normal_matrix(&mut rng, 2, n),
            kappa: uniform(&mut rng, 0.0, 0.5),
            sigma_r: uniform(&mut rng, 0.0, 0.3),
            activation: acts[case % 4],
            leak_enabled: true,
        };
        let r0 = normal_vector(&mut rng, n);
        let seed = 500 + case as u64;
        let cfg = DynamicsConfig::with_modifiers(0.0, 1.0);
        let got = rollout(&p, &NetState::at(r0.clone()), None, 60, &cfg, seed).unwrap().hidden;
        let want = plain_recurrence(&p, &r0, 60, seed);
        for (a, b) in got.iter().zip(want.iter()) {
            assert_eq!(a.to_bits(), b.to_bits(), "case {case}");
        }
    }
}

#[test]
fn linear_unit_integrator_adds_its_input() {
    let p = RnnParams {
        w_rec: DMatrix::zeros(1, 1),
        w_in: DMatrix::identity(1, 1),
        d_out: DMatrix::identity(1, 1),
        kappa: 1.0,
        sigma_r: 0.0,
        activation: Activation::Linear,
        leak_enabled: true,
    };
    let u = DMatrix::from_element(5, 1, 1.0);
    let ro = rollout(&p, &NetState::at(DVector::zeros(1)), Some(&u), 6, &DynamicsConfig::default(), 0).unwrap();
    for k in 0..6 {
        assert_eq!(ro.decoded[(k, 0)], k as f64);
    }
}

fn target_2d() -> StationaryGaussian {
    StationaryGaussian {
        mean: DVector::from_vec(vec![0.5, -0.3]),
        cov: DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.3, 0.6]),
    }
}

#[test]
fn second_order_residual_is_first_order_in_dt() {
    let g = target_2d();
    let res: Vec<f64> = [1e-2, 5e-3, 2.5e-3]
        .iter()
        .map(|&dt| adaptation_second_order_residual(&g, 0.4, 1.0, 2.0, dt, 4.0, 3, SecondOrderForm::Derived).unwrap())
        .collect();
    for w in res.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.5..=2.5).contains(&ratio), "residuals {res:?}");
    }
}

#[test]
fn printed_equation_equals_the_printed_substitution() {
    let mut rng = rng_from_seed(42);
    for _ in 0..50 {
        let target = StationaryGaussian {
            mean: DVector::from_element(1, uniform(&mut rng, -2.0, 2.0)),
            cov: DMatrix::from_element(1, 1, uniform(&mut rng, 0.1, 3.0)),
        };
        let (a, b_a, tau) = (uniform(&mut rng, 0.01, 1.0), uniform(&mut rng, 0.0, 2.0), uniform(&mut rng, 1.0, 200.0));
        let sys = AdaptationSystem::new(&target, a, b_a, tau, SecondOrderForm::AsPrinted).unwrap();
        let r = DVector::from_element(1, uniform(&mut rng, -3.0, 3.0));
        let dr = DVector::from_element(1, uniform(&mut rng, -3.0, 3.0));
        let lhs = printed_second_order_rhs(&target, a, b_a, tau, &r, &dr).unwrap();
        let rhs = sys.rhs(&r, &dr);
        assert!((lhs[0] - rhs[0]).abs() <= 1e-12 * lhs[0].abs().max(1.0), "{} vs {}", lhs[0], rhs[0]);
    }
}

#[test]
fn place_code_round_trips_interior_points() {
    let env = EnvironmentSpec::rat_box();
    let map = PlaceCellMap::random(&env, DEFAULT_CELLS, 43).unwrap();
    let mut rng = rng_from_seed(44);
    let pts = DMatrix::from_fn(1000, 2, |_, _| uniform(&mut rng, -0.9, 0.9));
    let act = encode(&map, &pts).unwrap();
    for t in 0..pts.nrows() {
        let p = decode(&map, &act.row(t).transpose()).unwrap();
        let err = ((p[0] - pts[(t, 0)]).powi(2) + (p[1] - pts[(t, 1)]).powi(2)).sqrt();
        assert!(err < 1e-3, "point {t}: error {err}");
    }
}
