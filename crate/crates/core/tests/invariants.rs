use std::sync::Arc;

use polyboltz::collision_op::collision_frequency;
use polyboltz::diagnostics::{entropy, moments};
use polyboltz::family::Scenario;
use polyboltz::kernel::{d_alpha, AngularKernel};
use polyboltz::kinematics::{
    inverse_params, jacobian_bl, total_energy, transform, BlParams, CollisionState,
};
use polyboltz::phase_space::{bracket, lp_norm, DistributionField, GridValues, Lp, ModelParams, PhaseGrid};
use polyboltz::rng::CounterRng;
use polyboltz::Vec3;
use proptest::prelude::*;

fn vec3(range: f64) -> impl Strategy<Value = Vec3> {
    prop::array::uniform3(-range..range).prop_map(Vec3::from)
}

fn unit_vector() -> impl Strategy<Value = Vec3> {
    (-1.0f64..1.0, 0.0..std::f64::consts::TAU).prop_map(|(z, phi)| {
        let s = (1.0 - z * z).sqrt();
        Vec3::new(s * phi.cos(), s * phi.sin(), z)
    })
}

fn collision() -> impl Strategy<Value = (CollisionState, BlParams, f64)> {
    (
        vec3(4.0),
        0.0..5.0f64,
        vec3(4.0),
        0.0..5.0f64,
        unit_vector(),
        0.0..1.0f64,
        0.0..1.0f64,
        0.2..5.0f64,
    )
        .prop_map(|(v, i, vs, is, sigma, r, big_r, m)| {
            (
                CollisionState::new(v, i, vs, is).unwrap(),
                BlParams::new(sigma, r, big_r).unwrap(),
                m,
            )
        })
}

fn lab_energy(s: &CollisionState, m: f64) -> f64 {
    0.5 * m * (s.v.norm_squared() + s.v_star.norm_squared()) + s.i + s.i_star
}

fn small_field(seed: u64) -> DistributionField {
    let grid = Arc::new(PhaseGrid::new(3.0, 5, 4.0, 5).unwrap());
    let n = grid.len();
    let values = (0..n as u64)
        .map(|k| CounterRng::new(seed, 0, k, 0).uniform())
        .collect();
    DistributionField::new(grid, values).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn transform_conserves_momentum_and_energy((s, p, m) in collision()) {
        let post = transform(&s, &p, m);
        let scale = lab_energy(&s, m).max(1e-12);
        let dp = ((post.v + post.v_star) - (s.v + s.v_star)).norm();
        prop_assert!(dp <= 1e-12 * (scale / m).sqrt().max(1.0));
        prop_assert!((lab_energy(&post, m) - lab_energy(&s, m)).abs() <= 1e-12 * scale);
        prop_assert!(post.i >= 0.0 && post.i_star >= 0.0);
    }

    #[test]
    fn total_energy_is_frame_invariant((s, p, m) in collision()) {
        let post = transform(&s, &p, m);
        let e = total_energy(&s, m);
        prop_assert!((total_energy(&post, m) - e).abs() <= 1e-12 * e.max(1e-12));
    }

    #[test]
    fn inverse_parameters_undo_the_transform((s, p, m) in collision()) {
        let post = transform(&s, &p, m);
        prop_assume!(post.relative_velocity().norm() > 1e-6);
        prop_assume!(s.relative_velocity().norm() > 1e-6);
        let back = inverse_params(&s, &post, m).unwrap();
        let again = transform(&post, &back, m);
        let e = total_energy(&s, m);
        let vs = (e / m).sqrt();
        prop_assert!((again.v - s.v).norm() <= 1e-9 * vs);
        prop_assert!((again.v_star - s.v_star).norm() <= 1e-9 * vs);
        prop_assert!((again.i - s.i).abs() <= 1e-9 * e);
        prop_assert!((again.i_star - s.i_star).abs() <= 1e-9 * e);
    }

    #[test]
    fn bracket_is_at_least_one(v in vec3(10.0), i in 0.0..100.0f64, m in 0.1..10.0f64) {
        let b = bracket(&v, i, m).unwrap();
        prop_assert!(b >= 1.0);
        prop_assert!((b * b - (1.0 + 0.5 * v.norm_squared() + i / m)).abs() <= 1e-12 * b * b);
    }

    #[test]
    fn jacobian_and_density_are_bounded(r in 0.0..1.0f64, big_r in 0.0..1.0f64, alpha in 0.0..3.0f64) {
        let j = jacobian_bl(r, big_r);
        prop_assert!((0.0..=0.125).contains(&j));
        let d = d_alpha(r, big_r, alpha);
        prop_assert!(d >= 0.0 && d.is_finite());
    }

    #[test]
    fn entropy_of_a_multiple(seed in 0u64..1000, c in 0.1..10.0f64) {
        let params = ModelParams::new(1.0, 0.5, 1.0).unwrap();
        let f = small_field(seed);
        let cf = f.scaled(c).unwrap();
        let mass = moments(&f, 1.0).mass;
        let expected = c * entropy(&f, &params) + c * c.ln() * mass;
        prop_assert!((entropy(&cf, &params) - expected).abs() <= 1e-10 * (1.0 + expected.abs()));
    }

    #[test]
    fn norms_are_homogeneous(seed in 0u64..1000, c in 0.1..10.0f64, k in 0.0..4.0f64) {
        let f = small_field(seed);
        let cf = f.scaled(c).unwrap();
        for p in [Lp::One, Lp::Two] {
            let a = lp_norm(&f, p, k, 1.0);
            prop_assert!((lp_norm(&cf, p, k, 1.0) - c * a).abs() <= 1e-12 * c * a);
        }
    }

    #[test]
    fn collision_frequency_is_linear_and_positive(seed in 0u64..1000, c in 0.1..10.0f64, gamma in 0.0..2.0f64) {
        let params = ModelParams::new(1.0, 0.5, gamma).unwrap();
        let b = AngularKernel::unit();
        let f = small_field(seed);
        let nu = collision_frequency(&f, &params, &b).unwrap();
        let nu_c = collision_frequency(&f.scaled(c).unwrap(), &params, &b).unwrap();
        for (a, b) in nu.values().iter().zip(nu_c.values()) {
            prop_assert!(*a > 0.0);
            prop_assert!((b - c * a).abs() <= 1e-12 * c * a);
        }
    }

    #[test]
    fn rng_draws_lie_in_unit_interval(seed: u64, stream in 0u64..8, node: u64, sample: u64) {
        let mut a = CounterRng::new(seed, stream, node, sample);
        let mut b = CounterRng::new(seed, stream, node, sample);
        for _ in 0..8 {
            let x = a.uniform();
            prop_assert!((0.0..1.0).contains(&x));
            prop_assert_eq!(x, b.uniform());
        }
    }
}

#[test]
fn scenarios_are_nonnegative_with_unit_mass() {
    let params = ModelParams::new(1.0, 0.5, 1.0).unwrap();
    let grid = Arc::new(PhaseGrid::new(5.0, 8, 12.0, 8).unwrap());
    for sc in Scenario::ALL {
        let f = sc.field(grid.clone(), &params).unwrap();
        assert!(f.values().iter().all(|x| *x >= 0.0), "{}", sc.name());
        assert!((moments(&f, 1.0).mass - 1.0).abs() < 1e-12, "{}", sc.name());
    }
}
