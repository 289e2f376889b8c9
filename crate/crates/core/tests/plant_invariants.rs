use nalgebra::DMatrix;
use pdtune::plant::{wrap_angle, Workspace};
use pdtune::{ArmModel, CartesianPoint, ElbowBranch, JointState};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

fn random_state(rng: &mut ChaCha8Rng, n: usize) -> JointState {
    JointState::new(
        (0..n).map(|_| rng.random_range(-PI..PI)).collect(),
        (0..n).map(|_| rng.random_range(-3.0..3.0)).collect(),
    )
}

/// Central-difference dM/dt along the joint velocity.
fn mass_matrix_rate(model: &ArmModel, s: &JointState, h: f64) -> DMatrix<f64> {
    let plus: Vec<f64> = s.q.iter().zip(&s.qd).map(|(q, v)| q + h * v).collect();
    let minus: Vec<f64> = s.q.iter().zip(&s.qd).map(|(q, v)| q - h * v).collect();
    (model.mass_matrix(&plus).unwrap() - model.mass_matrix(&minus).unwrap()) / (2.0 * h)
}

fn three_link() -> ArmModel {
    ArmModel::new(
        vec![0.6, 0.5, 0.3],
        vec![1.5, 1.0, 0.5],
        vec![0.1; 3],
        vec![50.0; 3],
        9.81,
        CartesianPoint::new(0.0, 0.0),
    )
    .unwrap()
}

#[test]
fn mass_matrix_is_symmetric_positive_definite() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for model in [ArmModel::default(), three_link()] {
        for _ in 0..1000 {
            let s = random_state(&mut rng, model.n_links());
            let m = model.mass_matrix(&s.q).unwrap();
            assert_eq!(m, m.transpose());
            let min_eig = m.symmetric_eigenvalues().min();
            assert!(min_eig > 0.0, "q = {:?}, min eigenvalue {min_eig}", s.q);
        }
    }
}

#[test]
fn mass_rate_minus_twice_coriolis_is_skew() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // The three-link mass matrix is a longer sum, so its finite-difference
    // rounding floor at h = 1e-6 sits near 1e-9 rather than below it.
    for (model, tol) in [(ArmModel::default(), 1e-9), (three_link(), 2e-9)] {
        let mut worst: f64 = 0.0;
        for _ in 0..1000 {
            let s = random_state(&mut rng, model.n_links());
            let n = mass_matrix_rate(&model, &s, 1e-6) - 2.0 * model.coriolis_matrix(&s.q, &s.qd).unwrap();
            worst = worst.max((&n + n.transpose()).norm());
        }
        assert!(worst < tol, "worst symmetric part {worst:e}");
    }
}

#[test]
fn inverse_then_forward_kinematics_is_identity() {
    let model = ArmModel::default();
    let (lo, hi) = model.reach();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..1000 {
        let r = rng.random_range(lo * 1.001..hi * 0.999);
        let a = rng.random_range(-PI..PI);
        let p = CartesianPoint::new(r * a.cos(), r * a.sin());
        for branch in [ElbowBranch::ElbowDown, ElbowBranch::ElbowUp] {
            let q = model.inverse_kinematics(p, branch).unwrap();
            assert!(q.iter().all(|v| *v > -PI && *v <= PI));
            match branch {
                ElbowBranch::ElbowDown => assert!(q[1] >= 0.0),
                ElbowBranch::ElbowUp => assert!(q[1] <= 0.0),
            }
            let back = model.forward_kinematics(&q).unwrap();
            assert!(back.distance(&p) < 1e-9, "{p:?} -> {q:?} -> {back:?}");
        }
    }
}

#[test]
fn forward_then_inverse_kinematics_recovers_joint_angles() {
    let model = ArmModel::default();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..1000 {
        let q = vec![rng.random_range(-PI..PI), rng.random_range(0.05..PI - 0.05)];
        let p = model.forward_kinematics(&q).unwrap();
        let back = model.inverse_kinematics(p, ElbowBranch::ElbowDown).unwrap();
        for (a, b) in q.iter().zip(&back) {
            assert!(wrap_angle(a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn inverse_dynamics_inverts_forward_dynamics() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for model in [ArmModel::default(), three_link()] {
        for _ in 0..200 {
            let s = random_state(&mut rng, model.n_links());
            let u: Vec<f64> = (0..model.n_links()).map(|_| rng.random_range(-50.0..50.0)).collect();
            let qdd = model.forward_dynamics(&s, &u).unwrap();
            let back = model.inverse_dynamics(&s.q, &s.qd, &qdd).unwrap();
            for (a, b) in u.iter().zip(&back) {
                assert!((a - b).abs() < 1e-9, "{u:?} vs {back:?}");
            }
        }
    }
}

#[test]
fn gravity_compensation_holds_any_pose() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for model in [ArmModel::default(), three_link()] {
        for _ in 0..200 {
            let q: Vec<f64> = (0..model.n_links()).map(|_| rng.random_range(-PI..PI)).collect();
            let g: Vec<f64> = model.gravity_torque(&q).unwrap().iter().copied().collect();
            let qdd = model.forward_dynamics(&JointState::at_rest(q), &g).unwrap();
            assert!(qdd.iter().all(|a| a.abs() < 1e-9), "{qdd:?}");
        }
    }
}

#[test]
fn unforced_damped_motion_loses_kinetic_energy() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for mut model in [ArmModel::default(), three_link()] {
        model.gravity = 0.0;
        model.viscous_damping = vec![0.5; model.n_links()];
        let n = model.n_links();
        let mut ws = Workspace::new(n);
        let mut s = random_state(&mut rng, n);
        let mut ke = model.kinetic_energy(&s).unwrap();
        for _ in 0..2000 {
            s = model.step_with(&s, &vec![0.0; n], 0.002, &mut ws).unwrap();
            let next = model.kinetic_energy(&s).unwrap();
            assert!(next <= ke * (1.0 + 1e-12), "{next} > {ke}");
            ke = next;
        }
    }
}

#[test]
fn undamped_chain_conserves_energy() {
    let mut model = three_link();
    model.viscous_damping = vec![0.0; 3];
    let mut ws = Workspace::new(3);
    let mut s = JointState::new(vec![0.4, -0.3, 0.8], vec![0.0; 3]);
    let total = |m: &ArmModel, s: &JointState| m.kinetic_energy(s).unwrap() + m.potential_energy(&s.q).unwrap();
    let e0 = total(&model, &s);
    // Scale: energy above the hanging rest pose.
    let bottom = model.potential_energy(&[-PI / 2.0, 0.0, 0.0]).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..2500 {
        s = model.step_with(&s, &[0.0; 3], 0.002, &mut ws).unwrap();
        worst = worst.max((total(&model, &s) - e0).abs());
    }
    assert!(worst / (e0 - bottom) < 1e-3, "relative drift {}", worst / (e0 - bottom));
}

#[test]
fn step_with_matches_step() {
    let model = ArmModel::default();
    let mut ws = Workspace::new(2);
    let s = JointState::new(vec![0.2, 0.9], vec![-0.4, 1.1]);
    assert_eq!(model.step(&s, &[3.0, -1.0], 0.002).unwrap(), model.step_with(&s, &[3.0, -1.0], 0.002, &mut ws).unwrap());
}
