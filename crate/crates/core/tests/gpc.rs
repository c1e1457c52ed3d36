use compctrl::classic::solve_dare;
use compctrl::competitive::compute_alpha_star;
use compctrl::dac::competitive_to_dac;
use compctrl::gpc::{best_dac_in_hindsight, dac_cost, surrogate_gradient, surrogate_loss, DacClass, Gpc, GpcConfig};
use compctrl::lds::{rollout, LtiSystem};
use compctrl::linalg::{mat, Mat, Vector};
use compctrl::noise::{generate, NoiseKind, NoiseSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, s: f64) -> Mat {
    Mat::from_fn(r, c, |_, _| rng.random_range(-s..s))
}

fn random_vec(rng: &mut ChaCha8Rng, m: usize) -> Vector {
    Vector::from_fn(m, |_, _| rng.random_range(-1.0..1.0))
}

#[test]
fn zero_weights_loss_is_lqr_ideal_state() {
    // With M = 0 the ideal loop is y_{k+1} = (A + BK) y_k + b_{H−k−1}, so
    // y_H = Σ_{k<H} (A + BK)^{H−1−k} b_{H−k−1} = Σ_j (A + BK)^j b_j.
    let sys = LtiSystem::double_integrator();
    let k = solve_dare(&sys).unwrap().k;
    let phi = sys.a() + sys.b() * &k;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for h in 1..=4 {
        let window: Vec<Vector> = (0..2 * h).map(|_| random_vec(&mut rng, 2)).collect();
        let mut y = Vector::zeros(2);
        let mut power = Mat::identity(2, 2);
        for b in window.iter().take(h) {
            y += &power * b;
            power = &power * &phi;
        }
        let v = &k * &y;
        let expect = y.dot(&(sys.q() * &y)) + v.dot(&(sys.r() * &v));
        let got = surrogate_loss(&sys, &k, &vec![Mat::zeros(1, 2); h], &window);
        assert!((got - expect).abs() < 1e-12 * (1.0 + expect), "H = {h}");
    }
}

#[test]
fn surrogate_is_convex() {
    let sys = LtiSystem::double_integrator();
    let k = solve_dare(&sys).unwrap().k;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..50 {
        let window: Vec<Vector> = (0..6).map(|_| random_vec(&mut rng, 2)).collect();
        let m1: Vec<Mat> = (0..3).map(|_| random_mat(&mut rng, 1, 2, 2.0)).collect();
        let m2: Vec<Mat> = (0..3).map(|_| random_mat(&mut rng, 1, 2, 2.0)).collect();
        let mid: Vec<Mat> = m1.iter().zip(&m2).map(|(a, b)| (a + b) * 0.5).collect();
        let lhs = surrogate_loss(&sys, &k, &mid, &window);
        let rhs = 0.5 * surrogate_loss(&sys, &k, &m1, &window) + 0.5 * surrogate_loss(&sys, &k, &m2, &window);
        assert!(lhs <= rhs + 1e-10);
    }
}

#[test]
fn gradient_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..100 {
        let (m, n) = (rng.random_range(1..=3), rng.random_range(1..=2));
        let h = rng.random_range(1..=4);
        let a = random_mat(&mut rng, m, m, 0.6);
        let b = random_mat(&mut rng, m, n, 1.0);
        let sys = LtiSystem::new(a, b, Mat::identity(m, m), Mat::identity(n, n), 1.0).unwrap();
        let k = random_mat(&mut rng, n, m, 0.3);
        let weights: Vec<Mat> = (0..h).map(|_| random_mat(&mut rng, n, m, 1.0)).collect();
        let window: Vec<Vector> = (0..2 * h).map(|_| random_vec(&mut rng, m)).collect();
        let (_, grad) = surrogate_gradient(&sys, &k, &weights, &window);
        let step = 1e-6;
        let mut fd = Vec::new();
        for i in 0..h {
            let mut g = Mat::zeros(n, m);
            for r in 0..n {
                for c in 0..m {
                    let mut plus = weights.clone();
                    plus[i][(r, c)] += step;
                    let mut minus = weights.clone();
                    minus[i][(r, c)] -= step;
                    g[(r, c)] = (surrogate_loss(&sys, &k, &plus, &window) - surrogate_loss(&sys, &k, &minus, &window))
                        / (2.0 * step);
                }
            }
            fd.push(g);
        }
        let diff: f64 = grad.iter().zip(&fd).map(|(a, b)| (a - b).norm_squared()).sum::<f64>().sqrt();
        let size: f64 = fd.iter().map(|g| g.norm_squared()).sum::<f64>().sqrt();
        assert!(diff <= 1e-5 * size.max(1e-3), "case {case}: {diff} vs {size}");
    }
}

#[test]
fn hindsight_beats_random_feasible_policies() {
    let sys = LtiSystem::double_integrator();
    let class = DacClass::new(solve_dare(&sys).unwrap().k, 3, 0.3, 0.4).unwrap();
    let ws = generate(&NoiseSpec::new(NoiseKind::Uniform).with_seed(3), 200, 2).unwrap();
    let best = best_dac_in_hindsight(&sys, &ws, &class).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for _ in 0..100 {
        let raw: Vec<Mat> = (0..3).map(|_| random_mat(&mut rng, 1, 2, 1.0)).collect();
        let policy = class.policy(class.project(&raw)).unwrap();
        assert!(best.cost <= dac_cost(&sys, &policy, &ws) + 1e-9 * best.cost);
    }
}

#[test]
fn hindsight_dominates_competitive_image() {
    let sys = LtiSystem::double_integrator();
    let comp = compute_alpha_star(&sys, 1e-4).unwrap();
    let image = competitive_to_dac(&sys, &comp, 6).unwrap();
    let class = DacClass::new(image.k_stab.clone(), 6, image.theta, image.gamma_prime).unwrap();
    let ws = generate(&NoiseSpec::new(NoiseKind::Sin), 300, 2).unwrap();
    let best = best_dac_in_hindsight(&sys, &ws, &class).unwrap();
    assert!(best.cost <= dac_cost(&sys, &image, &ws) * (1.0 + 1e-9));
}

#[test]
fn gpc_beats_lqr_on_sin_noise() {
    let sys = LtiSystem::double_integrator();
    let ws = generate(&NoiseSpec::new(NoiseKind::Sin), 1000, 2).unwrap();
    let class = DacClass::around_lqr(&sys, 3).unwrap();
    let mut gpc = Gpc::new(&sys, GpcConfig::new(class.clone(), 0.002).unwrap()).unwrap();
    let learned = rollout(&sys, &mut gpc, &ws).unwrap().total_cost;
    let lqr = dac_cost(&sys, &class.policy(class.zeros()).unwrap(), &ws);
    assert!(learned < lqr, "{learned} vs {lqr}");
}

#[test]
fn average_regret_decreases_on_sin_noise() {
    let sys = LtiSystem::double_integrator();
    let class = DacClass::around_lqr(&sys, 3).unwrap();
    let avg = |horizon: usize| {
        let ws = generate(&NoiseSpec::new(NoiseKind::Sin), horizon, 2).unwrap();
        let mut gpc = Gpc::new(&sys, GpcConfig::new(class.clone(), 0.002).unwrap()).unwrap();
        let j = rollout(&sys, &mut gpc, &ws).unwrap().total_cost;
        (j - best_dac_in_hindsight(&sys, &ws, &class).unwrap().cost) / horizon as f64
    };
    let (short, long) = (avg(500), avg(2000));
    assert!(long < short, "R/T: {short} at 500, {long} at 2000");
}

#[test]
fn projected_weights_scale_with_theta() {
    let class = DacClass::new(mat(&[&[0.0, 0.0]]), 2, 2.0, 0.5).unwrap();
    let p = class.project(&[mat(&[&[6.0, 8.0]]), mat(&[&[0.0, 3.0]])]);
    assert!((p[0].norm() - 2.0).abs() < 1e-12);
    assert!((p[1].norm() - 1.0).abs() < 1e-12);
}
