use proptest::prelude::*;

use compctrl::dac::DacPolicy;
use compctrl::gpc::DacClass;
use compctrl::lds::{certify_closed_loop, rollout, LtiSystem, OpenLoop};
use compctrl::linalg::{power, spectral_norm, Mat, Vector};
use compctrl::noise::{read_csv, write_csv};

fn matrix(rows: usize, cols: usize, scale: f64) -> impl Strategy<Value = Mat> {
    prop::collection::vec(-scale..scale, rows * cols).prop_map(move |v| Mat::from_row_slice(rows, cols, &v))
}

fn vectors(len: usize, dim: usize) -> impl Strategy<Value = Vec<Vector>> {
    prop::collection::vec(prop::collection::vec(-2.0f64..2.0, dim).prop_map(Vector::from_vec), len)
}

fn plant() -> impl Strategy<Value = (Mat, Mat)> {
    (1usize..=3, 1usize..=2).prop_flat_map(|(m, n)| (matrix(m, m, 1.0), matrix(m, n, 1.0)))
}

fn policy() -> impl Strategy<Value = DacPolicy> {
    (1usize..=3, 1usize..=2, 1usize..=5, 0.1f64..5.0, 0.05f64..0.95).prop_flat_map(|(m, n, h, theta, gp)| {
        (matrix(n, m, 2.0), prop::collection::vec(matrix(n, m, 1.0), h)).prop_map(move |(k, raw)| {
            let weights = raw
                .into_iter()
                .enumerate()
                .map(|(i, w)| {
                    let norm = spectral_norm(&w);
                    let r = theta * (1.0 - gp).powi(i as i32);
                    if norm > r {
                        w * (r / norm)
                    } else {
                        w
                    }
                })
                .collect();
            DacPolicy::new(k, weights, theta, gp).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn rollout_resimulates((a, b) in plant(), horizon in 1usize..20, seed_controls in matrix(20, 2, 3.0)) {
        let (m, n) = (a.nrows(), b.ncols());
        let sys = LtiSystem::new(a, b, Mat::identity(m, m), Mat::identity(n, n), 1.0).unwrap();
        let controls: Vec<Vector> = (0..horizon)
            .map(|t| Vector::from_fn(n, |j, _| seed_controls[(t, j)]))
            .collect();
        let ws: Vec<Vector> = (0..horizon).map(|t| Vector::from_element(m, (t as f64).sin())).collect();
        let traj = rollout(&sys, &mut OpenLoop::new(controls), &ws).unwrap();
        let again = traj.resimulate(&sys);
        for (x, y) in traj.states.iter().zip(&again) {
            prop_assert!((x - y).norm() <= 1e-12 * (1.0 + x.norm()));
        }
        let cum = traj.cumulative_costs();
        prop_assert!(cum.windows(2).all(|p| p[1] >= p[0]));
        prop_assert!((cum[horizon - 1] - traj.total_cost).abs() <= 1e-12 * (1.0 + traj.total_cost));
    }

    #[test]
    fn certificates_bound_closed_loop_powers((a, b) in plant(), k_raw in matrix(2, 3, 1.0)) {
        let k = k_raw.view((0, 0), (b.ncols(), a.nrows())).into_owned();
        if let Ok(cert) = certify_closed_loop(&a, &b, &k) {
            let closed = &a + &b * &k;
            prop_assert!(cert.kappa >= 1.0 && cert.gamma > 0.0 && cert.gamma <= 0.5);
            for t in 0..60 {
                let lhs = spectral_norm(&power(&closed, t));
                prop_assert!(lhs <= cert.power_bound(t) * (1.0 + 1e-9) + 1e-12, "t={} {} > {}", t, lhs, cert.power_bound(t));
            }
        }
    }

    #[test]
    fn projections_are_idempotent_and_feasible(p in policy(), blow in 1.0f64..10.0) {
        let class = DacClass::new(p.k_stab.clone(), p.horizon(), p.theta, p.gamma_prime).unwrap();
        let inflated: Vec<Mat> = p.weights.iter().map(|w| w * blow).collect();
        for project in [DacClass::project, DacClass::project_exact] {
            let once = project(&class, &inflated);
            let twice = project(&class, &once);
            prop_assert!(class.contains(&once));
            for (x, y) in once.iter().zip(&twice) {
                prop_assert!((x - y).norm() <= 1e-12 * (1.0 + x.norm()));
            }
        }
        let exact = class.project_exact(&inflated);
        let scaled = class.project(&inflated);
        let dist = |ws: &[Mat]| ws.iter().zip(&inflated).map(|(a, b)| (a - b).norm_squared()).sum::<f64>();
        prop_assert!(dist(&exact) <= dist(&scaled) + 1e-9);
    }

    #[test]
    fn policy_text_round_trip(p in policy()) {
        let back = DacPolicy::from_text(&p.to_text()).unwrap();
        prop_assert_eq!(back.theta, p.theta);
        prop_assert_eq!(back.gamma_prime, p.gamma_prime);
        prop_assert_eq!(&back.k_stab, &p.k_stab);
        prop_assert_eq!(&back.weights, &p.weights);
    }

    #[test]
    fn noise_csv_round_trip(ws in (1usize..=4).prop_flat_map(|m| vectors(12, m))) {
        let mut buf = Vec::new();
        write_csv(&mut buf, &ws).unwrap();
        prop_assert_eq!(read_csv(buf.as_slice()).unwrap(), ws);
    }
}
