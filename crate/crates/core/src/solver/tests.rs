use super::*;
use crate::problems::program::{ConeBlock, ConicProgram, VariableLabels};

fn raw_program(
    num_vars: usize,
    objective: Vec<f64>,
    rows: Vec<Vec<(usize, f64)>>,
    rhs: Vec<f64>,
    cones: Vec<ConeBlock>,
) -> ConicProgram {
    ConicProgram {
        num_vars,
        objective,
        rows,
        rhs,
        cones,
        labels: VariableLabels::default(),
        warnings: vec![],
    }
}

#[test]
fn one_variable_lp() {
    // min -x s.t. x + s = 1, s >= 0  ->  x = 1, objective -1.
    let prog = raw_program(
        1,
        vec![-1.0],
        vec![vec![(0, 1.0)]],
        vec![1.0],
        vec![ConeBlock::NonNeg(1)],
    );
    let r = solve(&prog, &SolverSettings::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    assert!((r.primal[0] - 1.0).abs() < 1e-7, "x = {}", r.primal[0]);
    assert!((r.objective + 1.0).abs() < 1e-7);
    assert!(r.residuals.primal <= 1e-8);
    assert!(r.residuals.dual <= 1e-8);
    assert!(r.residuals.gap <= 1e-8);
}

#[test]
fn soc_epigraph_sqrt_two() {
    // min t s.t. (t, 1, 1) in SOC3  ->  t = sqrt(2).
    let prog = raw_program(
        1,
        vec![1.0],
        vec![vec![(0, -1.0)], vec![], vec![]],
        vec![0.0, 1.0, 1.0],
        vec![ConeBlock::Soc(3)],
    );
    let r = solve(&prog, &SolverSettings::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    assert!(
        (r.primal[0] - 2f64.sqrt()).abs() < 1e-7,
        "t = {}",
        r.primal[0]
    );
}

#[test]
fn contradictory_bounds_infeasible() {
    // x >= 2 and x <= -1 simultaneously.
    let prog = raw_program(
        1,
        vec![1.0],
        vec![vec![(0, -1.0)], vec![(0, 1.0)]],
        vec![-2.0, -1.0],
        vec![ConeBlock::NonNeg(2)],
    );
    let r = solve(&prog, &SolverSettings::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Infeasible);
    let cert = r.certificate_residual.unwrap();
    assert!(cert <= 1e-8, "certificate residual {cert}");
    // Farkas: A'z ~ 0 and b'z = -1 after normalization.
    let bz: f64 = prog.rhs.iter().zip(&r.dual).map(|(b, z)| b * z).sum();
    assert!((bz + 1.0).abs() < 1e-6);
}

#[test]
fn unbounded_ray_detected() {
    // min -x s.t. x >= 0.
    let prog = raw_program(
        1,
        vec![-1.0],
        vec![vec![(0, -1.0)]],
        vec![0.0],
        vec![ConeBlock::NonNeg(1)],
    );
    let r = solve(&prog, &SolverSettings::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Unbounded);
    assert!(r.certificate_residual.unwrap() <= 1e-8);
    assert!(r.primal[0] > 0.0);
}

#[test]
fn equality_plus_box() {
    // min x1 + 2 x2 s.t. x1 + x2 = 1 (zero cone), x >= 0.
    let prog = raw_program(
        2,
        vec![1.0, 2.0],
        vec![
            vec![(0, 1.0), (1, 1.0)],
            vec![(0, -1.0)],
            vec![(1, -1.0)],
        ],
        vec![1.0, 0.0, 0.0],
        vec![ConeBlock::Zero(1), ConeBlock::NonNeg(2)],
    );
    let r = solve(&prog, &SolverSettings::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    assert!((r.primal[0] - 1.0).abs() < 1e-7);
    assert!(r.primal[1].abs() < 1e-7);
    assert!((r.objective - 1.0).abs() < 1e-7);
}

#[test]
fn ball_constrained_lp_closed_form() {
    // min c'x s.t. ||x - x0|| <= rho. Optimum: x0 - rho c/||c||.
    let c = [0.6, -0.8, 0.3];
    let x0 = [0.5, -0.2, 1.0];
    let rho = 0.7;
    let cnorm = (c.iter().map(|v| v * v).sum::<f64>()).sqrt();
    // Rows: s0 = rho; s_i = x_i - x0_i.
    let mut rows = vec![vec![]];
    let mut rhs = vec![rho];
    for i in 0..3 {
        rows.push(vec![(i, -1.0)]);
        rhs.push(-x0[i]);
    }
    let prog = raw_program(3, c.to_vec(), rows, rhs, vec![ConeBlock::Soc(4)]);
    let r = solve(&prog, &SolverSettings::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    let expect: Vec<f64> = (0..3).map(|i| x0[i] - rho * c[i] / cnorm).collect();
    for i in 0..3 {
        assert!(
            (r.primal[i] - expect[i]).abs() < 1e-6,
            "x[{i}] = {}, expect {}",
            r.primal[i],
            expect[i]
        );
    }
    let obj_expect = c.iter().zip(&x0).map(|(a, b)| a * b).sum::<f64>() - rho * cnorm;
    assert!((r.objective - obj_expect).abs() < 1e-7);
}

#[test]
fn check_kkt_hand_constructed_pair() {
    // min -x s.t. x + s = 1: optimal (x, z, s) = (1, 1, 0).
    let prog = raw_program(
        1,
        vec![-1.0],
        vec![vec![(0, 1.0)]],
        vec![1.0],
        vec![ConeBlock::NonNeg(1)],
    );
    let hand = SolverResult {
        primal: vec![1.0],
        dual: vec![1.0],
        slack: vec![0.0],
        status: SolveStatus::Optimal,
        residuals: Residuals {
            primal: 0.0,
            dual: 0.0,
            gap: 0.0,
        },
        certificate_residual: None,
        iterations: 0,
        objective: -1.0,
        trace: vec![],
    };
    let res = check_kkt(&prog, &hand);
    assert!(res.primal <= 1e-12 && res.dual <= 1e-12 && res.gap <= 1e-12);

    // Perturb x by 1e-3: primal residual moves linearly.
    let mut perturbed = hand.clone();
    perturbed.primal[0] += 1e-3;
    let res = check_kkt(&prog, &perturbed);
    assert!((res.primal - 1e-3).abs() < 1e-12);

    // Feasible but suboptimal interior point: gap above tolerance.
    let sub = SolverResult {
        primal: vec![0.5],
        dual: vec![1.0],
        slack: vec![0.5],
        status: SolveStatus::Optimal,
        residuals: Residuals {
            primal: 0.0,
            dual: 0.0,
            gap: 0.0,
        },
        certificate_residual: None,
        iterations: 0,
        objective: -0.5,
        trace: vec![],
    };
    let res = check_kkt(&prog, &sub);
    assert!(res.gap > 1e-8);
}

#[test]
fn deterministic_bitwise() {
    let prog = raw_program(
        3,
        vec![0.3, -1.2, 0.05],
        vec![
            vec![(0, 1.0), (1, 1.0), (2, 1.0)],
            vec![(0, -1.0)],
            vec![(1, -1.0)],
            vec![(2, -1.0)],
            vec![(0, 0.7), (1, -0.4)],
        ],
        vec![1.0, 0.0, 0.0, 0.0, 0.3],
        vec![ConeBlock::Zero(1), ConeBlock::NonNeg(4)],
    );
    let a = solve(&prog, &SolverSettings::default()).unwrap();
    let b = solve(&prog, &SolverSettings::default()).unwrap();
    assert_eq!(a.iterations, b.iterations);
    assert_eq!(a.primal, b.primal);
    assert_eq!(a.dual, b.dual);
    assert_eq!(a.slack, b.slack);
    assert_eq!(a.objective.to_bits(), b.objective.to_bits());
}

#[test]
fn weak_duality_along_trace() {
    let mut settings = SolverSettings::default();
    settings.collect_trace = true;
    let prog = raw_program(
        2,
        vec![1.0, 0.5],
        vec![
            vec![(0, 1.0), (1, 1.0)],
            vec![(0, -1.0)],
            vec![(1, -1.0)],
        ],
        vec![1.0, 0.0, 0.0],
        vec![ConeBlock::Zero(1), ConeBlock::NonNeg(2)],
    );
    let r = solve(&prog, &settings).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    assert!(!r.trace.is_empty());
    for t in &r.trace {
        // Weak duality up to the infeasibility cross-terms: from <s,z> >= 0,
        // dobj - pobj <= ||z||_1 pres + ||x||_1 dres at every iterate.
        let slack_bound = t.z_norm1 * t.primal_res + t.x_norm1 * t.dual_res;
        assert!(
            t.primal_obj >= t.dual_obj - slack_bound - 1e-9,
            "iter {}: pobj {} dobj {} cross-bound {}",
            t.iter,
            t.primal_obj,
            t.dual_obj,
            slack_bound
        );
    }
    // At the optimal exit the residuals are within tolerance, so plain weak
    // duality must hold there.
    let last = r.trace.last().unwrap();
    assert!(last.primal_obj >= last.dual_obj - 1e-6);
}

#[test]
fn slack_stays_in_cone() {
    let prog = raw_program(
        2,
        vec![-0.5, -1.0],
        vec![
            vec![(0, 1.0), (1, 2.0)],
            vec![(0, -1.0)],
            vec![(1, -1.0)],
            vec![(0, 1.0), (1, 1.0)],
        ],
        vec![2.0, 0.0, 0.0, 1.5],
        vec![ConeBlock::NonNeg(4)],
    );
    let r = solve(&prog, &SolverSettings::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    assert!(cone_violation(&prog, &r.slack) <= 1e-10);
}

#[test]
fn empty_rows_presolved() {
    // A consistent empty equality row and a redundant empty nonneg row are
    // dropped; an inconsistent one is an immediate certificate.
    let prog = raw_program(
        1,
        vec![-1.0],
        vec![vec![], vec![(0, 1.0)], vec![]],
        vec![0.0, 1.0, 2.0],
        vec![ConeBlock::Zero(1), ConeBlock::NonNeg(2)],
    );
    let r = solve(&prog, &SolverSettings::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Optimal);
    assert!((r.primal[0] - 1.0).abs() < 1e-7);
    assert_eq!(r.slack[2], 2.0);

    let bad = raw_program(
        1,
        vec![1.0],
        vec![vec![], vec![(0, 1.0)]],
        vec![3.0, 1.0],
        vec![ConeBlock::Zero(1), ConeBlock::NonNeg(1)],
    );
    let r = solve(&bad, &SolverSettings::default()).unwrap();
    assert_eq!(r.status, SolveStatus::Infeasible);
}

#[test]
fn subgradient_reference_on_soc_instances() {
    // Random ball-constrained LPs: the interior-point optimum must match a
    // projected-subgradient reference within 1e-4.
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..20 {
        let n = rng.gen_range(2..=4usize);
        let c: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x0: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let rho = rng.gen_range(0.2..1.5);
        let mut rows = vec![vec![]];
        let mut rhs = vec![rho];
        for i in 0..n {
            rows.push(vec![(i, -1.0)]);
            rhs.push(-x0[i]);
        }
        let prog = raw_program(n, c.clone(), rows, rhs, vec![ConeBlock::Soc(n + 1)]);
        let r = solve(&prog, &SolverSettings::default()).unwrap();
        assert_eq!(r.status, SolveStatus::Optimal);

        // Projected subgradient on min c'x over the ball.
        let mut xk = x0.clone();
        let mut best = f64::INFINITY;
        for k in 1..=20_000usize {
            let step = rho / (k as f64).sqrt() * 0.5;
            for i in 0..n {
                xk[i] -= step * c[i];
            }
            let dist: f64 = xk
                .iter()
                .zip(&x0)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            if dist > rho {
                for i in 0..n {
                    xk[i] = x0[i] + (xk[i] - x0[i]) * rho / dist;
                }
            }
            let obj: f64 = c.iter().zip(&xk).map(|(a, b)| a * b).sum();
            best = best.min(obj);
        }
        assert!(
            (r.objective - best).abs() < 1e-4,
            "ipm {} subgradient {}",
            r.objective,
            best
        );
    }
}
