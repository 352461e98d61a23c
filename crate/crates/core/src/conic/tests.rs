use super::*;

fn program(c: Vec<f64>, rows: usize, triplets: &[(usize, usize, f64)], b: Vec<f64>, cones: Vec<Cone>) -> ConeProgram {
    let a = CsrMatrix::from_triplets(rows, c.len(), triplets);
    ConeProgram::new(c, a, b, cones).unwrap()
}

#[test]
fn norm_epigraph() {
    // minimize t  s.t. ||(1,1)|| <= t ; s = (t, 1, 1) = b - A x with x = t
    let p = program(vec![1.0], 3, &[(0, 0, -1.0)], vec![0.0, 1.0, 1.0], vec![Cone::Soc(3)]);
    let sol = solve(&p, 1e-9, 100).unwrap();
    assert!(sol.is_optimal(), "{sol:?}");
    assert!((sol.x[0] - 2f64.sqrt()).abs() < 1e-7, "{}", sol.x[0]);
}

#[test]
fn lp_corner() {
    // minimize x s.t. x - 3 >= 0  ->  s = -3 - (-x)
    let p = program(vec![1.0], 1, &[(0, 0, -1.0)], vec![-3.0], vec![Cone::Nonneg(1)]);
    let sol = solve(&p, 1e-9, 100).unwrap();
    assert!(sol.is_optimal());
    assert!((sol.x[0] - 3.0).abs() < 1e-7);
    assert!((sol.z[0] - 1.0).abs() < 1e-6);
}

#[test]
fn equality_rows_are_respected() {
    // minimize x0 + 2 x1 s.t. x0 + x1 = 1, x >= 0
    let p = program(
        vec![1.0, 2.0],
        3,
        &[(0, 0, 1.0), (0, 1, 1.0), (1, 0, -1.0), (2, 1, -1.0)],
        vec![1.0, 0.0, 0.0],
        vec![Cone::Zero(1), Cone::Nonneg(2)],
    );
    let sol = solve(&p, 1e-9, 100).unwrap();
    assert!(sol.is_optimal(), "{sol:?}");
    assert!((sol.x[0] - 1.0).abs() < 1e-7 && sol.x[1].abs() < 1e-7);
    assert_eq!(sol.s[0], 0.0);
}

#[test]
fn infeasible_lp_is_detected() {
    // x >= 1 and x <= 0
    let p = program(vec![1.0], 2, &[(0, 0, -1.0), (1, 0, 1.0)], vec![-1.0, 0.0], vec![Cone::Nonneg(2)]);
    let sol = solve(&p, 1e-8, 100).unwrap();
    assert_eq!(sol.status, SolveStatus::InfeasibleDetected);
}

#[test]
fn unbounded_lp_is_detected() {
    // minimize -x s.t. x >= 0
    let p = program(vec![-1.0], 1, &[(0, 0, -1.0)], vec![0.0], vec![Cone::Nonneg(1)]);
    let sol = solve(&p, 1e-8, 100).unwrap();
    assert_eq!(sol.status, SolveStatus::InfeasibleDetected);
}

#[test]
fn zero_problem_has_zero_residuals() {
    let p = ConeProgram::new(vec![], CsrMatrix::zeros(0, 0), vec![], vec![]).unwrap();
    assert_eq!(residuals(&p, &[], &[]).unwrap(), (0.0, 0.0, 0.0));
    let sol = solve(&p, 1e-7, 10).unwrap();
    assert!(sol.is_optimal());
}

#[test]
fn residuals_reject_bad_dimensions() {
    let p = program(vec![1.0], 1, &[(0, 0, -1.0)], vec![-3.0], vec![Cone::Nonneg(1)]);
    assert!(matches!(residuals(&p, &[1.0, 2.0], &[0.0]), Err(Error::Dimension(_))));
}

#[test]
fn perturbation_raises_primal_residual_proportionally() {
    // minimize x0 + x1 s.t. x >= 1 (both active at the optimum)
    let p = program(vec![1.0, 1.0], 2, &[(0, 0, -1.0), (1, 1, -1.0)], vec![-1.0, -1.0], vec![Cone::Nonneg(2)]);
    let sol = solve(&p, 1e-10, 100).unwrap();
    let (p0, _, _) = residuals(&p, &sol.x, &sol.z).unwrap();
    let moved = [sol.x[0] - 1e-2, sol.x[1]];
    let (p1, _, _) = residuals(&p, &moved, &sol.z).unwrap();
    // ||b|| = sqrt(2): a 1e-2 violation gives 1e-2 / (1 + sqrt 2)
    assert!(p0 < 1e-9);
    assert!((p1 - 1e-2 / (1.0 + 2f64.sqrt())).abs() < 1e-8, "{p1}");
}

#[test]
fn cone_lengths_must_match_rows() {
    let a = CsrMatrix::from_triplets(2, 1, &[(0, 0, 1.0)]);
    let err = ConeProgram::new(vec![1.0], a, vec![0.0, 0.0], vec![Cone::Nonneg(1)]).unwrap_err();
    assert!(matches!(err, Error::Dimension(_)));
}

#[test]
fn solve_is_deterministic() {
    let p = program(
        vec![1.0, -0.5],
        4,
        &[(0, 0, -1.0), (1, 1, 1.0), (2, 0, 0.3), (3, 1, -2.0)],
        vec![0.0, 1.0, 2.0, 0.5],
        vec![Cone::Soc(3), Cone::Nonneg(1)],
    );
    let s1 = solve(&p, 1e-9, 100).unwrap();
    let s2 = solve(&p, 1e-9, 100).unwrap();
    assert_eq!(s1, s2);
}
