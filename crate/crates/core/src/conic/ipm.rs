//! Homogeneous self-dual interior-point iteration.
//!
//! Iterates on `(x, s, z, tau, kappa)` with residuals
//!
//! ```text
//! r_x   = Aᵀz + c tau
//! r_z   = A x + s - b tau
//! r_tau = cᵀx + bᵀz + kappa
//! ```
//!
//! Each Newton system is reduced to `[[0, Aᵀ], [A, -W²]]` (with `W` the
//! Nesterov–Todd scaling, zero on equality rows), which is solved twice per
//! direction through a normal-equation factorization bordered by the equality
//! rows, followed by iterative refinement against the unreduced system.

use nalgebra::{DMatrix, DVector};

use super::cone::{self, Cone, Scaling};
use super::equilibrate::Equilibration;
use super::sparse::CsrMatrix;
use super::{residuals, ConeProgram, ConeSolution, SolveStatus, SolverSettings};
use crate::error::Result;

const STEP_FRACTION: f64 = 0.99;
/// Iterations without a new best residual before giving up.
const PATIENCE: usize = 30;
const STATIC_REG: f64 = 1e-13;
const REFINE_STEPS: usize = 6;

struct Best {
    worst: f64,
    iter: usize,
    res: (f64, f64, f64),
    x: Vec<f64>,
    s: Vec<f64>,
    z: Vec<f64>,
    tau: f64,
}

struct Work<'a> {
    orig: &'a ConeProgram,
    a: CsrMatrix,
    b: Vec<f64>,
    c: Vec<f64>,
    blocks: Vec<(Cone, usize)>,
    eq: Equilibration,
    /// Row indices belonging to zero cones.
    eq_rows: Vec<usize>,
    degree: usize,
}

enum Factor {
    Chol(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    Lu(nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>),
}

struct Kkt<'w> {
    work: &'w Work<'w>,
    scalings: Vec<Scaling>,
    factor: Factor,
}

pub(super) fn solve(p: &ConeProgram, settings: &SolverSettings) -> Result<ConeSolution> {
    let (m, n) = (p.num_rows(), p.num_vars());
    if m == 0 {
        return Ok(solve_unconstrained(p));
    }
    let blocks = p.blocks();
    let mut a = p.a.clone();
    let eq = if settings.equilibrate {
        Equilibration::ruiz(&mut a, &blocks)
    } else {
        Equilibration::identity(m, n)
    };
    let b: Vec<f64> = p.b.iter().zip(&eq.d).map(|(b, d)| b * d).collect();
    let c: Vec<f64> = p.c.iter().zip(&eq.e).map(|(c, e)| c * e).collect();
    let eq_rows = blocks
        .iter()
        .filter(|(k, _)| matches!(k, Cone::Zero(_)))
        .flat_map(|&(k, off)| off..off + k.len())
        .collect();
    let degree = blocks.iter().map(|(k, _)| k.degree()).sum();
    let work = Work {
        orig: p,
        a,
        b,
        c,
        blocks,
        eq,
        eq_rows,
        degree,
    };
    Ok(work.run(settings))
}

fn solve_unconstrained(p: &ConeProgram) -> ConeSolution {
    let x = vec![0.0; p.num_vars()];
    let bounded = p.c.iter().all(|&c| c == 0.0);
    ConeSolution {
        x,
        z: Vec::new(),
        s: Vec::new(),
        status: if bounded {
            SolveStatus::Optimal
        } else {
            SolveStatus::InfeasibleDetected
        },
        primal_res: 0.0,
        dual_res: if bounded { 0.0 } else { cone::norm(&p.c) / (1.0 + cone::norm(&p.c)) },
        gap: 0.0,
        iterations: 0,
    }
}

fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

impl<'a> Work<'a> {
    fn m(&self) -> usize {
        self.b.len()
    }

    fn n(&self) -> usize {
        self.c.len()
    }

    fn run(&self, settings: &SolverSettings) -> ConeSolution {
        let m = self.m();
        let (mut x, mut s, mut z) = self.initial_point();
        let (mut tau, mut kappa) = (1.0, 1.0);

        let mut status = SolveStatus::MaxIters;
        let mut iterations = 0;
        let mut last = (f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut stalled = 0;
        // best iterate so far by worst residual, returned if the run stops short
        let mut best: Option<Best> = None;

        for iter in 0..=settings.max_iters {
            iterations = iter;
            let (xo, _, zo) = self.unscale(&x, &s, &z, tau);
            let res = residuals(self.orig, &xo, &zo).expect("dimensions fixed by construction");
            last = res;
            if res.0 <= settings.tol && res.1 <= settings.tol && res.2 <= settings.tol {
                status = SolveStatus::Optimal;
                break;
            }
            if self.infeasibility_certificate(&x, &s, &z, settings.infeas_tol) {
                status = SolveStatus::InfeasibleDetected;
                break;
            }
            let worst = res.0.max(res.1).max(res.2);
            if best.as_ref().is_none_or(|b| worst < b.worst) {
                best = Some(Best {
                    worst,
                    iter,
                    res,
                    x: x.clone(),
                    s: s.clone(),
                    z: z.clone(),
                    tau,
                });
            }
            let since_best = best.as_ref().map_or(0, |b| iter - b.iter);
            if iter == settings.max_iters || stalled >= 3 || since_best >= PATIENCE {
                break;
            }

            // residuals of the embedding
            let mut rx = self.a.tr_mul_vec(&z);
            axpy(tau, &self.c, &mut rx);
            let mut rz = self.a.mul_vec(&x);
            axpy(1.0, &s, &mut rz);
            axpy(-tau, &self.b, &mut rz);
            let rtau = cone::dot(&self.c, &x) + cone::dot(&self.b, &z) + kappa;

            let mu = (self.cone_dot(&s, &z) + tau * kappa) / (self.degree as f64 + 1.0);

            let scalings: Vec<Scaling> = self
                .blocks
                .iter()
                .map(|&(k, off)| Scaling::compute(k, &s[off..off + k.len()], &z[off..off + k.len()]))
                .collect();
            let kkt = match Kkt::new(self, scalings) {
                Some(k) => k,
                None => break,
            };
            let mut lambda = vec![0.0; m];
            kkt.apply_w(&z, &mut lambda);

            // constant direction for tau
            let neg_c: Vec<f64> = self.c.iter().map(|v| -v).collect();
            let (x2, z2) = kkt.solve(&neg_c, &self.b);
            let tau_denom = cone::dot(&self.c, &x2) + cone::dot(&self.b, &z2) - kappa / tau;

            // affine direction
            let mut ds = vec![0.0; m];
            self.jordan(&lambda, &lambda, &mut ds);
            let dk = tau * kappa;
            let aff = self.direction(&kkt, &lambda, &rx, &rz, rtau, 1.0, &ds, dk, &x2, &z2, tau_denom, tau, kappa);
            let alpha_aff = self.step_length(&s, &aff.ds, &z, &aff.dz, tau, aff.dtau, kappa, aff.dkappa);
            let sigma = (1.0 - alpha_aff.min(1.0)).powi(3);

            // combined direction with second-order correction
            let mut ws = vec![0.0; m];
            let mut wz = vec![0.0; m];
            kkt.apply_winv(&aff.ds, &mut ws);
            kkt.apply_w(&aff.dz, &mut wz);
            let mut corr = vec![0.0; m];
            self.jordan(&ws, &wz, &mut corr);
            axpy(1.0, &corr, &mut ds);
            for &(k, off) in &self.blocks {
                cone::add_identity(k, &mut ds[off..off + k.len()], -sigma * mu);
            }
            let dk = tau * kappa + aff.dtau * aff.dkappa - sigma * mu;
            let dir = self.direction(&kkt, &lambda, &rx, &rz, rtau, 1.0 - sigma, &ds, dk, &x2, &z2, tau_denom, tau, kappa);
            let alpha_max = self.step_length(&s, &dir.ds, &z, &dir.dz, tau, dir.dtau, kappa, dir.dkappa);
            let alpha = (STEP_FRACTION * alpha_max).min(1.0);
            if !alpha.is_finite() || alpha < 1e-10 {
                stalled += 1;
                if !alpha.is_finite() {
                    break;
                }
            } else {
                stalled = 0;
            }

            axpy(alpha, &dir.dx, &mut x);
            axpy(alpha, &dir.ds, &mut s);
            axpy(alpha, &dir.dz, &mut z);
            tau += alpha * dir.dtau;
            kappa += alpha * dir.dkappa;
            // zero-cone slacks are identically zero
            for &i in &self.eq_rows {
                s[i] = 0.0;
            }
            if !(tau > 0.0 && kappa > 0.0) {
                break;
            }
        }

        if status == SolveStatus::MaxIters {
            if let Some(b) = best.filter(|b| b.worst < last.0.max(last.1).max(last.2)) {
                (x, s, z, tau, last) = (b.x, b.s, b.z, b.tau, b.res);
            }
        }
        let (xo, so, zo) = self.unscale(&x, &s, &z, tau);
        if status == SolveStatus::InfeasibleDetected {
            // report the raw certificate direction rather than x / tau
            let (xc, sc, zc) = self.unscale(&x, &s, &z, 1.0);
            return ConeSolution {
                x: xc,
                z: zc,
                s: sc,
                status,
                primal_res: last.0,
                dual_res: last.1,
                gap: last.2,
                iterations,
            };
        }
        ConeSolution {
            x: xo,
            z: zo,
            s: so,
            status,
            primal_res: last.0,
            dual_res: last.1,
            gap: last.2,
            iterations,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn direction(
        &self,
        kkt: &Kkt,
        lambda: &[f64],
        rx: &[f64],
        rz: &[f64],
        rtau: f64,
        scale: f64,
        ds: &[f64],
        dk: f64,
        x2: &[f64],
        z2: &[f64],
        tau_denom: f64,
        tau: f64,
        kappa: f64,
    ) -> Direction {
        let m = self.m();
        // lambda \ ds, then W (lambda \ ds)
        let mut lds = vec![0.0; m];
        self.jordan_solve(lambda, ds, &mut lds);
        let mut wlds = vec![0.0; m];
        kkt.apply_w(&lds, &mut wlds);

        let r1: Vec<f64> = rx.iter().map(|v| -scale * v).collect();
        let r2: Vec<f64> = rz.iter().zip(&wlds).map(|(r, w)| -scale * r + w).collect();
        let (x1, z1) = kkt.solve(&r1, &r2);

        let dtau = (dk / tau - scale * rtau - cone::dot(&self.c, &x1) - cone::dot(&self.b, &z1)) / tau_denom;
        let mut dx = x1;
        axpy(dtau, x2, &mut dx);
        let mut dz = z1;
        axpy(dtau, z2, &mut dz);

        // ds = -W (lambda \ ds + W dz)
        let mut wdz = vec![0.0; m];
        kkt.apply_w(&dz, &mut wdz);
        axpy(1.0, &lds, &mut wdz);
        let mut dsv = vec![0.0; m];
        kkt.apply_w(&wdz, &mut dsv);
        dsv.iter_mut().for_each(|v| *v = -*v);
        for &i in &self.eq_rows {
            dsv[i] = 0.0;
        }
        let dkappa = -(dk + kappa * dtau) / tau;
        Direction {
            dx,
            ds: dsv,
            dz,
            dtau,
            dkappa,
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn step_length(&self, s: &[f64], ds: &[f64], z: &[f64], dz: &[f64], tau: f64, dtau: f64, kappa: f64, dkappa: f64) -> f64 {
        let mut alpha = f64::INFINITY;
        for &(k, off) in &self.blocks {
            let r = off..off + k.len();
            alpha = alpha.min(cone::max_step(k, &s[r.clone()], &ds[r.clone()]));
            alpha = alpha.min(cone::max_step(k, &z[r.clone()], &dz[r]));
        }
        if dtau < 0.0 {
            alpha = alpha.min(-tau / dtau);
        }
        if dkappa < 0.0 {
            alpha = alpha.min(-kappa / dkappa);
        }
        alpha
    }

    fn cone_dot(&self, s: &[f64], z: &[f64]) -> f64 {
        self.blocks
            .iter()
            .filter(|(k, _)| !matches!(k, Cone::Zero(_)))
            .map(|&(k, off)| cone::dot(&s[off..off + k.len()], &z[off..off + k.len()]))
            .sum()
    }

    fn jordan(&self, u: &[f64], v: &[f64], out: &mut [f64]) {
        for &(k, off) in &self.blocks {
            let r = off..off + k.len();
            cone::jordan_product(k, &u[r.clone()], &v[r.clone()], &mut out[r]);
        }
    }

    fn jordan_solve(&self, lambda: &[f64], v: &[f64], out: &mut [f64]) {
        for &(k, off) in &self.blocks {
            let r = off..off + k.len();
            cone::jordan_solve(k, &lambda[r.clone()], &v[r.clone()], &mut out[r]);
        }
    }

    fn initial_point(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let m = self.m();
        let identity: Vec<Scaling> = self
            .blocks
            .iter()
            .map(|&(k, _)| match k {
                Cone::Zero(_) => Scaling::Zero,
                _ => Scaling::Nonneg { w: vec![1.0; k.len()] },
            })
            .collect();
        let kkt = Kkt::new(self, identity).expect("identity-scaled system is nonsingular after regularization");

        // x = argmin ||A x - b|| over inequality rows, s = b - A x
        let zero_n = vec![0.0; self.n()];
        let (x, zs) = kkt.solve(&zero_n, &self.b);
        let mut s: Vec<f64> = zs.iter().map(|v| -v).collect();
        // z = least-norm solution of Aᵀz = -c
        let neg_c: Vec<f64> = self.c.iter().map(|v| -v).collect();
        let (_, mut z) = kkt.solve(&neg_c, &vec![0.0; m]);

        for &(k, off) in &self.blocks {
            let r = off..off + k.len();
            if let Cone::Zero(_) = k {
                s[r].iter_mut().for_each(|a| *a = 0.0);
                continue;
            }
            for v in [&mut s, &mut z] {
                let margin = cone::interior_margin(k, &v[r.clone()]);
                if margin >= 0.0 {
                    cone::add_identity(k, &mut v[r.clone()], 1.0 + margin);
                }
            }
        }
        for &i in &self.eq_rows {
            s[i] = 0.0;
        }
        (x, s, z)
    }

    fn unscale(&self, x: &[f64], s: &[f64], z: &[f64], tau: f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let xo = x.iter().zip(&self.eq.e).map(|(v, e)| v * e / tau).collect();
        let so = s.iter().zip(&self.eq.d).map(|(v, d)| v / d / tau).collect();
        let zo = z.iter().zip(&self.eq.d).map(|(v, d)| v * d / tau).collect();
        (xo, so, zo)
    }

    /// Checks the current iterate for a normalized certificate of primal or
    /// dual infeasibility (in the original scaling).
    fn infeasibility_certificate(&self, x: &[f64], s: &[f64], z: &[f64], tol: f64) -> bool {
        let (xo, so, zo) = self.unscale(x, s, z, 1.0);
        let p = self.orig;
        let btz = cone::dot(&p.b, &zo);
        if btz < 0.0 {
            let atz = p.a.tr_mul_vec(&zo);
            if cone::norm(&atz) <= tol * (-btz) {
                return true;
            }
        }
        let ctx = cone::dot(&p.c, &xo);
        if ctx < 0.0 {
            let mut axs = p.a.mul_vec(&xo);
            axpy(1.0, &so, &mut axs);
            if cone::norm(&axs) <= tol * (-ctx) {
                return true;
            }
        }
        false
    }
}

struct Direction {
    dx: Vec<f64>,
    ds: Vec<f64>,
    dz: Vec<f64>,
    dtau: f64,
    dkappa: f64,
}

impl<'w> Kkt<'w> {
    fn new(work: &'w Work<'w>, scalings: Vec<Scaling>) -> Option<Self> {
        let n = work.n();
        let p = work.eq_rows.len();
        let mut normal = DMatrix::<f64>::zeros(n, n);
        for (&(k, off), w) in work.blocks.iter().zip(&scalings) {
            match (k, w) {
                (Cone::Zero(_), _) => {}
                (Cone::Nonneg(len), Scaling::Nonneg { w }) => {
                    for i in 0..len {
                        let weight = 1.0 / (w[i] * w[i]);
                        let (cols, vals) = work.a.row(off + i);
                        for (&j1, &v1) in cols.iter().zip(vals) {
                            for (&j2, &v2) in cols.iter().zip(vals) {
                                normal[(j1, j2)] += weight * v1 * v2;
                            }
                        }
                    }
                }
                (Cone::Soc(len), scaling) => {
                    // local dense block over the column support
                    let mut support: Vec<usize> = (off..off + len).flat_map(|i| work.a.row(i).0.iter().copied()).collect();
                    support.sort_unstable();
                    support.dedup();
                    if support.is_empty() {
                        continue;
                    }
                    let mut local = DMatrix::<f64>::zeros(len, support.len());
                    for i in 0..len {
                        let (cols, vals) = work.a.row(off + i);
                        for (&j, &v) in cols.iter().zip(vals) {
                            let lj = support.binary_search(&j).unwrap();
                            local[(i, lj)] = v;
                        }
                    }
                    let mut scaled = DMatrix::<f64>::zeros(len, support.len());
                    let mut col_out = vec![0.0; len];
                    for lj in 0..support.len() {
                        let col: Vec<f64> = local.column(lj).iter().copied().collect();
                        scaling.apply_inv(&col, &mut col_out);
                        scaled.column_mut(lj).copy_from_slice(&col_out);
                    }
                    let gram = scaled.tr_mul(&scaled);
                    for (l1, &j1) in support.iter().enumerate() {
                        for (l2, &j2) in support.iter().enumerate() {
                            normal[(j1, j2)] += gram[(l1, l2)];
                        }
                    }
                }
                _ => unreachable!("scaling kind matches cone kind"),
            }
        }
        for j in 0..n {
            normal[(j, j)] += STATIC_REG;
        }
        let factor = if p == 0 {
            match normal.clone().cholesky() {
                Some(ch) => Factor::Chol(ch),
                None => Factor::Lu(normal.lu()),
            }
        } else {
            let mut bordered = DMatrix::<f64>::zeros(n + p, n + p);
            bordered.view_mut((0, 0), (n, n)).copy_from(&normal);
            for (r, &i) in work.eq_rows.iter().enumerate() {
                let (cols, vals) = work.a.row(i);
                for (&j, &v) in cols.iter().zip(vals) {
                    bordered[(n + r, j)] = v;
                    bordered[(j, n + r)] = v;
                }
                bordered[(n + r, n + r)] = -STATIC_REG;
            }
            Factor::Lu(bordered.lu())
        };
        if let Factor::Lu(lu) = &factor {
            if !lu.is_invertible() {
                return None;
            }
        }
        Some(Self { work, scalings, factor })
    }

    fn apply_w(&self, v: &[f64], out: &mut [f64]) {
        for (&(k, off), w) in self.work.blocks.iter().zip(&self.scalings) {
            let r = off..off + k.len();
            w.apply(&v[r.clone()], &mut out[r]);
        }
    }

    fn apply_winv(&self, v: &[f64], out: &mut [f64]) {
        for (&(k, off), w) in self.work.blocks.iter().zip(&self.scalings) {
            let r = off..off + k.len();
            w.apply_inv(&v[r.clone()], &mut out[r]);
        }
    }

    /// `H⁻¹ v` on inequality rows (`H = W²`), zero on equality rows.
    fn apply_hinv(&self, v: &[f64]) -> Vec<f64> {
        let m = v.len();
        let mut t = vec![0.0; m];
        let mut out = vec![0.0; m];
        self.apply_winv(v, &mut t);
        self.apply_winv(&t, &mut out);
        out
    }

    fn apply_h(&self, v: &[f64]) -> Vec<f64> {
        let m = v.len();
        let mut t = vec![0.0; m];
        let mut out = vec![0.0; m];
        self.apply_w(v, &mut t);
        self.apply_w(&t, &mut out);
        out
    }

    /// Solves `[[0, Aᵀ], [A, -H]] [u; v] = [r1; r2]`.
    fn solve(&self, r1: &[f64], r2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (mut u, mut v) = self.solve_reduced(r1, r2);
        let mut best = self.kkt_residual(r1, r2, &u, &v);
        let mut err = norm2(&best.0) + norm2(&best.1);
        for _ in 0..REFINE_STEPS {
            if err <= 1e-14 * (1.0 + norm2(r1) + norm2(r2)) {
                break;
            }
            let (du, dv) = self.solve_reduced(&best.0, &best.1);
            let mut u2 = u.clone();
            let mut v2 = v.clone();
            axpy(1.0, &du, &mut u2);
            axpy(1.0, &dv, &mut v2);
            let res = self.kkt_residual(r1, r2, &u2, &v2);
            let err2 = norm2(&res.0) + norm2(&res.1);
            if err2 >= err {
                break;
            }
            u = u2;
            v = v2;
            best = res;
            err = err2;
        }
        (u, v)
    }

    fn kkt_residual(&self, r1: &[f64], r2: &[f64], u: &[f64], v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let atv = self.work.a.tr_mul_vec(v);
        let e1 = r1.iter().zip(&atv).map(|(r, a)| r - a).collect();
        let au = self.work.a.mul_vec(u);
        let hv = self.apply_h(v);
        let e2 = r2
            .iter()
            .zip(au.iter().zip(&hv))
            .map(|(r, (a, h))| r - (a - h))
            .collect();
        (e1, e2)
    }

    fn solve_reduced(&self, r1: &[f64], r2: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.work.n();
        let p = self.work.eq_rows.len();
        let hinv_r2 = self.apply_hinv(r2);
        let mut rhs = DVector::<f64>::zeros(n + p);
        let at = self.work.a.tr_mul_vec(&hinv_r2);
        for j in 0..n {
            rhs[j] = r1[j] + at[j];
        }
        for (r, &i) in self.work.eq_rows.iter().enumerate() {
            rhs[n + r] = r2[i];
        }
        let sol = match &self.factor {
            Factor::Chol(ch) => ch.solve(&rhs),
            Factor::Lu(lu) => lu.solve(&rhs).unwrap_or_else(|| DVector::zeros(n + p)),
        };
        let u: Vec<f64> = sol.rows(0, n).iter().copied().collect();
        let au = self.work.a.mul_vec(&u);
        let diff: Vec<f64> = au.iter().zip(r2).map(|(a, r)| a - r).collect();
        let mut v = self.apply_hinv(&diff);
        for (r, &i) in self.work.eq_rows.iter().enumerate() {
            v[i] = sol[n + r];
        }
        (u, v)
    }
}

fn norm2(v: &[f64]) -> f64 {
    cone::norm(v)
}
