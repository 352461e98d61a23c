//! Cone blocks: projections, step lengths, Nesterov–Todd scalings and the
//! Jordan-algebra products used by the interior-point iteration.

use serde::{Deserialize, Serialize};

/// One block of rows in a [`super::ConeProgram`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "len", rename_all = "lowercase")]
pub enum Cone {
    /// `s = 0` (equality rows).
    Zero(usize),
    /// `s >= 0` elementwise.
    Nonneg(usize),
    /// `s_0 >= ||s_1..||`. A length-1 block is plain nonnegativity.
    Soc(usize),
}

impl Cone {
    pub fn len(&self) -> usize {
        match *self {
            Cone::Zero(n) | Cone::Nonneg(n) | Cone::Soc(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Barrier degree.
    pub(crate) fn degree(&self) -> usize {
        match *self {
            Cone::Zero(_) => 0,
            Cone::Nonneg(n) => n,
            Cone::Soc(n) => usize::from(n > 0),
        }
    }
}

/// Euclidean projection of `(x, t)` onto `{(x, t) : ||x|| <= t}`.
pub fn project_soc(x: &[f64], t: f64) -> (Vec<f64>, f64) {
    let nx = norm(x);
    if nx <= t {
        (x.to_vec(), t)
    } else if nx <= -t {
        (vec![0.0; x.len()], 0.0)
    } else {
        let scale = 0.5 * (t + nx);
        (x.iter().map(|v| scale * v / nx).collect(), scale)
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

pub(crate) fn dot(u: &[f64], v: &[f64]) -> f64 {
    u.iter().zip(v).map(|(a, b)| a * b).sum()
}

/// Projects `v` onto the cone in place.
pub(crate) fn project_onto(cone: Cone, v: &mut [f64]) {
    match cone {
        Cone::Zero(_) => v.iter_mut().for_each(|a| *a = 0.0),
        Cone::Nonneg(_) => v.iter_mut().for_each(|a| *a = a.max(0.0)),
        Cone::Soc(_) => {
            let (x, t) = project_soc(&v[1..], v[0]);
            v[0] = t;
            v[1..].copy_from_slice(&x);
        }
    }
}

/// Projects `v` onto the dual cone in place. Nonnegative and second-order
/// cones are self-dual; the dual of the zero cone is the whole space.
pub(crate) fn project_onto_dual(cone: Cone, v: &mut [f64]) {
    match cone {
        Cone::Zero(_) => {}
        _ => project_onto(cone, v),
    }
}

/// Amount by which `v` must be shifted along the cone identity to become
/// interior; negative when `v` is already interior.
pub(crate) fn interior_margin(cone: Cone, v: &[f64]) -> f64 {
    match cone {
        Cone::Zero(_) => f64::NEG_INFINITY,
        Cone::Nonneg(_) => v.iter().map(|a| -a).fold(f64::NEG_INFINITY, f64::max),
        Cone::Soc(_) => norm(&v[1..]) - v[0],
    }
}

pub(crate) fn add_identity(cone: Cone, v: &mut [f64], alpha: f64) {
    match cone {
        Cone::Zero(_) => {}
        Cone::Nonneg(_) => v.iter_mut().for_each(|a| *a += alpha),
        Cone::Soc(_) => v[0] += alpha,
    }
}

/// Largest `alpha >= 0` keeping `v + alpha * dv` in the cone (may be infinite).
pub(crate) fn max_step(cone: Cone, v: &[f64], dv: &[f64]) -> f64 {
    match cone {
        Cone::Zero(_) => f64::INFINITY,
        Cone::Nonneg(_) => v
            .iter()
            .zip(dv)
            .filter(|(_, &d)| d < 0.0)
            .map(|(&a, &d)| -a / d)
            .fold(f64::INFINITY, f64::min),
        Cone::Soc(_) => {
            // q(alpha) = (v0 + alpha d0)^2 - ||v1 + alpha d1||^2 = qa alpha^2 + qb alpha + qc
            let qa = dv[0] * dv[0] - dot(&dv[1..], &dv[1..]);
            let qb = 2.0 * (v[0] * dv[0] - dot(&v[1..], &dv[1..]));
            let qc = (v[0] * v[0] - dot(&v[1..], &v[1..])).max(0.0);
            let disc = qb * qb - 4.0 * qa * qc;
            if disc < 0.0 {
                return f64::INFINITY;
            }
            let denom = -qb + disc.sqrt();
            if denom > 0.0 {
                2.0 * qc / denom
            } else {
                f64::INFINITY
            }
        }
    }
}

/// Jordan product `u ∘ v`.
pub(crate) fn jordan_product(cone: Cone, u: &[f64], v: &[f64], out: &mut [f64]) {
    match cone {
        Cone::Zero(_) => out.iter_mut().for_each(|a| *a = 0.0),
        Cone::Nonneg(_) => {
            for i in 0..u.len() {
                out[i] = u[i] * v[i];
            }
        }
        Cone::Soc(_) => {
            out[0] = dot(u, v);
            for i in 1..u.len() {
                out[i] = u[0] * v[i] + v[0] * u[i];
            }
        }
    }
}

/// Solves `lambda ∘ x = v` for `x`.
pub(crate) fn jordan_solve(cone: Cone, lambda: &[f64], v: &[f64], out: &mut [f64]) {
    match cone {
        Cone::Zero(_) => out.iter_mut().for_each(|a| *a = 0.0),
        Cone::Nonneg(_) => {
            for i in 0..v.len() {
                out[i] = v[i] / lambda[i];
            }
        }
        Cone::Soc(_) => {
            let l0 = lambda[0];
            let det = l0 * l0 - dot(&lambda[1..], &lambda[1..]);
            let x0 = (l0 * v[0] - dot(&lambda[1..], &v[1..])) / det;
            out[0] = x0;
            for i in 1..v.len() {
                out[i] = (v[i] - x0 * lambda[i]) / l0;
            }
        }
    }
}

/// Symmetric Nesterov–Todd scaling `W` of one block, satisfying
/// `W z = W⁻¹ s = lambda`.
#[derive(Debug, Clone)]
pub(crate) enum Scaling {
    Zero,
    /// `W = diag(w)`.
    Nonneg { w: Vec<f64> },
    /// `W = eta (-J + u uᵀ)`, `W⁻¹ = (-J + (J u)(J u)ᵀ) / eta`.
    Soc { eta: f64, u: Vec<f64> },
}

impl Scaling {
    pub(crate) fn compute(cone: Cone, s: &[f64], z: &[f64]) -> Scaling {
        match cone {
            Cone::Zero(_) => Scaling::Zero,
            Cone::Nonneg(_) => Scaling::Nonneg {
                w: s.iter().zip(z).map(|(a, b)| (a / b).sqrt()).collect(),
            },
            Cone::Soc(n) => {
                let sjs = (s[0] * s[0] - dot(&s[1..], &s[1..])).max(f64::MIN_POSITIVE);
                let zjz = (z[0] * z[0] - dot(&z[1..], &z[1..])).max(f64::MIN_POSITIVE);
                let (sn, zn) = (sjs.sqrt(), zjz.sqrt());
                let sbar: Vec<f64> = s.iter().map(|a| a / sn).collect();
                let zbar: Vec<f64> = z.iter().map(|a| a / zn).collect();
                let gamma = (0.5 * (1.0 + dot(&sbar, &zbar))).sqrt();
                let mut wbar = vec![0.0; n];
                wbar[0] = (sbar[0] + zbar[0]) / (2.0 * gamma);
                for i in 1..n {
                    wbar[i] = (sbar[i] - zbar[i]) / (2.0 * gamma);
                }
                let eta = (sjs / zjz).powf(0.25);
                let scale = 1.0 / (1.0 + wbar[0]).sqrt();
                let mut u: Vec<f64> = wbar.iter().map(|a| a * scale).collect();
                u[0] = (wbar[0] + 1.0) * scale;
                Scaling::Soc { eta, u }
            }
        }
    }

    /// `out = W v`
    pub(crate) fn apply(&self, v: &[f64], out: &mut [f64]) {
        match self {
            Scaling::Zero => out.iter_mut().for_each(|a| *a = 0.0),
            Scaling::Nonneg { w } => {
                for i in 0..v.len() {
                    out[i] = w[i] * v[i];
                }
            }
            Scaling::Soc { eta, u } => {
                let uv = dot(u, v);
                out[0] = eta * (-v[0] + u[0] * uv);
                for i in 1..v.len() {
                    out[i] = eta * (v[i] + u[i] * uv);
                }
            }
        }
    }

    /// `out = W⁻¹ v`
    pub(crate) fn apply_inv(&self, v: &[f64], out: &mut [f64]) {
        match self {
            Scaling::Zero => out.iter_mut().for_each(|a| *a = 0.0),
            Scaling::Nonneg { w } => {
                for i in 0..v.len() {
                    out[i] = v[i] / w[i];
                }
            }
            Scaling::Soc { eta, u } => {
                // J u = (u0, -u1)
                let juv = u[0] * v[0] - dot(&u[1..], &v[1..]);
                out[0] = (-v[0] + u[0] * juv) / eta;
                for i in 1..v.len() {
                    out[i] = (v[i] - u[i] * juv) / eta;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn in_soc(v: &[f64], tol: f64) -> bool {
        norm(&v[1..]) <= v[0] + tol
    }

    #[test]
    fn projection_examples() {
        assert_eq!(project_soc(&[1.0, 0.0], 2.0), (vec![1.0, 0.0], 2.0));
        assert_eq!(project_soc(&[1.0, 0.0], -2.0), (vec![0.0, 0.0], 0.0));
        let (x, t) = project_soc(&[3.0, 4.0], 0.0);
        assert!((x[0] - 1.5).abs() < 1e-15 && (x[1] - 2.0).abs() < 1e-15 && (t - 2.5).abs() < 1e-15);
    }

    #[test]
    fn nt_scaling_maps_s_and_z_to_same_point() {
        let s = [2.0, 0.3, -0.5, 1.0];
        let z = [1.5, -0.7, 0.2, 0.1];
        let w = Scaling::compute(Cone::Soc(4), &s, &z);
        let mut wz = [0.0; 4];
        let mut winv_s = [0.0; 4];
        w.apply(&z, &mut wz);
        w.apply_inv(&s, &mut winv_s);
        for i in 0..4 {
            assert!((wz[i] - winv_s[i]).abs() < 1e-12, "{wz:?} vs {winv_s:?}");
        }
        let mut back = [0.0; 4];
        w.apply_inv(&wz, &mut back);
        for i in 0..4 {
            assert!((back[i] - z[i]).abs() < 1e-12);
        }
        assert!(in_soc(&wz, 0.0));
    }

    #[test]
    fn jordan_solve_inverts_product() {
        let lam = [3.0, 1.0, -0.5];
        let x = [0.2, -1.0, 4.0];
        let mut v = [0.0; 3];
        jordan_product(Cone::Soc(3), &lam, &x, &mut v);
        let mut back = [0.0; 3];
        jordan_solve(Cone::Soc(3), &lam, &v, &mut back);
        for i in 0..3 {
            assert!((back[i] - x[i]).abs() < 1e-12);
        }
    }

    #[test]
    fn soc_step_hits_boundary() {
        let v = [2.0, 0.0, 0.0];
        let dv = [-1.0, 1.0, 0.0];
        // (2 - a)^2 = a^2  ->  a = 1
        let a = max_step(Cone::Soc(3), &v, &dv);
        assert!((a - 1.0).abs() < 1e-14);
        assert_eq!(max_step(Cone::Soc(3), &v, &[1.0, 0.5, 0.0]), f64::INFINITY);
    }

    proptest! {
        #[test]
        fn projection_is_idempotent_and_nonexpansive(
            u in proptest::collection::vec(-5.0f64..5.0, 4),
            v in proptest::collection::vec(-5.0f64..5.0, 4),
        ) {
            let (pu, tu) = project_soc(&u[1..], u[0]);
            let (ppu, ptu) = project_soc(&pu, tu);
            prop_assert!((tu - ptu).abs() < 1e-12);
            for (a, b) in pu.iter().zip(&ppu) {
                prop_assert!((a - b).abs() < 1e-12);
            }
            let (pv, tv) = project_soc(&v[1..], v[0]);
            let mut dp = (tu - tv).powi(2);
            let mut d = (u[0] - v[0]).powi(2);
            for i in 0..3 {
                dp += (pu[i] - pv[i]).powi(2);
                d += (u[i + 1] - v[i + 1]).powi(2);
            }
            prop_assert!(dp.sqrt() <= d.sqrt() + 1e-12);
        }

        #[test]
        fn step_length_stays_in_cone(
            v in proptest::collection::vec(-1.0f64..1.0, 3),
            dv in proptest::collection::vec(-3.0f64..3.0, 3),
        ) {
            let mut v = v;
            v[0] = norm(&v[1..]) + 0.1;
            let a = max_step(Cone::Soc(3), &v, &dv);
            let a = if a.is_finite() { a * 0.999 } else { 10.0 };
            let p: Vec<f64> = v.iter().zip(&dv).map(|(x, d)| x + a * d).collect();
            prop_assert!(in_soc(&p, 1e-9));
        }
    }
}
