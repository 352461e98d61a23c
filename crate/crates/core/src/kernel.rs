//! Kernel functions, Gram matrices and their square roots.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::conic::{self, AffineExpr, ProgramBuilder, SolverSettings, TIE_BREAK};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    Linear,
    Polynomial,
    Gaussian,
}

/// Kernel choice with its parameters. `gamma` is the Gaussian width or the
/// polynomial offset, `beta` the polynomial degree.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec {
    pub kind: KernelKind,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_beta")]
    pub beta: u32,
    /// Added to the diagonal of every Gram matrix.
    #[serde(default = "default_jitter")]
    pub jitter: f64,
}

fn default_gamma() -> f64 {
    1.0
}
fn default_beta() -> u32 {
    2
}
fn default_jitter() -> f64 {
    1e-3
}

impl KernelSpec {
    pub fn linear() -> Self {
        Self {
            kind: KernelKind::Linear,
            gamma: default_gamma(),
            beta: default_beta(),
            jitter: default_jitter(),
        }
    }

    pub fn gaussian(gamma: f64) -> Self {
        Self {
            kind: KernelKind::Gaussian,
            gamma,
            ..Self::linear()
        }
    }

    pub fn polynomial(gamma: f64, beta: u32) -> Self {
        Self {
            kind: KernelKind::Polynomial,
            gamma,
            beta,
            ..Self::linear()
        }
    }

    pub fn with_jitter(self, jitter: f64) -> Self {
        Self { jitter, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::InvalidParameter(format!("kernel jitter must be >= 0, got {}", self.jitter)));
        }
        match self.kind {
            KernelKind::Linear => Ok(()),
            KernelKind::Gaussian | KernelKind::Polynomial if !(self.gamma > 0.0 && self.gamma.is_finite()) => {
                Err(Error::InvalidParameter(format!("kernel gamma must be positive, got {}", self.gamma)))
            }
            KernelKind::Polynomial if self.beta < 1 => Err(Error::InvalidParameter("polynomial degree must be >= 1".into())),
            _ => Ok(()),
        }
    }

    /// Kernel value without dimension checks.
    pub(crate) fn k(&self, z: &[f64], zp: &[f64]) -> f64 {
        match self.kind {
            KernelKind::Linear => dot(z, zp),
            KernelKind::Polynomial => (dot(z, zp) + self.gamma).powi(self.beta as i32),
            KernelKind::Gaussian => {
                let d2: f64 = z.iter().zip(zp).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / self.gamma).exp()
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn kernel_eval(spec: &KernelSpec, z: &[f64], z_prime: &[f64]) -> Result<f64> {
    if z.len() != z_prime.len() {
        return Err(Error::Dimension(format!(
            "kernel inputs have lengths {} and {}",
            z.len(),
            z_prime.len()
        )));
    }
    Ok(spec.k(z, z_prime))
}

/// Pairwise kernel matrix of the inputs `z` (one vector per scenario) plus
/// `jitter·I`.
pub fn gram(spec: &KernelSpec, z: &[Vec<f64>]) -> DMatrix<f64> {
    let s = z.len();
    let mut k = DMatrix::zeros(s, s);
    for i in 0..s {
        for j in i..s {
            let v = spec.k(&z[i], &z[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += spec.jitter;
    }
    k
}

/// Symmetric square root `L = V Λ^{1/2} Vᵀ`, so `LᵀL = K`. Eigenvalues below
/// `-1e-9·max(1, λ_max)` are rejected; smaller negative ones are set to zero.
pub fn gram_sqrt(k: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !k.is_square() {
        return Err(Error::Dimension(format!("Gram matrix is {}x{}", k.nrows(), k.ncols())));
    }
    if k.nrows() == 0 {
        return Ok(k.clone());
    }
    let sym = (k + k.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let lmax = eig.eigenvalues.max();
    let lmin = eig.eigenvalues.min();
    if !lmin.is_finite() || lmin < -1e-9 * lmax.max(1.0) {
        return Err(Error::Factorization(format!("Gram matrix is indefinite (eigenvalue {lmin:.3e})")));
    }
    let roots = eig.eigenvalues.map(|l| l.max(0.0).sqrt());
    let v = &eig.eigenvectors;
    Ok(v * DMatrix::from_diagonal(&roots) * v.transpose())
}

/// Gram matrices and their square roots for a set of inverters.
#[derive(Debug, Clone, PartialEq)]
pub struct GramSet {
    pub k: Vec<DMatrix<f64>>,
    pub k_sqrt: Vec<DMatrix<f64>>,
}

/// How [`GramSet::k_sqrt`] factors are obtained.
pub const GRAM_FACTOR: &str = "symmetric_eigen_sqrt";

impl GramSet {
    /// One Gram matrix per entry of `inputs` (each a list of scenario inputs).
    pub fn build(specs: &[KernelSpec], inputs: &[&[Vec<f64>]]) -> Result<Self> {
        if specs.len() != inputs.len() {
            return Err(Error::Dimension("one kernel spec per inverter required".into()));
        }
        let k: Vec<DMatrix<f64>> = specs.iter().zip(inputs).map(|(sp, z)| gram(sp, z)).collect();
        let k_sqrt = k.iter().map(gram_sqrt).collect::<Result<_>>()?;
        Ok(Self { k, k_sqrt })
    }
}

/// Result of [`kernel_ridge`].
#[derive(Debug, Clone, PartialEq)]
pub struct RidgeFit {
    pub a: Vec<f64>,
    /// Zero when fitted without an intercept.
    pub b: f64,
    /// `K a + b·1`.
    pub fitted: Vec<f64>,
    /// Mean squared training residual.
    pub loss: f64,
    pub primal_res: f64,
    pub dual_res: f64,
    pub gap: f64,
    pub iterations: usize,
}

/// Minimizes `(1/S)‖y - K a - b·1‖² + μ‖K^{1/2} a‖` (the norm is not
/// squared) by conic programming. With `μ = 0` the smallest-norm `a` among
/// the minimizers is taken.
pub fn kernel_ridge(spec: &KernelSpec, z: &[Vec<f64>], y: &[f64], mu: f64) -> Result<RidgeFit> {
    kernel_ridge_with(spec, z, y, mu, true, &SolverSettings::with_tol(1e-9))
}

/// [`kernel_ridge`] with explicit settings; `intercept = false` fixes `b = 0`.
pub fn kernel_ridge_with(
    spec: &KernelSpec,
    z: &[Vec<f64>],
    y: &[f64],
    mu: f64,
    intercept: bool,
    settings: &SolverSettings,
) -> Result<RidgeFit> {
    spec.validate()?;
    let s = z.len();
    if s < 2 {
        return Err(Error::InvalidParameter("kernel ridge needs at least two samples".into()));
    }
    if y.len() != s {
        return Err(Error::Dimension(format!("{s} inputs but {} targets", y.len())));
    }
    if !(mu >= 0.0 && mu.is_finite()) {
        return Err(Error::InvalidParameter(format!("mu must be >= 0, got {mu}")));
    }
    if z.iter().any(|v| v.len() != z[0].len()) {
        return Err(Error::Dimension("inputs differ in length".into()));
    }
    let k = gram(spec, z);
    // Without regularization the coefficients are only determined up to the
    // null space of K, so the program runs on its eigen-coordinates.
    let reduced = (mu == 0.0).then(|| ReducedBasis::new(&k));
    let basis = reduced.as_ref().map_or(&k, |r| &r.outputs);
    let mut pb = ProgramBuilder::new();
    let a: Vec<usize> = (0..basis.ncols()).map(|i| pb.var(format!("a{i}"), 0.0)).collect();
    let b = intercept.then(|| pb.var("b", 0.0));
    let t = pb.var("t", if mu > 0.0 { 1.0 / s as f64 } else { 1.0 });
    let residuals: Vec<AffineExpr> = (0..s)
        .map(|i| {
            let mut e = AffineExpr::constant(y[i]);
            if let Some(b) = b {
                e = e.term(b, -1.0);
            }
            for (j, &v) in a.iter().enumerate() {
                e = e.term(v, -basis[(i, j)]);
            }
            e
        })
        .collect();
    if mu > 0.0 {
        pb.rotated(&AffineExpr::var(t), &AffineExpr::constant(1.0), &residuals);
        let l = gram_sqrt(&k)?;
        let g = pb.var("gamma", mu);
        let tail: Vec<AffineExpr> = (0..s)
            .map(|i| (0..s).fold(AffineExpr::default(), |e, j| e.term(a[j], l[(i, j)])))
            .collect();
        pb.soc(&AffineExpr::var(g), &tail);
    } else {
        // The minimizers of ‖r‖² and ‖r‖ coincide; the plain norm is resolved
        // to full solver accuracy instead of the square root of it. A tiny
        // RKHS-norm term picks the smallest among them.
        pb.soc(&AffineExpr::var(t), &residuals);
        let tb = pb.var("tie_break", TIE_BREAK);
        let tail: Vec<AffineExpr> = a.iter().map(|&j| AffineExpr::var(j)).collect();
        pb.soc(&AffineExpr::var(tb), &tail);
    }
    let sol = conic::solve_with(&pb.build()?, settings)?.into_result()?;
    let x: Vec<f64> = a.iter().map(|&j| sol.x[j]).collect();
    let av: Vec<f64> = match &reduced {
        Some(r) => (&r.coefs * DVector::from_vec(x)).iter().copied().collect(),
        None => x,
    };
    let bv = b.map_or(0.0, |b| sol.x[b]);
    let fitted: Vec<f64> = (0..s).map(|i| (0..s).map(|j| k[(i, j)] * av[j]).sum::<f64>() + bv).collect();
    let loss = fitted.iter().zip(y).map(|(f, y)| (f - y).powi(2)).sum::<f64>() / s as f64;
    Ok(RidgeFit {
        a: av,
        b: bv,
        fitted,
        loss,
        primal_res: sol.primal_res,
        dual_res: sol.dual_res,
        gap: sol.gap,
        iterations: sol.iterations,
    })
}

/// Eigen-coordinates `w` of a Gram matrix `K = U Λ Uᵀ` restricted to its
/// numerically nonzero spectrum: outputs `K a = U Λ^{1/2} w` and the
/// smallest-norm coefficients `a = U Λ^{-1/2} w` producing them.
pub(crate) struct ReducedBasis {
    pub(crate) outputs: DMatrix<f64>,
    pub(crate) coefs: DMatrix<f64>,
}

impl ReducedBasis {
    /// Eigenvalues below this fraction of the largest are dropped.
    const RANK_TOL: f64 = 1e-10;

    pub(crate) fn new(k: &DMatrix<f64>) -> Self {
        let eig = k.clone().symmetric_eigen();
        let top = eig.eigenvalues.iter().fold(0.0f64, |m, &v| m.max(v));
        let keep: Vec<usize> = (0..k.nrows())
            .filter(|&i| eig.eigenvalues[i] > Self::RANK_TOL * top)
            .collect();
        let s = k.nrows();
        let mut outputs = DMatrix::zeros(s, keep.len());
        let mut coefs = DMatrix::zeros(s, keep.len());
        for (c, &i) in keep.iter().enumerate() {
            let root = eig.eigenvalues[i].sqrt();
            for r in 0..s {
                let u = eig.eigenvectors[(r, i)];
                outputs[(r, c)] = u * root;
                coefs[(r, c)] = u / root;
            }
        }
        Self { outputs, coefs }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_forms() {
        let g = KernelSpec::gaussian(1.0);
        assert_eq!(kernel_eval(&g, &[0.3, -1.0], &[0.3, -1.0]).unwrap(), 1.0);
        let v = kernel_eval(&g, &[1.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((v - (-2.0f64).exp()).abs() < 1e-15 && (v - 0.13534).abs() < 1e-5);
        assert_eq!(kernel_eval(&KernelSpec::linear(), &[1.0, 2.0], &[3.0, 4.0]).unwrap(), 11.0);
        assert_eq!(kernel_eval(&KernelSpec::polynomial(1.0, 2), &[1.0, 2.0], &[3.0, 4.0]).unwrap(), 144.0);
        assert!(matches!(kernel_eval(&g, &[1.0], &[1.0, 2.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn orthonormal_linear_gram_is_identity() {
        let z = vec![vec![1.0, 0.0, 0.0], vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        assert_eq!(gram(&KernelSpec::linear().with_jitter(0.0), &z), DMatrix::identity(3, 3));
    }

    #[test]
    fn singleton_gram() {
        let k = gram(&KernelSpec::gaussian(2.0), &[vec![4.0, 5.0]]);
        assert_eq!(k, DMatrix::from_element(1, 1, 1.0 + 1e-3));
    }

    #[test]
    fn square_roots() {
        let i = DMatrix::<f64>::identity(3, 3);
        let l = gram_sqrt(&i).unwrap();
        assert!((l.transpose() * &l - &i).norm() < 1e-12);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 9.0]));
        let l = gram_sqrt(&d).unwrap();
        assert!((l.transpose() * &l - &d).norm() < 1e-12);
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(gram_sqrt(&bad), Err(Error::Factorization(_))));
    }

    #[test]
    fn spec_validation() {
        assert!(KernelSpec::gaussian(0.0).validate().is_err());
        assert!(KernelSpec::polynomial(1.0, 0).validate().is_err());
        assert!(KernelSpec::linear().with_jitter(-1.0).validate().is_err());
        let json = serde_json::to_string(&KernelSpec::gaussian(2.0)).unwrap();
        assert_eq!(serde_json::from_str::<KernelSpec>(&json).unwrap(), KernelSpec::gaussian(2.0));
    }
}
