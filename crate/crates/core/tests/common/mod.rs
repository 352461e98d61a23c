//! Shared helpers for integration tests.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use voltkernel::conic::{Cone, ConeProgram, CsrMatrix};

/// A random feasible, bounded SOCP whose optimal value is known by
/// construction: a primal point `x*`, complementary `(s*, z*)` are drawn first,
/// then `b = A x* + s*` and `c = -Aᵀ z*`, so `(x*, s*, z*)` satisfies the KKT
/// conditions and the optimal value is `cᵀx*`.
pub struct PlantedSocp {
    pub program: ConeProgram,
    pub optimal_value: f64,
    pub x_star: Vec<f64>,
}

pub fn planted_socp(seed: u64, max_vars: usize) -> PlantedSocp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(5..=max_vars);
    let mut cones = Vec::new();
    let mut m = 0;
    let target_rows = n + rng.random_range(n / 2..=n);
    if rng.random_bool(0.5) {
        let k = rng.random_range(1..=(n / 4).max(1));
        cones.push(Cone::Zero(k));
        m += k;
    }
    while m < target_rows {
        let cone = if rng.random_bool(0.4) {
            Cone::Nonneg(rng.random_range(1..=10))
        } else {
            Cone::Soc(rng.random_range(2..=8))
        };
        m += cone.len();
        cones.push(cone);
    }

    let density = 0.15;
    let mut triplets = Vec::new();
    for i in 0..m {
        for j in 0..n {
            if rng.random_bool(density) {
                triplets.push((i, j, rng.sample::<f64, _>(StandardNormal)));
            }
        }
    }
    for j in 0..n {
        let i = rng.random_range(0..m);
        triplets.push((i, j, 1.0 + rng.random::<f64>()));
    }
    let a = CsrMatrix::from_triplets(m, n, &triplets);

    let x_star: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mut s = vec![0.0; m];
    let mut z = vec![0.0; m];
    let mut off = 0;
    for cone in &cones {
        let len = cone.len();
        match cone {
            Cone::Zero(_) => {
                for i in off..off + len {
                    z[i] = rng.sample(StandardNormal);
                }
            }
            Cone::Nonneg(_) => {
                for i in off..off + len {
                    let v = 0.1 + rng.random::<f64>();
                    if rng.random_bool(0.5) {
                        s[i] = v;
                    } else {
                        z[i] = v;
                    }
                }
            }
            Cone::Soc(_) => {
                let u: Vec<f64> = (0..len - 1).map(|_| rng.sample(StandardNormal)).collect();
                let nu = u.iter().map(|v| v * v).sum::<f64>().sqrt();
                let (rs, rz) = (0.2 + rng.random::<f64>(), 0.2 + rng.random::<f64>());
                match rng.random_range(0..3) {
                    0 => {
                        s[off] = rs * (nu + 1.0);
                        for k in 0..len - 1 {
                            s[off + 1 + k] = rs * u[k];
                        }
                    }
                    1 => {
                        z[off] = rz * (nu + 1.0);
                        for k in 0..len - 1 {
                            z[off + 1 + k] = rz * u[k];
                        }
                    }
                    _ => {
                        s[off] = rs * nu;
                        z[off] = rz * nu;
                        for k in 0..len - 1 {
                            s[off + 1 + k] = rs * u[k];
                            z[off + 1 + k] = -rz * u[k];
                        }
                    }
                }
            }
        }
        off += len;
    }
    let ax = a.mul_vec(&x_star);
    let b: Vec<f64> = ax.iter().zip(&s).map(|(a, s)| a + s).collect();
    let c: Vec<f64> = a.tr_mul_vec(&z).iter().map(|v| -v).collect();
    let optimal_value = c.iter().zip(&x_star).map(|(c, x)| c * x).sum();
    let program = ConeProgram::new(c, a, b, cones).unwrap();
    PlantedSocp {
        program,
        optimal_value,
        x_star,
    }
}
