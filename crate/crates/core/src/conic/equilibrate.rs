//! Ruiz equilibration that keeps a common scale inside each second-order cone.

use super::cone::Cone;
use super::sparse::CsrMatrix;

const PASSES: usize = 15;
const MIN_SCALE: f64 = 1e-4;
const MAX_SCALE: f64 = 1e4;

/// Row scaling `d` and column scaling `e` such that `diag(d) A diag(e)` has
/// rows and columns of roughly unit infinity norm.
pub(crate) struct Equilibration {
    pub d: Vec<f64>,
    pub e: Vec<f64>,
}

impl Equilibration {
    pub fn identity(m: usize, n: usize) -> Self {
        Self {
            d: vec![1.0; m],
            e: vec![1.0; n],
        }
    }

    /// Scales `a` in place and returns the accumulated factors.
    pub fn ruiz(a: &mut CsrMatrix, blocks: &[(Cone, usize)]) -> Self {
        let (m, n) = (a.nrows(), a.ncols());
        let mut eq = Self::identity(m, n);
        for _ in 0..PASSES {
            let mut row_max = vec![0.0f64; m];
            let mut col_max = vec![0.0f64; n];
            for (i, j, v) in a.triplets() {
                row_max[i] = row_max[i].max(v.abs());
                col_max[j] = col_max[j].max(v.abs());
            }
            for &(k, off) in blocks {
                if let Cone::Soc(len) = k {
                    let bm = row_max[off..off + len].iter().cloned().fold(0.0, f64::max);
                    row_max[off..off + len].iter_mut().for_each(|r| *r = bm);
                }
            }
            let mut dd: Vec<f64> = row_max.iter().map(|&r| inv_sqrt(r)).collect();
            let mut ee: Vec<f64> = col_max.iter().map(|&c| inv_sqrt(c)).collect();
            let converged = dd.iter().chain(&ee).all(|s| (s - 1.0).abs() < 1e-3);
            // keep the accumulated scaling inside [MIN_SCALE, MAX_SCALE]
            for (d, s) in eq.d.iter_mut().zip(dd.iter_mut()) {
                let next = (*d * *s).clamp(MIN_SCALE, MAX_SCALE);
                *s = next / *d;
                *d = next;
            }
            for (e, s) in eq.e.iter_mut().zip(ee.iter_mut()) {
                let next = (*e * *s).clamp(MIN_SCALE, MAX_SCALE);
                *s = next / *e;
                *e = next;
            }
            a.scale(&dd, &ee);
            if converged {
                break;
            }
        }
        eq
    }
}

fn inv_sqrt(v: f64) -> f64 {
    if v > 0.0 {
        1.0 / v.sqrt()
    } else {
        1.0
    }
}
