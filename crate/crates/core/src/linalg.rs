//! Banded and bordered linear solves used by the projections and RATTLE.


use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Cyclic tridiagonal matrix: row `k` reads
/// `lower[k] x[k-1] + diag[k] x[k] + upper[k] x[k+1]` with indices mod `n`.
#[derive(Debug, Clone)]
pub struct CyclicTridiag {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

/// Thomas factorisation of the Sherman-Morrison-modified matrix.
#[derive(Debug, Clone)]
pub struct CyclicFactor {
    c_prime: Vec<f64>,
    denom: Vec<f64>,
    lower: Vec<f64>,
    gamma: f64,
    beta: f64,
    z: Vec<f64>,
    z_fact: f64,
}

impl CyclicTridiag {
    pub fn new(n: usize) -> Self {
        CyclicTridiag { lower: vec![0.0; n], diag: vec![0.0; n], upper: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        (0..n)
            .map(|k| self.lower[k] * x[(k + n - 1) % n] + self.diag[k] * x[k] + self.upper[k] * x[(k + 1) % n])
            .collect()
    }

    pub fn factor(&self) -> Result<CyclicFactor> {
        let n = self.len();
        if n < 3 {
            return Err(Error::SingularSystem);
        }
        let beta = self.lower[0];
        let alpha = self.upper[n - 1];
        let gamma = if self.diag[0] != 0.0 { -self.diag[0] } else { -1.0 };
        let mut d = self.diag.clone();
        d[0] -= gamma;
        d[n - 1] -= alpha * beta / gamma;
        let mut c_prime = vec![0.0; n];
        let mut denom = vec![0.0; n];
        let mut prev_c = 0.0;
        for k in 0..n {
            let m = d[k] - if k > 0 { self.lower[k] * prev_c } else { 0.0 };
            if m == 0.0 || !m.is_finite() {
                return Err(Error::SingularSystem);
            }
            denom[k] = m;
            c_prime[k] = if k + 1 < n { self.upper[k] / m } else { 0.0 };
            prev_c = c_prime[k];
        }
        let mut fac = CyclicFactor { c_prime, denom, lower: self.lower.clone(), gamma, beta, z: Vec::new(), z_fact: 0.0 };
        let mut u = vec![0.0; n];
        u[0] = gamma;
        u[n - 1] = alpha;
        let z = fac.thomas(&u);
        let zf = 1.0 + z[0] + beta * z[n - 1] / gamma;
        if zf == 0.0 || !zf.is_finite() {
            return Err(Error::SingularSystem);
        }
        fac.z = z;
        fac.z_fact = zf;
        Ok(fac)
    }

    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        Ok(self.factor()?.solve(rhs))
    }
}

impl CyclicFactor {
    fn thomas(&self, r: &[f64]) -> Vec<f64> {
        let n = r.len();
        let mut y = vec![0.0; n];
        for k in 0..n {
            let prev = if k > 0 { self.lower[k] * y[k - 1] } else { 0.0 };
            y[k] = (r[k] - prev) / self.denom[k];
        }
        for k in (0..n - 1).rev() {
            y[k] -= self.c_prime[k] * y[k + 1];
        }
        y
    }

    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = rhs.len();
        let mut x = self.thomas(rhs);
        let t = (x[0] + self.beta * x[n - 1] / self.gamma) / self.z_fact;
        for (xi, zi) in x.iter_mut().zip(&self.z) {
            *xi -= t * zi;
        }
        x
    }
}

/// Block system `[A B; C D] [x; y] = [f; g]` with `A` cyclic tridiagonal
/// and a small dense border.
#[derive(Debug, Clone)]
pub struct BorderedSystem {
    pub a: CyclicTridiag,
    /// Columns of `B`, each of length `n`.
    pub b_cols: Vec<Vec<f64>>,
    /// Rows of `C`, each of length `n`.
    pub c_rows: Vec<Vec<f64>>,
    pub d: DMatrix<f64>,
}

/// Factorised [`BorderedSystem`], reusable for several right-hand sides.
pub struct BorderedFactor {
    a: CyclicFactor,
    ainv_b: Vec<Vec<f64>>,
    c_rows: Vec<Vec<f64>>,
    schur: nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl BorderedSystem {
    pub fn factor(&self) -> Result<BorderedFactor> {
        let a = self.a.factor()?;
        let m = self.b_cols.len();
        let ainv_b: Vec<Vec<f64>> = self.b_cols.iter().map(|b| a.solve(b)).collect();
        let mut s = self.d.clone();
        for i in 0..m {
            for j in 0..m {
                s[(i, j)] -= dot(&self.c_rows[i], &ainv_b[j]);
            }
        }
        let scale = s.iter().map(|x| x.abs()).fold(0.0, f64::max);
        let lu = s.lu();
        let det = lu.determinant();
        if !(det.abs() > 1e-300 && det.abs() > (1e-14 * scale).powi(m as i32)) {
            return Err(Error::SingularSystem);
        }
        Ok(BorderedFactor { a, ainv_b, c_rows: self.c_rows.clone(), schur: lu })
    }
}

impl BorderedFactor {
    pub fn solve(&self, f: &[f64], g: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let xf = self.a.solve(f);
        let m = g.len();
        let rhs = DVector::from_iterator(m, (0..m).map(|i| g[i] - dot(&self.c_rows[i], &xf)));
        let y = self.schur.solve(&rhs).ok_or(Error::SingularSystem)?;
        let mut x = xf;
        for (j, col) in self.ainv_b.iter().enumerate() {
            for (xi, ci) in x.iter_mut().zip(col) {
                *xi -= y[j] * ci;
            }
        }
        Ok((x, y.iter().copied().collect()))
    }
}

/// Dense LU solve, used for small systems assembled column by column.
pub fn dense_solve(m: DMatrix<f64>, rhs: DVector<f64>) -> Result<DVector<f64>> {
    m.lu().solve(&rhs).ok_or(Error::SingularSystem)
}
