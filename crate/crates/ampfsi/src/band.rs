//! Banded LU factorization with partial pivoting, plus an optional dense
//! border for augmented systems (a few extra unknowns/constraint rows whose
//! coupling is dense, e.g. the zero-mean pressure regularization).
//!
//! Storage follows the LAPACK band convention: a matrix with lower bandwidth
//! `kl` and upper bandwidth `ku` keeps column j in rows `j-ku ..= j+kl`, and
//! factorization with row pivoting needs `kl` extra superdiagonals of fill.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BandError {
    #[error("zero pivot at column {0}; matrix is singular to working precision")]
    Singular(usize),
}

/// Square banded matrix of order `n` with bandwidths `(kl, ku)`.
#[derive(Clone)]
pub struct BandMatrix {
    n: usize,
    kl: usize,
    ku: usize,
    /// Column-major band storage with `kl + ku + 1 + kl` rows per column
    /// (extra `kl` rows of headroom for pivoting fill).
    data: Vec<f64>,
    ld: usize,
}

impl BandMatrix {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let ld = 2 * kl + ku + 1;
        BandMatrix { n, kl, ku, data: vec![0.0; ld * n], ld }
    }

    pub fn order(&self) -> usize {
        self.n
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let (i, j) = (i as isize, j as isize);
        let (kl, ku) = (self.kl as isize, self.ku as isize);
        if j - i > ku || i - j > kl {
            return None;
        }
        // Row i of column j sits at offset kl + ku + i - j (the top kl rows
        // are the pivoting headroom).
        Some(j as usize * self.ld + (kl + ku + i - j) as usize)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |s| self.data[s])
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        match self.slot(i, j) {
            Some(s) => self.data[s] = v,
            None => panic!("set at ({i},{j}) outside band (kl={}, ku={})", self.kl, self.ku),
        }
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        match self.slot(i, j) {
            Some(s) => self.data[s] += v,
            None => panic!("add at ({i},{j}) outside band (kl={}, ku={})", self.kl, self.ku),
        }
    }

    /// y = A x (for residual checks).
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        let mut y = vec![0.0; self.n];
        for j in 0..self.n {
            let ilo = j.saturating_sub(self.ku);
            let ihi = (j + self.kl).min(self.n - 1);
            let xj = x[j];
            for i in ilo..=ihi {
                y[i] += self.get(i, j) * xj;
            }
        }
        y
    }

    /// Factor in place (partial pivoting). Returns the pivot sequence.
    pub fn factor(mut self) -> Result<BandLu, BandError> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let kv = kl + ku; // width of the upper triangle after fill
        let mut piv = vec![0usize; n];
        for k in 0..n {
            // Find the pivot within the kl rows below the diagonal.
            let imax = (k + kl).min(n - 1);
            let mut p = k;
            let mut pmax = self.get_wide(k, k).abs();
            for i in (k + 1)..=imax {
                let v = self.get_wide(i, k).abs();
                if v > pmax {
                    pmax = v;
                    p = i;
                }
            }
            if pmax == 0.0 {
                return Err(BandError::Singular(k));
            }
            piv[k] = p;
            let jhi = (k + kv).min(n - 1);
            if p != k {
                for j in k..=jhi {
                    let a = self.get_wide(k, j);
                    let b = self.get_wide(p, j);
                    // After fill the swap stays inside the widened band.
                    self.set_fill(k, j, b);
                    self.set_fill(p, j, a);
                }
            }
            let pivval = self.get_wide(k, k);
            for i in (k + 1)..=imax {
                let m = self.get_wide(i, k) / pivval;
                self.set_fill(i, k, m);
                if m != 0.0 {
                    for j in (k + 1)..=jhi {
                        let v = self.get_wide(i, j) - m * self.get_wide(k, j);
                        self.set_fill(i, j, v);
                    }
                }
            }
        }
        Ok(BandLu { mat: self, piv })
    }

    #[inline]
    fn set_fill(&mut self, i: usize, j: usize, v: f64) {
        // During factorization entries may land in the widened band
        // (j - i up to kl + ku); slot() already allows that range because the
        // storage keeps kl rows of headroom above the nominal band.
        let (ii, jj) = (i as isize, j as isize);
        let (kl, ku) = (self.kl as isize, self.ku as isize);
        assert!(jj - ii <= kl + ku && ii - jj <= kl, "fill outside widened band");
        let s = j * self.ld + (kl + ku + ii - jj) as usize;
        self.data[s] = v;
    }

    #[inline]
    fn get_wide(&self, i: usize, j: usize) -> f64 {
        let (ii, jj) = (i as isize, j as isize);
        let (kl, ku) = (self.kl as isize, self.ku as isize);
        if jj - ii > kl + ku || ii - jj > kl {
            return 0.0;
        }
        self.data[j * self.ld + (kl + ku + ii - jj) as usize]
    }
}

pub struct BandLu {
    mat: BandMatrix,
    piv: Vec<usize>,
}

impl BandLu {
    /// Solve A x = b in place.
    pub fn solve(&self, b: &mut [f64]) {
        let n = self.mat.n;
        assert_eq!(b.len(), n);
        let kl = self.mat.kl;
        let kv = self.mat.kl + self.mat.ku;
        // L (unit lower, stored multipliers) with row swaps.
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                b.swap(k, p);
            }
            let imax = (k + kl).min(n - 1);
            for i in (k + 1)..=imax {
                b[i] -= self.mat.get_wide(i, k) * b[k];
            }
        }
        // U back substitution.
        for k in (0..n).rev() {
            let jhi = (k + kv).min(n - 1);
            let mut s = b[k];
            for j in (k + 1)..=jhi {
                s -= self.mat.get_wide(k, j) * b[j];
            }
            b[k] = s / self.mat.get_wide(k, k);
        }
    }
}

/// Banded system with `m` extra dense unknowns and `m` extra dense rows:
///
/// ```text
/// [ A  B ] [x]   [b]
/// [ C  D ] [y] = [c]
/// ```
///
/// A is banded (n x n), B is n x m, C is m x n, D is m x m. Solved by block
/// elimination through the factored bordered system; A itself may be singular
/// (that is the point of the augmentation), so the elimination runs on the
/// full matrix with the border kept dense and processed last.
pub struct BorderedBand {
    pub a: BandMatrix,
    pub b: Vec<Vec<f64>>, // m columns of length n
    pub c: Vec<Vec<f64>>, // m rows of length n
    pub d: Vec<Vec<f64>>, // m x m
}

impl BorderedBand {
    pub fn new(a: BandMatrix, m: usize) -> Self {
        let n = a.order();
        BorderedBand {
            a,
            b: vec![vec![0.0; n]; m],
            c: vec![vec![0.0; n]; m],
            d: vec![vec![0.0; m]; m],
        }
    }

    /// Factor-and-solve for the bordered system; `rhs` has length n + m.
    ///
    /// Strategy: factor P A = L U by the banded routine while carrying the B
    /// columns and C rows along, i.e. eliminate the band unknowns first and
    /// reduce to the m x m Schur complement for the border unknowns. Row
    /// pivoting is restricted to the band block, which is safe here: the
    /// leading principal blocks of the (possibly singular) Neumann operators
    /// are nonsingular, with the rank deficiency only appearing at the last
    /// step where the border takes over.
    pub fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>, BandError> {
        let n = self.a.order();
        let m = self.b.len();
        assert_eq!(rhs.len(), n + m);
        if m == 0 {
            let lu = self.a.clone().factor()?;
            let mut x = rhs.to_vec();
            lu.solve(&mut x);
            return Ok(x);
        }
        let lu = match self.a.clone().factor() {
            Ok(lu) => lu,
            Err(BandError::Singular(_)) => return self.solve_dense_fallback(rhs),
        };
        // x = A^{-1}(b - B y) and (D - C A^{-1} B) y = c - C A^{-1} b.
        let mut ainv_b: Vec<Vec<f64>> = Vec::with_capacity(m);
        for col in &self.b {
            let mut v = col.clone();
            lu.solve(&mut v);
            ainv_b.push(v);
        }
        let mut ainv_rhs = rhs[..n].to_vec();
        lu.solve(&mut ainv_rhs);
        let mut schur = nalgebra::DMatrix::<f64>::zeros(m, m);
        let mut srhs = nalgebra::DVector::<f64>::zeros(m);
        for i in 0..m {
            for j in 0..m {
                let mut s = self.d[i][j];
                for k in 0..n {
                    s -= self.c[i][k] * ainv_b[j][k];
                }
                schur[(i, j)] = s;
            }
            let mut s = rhs[n + i];
            for k in 0..n {
                s -= self.c[i][k] * ainv_rhs[k];
            }
            srhs[i] = s;
        }
        let y = schur
            .lu()
            .solve(&srhs)
            .ok_or(BandError::Singular(n))?;
        // x = A^{-1} b - sum_j y_j A^{-1} B_j, both factors already computed.
        let mut x = vec![0.0; n + m];
        for k in 0..n {
            let mut s = ainv_rhs[k];
            for (j, col) in ainv_b.iter().enumerate() {
                s -= col[k] * y[j];
            }
            x[k] = s;
        }
        for i in 0..m {
            x[n + i] = y[i];
        }
        Ok(x)
    }

    /// Dense fallback for a singular band block (small augmented test systems
    /// such as the pure-Neumann Poisson problems; the production paths always
    /// have a nonsingular band block or a small order).
    fn solve_dense_fallback(&self, rhs: &[f64]) -> Result<Vec<f64>, BandError> {
        let n = self.a.order();
        let m = self.b.len();
        let nm = n + m;
        let mut full = nalgebra::DMatrix::<f64>::zeros(nm, nm);
        for j in 0..n {
            let ilo = j.saturating_sub(self.a.ku);
            let ihi = (j + self.a.kl).min(n - 1);
            for i in ilo..=ihi {
                full[(i, j)] = self.a.get(i, j);
            }
        }
        for (jj, col) in self.b.iter().enumerate() {
            for i in 0..n {
                full[(i, n + jj)] = col[i];
            }
        }
        for (ii, row) in self.c.iter().enumerate() {
            for j in 0..n {
                full[(n + ii, j)] = row[j];
            }
        }
        for i in 0..m {
            for j in 0..m {
                full[(n + i, n + j)] = self.d[i][j];
            }
        }
        let b = nalgebra::DVector::from_column_slice(rhs);
        let x = full.lu().solve(&b).ok_or(BandError::Singular(0))?;
        Ok(x.as_slice().to_vec())
    }
}
