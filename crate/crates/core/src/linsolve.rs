//! Banded storage and LU factorization with partial pivoting.

use crate::error::{Error, Result};

/// Square matrix with `lower` sub-diagonals and `upper` super-diagonals.
///
/// Entry `(i, j)` lives at `data[i * width + (j + lower - i)]` where
/// `width = lower + upper + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct BandedMatrix {
    n: usize,
    lower: usize,
    upper: usize,
    data: Vec<f64>,
}

impl BandedMatrix {
    pub fn zeros(n: usize, lower: usize, upper: usize) -> Self {
        assert!(n >= 1, "banded matrix must have dimension >= 1");
        Self {
            n,
            lower,
            upper,
            data: vec![0.0; n * (lower + upper + 1)],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, 0, 0);
        for i in 0..n {
            m.set(i, i, 1.0);
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn lower(&self) -> usize {
        self.lower
    }

    pub fn upper(&self) -> usize {
        self.upper
    }

    fn width(&self) -> usize {
        self.lower + self.upper + 1
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        j + self.lower >= i && j <= i + self.upper
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        if i >= self.n || j >= self.n || !self.in_band(i, j) {
            return 0.0;
        }
        self.data[i * self.width() + j + self.lower - i]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "({i}, {j}) outside band");
        let w = self.width();
        self.data[i * w + j + self.lower - i] = v;
    }

    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(self.in_band(i, j), "({i}, {j}) outside band");
        let w = self.width();
        self.data[i * w + j + self.lower - i] += v;
    }

    /// Column range of row `i` inside the band.
    pub fn row_range(&self, i: usize) -> std::ops::Range<usize> {
        i.saturating_sub(self.lower)..(i + self.upper + 1).min(self.n)
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.n);
        (0..self.n)
            .map(|i| self.row_range(i).map(|j| self.get(i, j) * x[j]).sum())
            .collect()
    }

    /// `alpha * self + beta * other` for matrices of equal shape.
    pub fn combine(&self, alpha: f64, other: &BandedMatrix, beta: f64) -> BandedMatrix {
        assert_eq!(self.n, other.n);
        let lower = self.lower.max(other.lower);
        let upper = self.upper.max(other.upper);
        let mut out = BandedMatrix::zeros(self.n, lower, upper);
        for i in 0..self.n {
            for j in out.row_range(i) {
                let v = alpha * self.get(i, j) + beta * other.get(i, j);
                out.set(i, j, v);
            }
        }
        out
    }

    pub fn add_diagonal(&mut self, diag: &[f64]) {
        for (i, d) in diag.iter().enumerate() {
            self.add(i, i, *d);
        }
    }

    pub fn to_dense(&self) -> Vec<Vec<f64>> {
        (0..self.n)
            .map(|i| (0..self.n).map(|j| self.get(i, j)).collect())
            .collect()
    }
}

/// `P A = L U` in band storage; `U` carries up to `lower + upper` super-diagonals.
#[derive(Debug, Clone)]
pub struct BandedFactorization {
    n: usize,
    lower: usize,
    // rows of U, each of width lower + upper + 1 starting at the diagonal
    u: Vec<f64>,
    // multipliers, `lower` per column
    l: Vec<f64>,
    pivots: Vec<usize>,
}

impl BandedFactorization {
    pub fn dim(&self) -> usize {
        self.n
    }

    fn uw(&self) -> usize {
        self.u.len() / self.n
    }
}

/// Gaussian elimination with partial pivoting restricted to the band.
pub fn lu_factor(a: &BandedMatrix) -> Result<BandedFactorization> {
    let n = a.dim();
    let kl = a.lower();
    let uw = kl + a.upper() + 1;
    // working rows stored from their diagonal: row i holds columns i..i+uw
    // before pivoting, a row i may hold entries from column i-kl; keep a
    // dense window per row starting at column i-kl.
    let win = kl + uw;
    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let start = i as isize - kl as isize;
            (0..win)
                .map(|c| {
                    let j = start + c as isize;
                    if j < 0 || j as usize >= n {
                        0.0
                    } else {
                        a.get(i, j as usize)
                    }
                })
                .collect()
        })
        .collect();
    let row_start = |i: usize| i as isize - kl as isize;
    let at = |rows: &Vec<Vec<f64>>, i: usize, j: usize| -> f64 {
        let c = j as isize - row_start(i);
        if c < 0 || c as usize >= win {
            0.0
        } else {
            rows[i][c as usize]
        }
    };
    let mut l = vec![0.0; n * kl.max(1)];
    let mut pivots = vec![0usize; n];
    let scale = a.data.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tiny = scale * f64::EPSILON * n as f64;
    for k in 0..n {
        let last = (k + kl).min(n - 1);
        let mut p = k;
        let mut best = at(&rows, k, k).abs();
        for i in k + 1..=last {
            let v = at(&rows, i, k).abs();
            if v > best {
                best = v;
                p = i;
            }
        }
        if best <= tiny || best == 0.0 {
            return Err(Error::SingularPivot(k));
        }
        pivots[k] = p;
        if p != k {
            // exchange row contents aligned on absolute columns
            let cols: Vec<usize> = (k..(k + uw).min(n)).collect();
            for &j in &cols {
                let a_kj = at(&rows, k, j);
                let a_pj = at(&rows, p, j);
                let ck = (j as isize - row_start(k)) as usize;
                let cp = (j as isize - row_start(p)) as usize;
                if ck < win {
                    rows[k][ck] = a_pj;
                }
                if cp < win {
                    rows[p][cp] = a_kj;
                }
            }
        }
        let pivot = at(&rows, k, k);
        for i in k + 1..=last {
            let factor = at(&rows, i, k) / pivot;
            l[k * kl.max(1) + (i - k - 1)] = factor;
            if factor == 0.0 {
                continue;
            }
            for j in k..(k + uw).min(n) {
                let ukj = at(&rows, k, j);
                let c = (j as isize - row_start(i)) as usize;
                if c < win {
                    rows[i][c] -= factor * ukj;
                }
            }
        }
    }
    let mut u = vec![0.0; n * uw];
    for i in 0..n {
        for c in 0..uw {
            let j = i + c;
            if j < n {
                u[i * uw + c] = at(&rows, i, j);
            }
        }
    }
    Ok(BandedFactorization {
        n,
        lower: kl,
        u,
        l,
        pivots,
    })
}

/// Solves `A x = b` from a factorization of `A`.
pub fn solve(f: &BandedFactorization, b: &[f64]) -> Result<Vec<f64>> {
    if b.len() != f.n {
        return Err(Error::Dimension {
            expected: f.n,
            got: b.len(),
        });
    }
    let n = f.n;
    let kl = f.lower;
    let lw = kl.max(1);
    let mut x = b.to_vec();
    for k in 0..n {
        let p = f.pivots[k];
        if p != k {
            x.swap(k, p);
        }
        let last = (k + kl).min(n - 1);
        let xk = x[k];
        for i in k + 1..=last {
            x[i] -= f.l[k * lw + (i - k - 1)] * xk;
        }
    }
    let uw = f.uw();
    for i in (0..n).rev() {
        let mut s = x[i];
        for c in 1..uw {
            let j = i + c;
            if j >= n {
                break;
            }
            s -= f.u[i * uw + c] * x[j];
        }
        x[i] = s / f.u[i * uw];
    }
    Ok(x)
}
