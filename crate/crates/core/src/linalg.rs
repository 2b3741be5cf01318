//! Small banded solvers shared by the discretizations.

/// Tridiagonal matrix; `lower[i]` is entry `(i+1, i)`, `upper[i]` is `(i, i+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tridiagonal {
    pub lower: Vec<f64>,
    pub diag: Vec<f64>,
    pub upper: Vec<f64>,
}

impl Tridiagonal {
    pub fn zeros(n: usize) -> Self {
        Tridiagonal {
            lower: vec![0.0; n.saturating_sub(1)],
            diag: vec![0.0; n],
            upper: vec![0.0; n.saturating_sub(1)],
        }
    }

    pub fn len(&self) -> usize {
        self.diag.len()
    }

    pub fn is_empty(&self) -> bool {
        self.diag.is_empty()
    }

    /// Adds the 2×2 block `e` at rows/columns `(j, j+1)`.
    pub fn add_block(&mut self, j: usize, e: [[f64; 2]; 2]) {
        let n = self.len();
        if j < n {
            self.diag[j] += e[0][0];
        }
        if j + 1 < n {
            self.diag[j + 1] += e[1][1];
            self.upper[j] += e[0][1];
            self.lower[j] += e[1][0];
        }
    }

    pub fn max_asymmetry(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| (l - u).abs())
            .fold(0.0, f64::max)
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut s = self.diag[i] * x[i];
            if i > 0 {
                s += self.lower[i - 1] * x[i - 1];
            }
            if i + 1 < n {
                s += self.upper[i] * x[i + 1];
            }
            y[i] = s;
        }
        y
    }

    pub fn dot(&self, x: &[f64], y: &[f64]) -> f64 {
        self.mul(y).iter().zip(x).map(|(a, b)| a * b).sum()
    }

    /// `self + c·other`.
    pub fn axpy(&self, c: f64, other: &Tridiagonal) -> Tridiagonal {
        let comb = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x + c * y).collect();
        Tridiagonal {
            lower: comb(&self.lower, &other.lower),
            diag: comb(&self.diag, &other.diag),
            upper: comb(&self.upper, &other.upper),
        }
    }

    /// Thomas factorization; `None` if a pivot vanishes.
    pub fn factor(&self) -> Option<TridiagonalLu> {
        let n = self.len();
        let mut c = vec![0.0; n];
        let mut piv = vec![0.0; n];
        for i in 0..n {
            let mut b = self.diag[i];
            if i > 0 {
                b -= self.lower[i - 1] * c[i - 1];
            }
            if b == 0.0 || !b.is_finite() {
                return None;
            }
            piv[i] = b;
            if i + 1 < n {
                c[i] = self.upper[i] / b;
            }
        }
        Some(TridiagonalLu {
            lower: self.lower.clone(),
            c,
            piv,
        })
    }
}

#[derive(Debug, Clone)]
pub struct TridiagonalLu {
    lower: Vec<f64>,
    c: Vec<f64>,
    piv: Vec<f64>,
}

impl TridiagonalLu {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.piv.len();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let mut v = rhs[i];
            if i > 0 {
                v -= self.lower[i - 1] * y[i - 1];
            }
            y[i] = v / self.piv[i];
        }
        for i in (0..n.saturating_sub(1)).rev() {
            y[i] -= self.c[i] * y[i + 1];
        }
        y
    }
}

/// Square band matrix with `kl` sub- and `ku` super-diagonals, factored by
/// Gaussian elimination with partial pivoting.
#[derive(Debug, Clone, PartialEq)]
pub struct Banded {
    n: usize,
    kl: usize,
    ku: usize,
    // row i holds columns i−kl ..= i+kl+ku (room for pivoting fill-in)
    rows: Vec<Vec<f64>>,
}

impl Banded {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        Banded {
            n,
            kl,
            ku,
            rows: vec![vec![0.0; 2 * kl + ku + 1]; n],
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn slot(&self, i: usize, j: usize) -> Option<usize> {
        let lo = i as isize - self.kl as isize;
        let k = j as isize - lo;
        (k >= 0 && (k as usize) < 2 * self.kl + self.ku + 1).then_some(k as usize)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.slot(i, j).map_or(0.0, |k| self.rows[i][k])
    }

    /// Panics if `(i, j)` lies outside the band.
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        assert!(
            j + self.kl >= i && j <= i + self.ku,
            "entry ({i}, {j}) outside the band"
        );
        let k = self.slot(i, j).expect("inside band");
        self.rows[i][k] += v;
    }

    pub fn mul(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j) * x[j]).sum()
            })
            .collect()
    }

    pub fn factor(mut self) -> Option<BandedLu> {
        let n = self.n;
        let (kl, ku) = (self.kl, self.ku);
        let mut piv = vec![0usize; n];
        let mut mult = vec![vec![0.0; kl]; n];
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            for i in k..=last {
                if self.get(i, k).abs() > self.get(p, k).abs() {
                    p = i;
                }
            }
            piv[k] = p;
            let right = (k + kl + ku).min(n - 1);
            if p != k {
                for j in k..=right {
                    let (a, b) = (self.get(k, j), self.get(p, j));
                    self.put(k, j, b);
                    self.put(p, j, a);
                }
            }
            let pivot = self.get(k, k);
            if pivot == 0.0 || !pivot.is_finite() {
                return None;
            }
            for i in k + 1..=last {
                let l = self.get(i, k) / pivot;
                mult[k][i - k - 1] = l;
                if l != 0.0 {
                    for j in k + 1..=right {
                        let v = self.get(i, j) - l * self.get(k, j);
                        self.put(i, j, v);
                    }
                }
            }
        }
        Some(BandedLu { a: self, piv, mult })
    }

    fn put(&mut self, i: usize, j: usize, v: f64) {
        match self.slot(i, j) {
            Some(k) => self.rows[i][k] = v,
            None => debug_assert!(v == 0.0),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BandedLu {
    a: Banded,
    piv: Vec<usize>,
    mult: Vec<Vec<f64>>,
}

impl BandedLu {
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        let n = self.a.n;
        let (kl, ku) = (self.a.kl, self.a.ku);
        let mut y = rhs.to_vec();
        for k in 0..n {
            y.swap(k, self.piv[k]);
            let last = (k + kl).min(n - 1);
            for i in k + 1..=last {
                y[i] -= self.mult[k][i - k - 1] * y[k];
            }
        }
        for k in (0..n).rev() {
            let right = (k + kl + ku).min(n - 1);
            let mut s = y[k];
            for j in k + 1..=right {
                s -= self.a.get(k, j) * y[j];
            }
            y[k] = s / self.a.get(k, k);
        }
        y
    }
}
