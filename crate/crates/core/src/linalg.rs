//! Small dense LU factorization shared by the stationary solver and the simplex basis.

/// Row-major `n x n` LU factorization with partial pivoting: `P A = L U`.
#[derive(Debug, Clone)]
pub(crate) struct DenseLu {
    n: usize,
    lu: Vec<f64>,
    perm: Vec<usize>,
    /// Smallest |pivot| relative to the largest entry of the input.
    pub(crate) min_rel_pivot: f64,
}

impl DenseLu {
    /// Returns `None` when a pivot falls below `pivot_tol` (absolute).
    pub(crate) fn factor(n: usize, mut a: Vec<f64>, pivot_tol: f64) -> Option<Self> {
        debug_assert_eq!(a.len(), n * n);
        let scale = a.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
        let mut perm: Vec<usize> = (0..n).collect();
        let mut min_pivot = f64::INFINITY;
        for k in 0..n {
            let (p, pv) = (k..n)
                .map(|i| (i, a[i * n + k].abs()))
                .fold((k, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
            if pv <= pivot_tol {
                return None;
            }
            min_pivot = min_pivot.min(pv);
            if p != k {
                for j in 0..n {
                    a.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let (top, bottom) = a.split_at_mut((k + 1) * n);
            let pivot_row = &top[k * n + k..(k + 1) * n];
            let pivot = pivot_row[0];
            for row in bottom.chunks_exact_mut(n) {
                let f = row[k] / pivot;
                if f == 0.0 {
                    continue;
                }
                row[k] = f;
                for (x, p) in row[k + 1..].iter_mut().zip(&pivot_row[1..]) {
                    *x -= f * p;
                }
            }
        }
        Some(Self {
            n,
            lu: a,
            perm,
            min_rel_pivot: if n == 0 { 1.0 } else { min_pivot / scale },
        })
    }

    /// Solves `A x = b` in place.
    pub(crate) fn solve(&self, b: &mut [f64]) {
        let n = self.n;
        let mut x: Vec<f64> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let mut s = x[i];
            for j in 0..i {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s;
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in (i + 1)..n {
                s -= self.lu[i * n + j] * x[j];
            }
            x[i] = s / self.lu[i * n + i];
        }
        b.copy_from_slice(&x);
    }

    /// Explicit inverse, row-major, built row by row so sparse factors stay cheap.
    pub(crate) fn inverse(&self) -> Vec<f64> {
        let n = self.n;
        let mut inv = vec![0.0; n * n];
        // Forward: rows of L^{-1} P.
        for i in 0..n {
            let (done, rest) = inv.split_at_mut(i * n);
            let row = &mut rest[..n];
            row[self.perm[i]] = 1.0;
            for (j, &l) in self.lu[i * n..i * n + i].iter().enumerate() {
                if l != 0.0 {
                    for (x, y) in row.iter_mut().zip(&done[j * n..(j + 1) * n]) {
                        *x -= l * y;
                    }
                }
            }
        }
        // Backward: rows of U^{-1} L^{-1} P.
        for i in (0..n).rev() {
            let (head, tail) = inv.split_at_mut((i + 1) * n);
            let row = &mut head[i * n..];
            for (j, &u) in self.lu[i * n + i + 1..(i + 1) * n].iter().enumerate() {
                if u != 0.0 {
                    for (x, y) in row.iter_mut().zip(&tail[j * n..(j + 1) * n]) {
                        *x -= u * y;
                    }
                }
            }
            let d = self.lu[i * n + i];
            row.iter_mut().for_each(|x| *x /= d);
        }
        inv
    }
}
