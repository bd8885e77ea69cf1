//! Symmetric matrices in profile (skyline) storage with an in-place Cholesky
//! factorization.
//!
//! Row `i` stores the lower-triangular entries from its first structural
//! nonzero `first[i]` through the diagonal. Cholesky fill-in stays inside this
//! envelope, so a time-ordered collocation Hessian factors in
//! `O(n * bandwidth^2)`.

#[derive(Debug, Clone)]
pub struct SkylineMatrix {
    first: Vec<usize>,
    /// Offset of row `i`'s first stored entry in `values`.
    offset: Vec<usize>,
    values: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NotPositiveDefinite {
    pub row: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SingularPivot {
    pub row: usize,
}

impl SkylineMatrix {
    /// Builds an all-zero matrix whose envelope covers every `(row, col)`
    /// pair in `entries` (either triangle may be given).
    pub fn with_pattern(n: usize, entries: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut first: Vec<usize> = (0..n).collect();
        for (i, j) in entries {
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            first[r] = first[r].min(c);
        }
        let mut offset = Vec::with_capacity(n + 1);
        let mut total = 0;
        for (i, &f) in first.iter().enumerate() {
            offset.push(total);
            total += i - f + 1;
        }
        offset.push(total);
        Self { first, offset, values: vec![0.0; total] }
    }

    pub fn dim(&self) -> usize {
        self.first.len()
    }

    pub fn stored_entries(&self) -> usize {
        self.values.len()
    }

    pub fn clear(&mut self) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
    }

    /// Position of the lower-triangular entry `(i, j)` in storage.
    pub fn position(&self, i: usize, j: usize) -> usize {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        assert!(c >= self.first[r], "({r}, {c}) lies outside the profile");
        self.offset[r] + (c - self.first[r])
    }

    pub fn add_at(&mut self, position: usize, value: f64) {
        self.values[position] += value;
    }

    pub fn add(&mut self, i: usize, j: usize, value: f64) {
        let p = self.position(i, j);
        self.values[p] += value;
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        if c < self.first[r] {
            0.0
        } else {
            self.values[self.offset[r] + (c - self.first[r])]
        }
    }

    pub fn diagonal(&self, i: usize) -> f64 {
        self.values[self.offset[i + 1] - 1]
    }

    /// Replaces row and column `i` with the identity row.
    pub fn isolate(&mut self, i: usize) {
        for c in self.first[i]..i {
            let p = self.offset[i] + (c - self.first[i]);
            self.values[p] = 0.0;
        }
        for r in i + 1..self.dim() {
            if self.first[r] <= i {
                let p = self.offset[r] + (i - self.first[r]);
                self.values[p] = 0.0;
            }
        }
        let d = self.offset[i + 1] - 1;
        self.values[d] = 1.0;
    }

    /// Factors `A + shift * I` into `L Lᵀ`, writing `L` into `factor`
    /// (which must share this matrix's profile).
    pub fn cholesky_into(&self, shift: f64, factor: &mut SkylineMatrix) -> Result<(), NotPositiveDefinite> {
        debug_assert_eq!(self.first, factor.first);
        factor.values.copy_from_slice(&self.values);
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            let oi = self.offset[i];
            for j in fi..=i {
                let fj = self.first[j];
                let oj = self.offset[j];
                let start = fi.max(fj);
                let mut s = factor.values[oi + (j - fi)];
                if j == i {
                    s += shift;
                }
                let row_i = &factor.values[oi + (start - fi)..oi + (j - fi)];
                let row_j = &factor.values[oj + (start - fj)..oj + (j - fj)];
                s -= row_i.iter().zip(row_j).map(|(a, b)| a * b).sum::<f64>();
                if j < i {
                    let djj = factor.values[self.offset[j + 1] - 1];
                    factor.values[oi + (j - fi)] = s / djj;
                } else {
                    if !(s > 0.0) || !s.is_finite() {
                        return Err(NotPositiveDefinite { row: i });
                    }
                    factor.values[oi + (i - fi)] = s.sqrt();
                }
            }
        }
        Ok(())
    }

    /// Solves `L Lᵀ x = b` in place, where `self` holds a Cholesky factor.
    pub fn cholesky_solve(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            let oi = self.offset[i];
            let mut s = b[i];
            for c in fi..i {
                s -= self.values[oi + (c - fi)] * b[c];
            }
            b[i] = s / self.values[oi + (i - fi)];
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let oi = self.offset[i];
            b[i] /= self.values[oi + (i - fi)];
            let bi = b[i];
            for c in fi..i {
                b[c] -= self.values[oi + (c - fi)] * bi;
            }
        }
    }

    /// Factors `A + diag(shift)` into `L D Lᵀ` without pivoting, writing unit
    /// `L` and `D` (on the diagonal) into `factor`. Returns the number of
    /// negative pivots. Fails on a pivot that is zero or not finite relative
    /// to the row scale.
    pub fn ldl_into(&self, shift: &[f64], factor: &mut SkylineMatrix) -> Result<usize, SingularPivot> {
        debug_assert_eq!(self.first, factor.first);
        debug_assert_eq!(shift.len(), self.dim());
        factor.values.copy_from_slice(&self.values);
        let n = self.dim();
        let mut negative = 0;
        for i in 0..n {
            let fi = self.first[i];
            let oi = self.offset[i];
            // first pass: row i holds L_ik * D_k
            for j in fi..i {
                let fj = self.first[j];
                let oj = self.offset[j];
                let start = fi.max(fj);
                let row_i = &factor.values[oi + (start - fi)..oi + (j - fi)];
                let row_j = &factor.values[oj + (start - fj)..oj + (j - fj)];
                let s: f64 = row_i.iter().zip(row_j).map(|(a, b)| a * b).sum();
                factor.values[oi + (j - fi)] -= s;
            }
            let scale = factor.values[oi + (i - fi)].abs() + shift[i].abs();
            let mut d = factor.values[oi + (i - fi)] + shift[i];
            for k in fi..i {
                let u = factor.values[oi + (k - fi)];
                let dk = factor.values[self.offset[k + 1] - 1];
                d -= u * u / dk;
                factor.values[oi + (k - fi)] = u / dk;
            }
            if !d.is_finite() || d.abs() <= 1e-14 * scale.max(f64::MIN_POSITIVE) {
                return Err(SingularPivot { row: i });
            }
            if d < 0.0 {
                negative += 1;
            }
            factor.values[oi + (i - fi)] = d;
        }
        Ok(negative)
    }

    /// Solves `L D Lᵀ x = b` in place, where `self` holds an
    /// [`SkylineMatrix::ldl_into`] factor.
    pub fn ldl_solve(&self, b: &mut [f64]) {
        let n = self.dim();
        for i in 0..n {
            let fi = self.first[i];
            let oi = self.offset[i];
            let mut s = b[i];
            for c in fi..i {
                s -= self.values[oi + (c - fi)] * b[c];
            }
            b[i] = s;
        }
        for i in 0..n {
            b[i] /= self.diagonal(i);
        }
        for i in (0..n).rev() {
            let fi = self.first[i];
            let oi = self.offset[i];
            let bi = b[i];
            for c in fi..i {
                b[c] -= self.values[oi + (c - fi)] * bi;
            }
        }
    }

    /// `y = A x` for the symmetric matrix.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let n = self.dim();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let fi = self.first[i];
            let oi = self.offset[i];
            for c in fi..i {
                let a = self.values[oi + (c - fi)];
                y[i] += a * x[c];
                y[c] += a * x[i];
            }
            y[i] += self.values[oi + (i - fi)] * x[i];
        }
        y
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn tridiagonal(n: usize) -> SkylineMatrix {
        let mut m = SkylineMatrix::with_pattern(n, (1..n).map(|i| (i, i - 1)));
        for i in 0..n {
            m.add(i, i, 4.0);
            if i > 0 {
                m.add(i, i - 1, -1.0);
            }
        }
        m
    }

    #[test]
    fn solves_tridiagonal_system() {
        let a = tridiagonal(6);
        let mut l = a.clone();
        a.cholesky_into(0.0, &mut l).unwrap();
        let x_true: Vec<f64> = (0..6).map(|i| i as f64 - 2.5).collect();
        let mut b = a.mul_vec(&x_true);
        l.cholesky_solve(&mut b);
        for (x, t) in b.iter().zip(&x_true) {
            assert_abs_diff_eq!(x, t, epsilon = 1e-12);
        }
        assert_eq!(a.stored_entries(), 11);
    }

    #[test]
    fn fill_in_stays_inside_the_profile() {
        // arrow matrix: last row dense
        let n = 5;
        let mut a = SkylineMatrix::with_pattern(n, (0..n).map(|j| (n - 1, j)));
        for i in 0..n {
            a.add(i, i, 10.0);
            a.add(n - 1, i, 1.0);
        }
        let mut l = a.clone();
        a.cholesky_into(0.0, &mut l).unwrap();
        let mut b = vec![1.0; n];
        l.cholesky_solve(&mut b);
        let back = a.mul_vec(&b);
        for v in back {
            assert_abs_diff_eq!(v, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn indefinite_matrix_needs_a_shift() {
        let mut a = SkylineMatrix::with_pattern(2, [(1, 0)]);
        a.add(0, 0, 1.0);
        a.add(1, 1, 1.0);
        a.add(1, 0, 2.0);
        let mut l = a.clone();
        assert_eq!(a.cholesky_into(0.0, &mut l), Err(NotPositiveDefinite { row: 1 }));
        assert!(a.cholesky_into(5.0, &mut l).is_ok());
    }

    #[test]
    fn ldl_handles_saddle_point_systems() {
        // [[2, 1], [1, -1]]: one positive and one negative pivot
        let mut a = SkylineMatrix::with_pattern(3, [(1, 0), (2, 1)]);
        a.add(0, 0, 2.0);
        a.add(1, 0, 1.0);
        a.add(1, 1, -1.0);
        a.add(2, 1, 3.0);
        a.add(2, 2, 4.0);
        let mut f = a.clone();
        let negative = a.ldl_into(&[0.0; 3], &mut f).unwrap();
        assert_eq!(negative, 1);
        let x_true = [1.0, -2.0, 0.5];
        let mut b = a.mul_vec(&x_true);
        f.ldl_solve(&mut b);
        for (x, t) in b.iter().zip(&x_true) {
            assert_abs_diff_eq!(x, t, epsilon = 1e-12);
        }
        // shifting the first row changes the pivots but still solves
        let negative = a.ldl_into(&[1.0, 0.0, 0.0], &mut f).unwrap();
        assert_eq!(negative, 1);
    }

    #[test]
    fn ldl_reports_zero_pivots() {
        let mut a = SkylineMatrix::with_pattern(2, [(1, 0)]);
        a.add(0, 0, 1.0);
        a.add(1, 0, 1.0);
        a.add(1, 1, 1.0);
        let mut f = a.clone();
        assert_eq!(a.ldl_into(&[0.0; 2], &mut f), Err(SingularPivot { row: 1 }));
    }

    #[test]
    fn isolate_decouples_a_variable() {
        let mut a = tridiagonal(4);
        a.isolate(2);
        assert_eq!(a.get(2, 1), 0.0);
        assert_eq!(a.get(3, 2), 0.0);
        assert_eq!(a.get(2, 2), 1.0);
        assert_eq!(a.get(1, 0), -1.0);
    }
}
