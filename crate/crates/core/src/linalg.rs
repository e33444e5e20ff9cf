//! Dense row-major f64 matrices, sized for per-token sequences (tens of rows,
//! tens of columns). Only the products the realign layer needs are provided.

/// Row-major matrix of f64.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "data length must be rows*cols");
        Mat { rows, cols, data }
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }

    /// self += other, shapes must agree.
    pub fn add_assign(&mut self, other: &Mat) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// C = A * B with A m×k, B k×n.
pub fn mul_nn(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.rows, "inner dimensions must agree");
    let mut c = Mat::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let a_row = a.row(i);
        let c_row = c.row_mut(i);
        for (l, &a_il) in a_row.iter().enumerate() {
            let b_row = b.row(l);
            for (c_ij, &b_lj) in c_row.iter_mut().zip(b_row) {
                *c_ij += a_il * b_lj;
            }
        }
    }
    c
}

/// C = A * B^T with A m×k, B n×k.
pub fn mul_nt(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.cols, b.cols, "inner dimensions must agree");
    let mut c = Mat::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let a_row = a.row(i);
        for j in 0..b.rows {
            let b_row = b.row(j);
            let dot: f64 = a_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            *c.at_mut(i, j) = dot;
        }
    }
    c
}

/// C = A^T * B with A k×m, B k×n.
pub fn mul_tn(a: &Mat, b: &Mat) -> Mat {
    assert_eq!(a.rows, b.rows, "inner dimensions must agree");
    let mut c = Mat::zeros(a.cols, b.cols);
    for l in 0..a.rows {
        let a_row = a.row(l);
        let b_row = b.row(l);
        for (i, &a_li) in a_row.iter().enumerate() {
            let c_row = c.row_mut(i);
            for (c_ij, &b_lj) in c_row.iter_mut().zip(b_row) {
                *c_ij += a_li * b_lj;
            }
        }
    }
    c
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Mat {
        Mat::from_vec(rows, cols, v.to_vec())
    }

    #[test]
    fn products_agree_on_hand_case() {
        // A = [[1,2],[3,4]], B = [[5,6],[7,8]]
        let a = m(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let b = m(2, 2, &[5.0, 6.0, 7.0, 8.0]);
        assert_eq!(mul_nn(&a, &b).data, vec![19.0, 22.0, 43.0, 50.0]);
        // A * B^T
        assert_eq!(mul_nt(&a, &b).data, vec![17.0, 23.0, 39.0, 53.0]);
        // A^T * B
        assert_eq!(mul_tn(&a, &b).data, vec![26.0, 30.0, 38.0, 44.0]);
    }

    #[test]
    fn transposed_products_match_explicit_transpose() {
        let a = m(3, 2, &[1.0, -2.0, 0.5, 4.0, -1.0, 3.0]);
        let b = m(3, 4, &[2.0, 1.0, 0.0, -1.0, 3.0, -2.0, 1.0, 0.5, -1.0, 0.0, 2.0, 1.0]);
        let at = m(2, 3, &[1.0, 0.5, -1.0, -2.0, 4.0, 3.0]);
        assert_eq!(mul_tn(&a, &b).data, mul_nn(&at, &b).data);
        let bt = {
            let mut t = Mat::zeros(4, 3);
            for i in 0..3 {
                for j in 0..4 {
                    *t.at_mut(j, i) = b.at(i, j);
                }
            }
            t
        };
        let c = m(2, 4, &[1.0, 0.0, 2.0, -1.0, 0.0, 1.0, -2.0, 3.0]);
        assert_eq!(mul_nt(&c, &b).data, mul_nn(&c, &bt).data);
    }

    #[test]
    fn add_and_scale() {
        let mut a = m(1, 3, &[1.0, 2.0, 3.0]);
        a.scale(2.0);
        a.add_assign(&m(1, 3, &[1.0, 1.0, 1.0]));
        assert_eq!(a.data, vec![3.0, 5.0, 7.0]);
    }
}
