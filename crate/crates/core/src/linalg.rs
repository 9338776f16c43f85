//! Fixed-size 3×3 matrix helpers for the log random-effect covariance.

use serde::{Deserialize, Serialize};

/// Dense 3×3 matrix, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mat3(pub [[f64; 3]; 3]);

/// Lower-triangular Cholesky factor `L` with `A = L Lᵀ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cholesky3 {
    l: [[f64; 3]; 3],
}

impl Mat3 {
    pub const ZERO: Mat3 = Mat3([[0.0; 3]; 3]);

    pub fn identity() -> Self {
        Self::diag([1.0, 1.0, 1.0])
    }

    pub fn diag(d: [f64; 3]) -> Self {
        let mut m = Self::ZERO;
        for (i, v) in d.iter().enumerate() {
            m.0[i][i] = *v;
        }
        m
    }

    pub fn outer(a: [f64; 3], b: [f64; 3]) -> Self {
        let mut m = Self::ZERO;
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = a[i] * b[j];
            }
        }
        m
    }

    pub fn scale(&self, s: f64) -> Self {
        let mut m = *self;
        m.0.iter_mut().flatten().for_each(|v| *v *= s);
        m
    }

    pub fn add(&self, other: &Mat3) -> Self {
        let mut m = *self;
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] += other.0[i][j];
            }
        }
        m
    }

    pub fn mul(&self, other: &Mat3) -> Self {
        let mut m = Self::ZERO;
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = (0..3).map(|k| self.0[i][k] * other.0[k][j]).sum();
            }
        }
        m
    }

    pub fn transpose(&self) -> Self {
        let mut m = Self::ZERO;
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] = self.0[j][i];
            }
        }
        m
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..3).all(|i| (0..3).all(|j| (self.0[i][j] - self.0[j][i]).abs() <= tol))
    }

    /// Averages with the transpose; removes round-off asymmetry.
    pub fn symmetrized(&self) -> Self {
        self.add(&self.transpose()).scale(0.5)
    }

    pub fn cholesky(&self) -> Option<Cholesky3> {
        let a = &self.0;
        let mut l = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..=i {
                let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
                if i == j {
                    let d = a[i][i] - s;
                    if !(d > 0.0) || !d.is_finite() {
                        return None;
                    }
                    l[i][j] = d.sqrt();
                } else {
                    l[i][j] = (a[i][j] - s) / l[j][j];
                }
            }
        }
        Some(Cholesky3 { l })
    }

    /// Lower triangle entries in the order (1,1), (2,1), (2,2), (3,1), (3,2), (3,3).
    pub fn lower_entries(&self) -> [f64; 6] {
        let a = &self.0;
        [a[0][0], a[1][0], a[1][1], a[2][0], a[2][1], a[2][2]]
    }

    pub fn from_lower_entries(e: [f64; 6]) -> Self {
        Mat3([[e[0], e[1], e[3]], [e[1], e[2], e[4]], [e[3], e[4], e[5]]])
    }
}

impl Cholesky3 {
    pub fn factor(&self) -> Mat3 {
        Mat3(self.l)
    }

    pub fn log_det(&self) -> f64 {
        2.0 * (self.l[0][0].ln() + self.l[1][1].ln() + self.l[2][2].ln())
    }

    /// `L v`.
    pub fn mul_lower(&self, v: [f64; 3]) -> [f64; 3] {
        let l = &self.l;
        [
            l[0][0] * v[0],
            l[1][0] * v[0] + l[1][1] * v[1],
            l[2][0] * v[0] + l[2][1] * v[1] + l[2][2] * v[2],
        ]
    }

    /// Solves `L y = b`.
    pub fn forward(&self, b: [f64; 3]) -> [f64; 3] {
        let l = &self.l;
        let y0 = b[0] / l[0][0];
        let y1 = (b[1] - l[1][0] * y0) / l[1][1];
        let y2 = (b[2] - l[2][0] * y0 - l[2][1] * y1) / l[2][2];
        [y0, y1, y2]
    }

    /// Solves `Lᵀ x = y`.
    pub fn backward(&self, y: [f64; 3]) -> [f64; 3] {
        let l = &self.l;
        let x2 = y[2] / l[2][2];
        let x1 = (y[1] - l[2][1] * x2) / l[1][1];
        let x0 = (y[0] - l[1][0] * x1 - l[2][0] * x2) / l[0][0];
        [x0, x1, x2]
    }

    /// `bᵀ A⁻¹ b`.
    pub fn quad_form_inv(&self, b: [f64; 3]) -> f64 {
        let y = self.forward(b);
        y[0] * y[0] + y[1] * y[1] + y[2] * y[2]
    }

    pub fn inverse(&self) -> Mat3 {
        let mut inv = Mat3::ZERO;
        for j in 0..3 {
            let mut e = [0.0; 3];
            e[j] = 1.0;
            let col = self.backward(self.forward(e));
            for i in 0..3 {
                inv.0[i][j] = col[i];
            }
        }
        inv.symmetrized()
    }
}
