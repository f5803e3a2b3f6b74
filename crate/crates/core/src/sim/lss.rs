//! Linear time-invariant state-space systems, `ẋ = A·x + B·u`.

use serde::{Deserialize, Serialize};

use super::SimError;

/// Dense row-major real matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, SimError> {
        let n = rows.len();
        if n == 0 {
            return Err(SimError::Dimension("matrix has no rows".into()));
        }
        let m = rows[0].len();
        if m == 0 {
            return Err(SimError::Dimension("matrix has no columns".into()));
        }
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != m) {
            return Err(SimError::Dimension(format!("row {i} has {} columns, expected {m}", r.len())));
        }
        let data: Vec<f64> = rows.into_iter().flatten().collect();
        if data.iter().any(|v| !v.is_finite()) {
            return Err(SimError::Config("matrix contains non-finite entries".into()));
        }
        Ok(Matrix { rows: n, cols: m, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn scaled(&self, k: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| v * k).collect() }
    }

    /// `out += self · v`
    fn mul_acc(&self, v: &[f64], out: &mut [f64]) {
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.data[r * self.cols..(r + 1) * self.cols];
            *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
        }
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        self.mul_acc(v, &mut out);
        out
    }
}

impl TryFrom<Vec<Vec<f64>>> for Matrix {
    type Error = SimError;
    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self, Self::Error> {
        Matrix::from_rows(rows)
    }
}

impl From<Matrix> for Vec<Vec<f64>> {
    fn from(m: Matrix) -> Self {
        m.data.chunks(m.cols).map(<[f64]>::to_vec).collect()
    }
}

/// A linear system integrated with fixed-step RK4.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearStateSpace {
    a: Matrix,
    b: Matrix,
    x: Vec<f64>,
    dt: f64,
}

impl LinearStateSpace {
    pub fn new(a: Matrix, b: Matrix, x0: Vec<f64>, dt: f64) -> Result<Self, SimError> {
        if a.rows() != a.cols() {
            return Err(SimError::Dimension(format!("A is {}x{}, not square", a.rows(), a.cols())));
        }
        if b.rows() != a.rows() {
            return Err(SimError::Dimension(format!("B has {} rows but A is {}x{}", b.rows(), a.rows(), a.rows())));
        }
        if x0.len() != a.rows() {
            return Err(SimError::Dimension(format!(
                "state has {} elements but A is {}x{}",
                x0.len(),
                a.rows(),
                a.rows()
            )));
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SimError::Config(format!("integration step must be positive, got {dt}")));
        }
        Ok(LinearStateSpace { a, b, x: x0, dt })
    }

    pub fn state_dim(&self) -> usize {
        self.a.rows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.cols()
    }

    pub fn state(&self) -> &[f64] {
        &self.x
    }

    pub fn set_state(&mut self, x: Vec<f64>) -> Result<(), SimError> {
        if x.len() != self.state_dim() {
            return Err(SimError::Dimension(format!("state has {} elements, expected {}", x.len(), self.state_dim())));
        }
        self.x = x;
        Ok(())
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    pub fn sub_step(&self) -> f64 {
        self.dt
    }

    fn check_input(&self, u: &[f64]) -> Result<(), SimError> {
        if u.len() != self.input_dim() {
            return Err(SimError::Dimension(format!("input has {} elements, expected {}", u.len(), self.input_dim())));
        }
        Ok(())
    }

    /// `A·x + B·u`
    pub fn derivative(&self, x: &[f64], u: &[f64]) -> Vec<f64> {
        let mut d = self.b.mul_vec(u);
        self.a.mul_acc(x, &mut d);
        d
    }

    /// Advances the state by `dt` seconds holding `u` constant. The horizon is split
    /// into `ceil(dt / sub_step)` equal RK4 steps, so the total is always exactly `dt`.
    pub fn step(&mut self, u: &[f64], dt: f64) -> Result<&[f64], SimError> {
        self.check_input(u)?;
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(SimError::Config(format!("step must be positive, got {dt}")));
        }
        let n = ((dt / self.dt) - 1e-9).ceil().max(1.0) as usize;
        let h = dt / n as f64;
        // B·u is constant over the step
        let bu = self.b.mul_vec(u);
        let dim = self.x.len();
        let f = |x: &[f64]| {
            let mut d = bu.clone();
            self.a.mul_acc(x, &mut d);
            d
        };
        let mut x = self.x.clone();
        let mut tmp = vec![0.0; dim];
        for _ in 0..n {
            let k1 = f(&x);
            for i in 0..dim {
                tmp[i] = x[i] + 0.5 * h * k1[i];
            }
            let k2 = f(&tmp);
            for i in 0..dim {
                tmp[i] = x[i] + 0.5 * h * k2[i];
            }
            let k3 = f(&tmp);
            for i in 0..dim {
                tmp[i] = x[i] + h * k3[i];
            }
            let k4 = f(&tmp);
            for i in 0..dim {
                x[i] += h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
        }
        self.x = x;
        Ok(&self.x)
    }

    /// Solves `A·x* + B·u = 0` by Gaussian elimination with partial pivoting.
    #[allow(clippy::needless_range_loop)]
    pub fn steady_state(&self, u: &[f64]) -> Result<Vec<f64>, SimError> {
        self.check_input(u)?;
        let n = self.state_dim();
        let rhs: Vec<f64> = self.b.mul_vec(u).into_iter().map(|v| -v).collect();
        let mut m: Vec<Vec<f64>> = (0..n)
            .map(|r| {
                let mut row: Vec<f64> = (0..n).map(|c| self.a.get(r, c)).collect();
                row.push(rhs[r]);
                row
            })
            .collect();
        let scale = self.a.data.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let tol = if scale == 0.0 { f64::MIN_POSITIVE } else { scale * 1e-12 };
        for col in 0..n {
            let pivot = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs())).unwrap();
            if m[pivot][col].abs() <= tol {
                return Err(SimError::NoUniqueSteadyState);
            }
            m.swap(col, pivot);
            for r in col + 1..n {
                let factor = m[r][col] / m[col][col];
                if factor != 0.0 {
                    for c in col..=n {
                        m[r][c] -= factor * m[col][c];
                    }
                }
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|c| m[r][c] * x[c]).sum();
            x[r] = (m[r][n] - s) / m[r][r];
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn storage(x0: f64) -> LinearStateSpace {
        LinearStateSpace::new(
            Matrix::from_rows(vec![vec![0.0]]).unwrap(),
            Matrix::from_rows(vec![vec![0.12667, -0.14]]).unwrap(),
            vec![x0],
            1.0,
        )
        .unwrap()
    }

    pub(crate) fn turbine() -> LinearStateSpace {
        LinearStateSpace::new(
            Matrix::from_rows(vec![vec![-0.3076, 0.0], vec![0.0008, -0.2]]).unwrap(),
            Matrix::from_rows(vec![vec![4750.0, 29993.0, -0.1], vec![1.0, 45.0, 0.2]]).unwrap(),
            vec![0.0, 0.0],
            1.0,
        )
        .unwrap()
    }

    #[test]
    fn storage_charge_ten_seconds() {
        let mut s = storage(50.0);
        let x = s.step(&[1.0, 0.0], 10.0).unwrap()[0];
        assert!((x - 51.2667).abs() < 1e-9, "{x}");
        assert_eq!(s.state()[0], x);
    }

    #[test]
    fn storage_both_inputs_hundred_seconds() {
        let mut s = storage(50.0);
        let x = s.step(&[1.0, 1.0], 100.0).unwrap()[0];
        assert!((x - 48.667).abs() < 1e-9, "{x}");
    }

    #[test]
    fn zero_input_on_integrator_leaves_state() {
        let mut s = storage(37.5);
        s.step(&[0.0, 0.0], 123.4).unwrap();
        assert_eq!(s.state(), &[37.5]);
    }

    #[test]
    fn dimension_errors() {
        let mut s = storage(50.0);
        assert!(matches!(s.step(&[1.0, 0.0, 0.0], 1.0), Err(SimError::Dimension(_))));
        let a = Matrix::from_rows(vec![vec![0.0, 1.0]]).unwrap();
        let b = Matrix::from_rows(vec![vec![1.0]]).unwrap();
        assert!(LinearStateSpace::new(a, b, vec![0.0], 1.0).is_err());
        let a = Matrix::from_rows(vec![vec![0.0]]).unwrap();
        let b = Matrix::from_rows(vec![vec![1.0], vec![2.0]]).unwrap();
        assert!(LinearStateSpace::new(a, b, vec![0.0], 1.0).is_err());
        assert!(Matrix::from_rows(vec![vec![1.0, 2.0], vec![3.0]]).is_err());
    }

    #[test]
    fn non_positive_step_rejected() {
        let a = Matrix::from_rows(vec![vec![0.0]]).unwrap();
        let b = Matrix::from_rows(vec![vec![1.0]]).unwrap();
        assert!(LinearStateSpace::new(a, b, vec![0.0], 0.0).is_err());
        assert!(storage(0.0).step(&[0.0, 0.0], -1.0).is_err());
    }

    #[test]
    fn pure_integrator_has_no_steady_state() {
        assert_eq!(storage(50.0).steady_state(&[1.0, 0.0]), Err(SimError::NoUniqueSteadyState));
    }

    #[test]
    fn zero_input_steady_state_is_origin() {
        let x = turbine().steady_state(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(x, vec![0.0, 0.0]);
    }

    #[test]
    fn turbine_steady_state_matches_frozen_solve() {
        // frozen from an independent dense solve (numpy.linalg.solve)
        let expected = [112943.75812744, 696.77503251];
        let x = turbine().steady_state(&[1.0, 1.0, 15.0]).unwrap();
        for (got, want) in x.iter().zip(expected) {
            assert!((got - want).abs() / want < 1e-9, "{got} vs {want}");
        }
    }

    #[test]
    fn matrix_serde_round_trip() {
        let m: Matrix = serde_json::from_str("[[0.12667, -0.14]]").unwrap();
        assert_eq!((m.rows(), m.cols()), (1, 2));
        assert_eq!(serde_json::to_string(&m).unwrap(), "[[0.12667,-0.14]]");
        assert!(serde_json::from_str::<Matrix>("[[1],[2,3]]").is_err());
    }

    proptest! {
        #[test]
        fn integrator_is_exact_regardless_of_sub_steps(
            b in prop::collection::vec(-5.0f64..5.0, 1..4),
            u in prop::collection::vec(-2.0f64..2.0, 4),
            x0 in -100.0f64..100.0,
            sub in 0.5f64..10.0,
            total in 0.1f64..200.0,
        ) {
            let m = b.len();
            let mut sys = LinearStateSpace::new(
                Matrix::from_rows(vec![vec![0.0]]).unwrap(),
                Matrix::from_rows(vec![b.clone()]).unwrap(),
                vec![x0],
                sub,
            ).unwrap();
            let u = &u[..m];
            let x = sys.step(u, total).unwrap()[0];
            let exact = x0 + b.iter().zip(u).map(|(bi, ui)| bi * ui).sum::<f64>() * total;
            prop_assert!((x - exact).abs() <= 1e-9, "{} vs {}", x, exact);
        }

        #[test]
        fn steady_state_agrees_with_lu(
            n in 1usize..5,
            entries in prop::collection::vec(-1.0f64..1.0, 25),
            b in prop::collection::vec(-10.0f64..10.0, 5),
        ) {
            // strictly diagonally dominant, hence nonsingular
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|r| (0..n).map(|c| entries[r * 5 + c] - if r == c { n as f64 + 1.0 } else { 0.0 }).collect())
                .collect();
            let sys = LinearStateSpace::new(
                Matrix::from_rows(rows.clone()).unwrap(),
                Matrix::from_rows(b[..n].iter().map(|v| vec![*v]).collect()).unwrap(),
                vec![0.0; n],
                1.0,
            ).unwrap();
            let x = sys.steady_state(&[1.0]).unwrap();
            let a = nalgebra::DMatrix::from_fn(n, n, |r, c| rows[r][c]);
            let rhs = nalgebra::DVector::from_fn(n, |r, _| -b[r]);
            let oracle = a.lu().solve(&rhs).unwrap();
            for i in 0..n {
                prop_assert!((x[i] - oracle[i]).abs() <= 1e-9 * (1.0 + oracle[i].abs()), "{:?} vs {}", x, oracle);
            }
        }
    }
}
