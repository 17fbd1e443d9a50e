use nalgebra::DVector;
use serde::{Deserialize, Serialize};

/// Generalized coordinates and velocities `x = [q; v]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub q: DVector<f64>,
    pub v: DVector<f64>,
}

impl RobotState {
    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self { q, v: DVector::zeros(n) }
    }

    pub fn dim(&self) -> usize {
        self.q.len() + self.v.len()
    }

    /// Stacked `[q; v]`.
    pub fn to_vector(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.dim());
        x.rows_mut(0, self.q.len()).copy_from(&self.q);
        x.rows_mut(self.q.len(), self.v.len()).copy_from(&self.v);
        x
    }

    pub fn from_vector(x: &DVector<f64>) -> Self {
        let n = x.len() / 2;
        Self {
            q: x.rows(0, n).into_owned(),
            v: x.rows(n, n).into_owned(),
        }
    }
}
