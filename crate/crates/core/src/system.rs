//! The two-state, two-sensor reference loop used throughout the tests, the
//! bundled scenario and the browser demo.

use nalgebra::DMatrix;

use crate::error::Result;
use crate::plant::{build_model, PlantModel};

pub const F: [[f64; 2]; 2] = [[0.84, 0.23], [-0.47, 0.12]];
pub const G: [[f64; 2]; 2] = [[0.07, -0.32], [0.23, 0.58]];
pub const C: [[f64; 2]; 2] = [[1.0, 0.0], [2.0, 1.0]];
pub const K: [[f64; 2]; 2] = [[1.404, -1.042], [1.842, 1.008]];
pub const R1: [[f64; 2]; 2] = [[0.045, -0.011], [-0.011, 0.02]];
pub const R2: [[f64; 2]; 2] = [[2.0, 0.0], [0.0, 2.0]];
/// Observer gain rounded to four significant digits.
pub const L_REFERENCE: [[f64; 2]; 2] = [[0.0276, 0.0448], [-0.01998, -0.0290]];
/// Residual covariance rounded to four significant digits.
pub const SIGMA_REFERENCE: [[f64; 2]; 2] = [[2.086, 0.134], [0.134, 2.230]];
pub const FALSE_ALARM_RATE: f64 = 0.05;

pub fn mat2(m: [[f64; 2]; 2]) -> DMatrix<f64> {
    DMatrix::from_fn(2, 2, |i, j| m[i][j])
}

/// Builds the reference loop; `l` overrides the Riccati-optimal observer gain.
pub fn reference_system(l: Option<DMatrix<f64>>) -> Result<PlantModel> {
    build_model(mat2(F), mat2(G), mat2(C), mat2(K), mat2(R1), mat2(R2), l)
}
