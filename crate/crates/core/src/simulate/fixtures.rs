//! The 4 × 4 parameter fixtures: the symmetric null truth and the twelve
//! alternatives used for power.

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{build_square_model, LmlcSpec, ModelKind, SamplingScheme};

/// Positions (within the parameters after the intercept) shifted by `δ₁` and
/// `δ₂`: the reference-cell coefficients of cells (2,3) and (3,2).
const DELTA1_INDEX: usize = 5;
const DELTA2_INDEX: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fixtures {
    /// Printed cell probabilities, row-major.
    pub reference_probabilities: Vec<f64>,
    /// Symmetry parameters after the intercept.
    pub theta_s: Vec<f64>,
    /// Reference-cell saturated parameters after the intercept.
    pub theta_mh: Vec<f64>,
    pub delta_points: Vec<(f64, f64)>,
    pub beta_points: Vec<f64>,
}

impl Default for Fixtures {
    fn default() -> Self {
        Self {
            reference_probabilities: vec![
                0.08161, 0.03156, 0.01647, 0.01050, //
                0.03156, 0.21104, 0.05204, 0.01418, //
                0.01647, 0.05204, 0.22186, 0.03156, //
                0.01050, 0.01418, 0.03156, 0.17278,
            ],
            theta_s: vec![-0.35, 0.25, 0.3, 1.5, 1.25, -0.05, -0.75, -1.0, -0.25],
            theta_mh: vec![
                -0.95, -1.6, -2.05, -0.95, 0.95, -0.45, -1.75, -1.6, -0.45, 1.0, -0.95, -2.05,
                -1.75, -0.95, 0.75,
            ],
            delta_points: vec![(0.45, 0.0), (0.7, 0.0), (0.9, 0.0), (0.0, 0.45), (0.0, 0.7), (0.0, 0.9)],
            beta_points: vec![0.5, 0.7, 1.0, -0.5, -0.7, -1.0],
        }
    }
}

/// Number of alternative points.
pub const POWER_POINTS: usize = 12;

fn model(kind: ModelKind) -> Result<LmlcSpec> {
    build_square_model(kind, 4, SamplingScheme::multinomial(16))
}

fn probabilities(spec: &LmlcSpec, rest: &[f64]) -> Result<DVector<f64>> {
    let theta = spec.with_solved_intercept(rest, 1.0)?;
    let m = spec.mean_vector(&theta)?;
    Ok(&m / m.sum())
}

impl Fixtures {
    pub fn validate(&self) -> Result<()> {
        let s: f64 = self.reference_probabilities.iter().sum();
        // The reference cells carry rounding of about 1e-5 each.
        if self.reference_probabilities.len() != 16 || (s - 1.0).abs() > 1e-4 {
            return Err(Error::domain("reference probabilities must be 16 values summing to 1"));
        }
        if self.theta_s.len() != 9 || self.theta_mh.len() != 15 {
            return Err(Error::domain("theta_s needs 9 values and theta_mh 15"));
        }
        if self.delta_points.len() != 6 || self.beta_points.len() != 6 {
            return Err(Error::domain("six delta pairs and six beta values are required"));
        }
        Ok(())
    }

    /// `(θ_S, 0)`.
    pub fn theta_oqs(&self) -> Vec<f64> {
        let mut v = self.theta_s.clone();
        v.push(0.0);
        v
    }

    /// `(θ_S, 0, 0, 0)`.
    pub fn theta_qs(&self) -> Vec<f64> {
        let mut v = self.theta_s.clone();
        v.extend([0.0; 3]);
        v
    }

    /// Null cell probabilities from the symmetry parameters.
    pub fn null_probabilities(&self) -> Result<DVector<f64>> {
        probabilities(&model(ModelKind::Symmetry)?, &self.theta_s)
    }

    /// Cell probabilities from the reference-cell parameters.
    pub fn mh_probabilities(&self) -> Result<DVector<f64>> {
        probabilities(&model(ModelKind::Saturated)?, &self.theta_mh)
    }

    /// Probabilities at alternative `point` (1-based): points 1–6 shift the
    /// saturated parameters by `(δ₁, δ₂)`, points 7–12 give the ordinal column
    /// coefficient `β`.
    pub fn point_probabilities(&self, point: usize) -> Result<DVector<f64>> {
        match point {
            1..=6 => {
                let (d1, d2) = self.delta_points[point - 1];
                let mut theta = self.theta_mh.clone();
                theta[DELTA1_INDEX] += d1;
                theta[DELTA2_INDEX] += d2;
                probabilities(&model(ModelKind::Saturated)?, &theta)
            }
            7..=12 => {
                let mut theta = self.theta_s.clone();
                theta.push(self.beta_points[point - 7]);
                probabilities(&model(ModelKind::OrdinalQuasiSymmetry)?, &theta)
            }
            _ => Err(Error::domain(format!("power point {point} outside 1..=12"))),
        }
    }

    /// Displacement of each point: `δ₁ + δ₂` for 1–6, `β` for 7–12.
    pub fn displacements(&self) -> Vec<f64> {
        self.delta_points
            .iter()
            .map(|(a, b)| a + b)
            .chain(self.beta_points.iter().copied())
            .collect()
    }
}
