//! Core domain types: agent state, control input, planned trajectory.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::dynamics::DynamicsModel;
use crate::error::{Error, Result};
use crate::gaussian::{serde_mat2, GaussianDist};

pub type AgentId = u64;

/// Kinematic state: planar pose plus scalar speed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    pub y: f64,
    /// Heading in radians, normalized to (-pi, pi].
    pub theta: f64,
    /// Speed in m/s.
    pub v: f64,
}

/// Wrap an angle into (-pi, pi].
pub fn wrap_angle(theta: f64) -> f64 {
    PI - (PI - theta).rem_euclid(2.0 * PI)
}

impl State {
    pub fn new(x: f64, y: f64, theta: f64, v: f64) -> Result<Self> {
        if ![x, y, theta, v].iter().all(|f| f.is_finite()) {
            return Err(Error::invalid_input("non-finite state field"));
        }
        Ok(Self { x, y, theta: wrap_angle(theta), v })
    }

    pub fn position(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    /// Velocity vector implied by heading and speed.
    pub fn velocity(&self) -> Vector2<f64> {
        Vector2::new(self.v * self.theta.cos(), self.v * self.theta.sin())
    }

    pub fn is_finite(&self) -> bool {
        [self.x, self.y, self.theta, self.v].iter().all(|f| f.is_finite())
    }
}

/// Control input: longitudinal acceleration and angular rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Control {
    pub a: f64,
    pub omega: f64,
}

impl Control {
    pub const ZERO: Control = Control { a: 0.0, omega: 0.0 };

    pub fn new(a: f64, omega: f64) -> Self {
        Self { a, omega }
    }

    pub fn is_finite(&self) -> bool {
        self.a.is_finite() && self.omega.is_finite()
    }
}

/// A planned horizon: K+1 states, K controls, and the fixed per-step
/// covariance of the plan distribution around each state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Plan {
    pub states: Vec<State>,
    pub controls: Vec<Control>,
    #[serde(with = "serde_mat2")]
    pub step_cov: Matrix2<f64>,
}

impl Plan {
    /// Builds a plan and checks it is dynamically consistent: each state
    /// must equal the model step of its predecessor to 1e-9.
    pub fn new(
        model: &DynamicsModel,
        states: Vec<State>,
        controls: Vec<Control>,
        step_cov: Matrix2<f64>,
    ) -> Result<Self> {
        if states.len() != controls.len() + 1 {
            return Err(Error::invalid_input(format!(
                "plan needs K+1 states for K controls, got {} states / {} controls",
                states.len(),
                controls.len()
            )));
        }
        for (k, (s, u)) in states.iter().zip(controls.iter()).enumerate() {
            let next = model.step(*s, *u)?;
            let got = states[k + 1];
            let err = (next.x - got.x).abs().max((next.y - got.y).abs())
                .max((wrap_angle(next.theta - got.theta)).abs())
                .max((next.v - got.v).abs());
            if err > 1e-9 {
                return Err(Error::invalid_input(format!(
                    "plan state {} inconsistent with dynamics (max error {err})",
                    k + 1
                )));
            }
        }
        Ok(Self { states, controls, step_cov })
    }

    pub fn horizon(&self) -> usize {
        self.controls.len()
    }

    /// Plan distribution at horizon step k (1-based): a Gaussian centered
    /// on the planned position with the fixed plan covariance.
    pub fn step_dist(&self, k: usize) -> Result<GaussianDist> {
        let s = self
            .states
            .get(k)
            .ok_or_else(|| Error::invalid_input(format!("plan has no step {k}")))?;
        GaussianDist::new(s.position(), self.step_cov)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wrap_angle_lands_in_half_open_interval() {
        assert_eq!(wrap_angle(PI), PI);
        assert_eq!(wrap_angle(-PI), PI);
        assert!((wrap_angle(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert!((wrap_angle(-3.0 * PI) - PI).abs() < 1e-12);
        for i in -20..20 {
            let t = wrap_angle(0.37 * i as f64);
            assert!(t > -PI && t <= PI, "{t} out of range");
        }
    }

    #[test]
    fn state_rejects_non_finite() {
        assert!(State::new(f64::NAN, 0.0, 0.0, 0.0).is_err());
        assert!(State::new(0.0, f64::INFINITY, 0.0, 0.0).is_err());
    }

    #[test]
    fn velocity_vector_matches_heading() {
        let s = State::new(0.0, 0.0, PI / 2.0, 2.0).unwrap();
        let v = s.velocity();
        assert!(v.x.abs() < 1e-12);
        assert!((v.y - 2.0).abs() < 1e-12);
    }
}
