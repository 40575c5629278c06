//! Discrete-time dynamics models and horizon rollouts.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{wrap_angle, Control, State};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Unicycle,
    /// Speed integrates acceleration while heading stays fixed; the angular
    /// input is ignored.
    DoubleIntegrator,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DynamicsModel {
    pub kind: ModelKind,
    /// Timestep in seconds.
    pub dt: f64,
    pub a_max: f64,
    pub omega_max: f64,
    pub v_max: f64,
}

impl DynamicsModel {
    pub fn new(kind: ModelKind, dt: f64, a_max: f64, omega_max: f64, v_max: f64) -> Result<Self> {
        if !(dt > 0.0) || !(a_max > 0.0) || !(omega_max > 0.0) || !(v_max > 0.0) {
            return Err(Error::invalid_input(
                "dynamics requires dt > 0 and positive bounds",
            ));
        }
        Ok(Self { kind, dt, a_max, omega_max, v_max })
    }

    pub fn unicycle(dt: f64, a_max: f64, omega_max: f64, v_max: f64) -> Result<Self> {
        Self::new(ModelKind::Unicycle, dt, a_max, omega_max, v_max)
    }

    /// Clamp a control to the input box; reports whether clamping occurred.
    pub fn clamp_control(&self, u: Control) -> (Control, bool) {
        let a = u.a.clamp(-self.a_max, self.a_max);
        let omega = u.omega.clamp(-self.omega_max, self.omega_max);
        (Control::new(a, omega), a != u.a || omega != u.omega)
    }

    /// One explicit Euler step. Out-of-bounds inputs are clamped.
    pub fn step(&self, s: State, u: Control) -> Result<State> {
        if !s.is_finite() || !u.is_finite() {
            return Err(Error::invalid_input("non-finite state or control in step"));
        }
        let (u, _) = self.clamp_control(u);
        let next = match self.kind {
            ModelKind::Unicycle => State {
                x: s.x + s.v * s.theta.cos() * self.dt,
                y: s.y + s.v * s.theta.sin() * self.dt,
                theta: wrap_angle(s.theta + u.omega * self.dt),
                v: (s.v + u.a * self.dt).clamp(0.0, self.v_max),
            },
            ModelKind::DoubleIntegrator => State {
                x: s.x + s.v * s.theta.cos() * self.dt,
                y: s.y + s.v * s.theta.sin() * self.dt,
                theta: s.theta,
                v: (s.v + u.a * self.dt).clamp(0.0, self.v_max),
            },
        };
        Ok(next)
    }

    /// Roll a control sequence forward; returns K+1 states starting at x0.
    pub fn rollout(&self, x0: State, controls: &[Control]) -> Result<Vec<State>> {
        let mut states = Vec::with_capacity(controls.len() + 1);
        states.push(x0);
        for u in controls {
            let next = self.step(*states.last().unwrap(), *u)?;
            states.push(next);
        }
        Ok(states)
    }

    /// Rollout into a caller-provided buffer, avoiding per-sample allocation
    /// in the planner hot loop. The buffer is cleared first.
    pub(crate) fn rollout_into(
        &self,
        x0: State,
        controls: &[Control],
        out: &mut Vec<State>,
    ) -> Result<()> {
        out.clear();
        out.push(x0);
        for u in controls {
            let next = self.step(*out.last().unwrap(), *u)?;
            out.push(next);
        }
        Ok(())
    }
}
