use serde::{Deserialize, Serialize};

use super::cn::Stencil;

/// Time-step schedule shared by every parabolic solve.
///
/// Steps start at `dt_start` (a quarter of `dx^2`, where the explicit half of
/// Crank–Nicolson is still positivity preserving), grow geometrically as
/// `growth * t` while the initial layer smooths out, and are capped at `dt_max`.
/// Steps ending after `fourth_order_from` use the fourth-order stencil.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeSchedule {
    pub dt_start: f64,
    pub dt_max: f64,
    pub growth: f64,
    pub fourth_order_from: f64,
}

impl TimeSchedule {
    pub fn for_spacing(dx: f64, dt_max: f64) -> Self {
        Self { dt_start: (0.25 * dx * dx).min(dt_max), dt_max, growth: 0.25, fourth_order_from: 1.0 }
    }

    /// Default cap `min(dx / 4, 0.01)`.
    pub fn default_dt_max(dx: f64) -> f64 {
        (0.25 * dx).min(0.01)
    }

    /// Stencil for the step ending at `t_new`.
    pub fn stencil_for(&self, t_new: f64) -> Stencil {
        if t_new > self.fourth_order_from {
            Stencil::Fourth
        } else {
            Stencil::Second
        }
    }

    #[inline]
    pub fn dt_at(&self, t: f64) -> f64 {
        (self.growth * t).clamp(self.dt_start, self.dt_max)
    }

    /// Next step from `t` toward `target`: returns `(dt, t_new)`. The step is
    /// shortened to land exactly on `target` (bitwise) without leaving a sliver
    /// step before it.
    pub fn advance(&self, t: f64, target: f64) -> (f64, f64) {
        let dt = self.dt_at(t);
        let rem = target - t;
        if rem <= dt * 1.000001 {
            (rem, target)
        } else if rem < 1.5 * dt {
            (0.5 * rem, t + 0.5 * rem)
        } else {
            (dt, t + dt)
        }
    }
}
