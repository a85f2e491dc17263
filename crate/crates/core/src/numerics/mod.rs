//! Numerical building blocks shared by the solvers: an adaptive explicit
//! Runge–Kutta pair, a Crank–Nicolson stepper for 1D drift–diffusion–absorption
//! operators, least-squares fits, and the time-step schedule.

pub mod cn;
pub mod fit;
pub mod ode;
pub mod schedule;

pub use cn::{Absorption, CrankNicolson, Operator, Stencil};
pub use fit::{fit_inverse_sqrt, linear_fit, weighted_linear_fit, LinearFit};
pub use ode::{Dopri5, OdeOptions};
pub use schedule::TimeSchedule;
