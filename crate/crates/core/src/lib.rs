//! Contextual multi-agent eco-driving simulation at signalized intersections.

pub mod context;
pub mod emissions;
pub mod env;
pub mod sim;
pub mod eval;
pub mod calibrate;
