//! Reflected linear differential equations driven by rough signals.
//!
//! The crate builds explicit driving signals under which the reflected
//! equation `dZ = A Z dλ - e1 dγ + e1 dK` (with `A = [[0,1],[1,0]]` and `Z`
//! confined to `x >= 0`) has many solutions, solves the equation exactly or
//! by Euler projection, classifies moduli of continuity by the Osgood
//! criterion and samples fractional Brownian motion for Monte-Carlo work.

pub mod constructions;
pub mod dynamics;
pub mod error;
pub mod fbm;
pub mod moduli;
pub mod parallel;
pub mod signals;
pub mod skorokhod;
pub mod time;

pub use error::{Error, Result};
pub use time::Time;
