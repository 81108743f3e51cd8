//! Tool calibration, bone and hand-eye registration, and the
//! virtual-mechanism controller of a robotic drill guide, plus a closed-loop
//! simulator to exercise them.

// `!(x > 0.0)` is how parameter checks reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod calibration;
pub mod geometry;
pub mod recording;
pub mod registration;
pub mod robot;
pub mod controller;
pub mod outer_loop;
pub mod passivity;
pub mod sim;
pub mod trajectory;
