//! Simulation, proprioceptive torque estimation and admittance control for a
//! single tendon-driven finger joint.

pub mod geometry;
pub mod gpr;
pub mod muscle;
pub mod control;
pub mod plant;
pub mod sim;
pub mod datagen;
pub mod harness;
