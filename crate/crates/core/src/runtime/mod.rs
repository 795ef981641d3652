//! Deployment-side pieces that need no operating system: the UDP packet
//! layout, cascaded policy selection and the packet-driven controller with
//! its plant-model observer.

mod cascade;
mod controller;
pub mod wire;

pub use cascade::{cascade_select, CascadeBin, CascadeConfig, Selection};
pub use controller::{Controller, Drop, Observer, Reply};
pub use wire::{ActionPacket, StatePacket, Status, WireError};
