//! Reference-spreading QP control for dual-arm manipulation with nominally
//! simultaneous impacts.

pub mod contact;
pub mod control;
pub mod detection;
pub mod dynamics;
pub mod liegroup;
pub mod plant;
pub mod qp;
pub mod reference;
