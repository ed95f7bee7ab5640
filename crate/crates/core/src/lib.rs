//! Model-following control (MFC) for minimum-phase nonlinear systems in
//! Byrnes–Isidori form.
//!
//! The crate is organized bottom-up:
//!
//! - [`ctrlmath`]: Lyapunov solves, eigenvalues, stability margins.
//! - [`plant`]: the controlled system class and toy plants.
//! - [`reference`]: online reference signals built from smoothstep segments.
//! - [`controllers`]: efficient and classical MFC, single-loop and PI laws,
//!   high-gain scaling and ε selection.
//! - [`sim`]: fixed-step closed-loop simulation, metrics and experiment drivers.
//! - [`vehicle`]: the engine-based cruise-control case study.

pub mod controllers;
pub mod ctrlmath;
pub mod plant;
pub mod reference;
pub mod sim;
pub mod vehicle;
