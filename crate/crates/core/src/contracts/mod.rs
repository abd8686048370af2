//! The four contracts. Each module adds its operations to [`Chain`] and keeps
//! its own state struct inside it.
//!
//! [`Chain`]: crate::chain::Chain

pub mod c_govt;
pub mod c_vc;
pub mod c_vf;
pub mod vc_govt;

#[cfg(test)]
pub(crate) mod testkit;
