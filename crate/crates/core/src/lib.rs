pub mod actors;
pub mod cas;
pub mod chain;
pub mod contracts;
pub mod crypto;
pub mod ledger;
pub mod scenario;
