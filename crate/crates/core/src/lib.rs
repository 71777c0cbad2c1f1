//! Interoperable bank ledgers with enclave-enforced integrity.
//!
//! Each bank instance runs a micro-ledger inside a simulated enclave, posts
//! signed root transitions to a contract on a simulated public chain, and
//! moves tokens to other instances with a four-phase hash-locked transfer
//! whose burn and mint steps are proven across ledgers.

pub mod authlog;
pub mod chain;
pub mod codec;
pub mod crypto;
pub mod enclave;
pub mod harness;
pub mod ids;
pub mod ledger;
pub mod node;
pub mod time;
pub mod wallet;
