//! The micro-ledger: accounts, transactions, blocks, receipts, the state map
//! and the VM with its two native interoperability contracts.

mod iomc;
mod state;
mod types;
mod vm;

pub use state::{PartialState, State, StateError, StateKey, StateValue, Witness};
pub use types::{
    hashlock_of, AccessTicket, Account, Call, Event, ForeignEvidence, Header, IomcCall,
    IomcContract, LockedTransferIn, LockedTransferOut, MicroTx, RcptStatus, Receipt, TxBody,
    TxEvidence,
};
pub use vm::{run_vm, touched_hint, Supply, TxError, VmConfig, VmEnv, VmError, VmOutput};
