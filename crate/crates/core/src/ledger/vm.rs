//! Deterministic batch execution over a partial state.
//!
//! Each transaction runs against its own overlay. A transaction that fails
//! to parse, carries a bad signature, reuses a nonce or comes from an
//! unregistered key is rejected without a receipt. Every other transaction
//! gets exactly one receipt; a reverted one keeps only its nonce bump.

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;
use thiserror::Error;

use crate::crypto::PublicKey;
use crate::ids::{Address, ContractId};
use crate::time::Timestamp;
use crate::{impl_codec, impl_codec_enum};

use super::iomc;
use super::state::{PartialState, StateError, StateKey, StateValue};
use super::types::{
    AccessTicket, Account, Call, Event, ForeignEvidence, IomcCall, MicroTx, RcptStatus, Receipt,
};

/// Token counters the enclave exposes to the native contracts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Supply {
    pub t_i: u64,
    pub t_s: u64,
}
impl_codec!(Supply { t_i, t_s });

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VmConfig {
    pub htlc_timeout: u64,
    pub ticket_window: u64,
    pub allow_fund: bool,
    pub operator: PublicKey,
    pub issue_authority: bool,
}

/// What the VM may ask of the enclave hosting it.
pub trait VmEnv {
    fn now(&self) -> Timestamp;
    fn own_instance(&self) -> ContractId;
    fn is_registered(&self, address: &Address) -> bool;
    /// Whether `id` is an admitted instance tracked by the light client.
    fn knows_instance(&self, id: &ContractId) -> bool;
    fn verify_foreign(&self, evidence: &ForeignEvidence) -> bool;
    fn issuance_allowed(&self, new_t_i: u64) -> bool;
    fn issue_ticket(&self, client: PublicKey, expires_at: Timestamp) -> AccessTicket;
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TxError {
    #[error("signature does not verify")]
    Signature {},
    #[error("nonce {got} does not match account nonce {expected}")]
    Nonce { expected: u64, got: u64 },
    #[error("sender is not a registered client")]
    UnregisteredSender {},
}
impl_codec_enum!(TxError, "tx error" {
    0 => Signature {},
    1 => Nonce { expected, got },
    2 => UnregisteredSender {},
});

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VmError {
    #[error("partial state rejected: {0}")]
    Witness(#[from] StateError),
    #[error("partial state lacks {} entries", .0.len())]
    Missing(BTreeSet<StateKey>),
}

#[derive(Debug, Clone)]
pub struct VmOutput {
    pub writes: BTreeMap<StateKey, StateValue>,
    pub accepted: Vec<MicroTx>,
    pub receipts: Vec<Receipt>,
    pub rejected: Vec<(MicroTx, TxError)>,
    pub supply: Supply,
}

/// Reason a call reverted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Revert(pub String);

pub(crate) fn revert<T>(reason: &str) -> Result<T, Revert> {
    Err(Revert(reason.to_string()))
}

pub(crate) struct Ctx<'a> {
    base: &'a PartialState,
    batch: BTreeMap<StateKey, StateValue>,
    tx: BTreeMap<StateKey, StateValue>,
    missing: BTreeSet<StateKey>,
    pub supply: Supply,
    pub cfg: &'a VmConfig,
    pub env: &'a dyn VmEnv,
}

impl Ctx<'_> {
    pub fn get(&mut self, key: &StateKey) -> Option<StateValue> {
        if let Some(v) = self.tx.get(key).or_else(|| self.batch.get(key)) {
            return Some(v.clone());
        }
        match self.base.get(key) {
            Some(v) => v.clone(),
            None => {
                self.missing.insert(key.clone());
                None
            }
        }
    }

    pub fn set(&mut self, key: StateKey, value: StateValue) {
        if self.base.get(&key).is_none() {
            self.missing.insert(key.clone());
        }
        self.tx.insert(key, value);
    }

    pub fn account(&mut self, address: &Address) -> Account {
        match self.get(&StateKey::account(*address)) {
            Some(StateValue::Account { account }) => account,
            _ => Account::default(),
        }
    }

    pub fn set_account(&mut self, address: &Address, account: Account) {
        self.set(StateKey::account(*address), StateValue::Account { account });
    }

    pub fn debit(&mut self, address: &Address, amount: u64) -> Result<(), Revert> {
        let mut a = self.account(address);
        if a.balance < amount {
            return revert("insufficient balance");
        }
        a.balance -= amount;
        self.set_account(address, a);
        Ok(())
    }

    pub fn credit(&mut self, address: &Address, amount: u64) -> Result<(), Revert> {
        let mut a = self.account(address);
        a.balance = match a.balance.checked_add(amount) {
            Some(b) => b,
            None => return revert("balance overflow"),
        };
        self.set_account(address, a);
        Ok(())
    }

    pub fn move_tokens(&mut self, from: &Address, to: &Address, amount: u64) -> Result<(), Revert> {
        self.debit(from, amount)?;
        self.credit(to, amount)
    }

    pub fn counter(&mut self, key: StateKey) -> u64 {
        match self.get(&key) {
            Some(StateValue::Counter { value }) => value,
            _ => 0,
        }
    }

    fn commit_tx(&mut self) {
        let tx = std::mem::take(&mut self.tx);
        self.batch.extend(tx);
    }

    fn bump_nonce(&mut self, address: &Address) {
        let mut a = self.account(address);
        a.nonce += 1;
        self.set_account(address, a);
        self.commit_tx();
    }
}

/// Runs `txs` in order over `base`.
///
/// Fails as a whole if the witness does not verify, or if execution needed
/// an entry the partial state does not cover; in the latter case the error
/// lists every missing key seen so the caller can widen the partial state.
pub fn run_vm(
    txs: &[MicroTx],
    base: &PartialState,
    supply: Supply,
    cfg: &VmConfig,
    env: &dyn VmEnv,
) -> Result<VmOutput, VmError> {
    base.verify()?;
    let mut ctx = Ctx {
        base,
        batch: BTreeMap::new(),
        tx: BTreeMap::new(),
        missing: BTreeSet::new(),
        supply,
        cfg,
        env,
    };
    let mut accepted = Vec::new();
    let mut receipts = Vec::new();
    let mut rejected = Vec::new();
    for tx in txs {
        match admit(&mut ctx, tx) {
            Err(e) => rejected.push((tx.clone(), e)),
            Ok(sender) => {
                let before = ctx.supply;
                let receipt = match dispatch(&mut ctx, tx) {
                    Ok(events) => {
                        ctx.commit_tx();
                        Receipt {
                            tx_hash: tx.hash(),
                            status: RcptStatus::Ok,
                            events,
                            gas: 0,
                        }
                    }
                    Err(Revert(reason)) => {
                        ctx.tx.clear();
                        ctx.supply = before;
                        Receipt {
                            tx_hash: tx.hash(),
                            status: RcptStatus::Reverted,
                            events: vec![Event::Reverted { reason }],
                            gas: 0,
                        }
                    }
                };
                ctx.bump_nonce(&sender);
                accepted.push(tx.clone());
                receipts.push(receipt);
            }
        }
    }
    if !ctx.missing.is_empty() {
        return Err(VmError::Missing(ctx.missing));
    }
    Ok(VmOutput {
        writes: ctx.batch,
        accepted,
        receipts,
        rejected,
        supply: ctx.supply,
    })
}

fn admit(ctx: &mut Ctx<'_>, tx: &MicroTx) -> Result<Address, TxError> {
    if !tx.signature_valid() {
        return Err(TxError::Signature {});
    }
    let sender = Address::of(&tx.body.sender);
    if !ctx.env.is_registered(&sender) {
        return Err(TxError::UnregisteredSender {});
    }
    let expected = ctx.account(&sender).nonce;
    if tx.body.nonce != expected {
        return Err(TxError::Nonce {
            expected,
            got: tx.body.nonce,
        });
    }
    Ok(sender)
}

fn dispatch(ctx: &mut Ctx<'_>, tx: &MicroTx) -> Result<Vec<Event>, Revert> {
    let sender = Address::of(&tx.body.sender);
    let payable = matches!(
        tx.body.call,
        Call::Iomc {
            call: IomcCall::SendInit { .. } | IomcCall::Fund {}
        }
    );
    if !payable && tx.body.value != 0 {
        return revert("call is not payable");
    }
    match &tx.body.call {
        Call::Transfer { to, amount } => {
            if *amount == 0 {
                return revert("amount must be positive");
            }
            if !ctx.env.is_registered(to) {
                return revert("recipient is not registered");
            }
            ctx.move_tokens(&sender, to, *amount)?;
            Ok(vec![Event::Transferred {
                from: sender,
                to: *to,
                amount: *amount,
            }])
        }
        Call::Issue {
            beneficiary,
            amount,
        } => {
            if tx.body.sender != ctx.cfg.operator {
                return revert("only the operator may issue");
            }
            if !ctx.cfg.issue_authority {
                return revert("instance has no issuance authority");
            }
            if *amount == 0 {
                return revert("amount must be positive");
            }
            let Some(new_t_i) = ctx.supply.t_i.checked_add(*amount) else {
                return revert("issued total overflows");
            };
            if !ctx.env.issuance_allowed(new_t_i) {
                return revert("inflation cap exceeded");
            }
            ctx.credit(beneficiary, *amount)?;
            ctx.supply.t_i = new_t_i;
            ctx.supply.t_s += amount;
            Ok(vec![Event::Issued {
                beneficiary: *beneficiary,
                amount: *amount,
            }])
        }
        Call::Iomc { call } => iomc::execute(ctx, tx, call),
    }
}

/// Keys a transaction will almost certainly read, so an operator can build a
/// first partial state without executing anything.
pub fn touched_hint(tx: &MicroTx) -> Vec<StateKey> {
    let mut keys = vec![StateKey::account(Address::of(&tx.body.sender))];
    match &tx.body.call {
        Call::Transfer { to, .. } => keys.push(StateKey::account(*to)),
        Call::Issue { beneficiary, .. } => keys.push(StateKey::account(*beneficiary)),
        Call::Iomc { call } => match call {
            IomcCall::SendInit { .. } => {
                keys.push(StateKey::account(Address::iomc_send()));
                keys.push(StateKey::OutCount {});
            }
            IomcCall::SendCommit { transfer_id, .. } | IomcCall::SendRevert { transfer_id } => {
                keys.push(StateKey::account(Address::iomc_send()));
                keys.push(StateKey::OutTransfer { id: *transfer_id });
            }
            IomcCall::ReceiveInit { .. } => keys.push(StateKey::InCount {}),
            IomcCall::ReceiveCommit { transfer_id, .. } => {
                keys.push(StateKey::account(Address::iomc_recv()));
                keys.push(StateKey::InTransfer { id: *transfer_id });
            }
            IomcCall::Fund {} => keys.push(StateKey::account(Address::iomc_recv())),
        },
    }
    keys
}
