//! The sending (hash-time-locked) and receiving (hash-locked) native
//! contracts. Escrow is the sending contract's account balance; burning and
//! minting adjust the enclave's total supply through the VM context.

use crate::ids::{Address, ClientId};

use super::state::{StateKey, StateValue};
use super::types::{
    hashlock_of, Event, ForeignEvidence, IomcCall, LockedTransferIn, LockedTransferOut, MicroTx,
};
use super::vm::{revert, Ctx, Revert};

pub(crate) fn execute(
    ctx: &mut Ctx<'_>,
    tx: &MicroTx,
    call: &IomcCall,
) -> Result<Vec<Event>, Revert> {
    let caller = Address::of(&tx.body.sender);
    match call {
        IomcCall::SendInit { receiver, hashlock } => {
            let value = tx.body.value;
            if value == 0 {
                return revert("value must be positive");
            }
            if receiver.ipsc == ctx.env.own_instance() {
                return revert("receiver is on this instance");
            }
            if !ctx.env.knows_instance(&receiver.ipsc) {
                return revert("receiver instance is not admitted");
            }
            ctx.move_tokens(&caller, &Address::iomc_send(), value)?;
            let id = ctx.counter(StateKey::OutCount {});
            ctx.set(StateKey::OutCount {}, StateValue::Counter { value: id + 1 });
            let timelock = ctx.env.now() + ctx.cfg.htlc_timeout;
            ctx.set(
                StateKey::OutTransfer { id },
                StateValue::Out {
                    transfer: LockedTransferOut {
                        sender: tx.body.sender,
                        receiver: *receiver,
                        amount: value,
                        hashlock: *hashlock,
                        timelock,
                        is_completed: false,
                        is_reverted: false,
                    },
                },
            );
            let ticket = ctx
                .env
                .issue_ticket(receiver.pk, ctx.env.now() + ctx.cfg.ticket_window);
            Ok(vec![
                Event::SendInitialized {
                    transfer_id: id,
                    sender: tx.body.sender,
                    receiver: *receiver,
                    amount: value,
                    hashlock: *hashlock,
                    timelock,
                },
                Event::TicketIssued { ticket },
            ])
        }
        IomcCall::SendCommit {
            transfer_id,
            secret,
            ext_transfer_id,
            evidence,
        } => {
            let mut t = out_transfer(ctx, *transfer_id)?;
            if t.hashlock != hashlock_of(secret) {
                return revert("wrong secret");
            }
            if t.is_completed || t.is_reverted {
                return revert("transfer is not pending");
            }
            if !receive_side_matches(ctx, &t, *ext_transfer_id, evidence) {
                return revert("receive-side evidence rejected");
            }
            t.is_completed = true;
            ctx.debit(&Address::iomc_send(), t.amount)?;
            let Some(t_s) = ctx.supply.t_s.checked_sub(t.amount) else {
                return revert("total supply underflow");
            };
            ctx.supply.t_s = t_s;
            let ev = Event::SendCommitted {
                transfer_id: *transfer_id,
                ext_transfer_id: *ext_transfer_id,
                receiver: t.receiver,
                amount: t.amount,
            };
            ctx.set(
                StateKey::OutTransfer { id: *transfer_id },
                StateValue::Out { transfer: t },
            );
            Ok(vec![ev])
        }
        IomcCall::SendRevert { transfer_id } => {
            let mut t = out_transfer(ctx, *transfer_id)?;
            if t.is_completed || t.is_reverted {
                return revert("transfer is not pending");
            }
            if t.timelock > ctx.env.now() {
                return revert("timelock has not expired");
            }
            ctx.move_tokens(&Address::iomc_send(), &Address::of(&t.sender), t.amount)?;
            t.is_reverted = true;
            ctx.set(
                StateKey::OutTransfer { id: *transfer_id },
                StateValue::Out { transfer: t },
            );
            Ok(vec![Event::SendReverted {
                transfer_id: *transfer_id,
            }])
        }
        IomcCall::ReceiveInit {
            sender,
            hashlock,
            amount,
        } => {
            if *amount == 0 {
                return revert("amount must be positive");
            }
            if sender.ipsc == ctx.env.own_instance() {
                return revert("sender is on this instance");
            }
            if !ctx.env.knows_instance(&sender.ipsc) {
                return revert("sender instance is not admitted");
            }
            let id = ctx.counter(StateKey::InCount {});
            ctx.set(StateKey::InCount {}, StateValue::Counter { value: id + 1 });
            ctx.set(
                StateKey::InTransfer { id },
                StateValue::In {
                    transfer: LockedTransferIn {
                        sender: *sender,
                        receiver: tx.body.sender,
                        amount: *amount,
                        hashlock: *hashlock,
                        is_completed: false,
                    },
                },
            );
            let ticket = ctx
                .env
                .issue_ticket(sender.pk, ctx.env.now() + ctx.cfg.ticket_window);
            Ok(vec![
                Event::ReceiveInitialized {
                    transfer_id: id,
                    sender: *sender,
                    receiver: tx.body.sender,
                    amount: *amount,
                    hashlock: *hashlock,
                },
                Event::TicketIssued { ticket },
            ])
        }
        IomcCall::ReceiveCommit {
            transfer_id,
            secret,
            evidence,
        } => {
            let mut t = match ctx.get(&StateKey::InTransfer { id: *transfer_id }) {
                Some(StateValue::In { transfer }) => transfer,
                _ => return revert("unknown transfer"),
            };
            if t.hashlock != hashlock_of(secret) {
                return revert("wrong secret");
            }
            if t.is_completed {
                return revert("transfer is not pending");
            }
            let Some(evidence) = evidence else {
                return revert("missing deduction evidence");
            };
            if !send_side_burned(ctx, &t, *transfer_id, evidence) {
                return revert("deduction evidence rejected");
            }
            let recv = Address::iomc_recv();
            ctx.credit(&recv, t.amount)?;
            let Some(t_s) = ctx.supply.t_s.checked_add(t.amount) else {
                return revert("total supply overflow");
            };
            ctx.supply.t_s = t_s;
            ctx.move_tokens(&recv, &Address::of(&t.receiver), t.amount)?;
            t.is_completed = true;
            ctx.set(
                StateKey::InTransfer { id: *transfer_id },
                StateValue::In { transfer: t },
            );
            Ok(vec![Event::ReceiveCommitted {
                transfer_id: *transfer_id,
            }])
        }
        IomcCall::Fund {} => {
            if !ctx.cfg.allow_fund {
                return revert("faucet disabled");
            }
            if tx.body.value == 0 {
                return revert("value must be positive");
            }
            ctx.move_tokens(&caller, &Address::iomc_recv(), tx.body.value)?;
            Ok(vec![Event::Funded {
                amount: tx.body.value,
            }])
        }
    }
}

fn out_transfer(ctx: &mut Ctx<'_>, id: u64) -> Result<LockedTransferOut, Revert> {
    match ctx.get(&StateKey::OutTransfer { id }) {
        Some(StateValue::Out { transfer }) => Ok(transfer),
        _ => revert("unknown transfer"),
    }
}

/// The counterparty executed a matching `ReceiveInit` whose record id is
/// `ext_transfer_id`, and that instance has snapshotted it.
fn receive_side_matches(
    ctx: &mut Ctx<'_>,
    t: &LockedTransferOut,
    ext_transfer_id: u64,
    ev: &ForeignEvidence,
) -> bool {
    let me = ClientId {
        pk: t.sender,
        ipsc: ctx.env.own_instance(),
    };
    let inc = &ev.inclusion;
    let call_matches = matches!(
        inc.mu_tx.iomc(),
        Some(IomcCall::ReceiveInit { sender, hashlock, amount })
            if *sender == me && *hashlock == t.hashlock && *amount == t.amount
    );
    let event_matches = inc.receipt.events.iter().any(|e| {
        matches!(e, Event::ReceiveInitialized { transfer_id, sender, receiver, amount, hashlock }
            if *transfer_id == ext_transfer_id
                && *sender == me
                && *receiver == t.receiver.pk
                && *amount == t.amount
                && *hashlock == t.hashlock)
    });
    ev.foreign_ipsc == t.receiver.ipsc
        && inc.mu_tx.body.sender == t.receiver.pk
        && call_matches
        && event_matches
        && ctx.env.verify_foreign(ev)
}

/// The sending instance burned exactly this transfer's amount for this
/// receiver, keyed by our record id, and has snapshotted the burn.
fn send_side_burned(
    ctx: &mut Ctx<'_>,
    t: &LockedTransferIn,
    transfer_id: u64,
    ev: &ForeignEvidence,
) -> bool {
    let me = ClientId {
        pk: t.receiver,
        ipsc: ctx.env.own_instance(),
    };
    let inc = &ev.inclusion;
    let call_matches = matches!(
        inc.mu_tx.iomc(),
        Some(IomcCall::SendCommit { secret, ext_transfer_id, .. })
            if *ext_transfer_id == transfer_id && hashlock_of(secret) == t.hashlock
    );
    let event_matches = inc.receipt.events.iter().any(|e| {
        matches!(e, Event::SendCommitted { ext_transfer_id, receiver, amount, .. }
            if *ext_transfer_id == transfer_id && *receiver == me && *amount == t.amount)
    });
    ev.foreign_ipsc == t.sender.ipsc && call_matches && event_matches && ctx.env.verify_foreign(ev)
}
