//! The global invariant suite, evaluated at every finalized height and once
//! more when the run ends.

use std::collections::{BTreeMap, BTreeSet};

use memchr::memmem;

use crate::authlog::inc_verify;
use crate::chain::{ChainCall, ChainStatus};
use crate::codec::{Decode, Encode};
use crate::enclave::{allowed_issued, sealed_hash, QueryResolution, TxResolution};
use crate::ids::{ClientId, ContractId};
use crate::ledger::{Event, LockedTransferIn, LockedTransferOut, StateKey, StateValue, TxEvidence};
use crate::wallet::{Phase, Role, Session};

use super::report::{
    CensorshipRow, HeightRow, RunReport, SupplyRow, TransferOutcome, TransferRow, Verdict,
};
use super::scenario::Expected;
use super::world::World;

pub const AGGREGATE: &str = "aggregate supply";
pub const CONSERVATION: &str = "per-instance conservation";
pub const BALANCES: &str = "client balances";
pub const EXPECTATIONS: &str = "scenario expectations";
pub const CORRECTNESS: &str = "correctness";
pub const INTEGRITY: &str = "integrity";
pub const VERIFIABILITY: &str = "verifiability";
pub const NON_EQUIVOCATION: &str = "non-equivocation";
pub const CENSORSHIP: &str = "censorship evidence";
pub const PRIVACY: &str = "privacy";
pub const ISSUANCE: &str = "transparent issuance";
pub const ATOMICITY: &str = "atomic interoperability";
pub const INTER_CENSORSHIP: &str = "inter-instance censorship evidence";
pub const COLLUSION: &str = "collusion resistance";
pub const RECOVERY: &str = "recovery";
pub const IDENTITY: &str = "identity management";

/// The checks that hold for every run whatever its schedule.
pub const GLOBAL_CHECKS: &[&str] = &[
    AGGREGATE,
    CONSERVATION,
    BALANCES,
    CORRECTNESS,
    INTEGRITY,
    VERIFIABILITY,
    NON_EQUIVOCATION,
    CENSORSHIP,
    PRIVACY,
    ISSUANCE,
    ATOMICITY,
    INTER_CENSORSHIP,
    COLLUSION,
    RECOVERY,
    IDENTITY,
];

/// Evidence packages tampered per run.
const TAMPER_PACKAGES: usize = 12;
const TAMPER_POSITIONS: usize = 48;

pub(crate) struct Checker {
    heights: Vec<HeightRow>,
    aggregate: Verdict,
    conservation: Verdict,
    reads: Verdict,
    /// Heights where issued exceeds supplied.
    strict_heights: Vec<u64>,
    approved_ever: BTreeSet<ContractId>,
}

impl Default for Checker {
    fn default() -> Self {
        Checker {
            heights: Vec::new(),
            aggregate: Verdict::new(AGGREGATE),
            conservation: Verdict::new(CONSERVATION),
            reads: Verdict::new(NON_EQUIVOCATION),
            strict_heights: Vec::new(),
            approved_ever: BTreeSet::new(),
        }
    }
}

fn out_record(w: &World, ipsc: &ContractId, id: u64) -> Option<LockedTransferOut> {
    match w
        .nodes
        .get(ipsc)?
        .state()
        .get(&StateKey::OutTransfer { id })
    {
        Some(StateValue::Out { transfer }) => Some(transfer.clone()),
        _ => None,
    }
}

fn in_record(w: &World, ipsc: &ContractId, id: u64) -> Option<LockedTransferIn> {
    match w.nodes.get(ipsc)?.state().get(&StateKey::InTransfer { id }) {
        Some(StateValue::In { transfer }) => Some(transfer.clone()),
        _ => None,
    }
}

fn in_records(w: &World) -> Vec<(ContractId, u64, LockedTransferIn)> {
    let mut out = Vec::new();
    for (id, node) in &w.nodes {
        for (k, v) in node.state().iter() {
            if let (StateKey::InTransfer { id: n }, StateValue::In { transfer }) = (k, v) {
                out.push((*id, *n, transfer.clone()));
            }
        }
    }
    out
}

fn out_records(w: &World) -> Vec<(ContractId, u64, LockedTransferOut)> {
    let mut out = Vec::new();
    for (id, node) in &w.nodes {
        for (k, v) in node.state().iter() {
            if let (StateKey::OutTransfer { id: n }, StateValue::Out { transfer }) = (k, v) {
                out.push((*id, *n, transfer.clone()));
            }
        }
    }
    out
}

impl Checker {
    pub fn at_height(&mut self, w: &World) {
        let chain = &w.chain;
        let height = chain.finalized_height();
        if self.heights.last().is_some_and(|h| h.height == height) {
            return;
        }
        let st = chain.finalized_state();
        self.approved_ever.extend(st.approved(&w.imsc));

        let (mut sum_t_i, mut sum_t_s) = (0u64, 0u64);
        let (mut burned, mut minted) = (0i128, 0i128);
        let mut t_s = BTreeMap::new();
        for m in &w.instances {
            let Some(c) = st.ipsc(&m.id) else { continue };
            sum_t_i += c.t_i;
            sum_t_s += c.t_s;
            t_s.insert(m.name.clone(), c.t_s);
            let version = c.lroot_pb.map_or(0, |r| r.version);
            let node = &w.nodes[&m.id];
            for b in node.blocks().iter().filter(|b| b.header.id <= version) {
                for r in b.receipts.iter().filter(|r| r.ok()) {
                    for e in &r.events {
                        match e {
                            Event::SendCommitted { amount, .. } => burned += i128::from(*amount),
                            Event::ReceiveCommitted { transfer_id } => {
                                let amount =
                                    in_record(w, &m.id, *transfer_id).map_or(0, |t| t.amount);
                                minted += i128::from(amount);
                            }
                            _ => {}
                        }
                    }
                }
            }
        }
        let in_flight = burned - minted;
        self.aggregate.expect(
            in_flight >= 0 && i128::from(sum_t_s) + in_flight == i128::from(sum_t_i),
            || format!("height {height}: sum t_s {sum_t_s} + in flight {in_flight} != sum t_i {sum_t_i}"),
        );
        if sum_t_i > sum_t_s {
            self.strict_heights.push(height);
        }
        self.heights.push(HeightRow {
            height,
            time: chain.now(),
            sum_t_i,
            sum_t_s,
            in_flight: in_flight.max(0) as u64,
            t_s,
        });

        for m in &w.instances {
            let node = &w.nodes[&m.id];
            let supply = node.enclave().supply();
            let total = node.state().total_balance();
            self.conservation
                .expect(total == u128::from(supply.t_s), || {
                    format!(
                        "height {height}: {} holds {total} but supplies {}",
                        m.name, supply.t_s
                    )
                });
            // Every other node's view of this instance is a prefix of the chain's.
            let Some(c) = st.ipsc(&m.id) else { continue };
            for (reader, other) in &w.nodes {
                let Some(view) = other
                    .enclave()
                    .light_client()
                    .and_then(|lc| lc.instance(&m.id))
                else {
                    continue;
                };
                let prefix = view.roots.len() <= c.roots.len()
                    && c.roots[..view.roots.len()] == view.roots[..];
                self.reads.expect(prefix, || {
                    format!(
                        "height {height}: {} reads a history of {} the chain does not hold",
                        w.instance_name(reader),
                        m.name
                    )
                });
            }
        }
    }

    pub fn finish(self, w: &World) -> RunReport {
        let deadline = w.cfg.deadline();
        let end = w.chain.now();
        let mut observations = Vec::new();
        let st = w.chain.finalized_state();
        let finalized = w.chain.finalized_height();
        let final_blocks: Vec<_> = w
            .chain
            .blocks()
            .iter()
            .filter(|b| b.height <= finalized)
            .collect();

        let mut checks = Vec::new();
        checks.push(self.aggregate.finish());
        checks.push(self.conservation.clone_finish(w, &st));

        // Client balances against an oracle built from the schedule.
        let transfers = transfer_rows(w);
        let mut balances = Verdict::new(BALANCES);
        let mut expected: BTreeMap<String, i128> =
            w.wallets.keys().map(|c| (c.clone(), 0)).collect();
        for tx in &w.operator_txs {
            if let (Some((to, amount)), Some(r)) =
                (&tx.credit, w.receipt(&tx.instance, &tx.tx_hash))
            {
                if r.ok() {
                    *expected.get_mut(to).expect("known client") += i128::from(*amount);
                }
            }
        }
        for p in &w.client_txs {
            if w.receipt(&p.instance, &p.tx_hash).is_some_and(|r| r.ok()) {
                *expected.get_mut(&p.from).expect("known client") -= i128::from(p.amount);
                *expected.get_mut(&p.to).expect("known client") += i128::from(p.amount);
            }
        }
        for (t, row) in w.transfers.iter().zip(&transfers) {
            let home = w.homes[&t.from];
            let dest = w.homes[&t.to];
            if let Some(out) = row.send_id.and_then(|id| out_record(w, &home, id)) {
                if !out.is_reverted {
                    *expected.get_mut(&t.from).expect("known client") -= i128::from(out.amount);
                }
            }
            if let Some(inr) = row.recv_id.and_then(|id| in_record(w, &dest, id)) {
                if inr.is_completed {
                    *expected.get_mut(&t.to).expect("known client") += i128::from(inr.amount);
                }
            }
        }
        let mut final_balances = BTreeMap::new();
        for (c, want) in &expected {
            let got = w.balance(c);
            final_balances.insert(c.clone(), got);
            balances.expect(i128::from(got) == *want, || {
                format!("{c} holds {got}, expected {want}")
            });
        }
        checks.push(balances.finish());

        // Only enclave-signed pairs extended a ledger, and their roots
        // are the operator's history.
        let mut correct = Verdict::new(CORRECTNESS);
        let mut snapshots: BTreeMap<ContractId, Vec<(u64, crate::enclave::VersionTransitionPair)>> =
            BTreeMap::new();
        let mut ignored = 0u64;
        for b in &final_blocks {
            for (tx, r) in b.txs.iter().zip(&b.receipts) {
                let ChainCall::Snapshot { ipsc, pair } = &tx.call else {
                    continue;
                };
                if r.status == ChainStatus::Ignored {
                    ignored += 1;
                }
                if r.status != ChainStatus::Applied {
                    continue;
                }
                let Some(c) = st.ipsc(ipsc) else { continue };
                correct.expect(
                    tx.sender == c.operator && !c.pk_pb.contains(&tx.sender),
                    || {
                        format!(
                            "snapshot at {} posted by a key other than the operator's",
                            w.instance_name(ipsc)
                        )
                    },
                );
                correct.expect(c.pk_pb.iter().any(|k| pair.verifies_under(k)), || {
                    format!(
                        "pair at {} not signed by any enclave key",
                        w.instance_name(ipsc)
                    )
                });
                snapshots
                    .entry(*ipsc)
                    .or_default()
                    .push((b.time, pair.clone()));
            }
        }
        let mut integrity = Verdict::new(INTEGRITY);
        for m in &w.instances {
            let Some(c) = st.ipsc(&m.id) else { continue };
            let history = w.nodes[&m.id].history();
            for r in &c.roots {
                correct.expect(history.commitment_at(r.version) == Some(*r), || {
                    format!(
                        "root v{} at {} is not in the operator's history",
                        r.version, m.name
                    )
                });
            }
            for pair in c.roots.windows(2) {
                let ok = history
                    .inc_proof(&pair[0], &pair[1])
                    .is_ok_and(|p| inc_verify(&p, &pair[0], &pair[1]));
                integrity.expect(ok, || {
                    format!(
                        "{}: v{} does not extend to v{}",
                        m.name, pair[0].version, pair[1].version
                    )
                });
            }
            if let (Some(a), Some(b)) = (c.roots.first(), c.roots.last()) {
                let ok = history.inc_proof(a, b).is_ok_and(|p| inc_verify(&p, a, b));
                integrity.expect(ok, || {
                    format!("{}: first snapshot does not extend to the last", m.name)
                });
            }
        }
        checks.push(correct.finish());
        checks.push(integrity.finish());

        // Every verified package flips to rejected under tampering.
        let mut verifiable = Verdict::new(VERIFIABILITY);
        let packages: Vec<&TxEvidence> = all_sessions(w)
            .flat_map(|(_, s)| (1..=3).filter_map(|n| s.evidence(n)))
            .take(TAMPER_PACKAGES)
            .collect();
        for e in packages {
            verifiable.expect(e.verify_inclusion(), || {
                "a kept package no longer verifies".into()
            });
            let bytes = e.encode();
            for k in 0..TAMPER_POSITIONS {
                let pos = k * bytes.len() / TAMPER_POSITIONS;
                let mut b = bytes.clone();
                b[pos] ^= 0x01;
                let accepted = TxEvidence::decode(&b).is_ok_and(|t| t.verify_inclusion());
                verifiable.expect(!accepted, || {
                    format!("package with byte {pos} flipped still verifies")
                });
            }
        }
        checks.push(verifiable.finish());

        // One successor per root, and all reads agree.
        let mut single = self.reads;
        for (ipsc, pairs) in &snapshots {
            let mut seen = BTreeMap::new();
            for (_, p) in pairs {
                *seen.entry(p.root_from).or_insert(0u32) += 1;
            }
            for (from, n) in seen {
                single.expect(n == 1, || {
                    format!(
                        "{}: {n} accepted successors of {:?}",
                        w.instance_name(ipsc),
                        from.map(|c| c.version)
                    )
                });
            }
        }
        checks.push(single.finish());
        if ignored > 0 {
            observations.push(format!(
                "{ignored} snapshot(s) ignored for not extending the current root"
            ));
        }

        // CENSORSHIP/INTER_CENSORSHIP: every escalation is resolved with an enclave signature or
        // stands unresolved past the deadline.
        let home_of = |pk: &crate::crypto::PublicKey| w.client_by_pk(pk).map(|c| w.homes[&c]);
        let mut cens = Verdict::new(CENSORSHIP);
        let mut inter = Verdict::new(INTER_CENSORSHIP);
        let mut censorship = Vec::new();
        let mut resolutions: BTreeMap<(ContractId, u64), bool> = BTreeMap::new();
        for b in &final_blocks {
            for (tx, r) in b.txs.iter().zip(&b.receipts) {
                if r.status != ChainStatus::Applied {
                    continue;
                }
                let (ipsc, idx, ok) = match &tx.call {
                    ChainCall::ResolveCensTx {
                        ipsc,
                        idx,
                        status,
                        sig,
                    } => {
                        let ok =
                            st.ipsc(ipsc).and_then(|c| {
                                let etx = c.cens_reqs.get(*idx as usize)?.etx.as_ref()?;
                                Some(c.pk_pb.iter().any(|k| {
                                    TxResolution::verifies(k, sealed_hash(etx), *status, sig)
                                }))
                            });
                        (ipsc, idx, ok == Some(true))
                    }
                    ChainCall::ResolveCensQry {
                        ipsc,
                        idx,
                        status,
                        edata,
                        sig,
                    } => {
                        let ok = st.ipsc(ipsc).and_then(|c| {
                            let eq = c.cens_reqs.get(*idx as usize)?.equery.as_ref()?;
                            Some(c.pk_pb.iter().any(|k| {
                                QueryResolution::verifies(k, sealed_hash(eq), *status, edata, sig)
                            }))
                        });
                        (ipsc, idx, ok == Some(true))
                    }
                    _ => continue,
                };
                resolutions.insert((*ipsc, *idx), ok);
            }
        }
        for m in &w.instances {
            let Some(c) = st.ipsc(&m.id) else { continue };
            for (idx, info) in c.cens_reqs.iter().enumerate() {
                let idx = idx as u64;
                let standing = info.status.is_none() && end >= info.submitted_at + deadline;
                let resolved =
                    info.status.is_some() && resolutions.get(&(m.id, idx)) == Some(&true);
                let v = if home_of(&info.requester) == Some(m.id) {
                    &mut cens
                } else {
                    &mut inter
                };
                v.expect(resolved || standing, || {
                    format!(
                        "{} request {idx}: neither resolved with a signed status nor standing",
                        m.name
                    )
                });
                censorship.push(CensorshipRow {
                    instance: m.name.clone(),
                    idx,
                    requester: w
                        .client_by_pk(&info.requester)
                        .unwrap_or_else(|| "?".into()),
                    query: info.is_query(),
                    status: info.status,
                    submitted_at: info.submitted_at,
                    resolved_at: info.resolved_at,
                    proof_of_censorship: standing,
                });
            }
        }
        for (name, wallet) in &w.wallets {
            for e in wallet.escalations() {
                let v = if Some(e.target) == w.homes.get(name).copied() {
                    &mut cens
                } else {
                    &mut inter
                };
                if let Some(reason) = &e.contract_rejection {
                    v.fail(format!(
                        "{name}: escalation to {} rejected: {reason}",
                        w.instance_name(&e.target)
                    ));
                    continue;
                }
                let Some(idx) = e.idx else {
                    v.expect(end < e.submitted_at + 2 * deadline, || {
                        format!("{name}: escalation never reached the contract")
                    });
                    continue;
                };
                let info = st
                    .ipsc(&e.target)
                    .and_then(|c| c.cens_reqs.get(idx as usize));
                let Some(info) = info else {
                    v.fail(format!("{name}: escalation {idx} missing on chain"));
                    continue;
                };
                let own = wallet.client_ids().iter().any(|c| c.pk == info.requester);
                v.expect(own, || {
                    format!("{name}: request {idx} filed under another key")
                });
                match (e.status, info.status) {
                    (Some(a), Some(b)) => v.expect(a == b, || {
                        format!("{name}: request {idx} read as {a:?}, chain holds {b:?}")
                    }),
                    (None, Some(_)) => {}
                    (_, None) => v.expect(
                        e.flagged_unresolved || end < info.submitted_at + deadline,
                        || format!("{name}: unresolved request {idx} never flagged"),
                    ),
                }
            }
        }
        checks.push(cens.finish());

        // Nothing private reaches the chain in the clear.
        let mut private = Verdict::new(PRIVACY);
        let public = w.chain.public_bytes();
        if let Some((_, p)) = snapshots.values().flatten().next() {
            private.expect(memmem::find(&public, &p.root_to.root.0).is_some(), || {
                "scanner missed a public snapshot root".into()
            });
        }
        for (id, node) in &w.nodes {
            for b in node.blocks() {
                for tx in &b.txs {
                    private.expect(memmem::find(&public, &tx.encode()).is_none(), || {
                        format!(
                            "a transaction of {} appears on chain in the clear",
                            w.instance_name(id)
                        )
                    });
                }
            }
        }
        for (name, s) in all_sessions(w) {
            if let Some(secret) = s.secret() {
                private.expect(memmem::find(&public, secret).is_none(), || {
                    format!("{name}: a secret appears on chain")
                });
            }
        }
        checks.push(private.finish());

        // The issued total is reconstructible from snapshot transactions.
        let mut issued = Verdict::new(ISSUANCE);
        let mut supplies = Vec::new();
        for m in &w.instances {
            let Some(c) = st.ipsc(&m.id) else { continue };
            let mut t_i = c.t_i0;
            for (time, p) in snapshots.get(&m.id).into_iter().flatten() {
                let ok = if c.issue_authority {
                    p.t_i >= t_i && p.t_i <= allowed_issued(c.t_i0, c.i_r, c.created_at, *time)
                } else {
                    p.t_i == c.t_i0
                };
                issued.expect(ok, || {
                    format!("{}: t_i {} at t={time} breaks the bound", m.name, p.t_i)
                });
                t_i = p.t_i;
            }
            issued.expect(t_i == c.t_i, || {
                format!("{}: replayed t_i {t_i} != contract {}", m.name, c.t_i)
            });
            let node = &w.nodes[&m.id];
            if node.enclave().pending_pair().is_none() {
                let s = node.enclave().supply();
                issued.expect(s.t_i == c.t_i, || {
                    format!("{}: enclave t_i {} != contract {}", m.name, s.t_i, c.t_i)
                });
            }
            supplies.push(SupplyRow {
                instance: m.name.clone(),
                t_i: c.t_i,
                t_s: c.t_s,
                ledger_total: node.state().total_balance() as u64,
                snapshots: c.roots.len(),
            });
        }
        checks.push(issued.finish());

        // Per transfer, the two records agree and exclude each other.
        let mut atomic = Verdict::new(ATOMICITY);
        for (t, row) in w.transfers.iter().zip(&transfers) {
            let home = w.homes[&t.from];
            let dest = w.homes[&t.to];
            let out = row.send_id.and_then(|id| out_record(w, &home, id));
            let inr = row.recv_id.and_then(|id| in_record(w, &dest, id));
            if let Some(o) = &out {
                atomic.expect(!(o.is_completed && o.is_reverted), || {
                    format!("transfer {}: burned and refunded", row.index)
                });
                let minted = inr.as_ref().is_some_and(|i| i.is_completed);
                atomic.expect(!(o.is_reverted && minted), || {
                    format!("transfer {}: refunded and minted", row.index)
                });
            }
            atomic.expect(row.outcome != TransferOutcome::Inconsistent, || {
                format!("transfer {}: records contradict each other", row.index)
            });
            // Value stays burned and unminted only if a party walked away
            // after the burn.
            let sender_quits = sender_faults(w, t).is_some_and(|n| n >= 4);
            let receiver_quits = receiver_faults(w, t).is_some_and(|n| n >= 3);
            // A receiver censored at either instance holds a standing proof
            // of censorship in place of the mint.
            let receiver_pks: Vec<_> = w.wallets[&t.to].client_ids().iter().map(|c| c.pk).collect();
            let censored = [home, dest].iter().filter_map(|i| st.ipsc(i)).any(|c| {
                c.cens_reqs.iter().any(|i| {
                    receiver_pks.contains(&i.requester)
                        && i.status.is_none()
                        && i.submitted_at >= t.at
                })
            });
            if !sender_quits && !receiver_quits && !censored {
                atomic.expect(
                    !matches!(
                        row.outcome,
                        TransferOutcome::Pending | TransferOutcome::Unclaimed
                    ),
                    || format!("transfer {} ended {:?}", row.index, row.outcome),
                );
            }
        }
        checks.push(atomic.finish());
        checks.push(inter.finish());

        // No mint without a proven burn of the same transfer.
        let mut collusion = Verdict::new(COLLUSION);
        let outs = out_records(w);
        let ins = in_records(w);
        for (ipsc, id, i) in &ins {
            if !i.is_completed {
                continue;
            }
            let me = ClientId {
                pk: i.receiver,
                ipsc: *ipsc,
            };
            let burned = outs.iter().any(|(a, _, o)| {
                *a == i.sender.ipsc
                    && o.is_completed
                    && o.hashlock == i.hashlock
                    && o.amount == i.amount
                    && o.receiver == me
            });
            collusion.expect(burned, || {
                format!(
                    "{} minted record {id} without a burn",
                    w.instance_name(ipsc)
                )
            });
        }
        for (name, s) in all_sessions(w) {
            if s.role != Role::Sender || !s.secret_revealed || s.phase() == Phase::Done {
                continue;
            }
            let minted = s
                .recv_id
                .and_then(|rid| in_record(w, &s.peer.ipsc, rid))
                .is_some_and(|i| i.is_completed);
            collusion.expect(!minted, || format!("{name}: revealed secret led to a mint"));
        }
        checks.push(collusion.finish());

        // Refunds exclude mints; refunded sessions saw their refund.
        let mut recovery = Verdict::new(RECOVERY);
        for (ipsc, id, o) in &outs {
            if !o.is_reverted {
                continue;
            }
            let minted = ins.iter().any(|(b, _, i)| {
                *b == o.receiver.ipsc && i.is_completed && i.hashlock == o.hashlock
            });
            recovery.expect(!minted, || {
                format!(
                    "{} refunded record {id} that was minted",
                    w.instance_name(ipsc)
                )
            });
        }
        for (name, s) in all_sessions(w) {
            if s.role == Role::Sender && s.phase() == Phase::Reverted {
                let refunded = s
                    .send_id
                    .and_then(|id| out_record(w, &s.me.ipsc, id))
                    .is_some_and(|o| o.is_reverted);
                recovery.expect(refunded, || {
                    format!("{name}: session reverted without a refund")
                });
            }
        }
        checks.push(recovery.finish());

        // Value only moves between instances admitted at some point.
        let mut identity = Verdict::new(IDENTITY);
        for (ipsc, id, i) in &ins {
            if i.is_completed {
                identity.expect(
                    self.approved_ever.contains(ipsc)
                        && self.approved_ever.contains(&i.sender.ipsc),
                    || {
                        format!(
                            "{} minted record {id} from an instance never admitted",
                            w.instance_name(ipsc)
                        )
                    },
                );
            }
        }
        for (ipsc, id, o) in &outs {
            if o.is_completed {
                identity.expect(self.approved_ever.contains(&o.receiver.ipsc), || {
                    format!(
                        "{} burned record {id} towards an instance never admitted",
                        w.instance_name(ipsc)
                    )
                });
            }
        }
        checks.push(identity.finish());

        let balances_ok = checks.iter().all(|c| c.passed);
        let expectations = expectations(w, &transfers, &final_balances, ignored);
        checks.push(expectations);
        let _ = balances_ok;

        if !self.strict_heights.is_empty() {
            observations.push(format!(
                "sum of t_i exceeded sum of t_s at {} finalized height(s), all while a burn awaited its mint",
                self.strict_heights.len()
            ));
        }
        if w.dropped > 0 {
            observations.push(format!(
                "{} client message(s) dropped by operators",
                w.dropped
            ));
        }

        let mut trace = w.trace.clone();
        for m in &w.instances {
            for line in w.nodes[&m.id].log() {
                trace.push(format!("[{}] {line}", m.name));
            }
        }
        for (name, s) in all_sessions(w) {
            for line in &s.log {
                trace.push(format!("[{name}#{}:{:?}] {line}", s.tag, s.role));
            }
        }

        RunReport {
            scenario: w.cfg.name.clone(),
            seed: w.cfg.seed,
            passed: checks.iter().all(|c| c.passed),
            end_time: end,
            final_height: finalized,
            checks,
            observations,
            transfers,
            supplies,
            balances: final_balances,
            censorship,
            heights: self.heights,
            trace,
        }
    }
}

impl Verdict {
    /// Adds the end-of-run contract comparison to the per-height verdict.
    fn clone_finish(
        mut self,
        w: &World,
        st: &crate::chain::ChainState,
    ) -> super::report::CheckResult {
        for m in &w.instances {
            let node = &w.nodes[&m.id];
            let Some(c) = st.ipsc(&m.id) else { continue };
            if node.enclave().pending_pair().is_none() && node.is_idle() {
                let s = node.enclave().supply();
                self.expect(s.t_s == c.t_s, || {
                    format!("{}: enclave t_s {} != contract {}", m.name, s.t_s, c.t_s)
                });
            }
        }
        self.finish()
    }
}

fn all_sessions(w: &World) -> impl Iterator<Item = (&String, &Session)> {
    w.wallets
        .iter()
        .flat_map(|(n, wl)| wl.sessions().iter().map(move |s| (n, s)))
}

fn sender_faults(w: &World, t: &super::world::TransferRef) -> Option<u8> {
    w.wallets[&t.from]
        .session(t.tag?, Role::Sender)?
        .faults
        .abort_before
}

fn receiver_faults(w: &World, t: &super::world::TransferRef) -> Option<u8> {
    let tag = t.tag?;
    let me = w.client_id(&t.from);
    w.wallets[&t.to]
        .sessions()
        .iter()
        .find(|s| s.role == Role::Receiver && s.tag == tag && s.peer == me)
        .and_then(|s| s.faults.abort_before)
}

fn transfer_rows(w: &World) -> Vec<TransferRow> {
    w.transfers
        .iter()
        .enumerate()
        .map(|(index, t)| {
            let me = w.client_id(&t.from);
            let sender = t
                .tag
                .and_then(|tag| w.wallets[&t.from].session(tag, Role::Sender));
            let receiver = t.tag.and_then(|tag| {
                w.wallets[&t.to]
                    .sessions()
                    .iter()
                    .find(|s| s.role == Role::Receiver && s.tag == tag && s.peer == me)
            });
            let send_id = sender.and_then(|s| s.send_id);
            let recv_id = receiver
                .and_then(|s| s.recv_id)
                .or(sender.and_then(|s| s.recv_id));
            let out = send_id.and_then(|id| out_record(w, &w.homes[&t.from], id));
            let inr = recv_id.and_then(|id| in_record(w, &w.homes[&t.to], id));
            let minted = inr.as_ref().is_some_and(|i| i.is_completed);
            let outcome = match &out {
                None => TransferOutcome::Rejected,
                Some(o) if o.is_completed && minted => TransferOutcome::Completed,
                Some(o) if o.is_reverted && !minted => TransferOutcome::Refunded,
                Some(o) if !o.is_completed && !o.is_reverted && !minted => TransferOutcome::Pending,
                Some(o) if o.is_completed && !minted => TransferOutcome::Unclaimed,
                Some(_) => TransferOutcome::Inconsistent,
            };
            TransferRow {
                index,
                from: t.from.clone(),
                to: t.to.clone(),
                amount: t.amount,
                outcome,
                sender_phase: sender.map(Session::phase),
                receiver_phase: receiver.map(Session::phase),
                send_id,
                recv_id,
                started_at: t.at,
                finished_at: sender.and_then(|s| s.finished_at),
                claim_rejections: receiver
                    .map(|s| s.claim_rejections.clone())
                    .unwrap_or_default(),
                start_error: t.start_error.clone(),
            }
        })
        .collect()
}

fn expectations(
    w: &World,
    transfers: &[TransferRow],
    balances: &BTreeMap<String, u64>,
    ignored: u64,
) -> super::report::CheckResult {
    let e = &w.cfg.expect;
    let mut v = Verdict::new(EXPECTATIONS);
    for (c, want) in &e.balances {
        let got = balances.get(c).copied().unwrap_or(0);
        v.expect(got == *want, || {
            format!("{c}: balance {got}, expected {want}")
        });
    }
    v.expect(
        e.transfers.is_empty() || e.transfers.len() == transfers.len(),
        || {
            format!(
                "{} transfers ran, {} expected",
                transfers.len(),
                e.transfers.len()
            )
        },
    );
    for (row, want) in transfers.iter().zip(&e.transfers) {
        let ok = matches!(
            (want, row.outcome),
            (Expected::Completed, TransferOutcome::Completed)
                | (Expected::Refunded, TransferOutcome::Refunded)
                | (Expected::Rejected, TransferOutcome::Rejected)
        );
        v.expect(ok, || {
            format!(
                "transfer {}: {:?}, expected {want:?}",
                row.index, row.outcome
            )
        });
    }
    let st = w.chain.finalized_state();
    if let Some(names) = &e.approved {
        let want: BTreeSet<ContractId> = names.iter().map(|n| w.instance_id(n)).collect();
        let got: BTreeSet<ContractId> = st.approved(&w.imsc).into_iter().collect();
        v.expect(want == got, || {
            let names: Vec<String> = got.iter().map(|i| w.instance_name(i)).collect();
            format!(
                "admitted {names:?}, expected {:?}",
                e.approved.as_ref().expect("set")
            )
        });
    }
    for (name, want) in &e.t_i {
        let got = st.ipsc(&w.instance_id(name)).map_or(0, |c| c.t_i);
        v.expect(got == *want, || {
            format!("{name}: t_i {got}, expected {want}")
        });
    }
    if let Some(want) = e.reverted_operator_txs {
        let reverted: Vec<&str> = w
            .operator_txs
            .iter()
            .filter(|t| w.receipt(&t.instance, &t.tx_hash).is_some_and(|r| !r.ok()))
            .map(|t| t.what.as_str())
            .collect();
        let got = reverted.len();
        v.expect(got == want, || {
            format!("{got} operator transactions reverted {reverted:?}, expected {want}")
        });
    }
    if let Some(want) = e.rejected_registry_calls {
        let got = w
            .registry_calls
            .iter()
            .filter(|(_, h)| {
                w.chain
                    .final_receipt(h)
                    .is_some_and(|r| r.status == ChainStatus::Rejected)
            })
            .count();
        v.expect(got == want, || {
            format!("{got} registry calls rejected, expected {want}")
        });
    }
    let escalations: usize = w.wallets.values().map(|x| x.escalations().len()).sum();
    v.expect(escalations >= e.min_escalations, || {
        format!(
            "{escalations} escalations, expected at least {}",
            e.min_escalations
        )
    });
    let unresolved = st
        .ipscs()
        .flat_map(|(_, c)| c.cens_reqs.iter())
        .filter(|i| i.status.is_none())
        .count();
    v.expect(unresolved >= e.min_unresolved, || {
        format!(
            "{unresolved} unresolved requests, expected at least {}",
            e.min_unresolved
        )
    });
    v.expect(ignored >= e.min_ignored_snapshots, || {
        format!(
            "{ignored} ignored snapshots, expected at least {}",
            e.min_ignored_snapshots
        )
    });
    let rejected: usize = transfers.iter().map(|t| t.claim_rejections.len()).sum();
    v.expect(rejected >= e.min_rejected_claims, || {
        format!(
            "{rejected} claims rejected, expected at least {}",
            e.min_rejected_claims
        )
    });
    v.finish()
}
