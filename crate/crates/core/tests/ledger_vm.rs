use std::cell::Cell;
use std::collections::{BTreeSet, HashSet};

use cbdc_core::crypto::hash;
use cbdc_core::crypto::{KeyPair, PublicKey, Scheme};
use cbdc_core::ids::{Address, ClientId, ContractId};
use cbdc_core::ledger::{
    hashlock_of, run_vm, touched_hint, AccessTicket, Account, Call, Event, ForeignEvidence,
    IomcCall, MicroTx, RcptStatus, State, StateKey, StateValue, Supply, TxError, VmConfig, VmEnv,
    VmError, VmOutput,
};
use cbdc_core::time::{Timestamp, HOUR};
use proptest::prelude::*;

struct Env {
    now: Cell<Timestamp>,
    me: ContractId,
    registered: HashSet<Address>,
    peers: HashSet<ContractId>,
    foreign_ok: Cell<bool>,
    cap: u64,
    tee: KeyPair,
}

impl VmEnv for Env {
    fn now(&self) -> Timestamp {
        self.now.get()
    }
    fn own_instance(&self) -> ContractId {
        self.me
    }
    fn is_registered(&self, a: &Address) -> bool {
        self.registered.contains(a)
    }
    fn knows_instance(&self, id: &ContractId) -> bool {
        self.peers.contains(id)
    }
    fn verify_foreign(&self, _: &ForeignEvidence) -> bool {
        self.foreign_ok.get()
    }
    fn issuance_allowed(&self, t_i: u64) -> bool {
        t_i <= self.cap
    }
    fn issue_ticket(&self, client: PublicKey, expires_at: Timestamp) -> AccessTicket {
        AccessTicket::sign(&self.tee, client, self.me, expires_at)
    }
}

fn cid(name: &str) -> ContractId {
    ContractId(hash(name.as_bytes()))
}

fn key(label: &str) -> KeyPair {
    KeyPair::derive(Scheme::Pb, 7, label)
}

struct Fixture {
    state: State,
    supply: Supply,
    cfg: VmConfig,
    env: Env,
    nonces: std::collections::HashMap<PublicKey, u64>,
}

const TIMEOUT: u64 = 24 * HOUR;

impl Fixture {
    fn new(balances: &[(&KeyPair, u64)]) -> Self {
        let operator = key("operator");
        let mut state = State::new();
        let mut registered = HashSet::new();
        let mut total = 0;
        for (k, b) in balances {
            let a = Address::of(&k.public());
            registered.insert(a);
            state.set(
                StateKey::account(a),
                StateValue::Account {
                    account: Account {
                        balance: *b,
                        nonce: 0,
                    },
                },
            );
            total += b;
        }
        Fixture {
            state,
            supply: Supply {
                t_i: total,
                t_s: total,
            },
            cfg: VmConfig {
                htlc_timeout: TIMEOUT,
                ticket_window: 2 * TIMEOUT,
                allow_fund: true,
                operator: operator.public(),
                issue_authority: true,
            },
            env: Env {
                now: Cell::new(1_000),
                me: cid("A"),
                registered,
                peers: [cid("B")].into_iter().collect(),
                foreign_ok: Cell::new(true),
                cap: u64::MAX,
                tee: KeyPair::derive(Scheme::Tee, 7, "tee"),
            },
            nonces: Default::default(),
        }
    }

    fn tx(&mut self, k: &KeyPair, call: Call, value: u64) -> MicroTx {
        let n = self.nonces.entry(k.public()).or_insert(0);
        let tx = MicroTx::sign(k, *n, call, value);
        *n += 1;
        tx
    }

    /// Runs a batch the way an operator would: hinted keys first, widened on
    /// every `Missing` until execution succeeds.
    fn run(&mut self, txs: &[MicroTx]) -> VmOutput {
        let mut keys: BTreeSet<StateKey> = txs.iter().flat_map(touched_hint).collect();
        loop {
            let partial = self.state.partial(&keys);
            match run_vm(txs, &partial, self.supply, &self.cfg, &self.env) {
                Ok(out) => {
                    let next = partial.apply(&out.writes).unwrap();
                    self.state.absorb(&next);
                    assert_eq!(next.root, self.state.root());
                    self.supply = out.supply;
                    return out;
                }
                Err(VmError::Missing(m)) => {
                    assert!(!m.is_subset(&keys), "missing keys must be new");
                    keys.extend(m);
                }
                Err(e) => panic!("{e}"),
            }
        }
    }

    fn balance(&self, k: &KeyPair) -> u64 {
        self.state.account(&Address::of(&k.public())).balance
    }

    fn escrow(&self) -> u64 {
        self.state.account(&Address::iomc_send()).balance
    }

    fn out(&self, id: u64) -> cbdc_core::ledger::LockedTransferOut {
        match self.state.get(&StateKey::OutTransfer { id }) {
            Some(StateValue::Out { transfer }) => transfer.clone(),
            other => panic!("no outgoing transfer {id}: {other:?}"),
        }
    }

    fn register(&mut self, k: &KeyPair) {
        self.env.registered.insert(Address::of(&k.public()));
    }
}

fn transfer(to: &KeyPair, amount: u64) -> Call {
    Call::Transfer {
        to: Address::of(&to.public()),
        amount,
    }
}

fn foreign_client(label: &str) -> ClientId {
    ClientId {
        pk: key(label).public(),
        ipsc: cid("B"),
    }
}

fn send_init(receiver: ClientId, secret: &[u8]) -> Call {
    Call::Iomc {
        call: IomcCall::SendInit {
            receiver,
            hashlock: hashlock_of(secret),
        },
    }
}

/// Evidence wrapping `mu_tx` with a receipt carrying `events`. The proofs
/// are well formed but arbitrary; the mock environment decides whether the
/// anchoring verifies, the VM checks the contents.
fn evidence(mu_tx: MicroTx, events: Vec<Event>) -> ForeignEvidence {
    use cbdc_core::authlog::HistoryTree;
    use cbdc_core::ledger::{Header, Receipt, TxEvidence};
    let mut t = HistoryTree::new();
    let c = t.add(b"x");
    ForeignEvidence {
        foreign_ipsc: cid("B"),
        inclusion: TxEvidence {
            receipt: Receipt {
                tx_hash: mu_tx.hash(),
                status: RcptStatus::Ok,
                events,
                gas: 0,
            },
            mu_tx,
            header: Header {
                id: 1,
                txs_root: hash(b""),
                rcp_root: hash(b""),
                st_root: hash(b""),
            },
            mk_proof: cbdc_core::authlog::mk_proof(0, &[b"r"]).unwrap(),
            mem_proof: t.mem_proof(0, &c).unwrap(),
            lroot: c,
        },
        inc_proof: t.inc_proof(&c, &c).unwrap(),
        lroot_pb: c,
    }
}

/// Receive-side evidence for an outgoing transfer of `amount` locked by `a`
/// to [`foreign_client`]("b").
fn receive_side(a: &KeyPair, secret: &[u8], amount: u64) -> ForeignEvidence {
    let me = ClientId {
        pk: a.public(),
        ipsc: cid("A"),
    };
    let b = key("b");
    let call = IomcCall::ReceiveInit {
        sender: me,
        hashlock: hashlock_of(secret),
        amount,
    };
    let tx = MicroTx::sign(&b, 0, Call::Iomc { call }, 0);
    evidence(
        tx,
        vec![Event::ReceiveInitialized {
            transfer_id: 0,
            sender: me,
            receiver: b.public(),
            amount,
            hashlock: hashlock_of(secret),
        }],
    )
}

/// Send-side burn evidence for incoming transfer `id` to `b`.
fn send_side(b: &KeyPair, id: u64, secret: &[u8], amount: u64) -> ForeignEvidence {
    let me = ClientId {
        pk: b.public(),
        ipsc: cid("A"),
    };
    let a = key("a");
    let call = IomcCall::SendCommit {
        transfer_id: 0,
        secret: secret.to_vec(),
        ext_transfer_id: id,
        evidence: Box::new(receive_side(&a, secret, amount)),
    };
    let tx = MicroTx::sign(&a, 1, Call::Iomc { call }, 0);
    evidence(
        tx,
        vec![Event::SendCommitted {
            transfer_id: 0,
            ext_transfer_id: id,
            receiver: me,
            amount,
        }],
    )
}

#[test]
fn transfer_moves_exact_amount() {
    let (a, b) = (key("a"), key("b"));
    let mut f = Fixture::new(&[(&a, 50), (&b, 0)]);
    let tx = f.tx(&a, transfer(&b, 10), 0);
    let out = f.run(&[tx]);
    assert_eq!(out.receipts.len(), 1);
    assert_eq!(out.receipts[0].status, RcptStatus::Ok);
    assert_eq!(f.balance(&a), 40);
    assert_eq!(f.balance(&b), 10);
}

#[test]
fn overdraft_reverts_without_moving_tokens() {
    let (a, b) = (key("a"), key("b"));
    let mut f = Fixture::new(&[(&a, 50), (&b, 0)]);
    let tx = f.tx(&a, transfer(&b, 51), 0);
    let out = f.run(&[tx]);
    assert_eq!(out.receipts[0].status, RcptStatus::Reverted);
    assert_eq!(
        out.receipts[0].revert_reason(),
        Some("insufficient balance")
    );
    assert_eq!(f.balance(&a), 50);
    assert_eq!(f.balance(&b), 0);
    assert_eq!(f.state.account(&Address::of(&a.public())).nonce, 1);
}

#[test]
fn bad_signature_is_filtered_and_replay_is_identical() {
    let (a, b, c) = (key("a"), key("b"), key("c"));
    let mut f = Fixture::new(&[(&a, 50), (&b, 0), (&c, 30)]);
    let good1 = f.tx(&a, transfer(&b, 5), 0);
    let mut bad = f.tx(&c, transfer(&b, 7), 0);
    bad.body.value = 0;
    bad.body.nonce = 0;
    bad.sig = a.sign(b"not this");
    let good2 = f.tx(&a, transfer(&c, 1), 0);
    let batch = vec![good1, bad.clone(), good2];

    let mut replay = Fixture::new(&[(&a, 50), (&b, 0), (&c, 30)]);
    let out = f.run(&batch);
    let again = replay.run(&batch);

    assert_eq!(out.rejected, vec![(bad, TxError::Signature {})]);
    assert_eq!(out.accepted.len(), 2);
    assert_eq!(out.receipts, again.receipts);
    assert_eq!(out.writes, again.writes);
    assert_eq!(f.state.root(), replay.state.root());
    assert_eq!(f.balance(&b), 5);
    assert_eq!(f.balance(&c), 31);
}

#[test]
fn wrong_nonce_and_unregistered_sender_are_filtered() {
    let (a, b, stranger) = (key("a"), key("b"), key("stranger"));
    let mut f = Fixture::new(&[(&a, 50), (&b, 0)]);
    let skip = MicroTx::sign(&a, 3, transfer(&b, 1), 0);
    let foreign = MicroTx::sign(&stranger, 0, transfer(&b, 1), 0);
    let out = f.run(&[skip, foreign]);
    assert!(out.receipts.is_empty());
    assert_eq!(
        out.rejected[0].1,
        TxError::Nonce {
            expected: 0,
            got: 3
        }
    );
    assert_eq!(out.rejected[1].1, TxError::UnregisteredSender {});
}

#[test]
fn send_init_requires_positive_value() {
    let a = key("a");
    let mut f = Fixture::new(&[(&a, 50)]);
    let tx = f.tx(&a, send_init(foreign_client("b"), b"s"), 0);
    let out = f.run(&[tx]);
    assert_eq!(
        out.receipts[0].revert_reason(),
        Some("value must be positive")
    );
    assert_eq!(f.escrow(), 0);
}

#[test]
fn send_init_locks_until_timeout_and_numbers_from_zero() {
    let a = key("a");
    let mut f = Fixture::new(&[(&a, 50)]);
    let t = f.env.now();
    let first = f.tx(&a, send_init(foreign_client("b"), b"s1"), 25);
    let second = f.tx(&a, send_init(foreign_client("b"), b"s2"), 5);
    let out = f.run(&[first, second]);
    assert!(out.receipts.iter().all(|r| r.ok()), "{:?}", out.receipts);
    let ids: Vec<u64> = out
        .receipts
        .iter()
        .flat_map(|r| &r.events)
        .filter_map(|e| match e {
            Event::SendInitialized { transfer_id, .. } => Some(*transfer_id),
            _ => None,
        })
        .collect();
    assert_eq!(ids, vec![0, 1]);
    let rec = f.out(0);
    assert_eq!(rec.timelock, t + 24 * HOUR);
    assert_eq!(rec.amount, 25);
    assert!(!rec.is_completed && !rec.is_reverted);
    assert_eq!(f.escrow(), 30);
    assert_eq!(f.balance(&a), 20);
    // escrow is still supplied by this instance
    assert_eq!(f.supply.t_s, 50);
    let ticket = out.receipts[0].ticket().expect("ticket for the receiver");
    assert_eq!(ticket.client_pk, key("b").public());
    assert!(ticket.expires_at >= t + 24 * HOUR);
    assert!(ticket.verifies_under(&f.env.tee.public()));
}

#[test]
fn send_init_to_unknown_or_own_instance_reverts() {
    let a = key("a");
    let mut f = Fixture::new(&[(&a, 50)]);
    let own = ClientId {
        pk: key("b").public(),
        ipsc: cid("A"),
    };
    let unknown = ClientId {
        pk: key("b").public(),
        ipsc: cid("Z"),
    };
    let t1 = f.tx(&a, send_init(own, b"s"), 5);
    let t2 = f.tx(&a, send_init(unknown, b"s"), 5);
    let out = f.run(&[t1, t2]);
    assert!(out
        .receipts
        .iter()
        .all(|r| r.status == RcptStatus::Reverted));
    assert_eq!(f.balance(&a), 50);
}

fn commit_with(id: u64, secret: &[u8], evidence: ForeignEvidence) -> Call {
    Call::Iomc {
        call: IomcCall::SendCommit {
            transfer_id: id,
            secret: secret.to_vec(),
            ext_transfer_id: 0,
            evidence: Box::new(evidence),
        },
    }
}

/// Commit by `a` with receive-side evidence for 25 tokens under `secret`.
fn commit(a: &KeyPair, id: u64, secret: &[u8]) -> Call {
    commit_with(id, secret, receive_side(a, secret, 25))
}

fn revert_call(id: u64) -> Call {
    Call::Iomc {
        call: IomcCall::SendRevert { transfer_id: id },
    }
}

fn locked(f: &mut Fixture, a: &KeyPair, secret: &[u8], amount: u64) {
    let tx = f.tx(a, send_init(foreign_client("b"), secret), amount);
    assert!(f.run(&[tx]).receipts[0].ok());
}

#[test]
fn send_commit_burns_escrow_and_supply() {
    let a = key("a");
    let mut f = Fixture::new(&[(&a, 50)]);
    locked(&mut f, &a, b"secret", 25);
    let tx = f.tx(&a, commit(&a, 0, b"secret"), 0);
    let out = f.run(&[tx]);
    assert!(out.receipts[0].ok(), "{:?}", out.receipts[0]);
    assert_eq!(f.supply.t_s, 25);
    assert_eq!(f.supply.t_i, 50);
    assert_eq!(f.escrow(), 0);
    assert!(f.out(0).is_completed);
}

#[test]
fn send_commit_guards() {
    let a = key("a");
    let mut f = Fixture::new(&[(&a, 50)]);
    locked(&mut f, &a, b"secret", 25);
    let root = f.state.root();
    let wrong = f.tx(&a, commit(&a, 0, b"guess"), 0);
    let unknown = f.tx(&a, commit(&a, 9, b"secret"), 0);
    let out = f.run(&[wrong, unknown]);
    assert_eq!(out.receipts[0].revert_reason(), Some("wrong secret"));
    assert_eq!(out.receipts[1].revert_reason(), Some("unknown transfer"));
    assert_eq!(f.escrow(), 25);
    assert_ne!(f.state.root(), root, "nonces still advance");

    f.env.foreign_ok.set(false);
    let unproven = f.tx(&a, commit(&a, 0, b"secret"), 0);
    assert_eq!(
        f.run(&[unproven]).receipts[0].revert_reason(),
        Some("receive-side evidence rejected")
    );
    f.env.foreign_ok.set(true);

    let ok = f.tx(&a, commit(&a, 0, b"secret"), 0);
    let twice = f.tx(&a, commit(&a, 0, b"secret"), 0);
    let out = f.run(&[ok, twice]);
    assert!(out.receipts[0].ok());
    assert_eq!(
        out.receipts[1].revert_reason(),
        Some("transfer is not pending")
    );
    assert_eq!(f.supply.t_s, 25);
}

#[test]
fn send_revert_boundary_at_timelock() {
    let a = key("a");
    let mut f = Fixture::new(&[(&a, 50)]);
    locked(&mut f, &a, b"s", 25);
    let timelock = f.out(0).timelock;

    f.env.now.set(timelock - 1);
    let early = f.tx(&a, revert_call(0), 0);
    assert_eq!(
        f.run(&[early]).receipts[0].revert_reason(),
        Some("timelock has not expired")
    );
    assert_eq!(f.balance(&a), 25);

    f.env.now.set(timelock);
    let on_time = f.tx(&a, revert_call(0), 0);
    assert!(f.run(&[on_time]).receipts[0].ok());
    assert_eq!(f.balance(&a), 50);
    assert_eq!(f.escrow(), 0);
    assert!(f.out(0).is_reverted && !f.out(0).is_completed);

    let commit_after = f.tx(&a, commit(&a, 0, b"s"), 0);
    let again = f.tx(&a, revert_call(0), 0);
    let out = f.run(&[commit_after, again]);
    assert!(out
        .receipts
        .iter()
        .all(|r| r.status == RcptStatus::Reverted));
    assert_eq!(f.supply.t_s, 50);
}

#[test]
fn send_revert_after_commit_fails() {
    let a = key("a");
    let mut f = Fixture::new(&[(&a, 50)]);
    locked(&mut f, &a, b"s", 25);
    let c = f.tx(&a, commit(&a, 0, b"s"), 0);
    f.run(&[c]);
    f.env.now.set(f.out(0).timelock + 1);
    let r = f.tx(&a, revert_call(0), 0);
    assert_eq!(
        f.run(&[r]).receipts[0].revert_reason(),
        Some("transfer is not pending")
    );
    assert_eq!(f.balance(&a), 25);
}

fn receive_init(amount: u64, secret: &[u8]) -> Call {
    Call::Iomc {
        call: IomcCall::ReceiveInit {
            sender: foreign_client("a"),
            hashlock: hashlock_of(secret),
            amount,
        },
    }
}

fn claim(id: u64, secret: &[u8], evidence: Option<ForeignEvidence>) -> Call {
    Call::Iomc {
        call: IomcCall::ReceiveCommit {
            transfer_id: id,
            secret: secret.to_vec(),
            evidence: evidence.map(Box::new),
        },
    }
}

#[test]
fn receive_init_numbers_and_locks_nothing() {
    let b = key("b");
    let mut f = Fixture::new(&[(&b, 3)]);
    let zero = f.tx(&b, receive_init(0, b"s"), 0);
    let out = f.run(&[zero]);
    assert_eq!(
        out.receipts[0].revert_reason(),
        Some("amount must be positive")
    );

    let txs: Vec<MicroTx> = (0..3)
        .map(|i| f.tx(&b, receive_init(10 + i, b"s"), 0))
        .collect();
    let out = f.run(&txs);
    let ids: Vec<u64> = out
        .receipts
        .iter()
        .flat_map(|r| &r.events)
        .filter_map(|e| match e {
            Event::ReceiveInitialized { transfer_id, .. } => Some(*transfer_id),
            _ => None,
        })
        .collect();
    assert_eq!(ids, vec![0, 1, 2]);
    assert_eq!(f.balance(&b), 3);
    assert_eq!(f.supply.t_s, 3);
}

#[test]
fn receive_commit_mints_once_with_evidence() {
    let b = key("b");
    let mut f = Fixture::new(&[(&b, 0)]);
    let init = f.tx(&b, receive_init(25, b"s"), 0);
    f.run(&[init]);

    let none = f.tx(&b, claim(0, b"s", None), 0);
    let wrong = f.tx(&b, claim(0, b"x", Some(send_side(&b, 0, b"s", 25))), 0);
    let out = f.run(&[none, wrong]);
    assert_eq!(
        out.receipts[0].revert_reason(),
        Some("missing deduction evidence")
    );
    assert_eq!(out.receipts[1].revert_reason(), Some("wrong secret"));
    assert_eq!(f.balance(&b), 0);

    f.env.foreign_ok.set(false);
    let bogus = f.tx(&b, claim(0, b"s", Some(send_side(&b, 0, b"s", 25))), 0);
    assert_eq!(
        f.run(&[bogus]).receipts[0].revert_reason(),
        Some("deduction evidence rejected")
    );
    f.env.foreign_ok.set(true);

    let ok = f.tx(&b, claim(0, b"s", Some(send_side(&b, 0, b"s", 25))), 0);
    let replay = f.tx(&b, claim(0, b"s", Some(send_side(&b, 0, b"s", 25))), 0);
    let out = f.run(&[ok, replay]);
    assert!(out.receipts[0].ok());
    assert_eq!(
        out.receipts[1].revert_reason(),
        Some("transfer is not pending")
    );
    assert_eq!(f.balance(&b), 25);
    assert_eq!(f.supply.t_s, 25);
    assert_eq!(f.state.account(&Address::iomc_recv()).balance, 0);
}

#[test]
fn issue_respects_authority_and_cap() {
    let (op, a) = (key("operator"), key("a"));
    let mut f = Fixture::new(&[(&op, 0), (&a, 1000)]);
    f.env.cap = 1100;
    let issue = |n| Call::Issue {
        beneficiary: Address::of(&key("a").public()),
        amount: n,
    };
    let by_user = f.tx(&a, issue(1), 0);
    let over = f.tx(&op, issue(101), 0);
    let exact = f.tx(&op, issue(100), 0);
    let more = f.tx(&op, issue(1), 0);
    let out = f.run(&[by_user, over, exact, more]);
    let reasons: Vec<_> = out.receipts.iter().map(|r| r.revert_reason()).collect();
    assert_eq!(
        reasons,
        vec![
            Some("only the operator may issue"),
            Some("inflation cap exceeded"),
            None,
            Some("inflation cap exceeded")
        ]
    );
    assert_eq!(
        f.supply,
        Supply {
            t_i: 1100,
            t_s: 1100
        }
    );
    assert_eq!(f.balance(&a), 1100);

    f.cfg.issue_authority = false;
    let denied = f.tx(&op, issue(1), 0);
    assert_eq!(
        f.run(&[denied]).receipts[0].revert_reason(),
        Some("instance has no issuance authority")
    );
}

#[test]
fn fund_moves_value_into_receive_contract() {
    let a = key("a");
    let mut f = Fixture::new(&[(&a, 10)]);
    let tx = f.tx(
        &a,
        Call::Iomc {
            call: IomcCall::Fund {},
        },
        4,
    );
    assert!(f.run(&[tx]).receipts[0].ok());
    assert_eq!(f.state.account(&Address::iomc_recv()).balance, 4);
    f.cfg.allow_fund = false;
    let tx = f.tx(
        &a,
        Call::Iomc {
            call: IomcCall::Fund {},
        },
        1,
    );
    assert_eq!(
        f.run(&[tx]).receipts[0].revert_reason(),
        Some("faucet disabled")
    );
}

#[test]
fn value_on_non_payable_call_reverts() {
    let (a, b) = (key("a"), key("b"));
    let mut f = Fixture::new(&[(&a, 10), (&b, 0)]);
    let tx = f.tx(&a, transfer(&b, 1), 3);
    assert_eq!(
        f.run(&[tx]).receipts[0].revert_reason(),
        Some("call is not payable")
    );
    assert_eq!(f.balance(&a), 10);
}

#[test]
fn tampered_partial_state_rejects_whole_batch() {
    let (a, b) = (key("a"), key("b"));
    let mut f = Fixture::new(&[(&a, 50), (&b, 0)]);
    let tx = f.tx(&a, transfer(&b, 10), 0);
    let keys: BTreeSet<StateKey> = touched_hint(&tx).into_iter().collect();
    let mut partial = f.state.partial(&keys);
    partial.entries.insert(
        StateKey::account(Address::of(&a.public())),
        Some(StateValue::Account {
            account: Account {
                balance: 5000,
                nonce: 0,
            },
        }),
    );
    assert!(matches!(
        run_vm(&[tx], &partial, f.supply, &f.cfg, &f.env),
        Err(VmError::Witness(_))
    ));
}

#[derive(Debug, Clone)]
enum Op {
    Transfer(usize, usize, u64),
    Lock(usize, u64),
    Commit(usize, u64),
    Revert(usize, u64),
    Advance(u64),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        (0..4usize, 0..4usize, 0..40u64).prop_map(|(a, b, n)| Op::Transfer(a, b, n)),
        (0..4usize, prop_oneof![Just(25u64), 0..30u64]).prop_map(|(a, n)| Op::Lock(a, n)),
        (0..4usize, 0..6u64).prop_map(|(a, id)| Op::Commit(a, id)),
        (0..4usize, 0..6u64).prop_map(|(a, id)| Op::Revert(a, id)),
        (0..2 * TIMEOUT).prop_map(Op::Advance),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Balances plus escrow track the supply; no transfer is ever both
    /// completed and reverted; the enclave-side partial root always agrees
    /// with a full recomputation.
    #[test]
    fn supply_and_exclusivity(ops in prop::collection::vec(op(), 1..24), batch in 1..5usize) {
        let keys: Vec<KeyPair> = (0..4).map(|i| key(&format!("u{i}"))).collect();
        let refs: Vec<(&KeyPair, u64)> = keys.iter().map(|k| (k, 40)).collect();
        let mut f = Fixture::new(&refs);
        let mut pending = Vec::new();
        let mut burned = 0u64;
        for chunk in ops.chunks(batch) {
            for o in chunk {
                let tx = match *o {
                    Op::Transfer(a, b, n) => f.tx(&keys[a], transfer(&keys[b], n), 0),
                    Op::Lock(a, n) => f.tx(&keys[a], send_init(foreign_client("b"), b"k"), n),
                    Op::Commit(a, id) => f.tx(&keys[a], commit_with(id, b"k", receive_side(&keys[a], b"k", 25)), 0),
                    Op::Revert(a, id) => f.tx(&keys[a], revert_call(id), 0),
                    Op::Advance(dt) => {
                        f.env.now.set(f.env.now() + dt);
                        continue;
                    }
                };
                pending.push(tx);
            }
            let before = f.supply.t_s;
            let out = f.run(&std::mem::take(&mut pending));
            prop_assert!(out.rejected.is_empty());
            prop_assert_eq!(out.receipts.len(), out.accepted.len());
            burned += before - f.supply.t_s;
            prop_assert_eq!(f.state.total_balance(), f.supply.t_s as u128);
            prop_assert_eq!(f.supply.t_i, 160);
            prop_assert_eq!(f.supply.t_s + burned, 160);
        }
        for (_, v) in f.state.iter() {
            if let StateValue::Out { transfer } = v {
                prop_assert!(!(transfer.is_completed && transfer.is_reverted));
                prop_assert!(transfer.amount > 0);
            }
        }
    }

    /// Plain transfers conserve the sum of balances, reverted ones included.
    #[test]
    fn transfers_conserve(moves in prop::collection::vec((0..5usize, 0..5usize, 0..80u64), 1..30)) {
        let keys: Vec<KeyPair> = (0..5).map(|i| key(&format!("t{i}"))).collect();
        let refs: Vec<(&KeyPair, u64)> = keys.iter().map(|k| (k, 30)).collect();
        let mut f = Fixture::new(&refs);
        let txs: Vec<MicroTx> = moves.iter().map(|&(a, b, n)| f.tx(&keys[a], transfer(&keys[b], n), 0)).collect();
        let before = f.state.total_balance();
        let out = f.run(&txs);
        prop_assert_eq!(out.receipts.len(), txs.len());
        prop_assert_eq!(f.state.total_balance(), before);
    }
}

#[test]
fn registration_gate_applies_to_recipient() {
    let (a, b) = (key("a"), key("late"));
    let mut f = Fixture::new(&[(&a, 10)]);
    let tx = f.tx(&a, transfer(&b, 1), 0);
    assert_eq!(
        f.run(&[tx]).receipts[0].revert_reason(),
        Some("recipient is not registered")
    );
    f.register(&b);
    let tx = f.tx(&a, transfer(&b, 1), 0);
    assert!(f.run(&[tx]).receipts[0].ok());
    assert_eq!(f.balance(&b), 1);
}
