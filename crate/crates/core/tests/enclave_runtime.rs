mod common;

use cbdc_core::authlog::{empty_root, mk_root, HistoryTree};
use cbdc_core::codec::{Decode, Encode};
use cbdc_core::crypto::{seal_to, KeyPair, Platform, QuoteVerifier, Scheme};
use cbdc_core::enclave::{
    allowed_issued, measurement, treasury, CensStatus, EcallRequest, EcallResponse, Enclave,
    EnclaveError, InflationRate, QueryAnswer, QueryRequest, QueryResolution, TxResolution,
};
use cbdc_core::ids::Address;
use cbdc_core::ledger::{Call, MicroTx, RcptStatus};
use cbdc_core::time::{DAY, YEAR};
use common::oracle::cap_oracle;
use common::{Solo, TIMEOUT};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn user(label: &str) -> KeyPair {
    KeyPair::derive(Scheme::Pb, 99, label)
}

fn pay(to: &KeyPair, amount: u64) -> Call {
    Call::Transfer {
        to: Address::of(&to.public()),
        amount,
    }
}

#[test]
fn init_emits_keys_and_attests() {
    let mut e = Enclave::new(Platform::simulated(), 1);
    assert_eq!(e.id_cur(), 1);
    assert_eq!(e.lroot_pb(), None);
    let out = e.init().unwrap();
    assert_eq!(e.id_cur(), 1);
    assert_eq!(e.lroot_pb(), None);
    assert_eq!(out.pk_pb.scheme, Scheme::Pb);
    assert_eq!(out.pk_tee.scheme, Scheme::Tee);
    let v = QuoteVerifier::simulated();
    assert!(v.verify_quote(&out.quote, &measurement()).unwrap());
    assert_eq!(out.quote.enclave_pk, out.pk_tee);
    assert_eq!(e.init(), Err(EnclaveError::AlreadyInitialized));
}

#[test]
fn genesis_allocates_initial_issuance_to_treasury() {
    let s = Solo::standard();
    let acct = s.state.account(&treasury(&s.operator.public()));
    assert_eq!(acct.balance, 1000);
    assert_eq!(s.enclave.supply().t_i, 1000);
    assert_eq!(s.enclave.supply().t_s, 1000);
    assert!(s.enclave.is_registered(&s.operator.public()));
    assert_eq!(s.enclave.own_instance(), Some(s.ipsc));
}

#[test]
fn empty_batch_advances_version_with_empty_roots() {
    let mut s = Solo::standard();
    let out = s.exec(&[]).unwrap();
    assert_eq!(out.header.id, 1);
    assert_eq!(out.header.txs_root, empty_root());
    assert_eq!(out.header.rcp_root, empty_root());
    assert_eq!(out.header.st_root, s.state.root());
    assert_eq!(s.enclave.id_cur(), 2);
    assert_eq!(out.pair.root_from, None);
    assert_eq!(out.pair.root_to.version, 1);
}

#[test]
fn receipts_root_commits_to_every_receipt() {
    let mut s = Solo::standard();
    let (a, b, c) = (user("a"), user("b"), user("c"));
    for k in [&a, &b, &c] {
        s.enclave.register(k.public()).unwrap();
    }
    let op = s.operator.clone();
    let txs = vec![
        s.mtx(&op, pay(&a, 10), 0),
        s.mtx(&op, pay(&b, 20), 0),
        s.mtx(&op, pay(&c, 30), 0),
    ];
    let out = s.exec(&txs).unwrap();
    assert_eq!(out.receipts.len(), 3);
    let enc: Vec<Vec<u8>> = out.receipts.iter().map(Encode::encode).collect();
    assert_eq!(out.header.rcp_root, mk_root(&enc).unwrap());
    let tx_enc: Vec<Vec<u8>> = txs.iter().map(Encode::encode).collect();
    assert_eq!(out.header.txs_root, mk_root(&tx_enc).unwrap());
    assert_eq!(s.state.account(&Address::of(&c.public())).balance, 30);
}

#[test]
fn stale_partial_state_is_refused_and_nothing_changes() {
    let mut s = Solo::standard();
    let a = user("a");
    s.enclave.register(a.public()).unwrap();
    let stale = s.state.partial(&Default::default());
    let op = s.operator.clone();
    let t = s.mtx(&op, pay(&a, 1), 0);
    s.step(&[t]);
    let before = (
        s.enclave.id_cur(),
        s.enclave.lroot_cur(),
        s.enclave.st_root(),
    );
    let t = s.mtx(&op, pay(&a, 1), 0);
    match s.enclave.exec(&[t], &[], &stale) {
        Err(EnclaveError::StaleState { expected, got }) => {
            assert_eq!(expected, s.state.root());
            assert_ne!(got, expected);
        }
        other => panic!("expected stale state, got {other:?}"),
    }
    assert_eq!(
        before,
        (
            s.enclave.id_cur(),
            s.enclave.lroot_cur(),
            s.enclave.st_root()
        )
    );
}

#[test]
fn flush_chains_successive_pairs() {
    let mut s = Solo::standard();
    let first = s.exec(&[]).unwrap();
    s.enclave.flush().unwrap();
    assert_eq!(s.enclave.lroot_pb(), s.enclave.lroot_cur());
    s.enclave.flush().unwrap();
    assert_eq!(s.enclave.lroot_pb(), Some(first.pair.root_to));
    let second = s.exec(&[]).unwrap();
    assert_eq!(second.pair.root_from, Some(first.pair.root_to));
    assert_eq!(s.enclave.pending_pair(), Some(second.pair.clone()));
    s.enclave.flush().unwrap();
    assert_eq!(s.enclave.pending_pair(), None);
}

#[test]
fn pairs_are_accepted_by_the_contract_in_order() {
    let mut s = Solo::standard();
    let p1 = s.step(&[]).pair;
    let p2 = s.step(&[]).pair;
    let st = s.net.chain.finalized_state();
    let c = st.ipsc(&s.ipsc).unwrap();
    assert_eq!(c.lroot_pb, Some(p2.root_to));
    assert_eq!(c.roots, vec![p1.root_to, p2.root_to]);
    assert!(p1.verifies_under(&s.init.pk_pb));
}

#[test]
fn history_root_matches_rebuild_after_every_batch() {
    let mut s = Solo::standard();
    let a = user("a");
    s.enclave.register(a.public()).unwrap();
    let mut oracle = HistoryTree::new();
    let op = s.operator.clone();
    for i in 0..12u64 {
        let txs: Vec<MicroTx> = (0..i % 3).map(|_| s.mtx(&op, pay(&a, 1), 0)).collect();
        let out = s.exec(&txs).unwrap();
        let c = oracle.add(&out.header.encode());
        assert_eq!(s.enclave.lroot_cur(), Some(c));
        assert_eq!(s.enclave.hdr_last(), Some(out.header));
        if i % 4 == 0 {
            s.enclave.flush().unwrap();
        }
    }
    assert_eq!(s.state.account(&Address::of(&a.public())).balance, 12);
}

#[test]
fn registration_tickets() {
    let mut s = Solo::standard();
    let a = user("a");
    let now = s.enclave.now();
    let (receipt, ticket) = s.enclave.register(a.public()).unwrap();
    assert_eq!(receipt.status, RcptStatus::Ok);
    assert_eq!(receipt.ticket(), Some(&ticket));
    assert!(ticket.verifies_under(&s.init.pk_tee));
    assert!(!ticket.verifies_under(&s.init.pk_pb));
    assert_eq!(ticket.issuing_ipsc, s.ipsc);
    assert!(ticket.expires_at >= now + 24 * 3600);
    assert_eq!(ticket.expires_at, now + 2 * TIMEOUT);
    assert_eq!(
        s.enclave.register(a.public()),
        Err(EnclaveError::AlreadyRegistered)
    );
    assert_eq!(
        s.enclave
            .register(KeyPair::derive(Scheme::Tee, 1, "x").public()),
        Err(EnclaveError::WrongScheme)
    );

    s.advance(DAY);
    let renewed = s.enclave.renew_ticket(&a.public()).unwrap();
    assert_eq!(renewed.expires_at, now + DAY + 2 * TIMEOUT);
    assert_eq!(
        s.enclave.renew_ticket(&user("nobody").public()),
        Err(EnclaveError::NotRegistered)
    );
}

#[test]
fn issuance_cap_within_first_year() {
    let mut s = Solo::standard();
    assert_eq!(s.enclave.issuance_cap(), Some(cap_oracle(1000, 10, 100, 0)));
    assert_eq!(s.enclave.issuance_cap(), Some(1100));
    let op = s.operator.clone();
    let b = Address::of(&op.public());
    let too_much = s.mtx(
        &op,
        Call::Issue {
            beneficiary: b,
            amount: 101,
        },
        0,
    );
    let ok = s.mtx(
        &op,
        Call::Issue {
            beneficiary: b,
            amount: 100,
        },
        0,
    );
    let out = s.step(&[too_much, ok]);
    assert_eq!(
        out.receipts[0].revert_reason(),
        Some("inflation cap exceeded")
    );
    assert!(out.receipts[1].ok());
    assert_eq!(out.pair.t_i, 1100);
    assert_eq!(out.pair.t_s, 1100);
    let st = s.net.chain.finalized_state();
    assert_eq!(st.ipsc(&s.ipsc).unwrap().t_i, 1100);

    s.advance(YEAR);
    assert_eq!(s.enclave.issuance_cap(), Some(1210));
    let more = s.mtx(
        &op,
        Call::Issue {
            beneficiary: b,
            amount: 110,
        },
        0,
    );
    let extra = s.mtx(
        &op,
        Call::Issue {
            beneficiary: b,
            amount: 1,
        },
        0,
    );
    let out = s.step(&[more, extra]);
    assert!(out.receipts[0].ok());
    assert!(!out.receipts[1].ok());
    assert_eq!(s.enclave.supply().t_i, 1210);
}

#[test]
fn issuance_needs_authority() {
    let mut s = Solo::new(8, 1000, InflationRate::percent(10), false);
    let op = s.operator.clone();
    let b = Address::of(&op.public());
    let t = s.mtx(
        &op,
        Call::Issue {
            beneficiary: b,
            amount: 1,
        },
        0,
    );
    let out = s.step(&[t]);
    assert_eq!(
        out.receipts[0].revert_reason(),
        Some("instance has no issuance authority")
    );
    assert_eq!(s.enclave.supply().t_i, 1000);
}

proptest! {
    #[test]
    fn cap_matches_rational_oracle(
        t_i0 in 0u64..1_000_000_000,
        num in 0u64..50,
        den in 1u64..200,
        created in 0u64..5 * YEAR,
        elapsed in 0u64..12 * YEAR,
    ) {
        let rate = InflationRate { num, den };
        prop_assert_eq!(
            allowed_issued(t_i0, rate, created, created + elapsed),
            cap_oracle(t_i0, num, den, elapsed)
        );
    }
}

#[test]
fn escalated_transactions_resolve_with_signed_status() {
    let mut s = Solo::standard();
    let a = user("a");
    s.enclave.register(a.public()).unwrap();
    let op = s.operator.clone();
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let good = s.mtx(&op, pay(&a, 5), 0);
    let broke = MicroTx::sign(&a, 0, pay(&op, 500), 0);
    let (e_good, _) = seal_to(&s.init.pk_tee, &good.encode(), &mut rng).unwrap();
    let (e_broke, _) = seal_to(&s.init.pk_tee, &broke.encode(), &mut rng).unwrap();
    let (e_junk, _) = seal_to(&s.init.pk_tee, b"junk", &mut rng).unwrap();
    let stranger = MicroTx::sign(&user("s"), 0, pay(&a, 1), 0);
    let (e_stranger, _) = seal_to(&s.init.pk_tee, &stranger.encode(), &mut rng).unwrap();
    let censored = [e_good.clone(), e_broke, e_junk, e_stranger, e_good];
    let keys = [good.clone(), broke]
        .iter()
        .flat_map(cbdc_core::ledger::touched_hint)
        .collect();
    let out = s
        .enclave
        .exec(&[], &censored, &s.state.partial(&keys))
        .unwrap();
    let statuses: Vec<CensStatus> = out.resolutions.iter().map(|r| r.status).collect();
    assert_eq!(
        statuses,
        vec![
            CensStatus::Executed,
            CensStatus::Reverted,
            CensStatus::Malformed,
            CensStatus::Rejected,
            CensStatus::Executed
        ]
    );
    assert_eq!(out.txs.len(), 2, "duplicates run once");
    for r in &out.resolutions {
        assert!(TxResolution::verifies(
            &s.init.pk_pb,
            r.etx_hash,
            r.status,
            &r.sig
        ));
    }
}

#[test]
fn query_answers_are_checked_against_the_snapshot() {
    let mut s = Solo::standard();
    let a = user("a");
    s.enclave.register(a.public()).unwrap();
    let mut log = HistoryTree::new();
    let first = s.step(&[]);
    log.add(&first.header.encode());
    let second = s.step(&[]);
    log.add(&second.header.encode());
    let from = first.pair.root_to;
    let to = second.pair.root_to;
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let req = QueryRequest::IncProof { from };
    let (eq, session) = seal_to(&s.init.pk_tee, &req.encode(), &mut rng).unwrap();
    assert_eq!(s.enclave.open_query(&eq).unwrap(), req);

    let answer = QueryAnswer::IncProof {
        proof: log.inc_proof(&from, &to).unwrap(),
        to,
    };
    let res = s.enclave.answer_query(&eq, &answer).unwrap();
    assert_eq!(res.status, CensStatus::Answered);
    assert!(QueryResolution::verifies(
        &s.init.pk_pb,
        res.equery_hash,
        res.status,
        &res.edata,
        &res.sig
    ));
    let plain = session.open_reply(&res.edata).unwrap();
    assert_eq!(QueryAnswer::decode(&plain).unwrap(), answer);

    let lie = QueryAnswer::IncProof {
        proof: log.inc_proof(&from, &from).unwrap(),
        to: from,
    };
    let res = s.enclave.answer_query(&eq, &lie).unwrap();
    assert_eq!(res.status, CensStatus::Unanswerable);

    let (junk, _) = seal_to(&s.init.pk_tee, b"\xff", &mut rng).unwrap();
    assert_eq!(
        s.enclave.answer_query(&junk, &answer).unwrap().status,
        CensStatus::Malformed
    );
}

#[test]
fn checkpoint_restores_only_on_the_sealing_platform() {
    let mut s = Solo::standard();
    s.step(&[]);
    s.exec(&[]).unwrap();
    let cp = s.enclave.checkpoint().unwrap();
    assert_eq!(cp.handover.root_from, s.enclave.lroot_pb());
    assert_eq!(Some(cp.handover.root_to), s.enclave.lroot_cur());
    let (next, out) = Enclave::restore(Platform::simulated(), 77, &cp).unwrap();
    assert_ne!(out.pk_pb, s.init.pk_pb);
    assert_eq!(next.lroot_cur(), s.enclave.lroot_cur());
    assert_eq!(next.id_cur(), s.enclave.id_cur());
    assert_eq!(next.st_root(), s.enclave.st_root());
    assert!(matches!(
        Enclave::restore(Platform::untrusted(3), 77, &cp),
        Err(EnclaveError::Checkpoint(_))
    ));
    let mut tampered = cp.clone();
    let last = tampered.blob.len() - 1;
    tampered.blob[last] ^= 1;
    assert!(Enclave::restore(Platform::simulated(), 77, &tampered).is_err());
}

#[test]
fn ecall_frames_round_trip() {
    let mut e = Enclave::new(Platform::simulated(), 12);
    let resp = EcallResponse::decode(&e.ecall(&EcallRequest::Init {}.encode())).unwrap();
    let EcallResponse::Init { out } = resp else {
        panic!("expected init output, got {resp:?}");
    };
    assert_eq!(Some((out.pk_pb, out.pk_tee)), e.public_keys());
    let again = EcallResponse::decode(&e.ecall(&EcallRequest::Init {}.encode())).unwrap();
    assert!(matches!(again, EcallResponse::Error { .. }));
    let flush = EcallResponse::decode(&e.ecall(&EcallRequest::Flush {}.encode())).unwrap();
    assert!(
        matches!(flush, EcallResponse::Error { .. }),
        "no genesis yet"
    );
    let garbage = EcallResponse::decode(&e.ecall(&[0xee, 1, 2])).unwrap();
    assert!(matches!(garbage, EcallResponse::Error { .. }));
}
