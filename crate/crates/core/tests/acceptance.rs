//! Acceptance suite: one line per criterion, each at its stated tolerance.
//!
//! Runs as a plain binary so that every criterion reports even when an
//! earlier one fails. Exit status is nonzero when any criterion outside
//! `EXPECTED_FAILURES` fails, or when one inside it passes.

mod common;

use std::collections::BTreeMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use cbdc_core::authlog::{
    inc_verify, mem_verify, Commitment, FrozenHashCache, HistoryTree, IncrementalProof,
    MembershipProof,
};
use cbdc_core::chain::{ChainCall, ChainStatus};
use cbdc_core::codec::{Decode, Encode};
use cbdc_core::crypto::{Digest, KeyPair, Platform, PublicKey, Scheme};
use cbdc_core::enclave::{allowed_issued, measurement, InflationRate, VersionTransitionPair};
use cbdc_core::harness::{
    self, bundled_names, fuzz_config, Action, FuzzOptions, RunReport, ScenarioConfig,
    TransferOutcome, World, AGGREGATE, ATOMICITY, BALANCES, CENSORSHIP, COLLUSION, CONSERVATION,
    INTER_CENSORSHIP, NON_EQUIVOCATION, RECOVERY,
};
use cbdc_core::ids::{Address, ContractId};
use cbdc_core::ledger::Call;
use cbdc_core::time::{DAY, HOUR, YEAR};
use cbdc_core::wallet::Phase;
use common::oracle::{cap_oracle, history_root, leaf_hash};
use common::{Chained, Solo};

/// Criteria known to fail as specified; see the README.
const EXPECTED_FAILURES: &[u8] = &[2];

type Outcome = Result<String, String>;
type Criterion = (u8, &'static str, fn() -> Outcome);

fn ensure(ok: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(what())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let e = start.elapsed();
    ensure(e < limit, || format!("took {e:.2?}, limit {limit:?}"))
}

fn record(i: u64) -> Vec<u8> {
    format!("record-{i}").into_bytes()
}

fn commitment(records: &[Vec<u8>], v: u64) -> Commitment {
    Commitment {
        version: v,
        root: Digest(history_root(records, v as usize)),
    }
}

fn flip(bytes: &[u8], bit: usize) -> Vec<u8> {
    let mut b = bytes.to_vec();
    b[bit / 8] ^= 1 << (bit % 8);
    b
}

fn mem_tampered_rejects(
    p: &MembershipProof,
    idx: u64,
    rec: &[u8],
    at: &Commitment,
    bit: usize,
) -> bool {
    let enc = p.encode();
    let proof_bits = enc.len() * 8;
    let rec_bits = rec.len() * 8;
    let bit = bit % (proof_bits + rec_bits + 256);
    if bit < proof_bits {
        MembershipProof::decode(&flip(&enc, bit)).map_or(true, |q| !mem_verify(&q, idx, rec, at))
    } else if bit < proof_bits + rec_bits {
        !mem_verify(p, idx, &flip(rec, bit - proof_bits), at)
    } else {
        let root = flip(&at.root.0, bit - proof_bits - rec_bits);
        let at2 = Commitment {
            version: at.version,
            root: Digest(root.try_into().expect("32 bytes")),
        };
        !mem_verify(p, idx, rec, &at2)
    }
}

fn inc_tampered_rejects(
    p: &IncrementalProof,
    from: &Commitment,
    to: &Commitment,
    bit: usize,
) -> bool {
    let enc = p.encode();
    let proof_bits = enc.len() * 8;
    let bit = bit % (proof_bits + 512);
    if bit < proof_bits {
        return IncrementalProof::decode(&flip(&enc, bit))
            .map_or(true, |q| !inc_verify(&q, from, to));
    }
    let (mut a, mut b) = (*from, *to);
    let k = bit - proof_bits;
    let target = if k < 256 { &mut a } else { &mut b };
    target.root = Digest(flip(&target.root.0, k % 256).try_into().expect("32 bytes"));
    !inc_verify(p, &a, &b)
}

/// Authenticated log against a from-scratch rebuild.
fn c1() -> Outcome {
    let start = Instant::now();
    const N: u64 = 1024;
    let records: Vec<Vec<u8>> = (0..N).map(record).collect();
    let mut tree = HistoryTree::new();
    let mut fh = FrozenHashCache::new();
    for (i, r) in records.iter().enumerate() {
        let v = i as u64 + 1;
        let c = tree.add(r);
        fh.update(Digest(leaf_hash(r)), v)
            .map_err(|e| e.to_string())?;
        let want = history_root(&records, v as usize);
        ensure(c.version == v && c.root.0 == want, || {
            format!("tree root differs at version {v}")
        })?;
        let reduced = fh.reduce().map_err(|e| e.to_string())?;
        ensure(reduced.0 == want, || {
            format!("frozen-hash reduction differs at version {v}")
        })?;
        ensure(fh.entries().len() == v.count_ones() as usize, || {
            format!("cache size wrong at {v}")
        })?;
    }

    let mut rng = ChaCha20Rng::seed_from_u64(0x51);
    let (mut mem, mut inc, mut tampers) = (0u64, 0u64, 0u64);
    let mut check_mem = |idx: u64, v: u64, rng: &mut ChaCha20Rng| -> Result<(), String> {
        let at = commitment(&records, v);
        let p = tree
            .mem_proof(idx, &at)
            .map_err(|e| format!("mem proof {idx}@{v}: {e}"))?;
        ensure(mem_verify(&p, idx, &records[idx as usize], &at), || {
            format!("mem proof {idx}@{v} fails")
        })?;
        ensure(!mem_verify(&p, idx, &record(N + 1), &at), || {
            format!("mem proof {idx}@{v} accepts another record")
        })?;
        let bit = rng.gen::<usize>();
        ensure(
            mem_tampered_rejects(&p, idx, &records[idx as usize], &at, bit),
            || format!("tampered mem proof {idx}@{v} (bit {bit}) verifies"),
        )?;
        mem += 1;
        tampers += 1;
        Ok(())
    };
    for v in 1..=32 {
        for idx in 0..v {
            check_mem(idx, v, &mut rng)?;
        }
    }
    for _ in 0..1000 {
        let v = rng.gen_range(33..=N);
        let idx = rng.gen_range(0..v);
        check_mem(idx, v, &mut rng)?;
    }

    let mut check_inc = |m: u64, n: u64, rng: &mut ChaCha20Rng| -> Result<(), String> {
        let (from, to) = (commitment(&records, m), commitment(&records, n));
        let p = tree
            .inc_proof(&from, &to)
            .map_err(|e| format!("inc proof {m}->{n}: {e}"))?;
        ensure(inc_verify(&p, &from, &to), || {
            format!("inc proof {m}->{n} fails")
        })?;
        let bit = rng.gen::<usize>();
        if m != n {
            ensure(inc_tampered_rejects(&p, &from, &to, bit), || {
                format!("tampered inc proof {m}->{n} (bit {bit}) verifies")
            })?;
            tampers += 1;
        }
        inc += 1;
        Ok(())
    };
    for n in 1..=32 {
        for m in 1..=n {
            check_inc(m, n, &mut rng)?;
        }
    }
    for _ in 0..1000 {
        let n = rng.gen_range(33..=N);
        let m = rng.gen_range(1..=n);
        check_inc(m, n, &mut rng)?;
    }

    // Every single bit of a few proofs.
    let at = commitment(&records, N);
    for idx in [0, 511, 1023] {
        let p = tree.mem_proof(idx, &at).map_err(|e| e.to_string())?;
        let total = p.encode().len() * 8 + records[idx as usize].len() * 8 + 256;
        for bit in 0..total {
            ensure(
                mem_tampered_rejects(&p, idx, &records[idx as usize], &at, bit),
                || format!("mem proof {idx}@{N} survives flipping bit {bit}"),
            )?;
            tampers += 1;
        }
    }
    for (m, n) in [(1, N), (500, 777), (1000, 1024)] {
        let (from, to) = (commitment(&records, m), commitment(&records, n));
        let p = tree.inc_proof(&from, &to).map_err(|e| e.to_string())?;
        for bit in 0..p.encode().len() * 8 + 512 {
            ensure(inc_tampered_rejects(&p, &from, &to, bit), || {
                format!("inc proof {m}->{n} survives flipping bit {bit}")
            })?;
            tampers += 1;
        }
    }
    within(start, Duration::from_secs(30))?;
    Ok(format!(
        "{N} appends match rebuild; {mem} membership and {inc} incremental proofs verify; {tampers} tampers rejected"
    ))
}

/// Happy-path transfer postconditions and the aggregate supply inequality.
fn c2() -> Outcome {
    let start = Instant::now();
    let r =
        harness::run_scenario(ScenarioConfig::bundled("happy_path").map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    within(start, Duration::from_secs(5))?;
    ensure(r.passed, || {
        format!("scenario checks failed: {:?}", r.failed_checks())
    })?;
    let t = &r.transfers[0];
    ensure(
        t.outcome == TransferOutcome::Completed && t.amount == 25,
        || format!("transfer {:?}", t.outcome),
    )?;
    ensure(r.balances["alice"] == 75 && r.balances["bob"] == 25, || {
        format!("balances {:?}", r.balances)
    })?;

    let first = r.heights.first().ok_or("no finalized heights")?;
    let (a0, b0) = (first.t_s["A"], first.t_s["B"]);
    let burn = r
        .heights
        .iter()
        .position(|h| h.t_s["A"] == a0 - 25)
        .ok_or("no height shows the burn")?;
    let mint = r
        .heights
        .iter()
        .position(|h| h.t_s["B"] == b0 + 25)
        .ok_or("no height shows the mint")?;
    ensure(burn < mint, || "mint snapshotted before burn".into())?;
    for (k, h) in r.heights.iter().enumerate() {
        let (a, b) = (h.t_s["A"], h.t_s["B"]);
        let want_a = if k >= burn { a0 - 25 } else { a0 };
        let want_b = if k >= mint { b0 + 25 } else { b0 };
        ensure(a == want_a && b == want_b, || {
            format!("height {}: t_s A {a} B {b}", h.height)
        })?;
        ensure(h.sum_t_i == first.sum_t_i, || {
            format!("height {}: sum t_i moved", h.height)
        })?;
    }
    let last = r.heights.last().expect("non-empty");
    ensure(last.sum_t_s == first.sum_t_s, || {
        "final sum t_s differs".into()
    })?;

    // Strict inequality exactly between the two snapshots.
    let strict: Vec<usize> = (0..r.heights.len())
        .filter(|&k| r.heights[k].sum_t_i != r.heights[k].sum_t_s)
        .collect();
    let span: Vec<usize> = (burn..mint).collect();
    ensure(strict == span, || {
        format!("sums differ at rows {strict:?}, expected {span:?}")
    })?;

    // The inequality as stated: issued never exceeds supplied.
    let broken: Vec<String> = r
        .heights
        .iter()
        .filter(|h| h.sum_t_i > h.sum_t_s)
        .map(|h| {
            format!(
                "height {}: sum t_i {} > sum t_s {}",
                h.height, h.sum_t_i, h.sum_t_s
            )
        })
        .collect();
    ensure(broken.is_empty(), || {
        format!(
            "postconditions hold, but sum t_i <= sum t_s fails between burn and mint snapshots ({})",
            broken.join("; ")
        )
    })?;
    Ok(format!("{} heights checked", r.heights.len()))
}

/// Recovery after a stalled phase 3.
fn c3() -> Outcome {
    let cfg = ScenarioConfig::bundled("censor_p3").map_err(|e| e.to_string())?;
    ensure(cfg.htlc_timeout == 24 * HOUR, || {
        "timelock is not 24 h".into()
    })?;
    let r = harness::run_scenario(cfg).map_err(|e| e.to_string())?;
    ensure(r.passed, || {
        format!("checks failed: {:?}", r.failed_checks())
    })?;
    let t = &r.transfers[0];
    ensure(t.outcome == TransferOutcome::Refunded, || {
        format!("outcome {:?}", t.outcome)
    })?;
    ensure(t.sender_phase == Some(Phase::Reverted), || {
        format!("sender {:?}", t.sender_phase)
    })?;
    let done = t.finished_at.ok_or("sender never finished")?;
    ensure(done >= t.started_at + 24 * HOUR, || {
        format!("recovered at {done}, before the timelock")
    })?;
    ensure(r.balances["alice"] == 100 && r.balances["bob"] == 0, || {
        format!("balances {:?}", r.balances)
    })?;
    ensure(!t.claim_rejections.is_empty(), || {
        "no claim was attempted after recovery".into()
    })?;
    for name in [AGGREGATE, CONSERVATION, BALANCES] {
        ensure(r.check(name).is_some_and(|c| c.passed), || {
            format!("{name} failed")
        })?;
    }
    let last = r.heights.last().ok_or("no heights")?;
    ensure(last.sum_t_s == last.sum_t_i && last.in_flight == 0, || {
        "token drift".into()
    })?;
    Ok(format!(
        "refunded 25 at t={done}; claims rejected: {}",
        t.claim_rejections.join(", ")
    ))
}

/// Collusion never mints.
fn c4() -> Outcome {
    let opts = FuzzOptions {
        seed: 0xC011,
        ..FuzzOptions::default()
    };
    let (mut claims, mut violations) = (0usize, Vec::new());
    for round in 0..100 {
        let mut cfg = fuzz_config(&opts, round);
        let mut colluding = None;
        for (k, s) in cfg
            .schedule
            .iter_mut()
            .filter(|s| matches!(s.action, Action::Transfer { .. }))
            .enumerate()
        {
            if let Action::Transfer {
                sender_abort_before,
                receiver_abort_before,
                collude,
                ..
            } = &mut s.action
            {
                if k == 0 {
                    *sender_abort_before = Some(3);
                    *receiver_abort_before = None;
                    *collude = true;
                    colluding = Some(k);
                }
            }
        }
        let k = colluding.ok_or("fuzz round without a transfer")?;
        let r = harness::run_scenario(cfg).map_err(|e| e.to_string())?;
        for name in [
            AGGREGATE,
            CONSERVATION,
            BALANCES,
            COLLUSION,
            RECOVERY,
            ATOMICITY,
        ] {
            if !r.check(name).is_some_and(|c| c.passed) {
                violations.push(format!("round {round}: {name}"));
            }
        }
        let t = &r.transfers[k];
        if t.outcome == TransferOutcome::Completed {
            violations.push(format!("round {round}: colluding transfer minted"));
        }
        claims += t.claim_rejections.len();
    }
    ensure(violations.is_empty(), || violations.join("; "))?;
    ensure(claims > 0, || "no receiver ever tried the shortcut".into())?;
    Ok(format!(
        "100 interleavings, {claims} shortcut claims rejected, 0 violations"
    ))
}

/// Two enclave-signed successors of one root, one accepted.
fn c5() -> Outcome {
    let mut w = World::new(ScenarioConfig::bundled("equivocation").map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    let a = w.instance_id("A");
    let stop = w.now() + 2 * DAY;
    while !w.is_quiescent() && w.now() < stop {
        w.step();
    }
    let chain = w.chain();
    let st = chain.finalized_state();
    let keys = st.ipsc(&a).ok_or("no contract for A")?.pk_pb.clone();
    let mut by_root: BTreeMap<Option<Commitment>, Vec<ChainStatus>> = BTreeMap::new();
    for b in chain
        .blocks()
        .iter()
        .filter(|b| b.height <= chain.finalized_height())
    {
        for (tx, rc) in b.txs.iter().zip(&b.receipts) {
            if let ChainCall::Snapshot { ipsc, pair } = &tx.call {
                if *ipsc == a && keys.iter().any(|k| pair.verifies_under(k)) {
                    by_root.entry(pair.root_from).or_default().push(rc.status);
                }
            }
        }
    }
    let forks: Vec<_> = by_root.values().filter(|s| s.len() > 1).collect();
    ensure(!forks.is_empty(), || {
        "no root received two signed successors".into()
    })?;
    for (root, statuses) in &by_root {
        let applied = statuses
            .iter()
            .filter(|s| **s == ChainStatus::Applied)
            .count();
        ensure(applied == 1, || {
            format!(
                "{applied} successors of v{:?} accepted",
                root.map(|c| c.version)
            )
        })?;
    }
    // Every height's history of A extends the previous one's.
    let mut prev: Vec<Commitment> = Vec::new();
    for h in 0..=chain.finalized_height() {
        let Some(s) = chain.state_at(h) else { continue };
        let roots = s.ipsc(&a).map(|c| c.roots.clone()).unwrap_or_default();
        ensure(
            roots.len() >= prev.len() && roots[..prev.len()] == prev[..],
            || format!("height {h}: history of A forks"),
        )?;
        prev = roots;
    }
    let r = w.run();
    ensure(r.passed, || {
        format!("checks failed: {:?}", r.failed_checks())
    })?;
    ensure(
        r.check(NON_EQUIVOCATION)
            .is_some_and(|c| c.passed && c.examined > 0),
        || "client reads disagree".into(),
    )?;
    Ok(format!(
        "{} forked root(s), one successor each; reads agree at {} heights",
        forks.len(),
        r.heights.len()
    ))
}

/// Censorship ends resolved or as standing evidence.
fn c6() -> Outcome {
    let mut out = Vec::new();
    for name in ["censor_p2", "censor_p3", "censor_p4"] {
        let r = harness::run_scenario(ScenarioConfig::bundled(name).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
        ensure(!r.censorship.is_empty(), || {
            format!("{name}: nothing was escalated")
        })?;
        for c in [CENSORSHIP, INTER_CENSORSHIP] {
            ensure(r.check(c).is_some_and(|c| c.passed), || {
                format!("{name}: {c} failed")
            })?;
        }
        for row in &r.censorship {
            ensure(row.status.is_some() || row.proof_of_censorship, || {
                format!(
                    "{name}: request {} at {} neither resolved nor standing",
                    row.idx, row.instance
                )
            })?;
        }
        let resolved = r.censorship.iter().filter(|c| c.status.is_some()).count();
        out.push(format!(
            "{name}: {resolved} resolved, {} standing",
            r.censorship.len() - resolved
        ));
    }
    Ok(out.join("; "))
}

/// Inflation bound at the enclave and the contract, against the rational oracle.
fn c7() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    for _ in 0..2000 {
        let t_i0 = rng.gen_range(0..1_000_000_000u64);
        let pct = rng.gen_range(0..=100u64);
        let created = rng.gen_range(0..10 * YEAR);
        let now = created + rng.gen_range(0..12 * YEAR);
        let got = allowed_issued(t_i0, InflationRate::percent(pct), created, now);
        let want = cap_oracle(t_i0, pct, 100, now - created);
        ensure(got == want, || {
            format!(
                "cap({t_i0}, {pct}%, {}) = {got}, oracle {want}",
                now - created
            )
        })?;
    }
    let oracle = cap_oracle(1000, 10, 100, 0);
    ensure(oracle == 1100, || format!("oracle cap {oracle}"))?;

    // Enclave: 101 reverts, 100 executes, and the contract takes the result.
    let mut s = Solo::standard();
    let op = s.operator.clone();
    let b = Address::of(&op.public());
    let over = s.mtx(
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
    let out = s.step(&[over, ok]);
    ensure(!out.receipts[0].ok() && out.receipts[1].ok(), || {
        "enclave bound wrong".into()
    })?;
    let st = s.net.chain.finalized_state();
    let c = st.ipsc(&s.ipsc).ok_or("no contract")?;
    ensure(c.t_i == 1000 + 100, || format!("contract t_i {}", c.t_i))?;
    let now = s.net.chain.now();
    ensure(
        c.meets_inflation_rate(1100, now) && !c.meets_inflation_rate(1101, now),
        || "contract bound differs from the enclave's".into(),
    )?;

    // Contract: a validly signed pair beyond the cap is rejected.
    let mut net = Chained::new(1);
    let pb = KeyPair::derive(Scheme::Pb, 9, "c7/pb");
    let tee = KeyPair::derive(Scheme::Tee, 9, "c7/tee");
    let operator = KeyPair::derive(Scheme::Pb, 9, "c7/op");
    let quote = Platform::simulated().attest(measurement(), tee.public(), pb.public());
    let ipsc = net
        .call(
            &operator,
            ChainCall::DeployIpsc {
                pk_pb: pb.public(),
                pk_tee: tee.public(),
                quote,
                t_i0: 1000,
                i_r: InflationRate::percent(10),
                issue_authority: true,
            },
        )
        .contract
        .ok_or("deploy failed")?;
    let root = |v: u64| Commitment {
        version: v,
        root: cbdc_core::crypto::hash(&v.to_be_bytes()),
    };
    let snap = |net: &mut Chained, pair| {
        net.call(&operator, ChainCall::Snapshot { ipsc, pair })
            .status
    };
    let over = VersionTransitionPair::sign(&pb, None, root(1), 1101, 1101);
    ensure(snap(&mut net, over) == ChainStatus::Rejected, || {
        "contract took 101".into()
    })?;
    let cap = VersionTransitionPair::sign(&pb, None, root(1), 1100, 1100);
    ensure(snap(&mut net, cap) == ChainStatus::Applied, || {
        "contract refused 100".into()
    })?;

    // End to end through the harness.
    let r = harness::run_scenario(ScenarioConfig::bundled("overissue").map_err(|e| e.to_string())?)
        .map_err(|e| e.to_string())?;
    ensure(r.passed, || {
        format!("overissue checks failed: {:?}", r.failed_checks())
    })?;
    Ok("2000 cap samples match the oracle; 100 issued, 101 refused at enclave and contract".into())
}

/// Registry thresholds and authority.
fn c8() -> Outcome {
    let mut net = Chained::new(1);
    let deploy = |net: &mut Chained, name: &str| -> Result<(KeyPair, ContractId), String> {
        let operator = KeyPair::derive(Scheme::Pb, 8, &format!("{name}/op"));
        let pb = KeyPair::derive(Scheme::Pb, 8, &format!("{name}/pb"));
        let tee = KeyPair::derive(Scheme::Tee, 8, &format!("{name}/tee"));
        let quote = Platform::simulated().attest(measurement(), tee.public(), pb.public());
        let r = net.call(
            &operator,
            ChainCall::DeployIpsc {
                pk_pb: pb.public(),
                pk_tee: tee.public(),
                quote,
                t_i0: 10,
                i_r: InflationRate::percent(0),
                issue_authority: false,
            },
        );
        Ok((
            operator,
            r.contract
                .ok_or_else(|| format!("deploying {name}: {}", r.reason))?,
        ))
    };
    let banks: Vec<(KeyPair, ContractId)> = (0..4)
        .map(|i| deploy(&mut net, &format!("b{i}")))
        .collect::<Result<_, _>>()?;
    let members: Vec<(ContractId, PublicKey)> =
        banks[..3].iter().map(|(k, id)| (*id, k.public())).collect();
    let imsc = net
        .call(&banks[0].0, ChainCall::DeployImscD { members })
        .contract
        .ok_or("no registry")?;
    let (nk, nid) = (&banks[3].0, banks[3].1);
    ensure(
        net.call(nk, ChainCall::NewJoin { imsc, ipsc: nid }).status == ChainStatus::Applied,
        || "join refused".into(),
    )?;
    for (i, (k, id)) in banks[..3].iter().enumerate() {
        let r = net.call(
            k,
            ChainCall::ApproveJoin {
                imsc,
                my_ipsc: *id,
                new_ipsc: nid,
            },
        );
        ensure(r.status == ChainStatus::Applied, || {
            format!("vote {} refused: {}", i + 1, r.reason)
        })?;
        let approved = net.chain.finalized_state().is_approved(&imsc, &nid);
        ensure(approved == (i == 2), || {
            format!("after vote {}: approved = {approved}", i + 1)
        })?;
    }

    let mut net = Chained::new(1);
    let (ak, aid) = deploy(&mut net, "auth")?;
    let (ok_, oid) = deploy(&mut net, "other")?;
    let (tk, tid) = deploy(&mut net, "third")?;
    let imsc = net
        .call(&ak, ChainCall::DeployImscC { authority: aid })
        .contract
        .ok_or("no registry")?;
    let add_third = ChainCall::AddInstance {
        imsc,
        ipsc: tid,
        operator: tk.public(),
    };
    ensure(
        net.call(
            &ak,
            ChainCall::AddInstance {
                imsc,
                ipsc: oid,
                operator: ok_.public(),
            },
        )
        .status
            == ChainStatus::Applied,
        || "authority add refused".into(),
    )?;
    let mallory = KeyPair::derive(Scheme::Pb, 8, "mallory");
    let mutations = [
        add_third.clone(),
        ChainCall::DelInstance { imsc, ipsc: oid },
        ChainCall::DelInstance { imsc, ipsc: aid },
        ChainCall::NewJoin { imsc, ipsc: tid },
        ChainCall::ApproveJoin {
            imsc,
            my_ipsc: oid,
            new_ipsc: tid,
        },
        ChainCall::ApproveDelete {
            imsc,
            my_ipsc: oid,
            del_ipsc: aid,
        },
    ];
    let mut rejected = 0;
    for call in &mutations {
        for who in [&ok_, &tk, &mallory] {
            let r = net.call(who, call.clone());
            ensure(r.status == ChainStatus::Rejected, || {
                format!("non-authority mutation applied: {call:?}")
            })?;
            rejected += 1;
        }
    }
    let st = net.chain.finalized_state();
    ensure(
        st.is_approved(&imsc, &aid) && st.is_approved(&imsc, &oid) && !st.is_approved(&imsc, &tid),
        || "registry changed".into(),
    )?;
    ensure(
        net.call(&ak, add_third).status == ChainStatus::Applied,
        || "authority add refused".into(),
    )?;

    let r = harness::run_scenario(
        ScenarioConfig::bundled("central_authority_add_del").map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    ensure(r.passed, || {
        format!("scenario checks failed: {:?}", r.failed_checks())
    })?;
    Ok(format!(
        "join approved exactly at vote 3 of 4; {rejected} non-authority mutations rejected"
    ))
}

/// Same seed and configuration, same bytes.
fn c9() -> Outcome {
    let mut n = 0;
    let mut run = |cfg: ScenarioConfig| -> Result<(), String> {
        let name = cfg.name.clone();
        let a = harness::run_scenario(cfg.clone())
            .map_err(|e| e.to_string())?
            .to_json();
        let b = harness::run_scenario(cfg)
            .map_err(|e| e.to_string())?
            .to_json();
        n += 1;
        ensure(a == b, || format!("{name}: reports differ"))
    };
    for name in bundled_names() {
        let mut cfg = ScenarioConfig::bundled(name).map_err(|e| e.to_string())?;
        run(cfg.clone())?;
        cfg.seed ^= 0xD5;
        run(cfg)?;
    }
    let opts = FuzzOptions::default();
    for round in 0..10 {
        run(fuzz_config(&opts, round))?;
    }
    Ok(format!("{n} configurations re-run byte-identically"))
}

/// Corpus plus 200 fuzz rounds within three minutes.
fn c10() -> Outcome {
    let start = Instant::now();
    let mut failed = Vec::new();
    for name in bundled_names() {
        let r: RunReport =
            harness::run_scenario(ScenarioConfig::bundled(name).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
        if !r.passed {
            failed.push(format!("{name}: {:?}", r.failed_checks()));
        }
    }
    let s = harness::fuzz_transfers(&FuzzOptions {
        rounds: 200,
        ..FuzzOptions::default()
    });
    within(start, Duration::from_secs(180))?;
    ensure(failed.is_empty(), || failed.join("; "))?;
    ensure(s.passed(), || {
        format!("{} fuzz rounds violated invariants", s.violations.len())
    })?;
    Ok(format!(
        "10 scenarios and {} fuzz rounds ({} transfers) in {:.2?}",
        s.rounds,
        s.transfers,
        start.elapsed()
    ))
}

fn main() {
    let criteria: [Criterion; 10] = [
        (1, "authenticated-log oracle equivalence", c1),
        (2, "happy-path atomic transfer", c2),
        (3, "recovery at the timelock", c3),
        (4, "collusion never mints", c4),
        (5, "non-equivocation", c5),
        (6, "censorship evidence", c6),
        (7, "inflation bound", c7),
        (8, "registry thresholds", c8),
        (9, "determinism", c9),
        (10, "corpus and fuzz runtime", c10),
    ];
    // Quiet the default hook; panics are reported as failures below.
    std::panic::set_hook(Box::new(|_| {}));
    let mut unexpected = Vec::new();
    for (n, name, f) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let expected_fail = EXPECTED_FAILURES.contains(&n);
        let (tag, detail) = match &outcome {
            Ok(d) => ("PASS", d.clone()),
            Err(e) => ("FAIL", e.clone()),
        };
        let note = if expected_fail {
            " [expected failure]"
        } else {
            ""
        };
        println!(
            "criterion {n:>2} {tag} {name} ({:.2?}){note}: {detail}",
            start.elapsed()
        );
        if outcome.is_ok() == expected_fail {
            unexpected.push(n);
        }
    }
    if !unexpected.is_empty() {
        println!("unexpected outcome for criteria {unexpected:?}");
        std::process::exit(1);
    }
}
