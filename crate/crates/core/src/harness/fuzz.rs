//! Randomized transfer worlds. Each round draws a small topology, balances
//! and a schedule of transfers with optional faults, runs it and collects
//! every global check that failed.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::time::HOUR;

use super::checks::GLOBAL_CHECKS;
use super::report::{RunReport, TransferOutcome};
use super::run_scenario;
use super::scenario::{
    Action, ClientSpec, Expectations, ImscMode, InstanceSpec, PolicySpec, ScenarioConfig, Scheduled,
};
use super::world::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FuzzOptions {
    pub seed: u64,
    pub rounds: u64,
    /// Let operators stall a phase and sometimes ignore the escalations.
    pub stalls: bool,
    /// Let parties abort before a phase.
    pub aborts: bool,
    /// Let aborting senders hand the secret over.
    pub collusion: bool,
}

impl Default for FuzzOptions {
    fn default() -> Self {
        FuzzOptions {
            seed: 0,
            rounds: 100,
            stalls: true,
            aborts: true,
            collusion: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub round: u64,
    pub seed: u64,
    pub failed: Vec<String>,
    pub witnesses: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct FuzzSummary {
    pub rounds: u64,
    pub transfers: u64,
    pub completed: u64,
    pub refunded: u64,
    pub rejected: u64,
    /// Burned but never claimed: the receiver walked away.
    pub unclaimed: u64,
    /// Still open or contradictory at the end.
    pub unsettled: u64,
    pub unsettled_rounds: Vec<u64>,
    pub escalations: u64,
    pub violations: Vec<Violation>,
}

impl FuzzSummary {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Draws the configuration of one round.
pub fn fuzz_config(opts: &FuzzOptions, round: u64) -> ScenarioConfig {
    let seed = derive_seed(opts.seed, &format!("fuzz/{round}"));
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n_inst = rng.gen_range(2..=3usize);
    let names: Vec<String> = (0..n_inst).map(|i| format!("I{i}")).collect();
    let instances = names
        .iter()
        .map(|n| InstanceSpec {
            name: n.clone(),
            t_i0: 10_000,
            i_r: 0,
            issue_authority: true,
            member: true,
        })
        .collect();
    let n_clients = rng.gen_range(2..=4usize);
    let clients: Vec<ClientSpec> = (0..n_clients)
        .map(|i| ClientSpec {
            name: format!("c{i}"),
            // The first two clients never share a home.
            home: names[if i < 2 { i } else { rng.gen_range(0..n_inst) }].clone(),
            balance: rng.gen_range(50..=500),
            dedicated_keys: true,
        })
        .collect();

    let mut schedule = Vec::new();
    if opts.stalls && rng.gen_bool(0.3) {
        schedule.push(Scheduled {
            at: 0,
            action: Action::SetPolicy {
                instance: names[rng.gen_range(0..n_inst)].clone(),
                policy: PolicySpec {
                    stall_phase: Some(rng.gen_range(2..=4)),
                    ignore_escalations: rng.gen_bool(0.4),
                    ..PolicySpec::default()
                },
            },
        });
    }
    let mut at = 10;
    let n_transfers = rng.gen_range(1..=3);
    // Each client sends at most once, so every wallet's faults apply to one
    // transfer.
    let mut senders: Vec<usize> = (0..n_clients).collect();
    for _ in 0..n_transfers.min(n_clients) {
        let s = senders.remove(rng.gen_range(0..senders.len()));
        let others: Vec<usize> = (0..n_clients)
            .filter(|&j| clients[j].home != clients[s].home)
            .collect();
        if others.is_empty() {
            continue;
        }
        let r = others[rng.gen_range(0..others.len())];
        let (mut sab, mut rab, mut collude) = (None, None, false);
        if opts.aborts && rng.gen_bool(0.3) {
            if rng.gen_bool(0.5) {
                sab = Some(rng.gen_range(3..=4));
                collude = opts.collusion && sab == Some(3) && rng.gen_bool(0.5);
            } else {
                rab = Some(rng.gen_range(2..=4));
            }
        }
        schedule.push(Scheduled {
            at,
            action: Action::Transfer {
                from: clients[s].name.clone(),
                to: clients[r].name.clone(),
                amount: rng.gen_range(1..=clients[s].balance),
                sender_abort_before: sab,
                receiver_abort_before: rab,
                collude,
                reveal_after_recovery: collude,
            },
        });
        at += rng.gen_range(0..=3) * 10;
    }

    ScenarioConfig {
        name: format!("fuzz-{round}"),
        description: String::new(),
        seed,
        imsc: ImscMode::Decentralized,
        finality_depth: rng.gen_range(1..=2),
        htlc_timeout: HOUR,
        batch_interval: 10,
        sync_interval: 10,
        step: 10,
        deadline: None,
        grace: 60,
        drain: 3 * HOUR,
        instances,
        clients,
        schedule,
        expect: Expectations::default(),
    }
}

/// Runs `opts.rounds` random worlds.
pub fn fuzz_transfers(opts: &FuzzOptions) -> FuzzSummary {
    let mut sum = FuzzSummary::default();
    for round in 0..opts.rounds {
        let cfg = fuzz_config(opts, round);
        let seed = cfg.seed;
        sum.rounds += 1;
        let report = match run_scenario(cfg) {
            Ok(r) => r,
            Err(e) => {
                sum.violations.push(Violation {
                    round,
                    seed,
                    failed: vec!["setup".into()],
                    witnesses: vec![e.to_string()],
                });
                continue;
            }
        };
        tally(&mut sum, &report);
        if report.transfers.iter().any(|t| {
            matches!(
                t.outcome,
                TransferOutcome::Pending | TransferOutcome::Inconsistent
            )
        }) {
            sum.unsettled_rounds.push(round);
        }
        let failed: Vec<_> = report
            .checks
            .iter()
            .filter(|c| !c.passed && GLOBAL_CHECKS.contains(&c.name.as_str()))
            .collect();
        if !failed.is_empty() {
            sum.violations.push(Violation {
                round,
                seed,
                failed: failed.iter().map(|c| c.name.clone()).collect(),
                witnesses: failed
                    .iter()
                    .flat_map(|c| c.witnesses.iter().cloned())
                    .collect(),
            });
        }
    }
    sum
}

fn tally(sum: &mut FuzzSummary, r: &RunReport) {
    for t in &r.transfers {
        sum.transfers += 1;
        match t.outcome {
            TransferOutcome::Completed => sum.completed += 1,
            TransferOutcome::Refunded => sum.refunded += 1,
            TransferOutcome::Rejected => sum.rejected += 1,
            TransferOutcome::Unclaimed => sum.unclaimed += 1,
            TransferOutcome::Pending | TransferOutcome::Inconsistent => sum.unsettled += 1,
        }
    }
    sum.escalations += r.censorship.len() as u64;
}
