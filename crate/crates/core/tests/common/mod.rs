#![allow(dead_code)]

pub mod oracle;

use std::collections::BTreeSet;

use cbdc_core::chain::{Chain, ChainCall, ChainConfig, ChainReceipt, ChainStatus, ChainTx};
use cbdc_core::crypto::{KeyPair, Platform, Scheme};
use cbdc_core::enclave::{
    Enclave, EnclaveError, ExecOutput, GenesisParams, InflationRate, InitOutput,
};
use cbdc_core::ids::ContractId;
use cbdc_core::ledger::{touched_hint, Call, MicroTx, State, StateKey, VmError};
use cbdc_core::time::HOUR;

pub const TIMEOUT: u64 = 24 * HOUR;

pub struct Chained {
    pub chain: Chain,
    nonces: std::collections::HashMap<cbdc_core::crypto::PublicKey, u64>,
}

impl Chained {
    pub fn new(finality_depth: u64) -> Self {
        Chained {
            chain: Chain::new(ChainConfig {
                finality_depth,
                seed: 11,
            }),
            nonces: Default::default(),
        }
    }

    pub fn tx(&mut self, key: &KeyPair, call: ChainCall) -> ChainTx {
        let n = self.nonces.entry(key.public()).or_insert(0);
        *n += 1;
        ChainTx::sign(key, *n, call)
    }

    pub fn submit(&mut self, key: &KeyPair, call: ChainCall) -> cbdc_core::crypto::Digest {
        let tx = self.tx(key, call);
        self.chain.submit(tx).expect("submit")
    }

    /// Submits one call, produces blocks until its receipt is final.
    pub fn call(&mut self, key: &KeyPair, call: ChainCall) -> ChainReceipt {
        let h = self.submit(key, call);
        loop {
            if let Some(r) = self.chain.final_receipt(&h) {
                return r.clone();
            }
            self.chain.produce_block();
        }
    }
}

pub struct Solo {
    pub net: Chained,
    pub operator: KeyPair,
    pub enclave: Enclave,
    pub init: InitOutput,
    pub ipsc: ContractId,
    pub imsc: ContractId,
    pub state: State,
    nonces: std::collections::HashMap<cbdc_core::crypto::PublicKey, u64>,
}

impl Solo {
    pub fn new(seed: u64, t_i0: u64, i_r: InflationRate, issue_authority: bool) -> Self {
        let mut net = Chained::new(1);
        let operator = KeyPair::derive(Scheme::Pb, seed, "operator");
        let mut enclave = Enclave::new(Platform::simulated(), seed);
        let init = enclave.init().unwrap();
        let r = net.call(
            &operator,
            ChainCall::DeployIpsc {
                pk_pb: init.pk_pb,
                pk_tee: init.pk_tee,
                quote: init.quote.clone(),
                t_i0,
                i_r,
                issue_authority,
            },
        );
        assert_eq!(r.status, ChainStatus::Applied, "{}", r.reason);
        let ipsc = r.contract.unwrap();
        let imsc = net
            .call(&operator, ChainCall::DeployImscC { authority: ipsc })
            .contract
            .unwrap();
        let params = GenesisParams {
            ipsc,
            imsc,
            operator: operator.public(),
            t_i0,
            i_r,
            issue_authority,
            htlc_timeout: TIMEOUT,
            ticket_window: 2 * TIMEOUT,
            allow_fund: false,
        };
        let view = net.chain.view(&imsc);
        let g = enclave.genesis(params, &view).unwrap();
        let mut state = State::new();
        for (k, v) in g.allocation {
            state.set(k, v);
        }
        assert_eq!(state.root(), g.st_root);
        Solo {
            net,
            operator,
            enclave,
            init,
            ipsc,
            imsc,
            state,
            nonces: Default::default(),
        }
    }

    pub fn standard() -> Self {
        Solo::new(5, 1000, InflationRate::percent(10), true)
    }

    pub fn mtx(&mut self, key: &KeyPair, call: Call, value: u64) -> MicroTx {
        let n = self.nonces.entry(key.public()).or_insert(0);
        let tx = MicroTx::sign(key, *n, call, value);
        *n += 1;
        tx
    }

    /// Executes a batch with the operator's retry loop, without touching the
    /// chain.
    pub fn exec(&mut self, txs: &[MicroTx]) -> Result<ExecOutput, EnclaveError> {
        let mut keys: BTreeSet<StateKey> = txs.iter().flat_map(touched_hint).collect();
        loop {
            match self.enclave.exec(txs, &[], &self.state.partial(&keys)) {
                Err(EnclaveError::Vm(VmError::Missing(m))) => keys.extend(m),
                Ok(out) => {
                    self.state.absorb(&out.partial);
                    return Ok(out);
                }
                Err(e) => return Err(e),
            }
        }
    }

    /// Posts the pair, waits for finality, refreshes the light client and
    /// flushes.
    pub fn snapshot(&mut self, out: &ExecOutput) -> ChainReceipt {
        let r = self.net.call(
            &self.operator,
            ChainCall::Snapshot {
                ipsc: self.ipsc,
                pair: out.pair.clone(),
            },
        );
        if r.status == ChainStatus::Applied {
            self.enclave.flush().unwrap();
        }
        self.refresh();
        r
    }

    pub fn refresh(&mut self) {
        let view = self.net.chain.view(&self.imsc);
        self.enclave.update_light_client(&view).unwrap();
    }

    /// Moves chain time and lets the enclave observe it.
    pub fn advance(&mut self, secs: u64) {
        let t = self.net.chain.now() + secs;
        self.net.chain.advance_time(t);
        self.refresh();
    }

    pub fn step(&mut self, txs: &[MicroTx]) -> ExecOutput {
        let out = self.exec(txs).unwrap();
        let r = self.snapshot(&out);
        assert_eq!(r.status, ChainStatus::Applied, "{}", r.reason);
        out
    }
}
