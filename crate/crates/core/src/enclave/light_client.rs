//! The enclave's view of the public chain.
//!
//! The simulated chain signs a digest of every contract the enclave cares
//! about under a well-known key; the enclave accepts a view only if the
//! signature verifies and the view does not go back in height or time.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::authlog::{inc_verify, Commitment};
use crate::crypto::{KeyPair, PublicKey, Scheme, Signature, Tagged};
use crate::ids::ContractId;
use crate::impl_codec;
use crate::ledger::ForeignEvidence;
use crate::time::Timestamp;

use super::issuance::InflationRate;

const VIEW_AUTHORITY_SEED: u64 = 0x0043_4841_494e; // fixed well-known simulated key

/// Key the simulated chain signs its light-client views with.
pub fn view_authority() -> KeyPair {
    KeyPair::from_seed(Scheme::Pb, VIEW_AUTHORITY_SEED)
}

pub fn view_authority_public() -> PublicKey {
    view_authority().public()
}

/// Finalized state of one instance's public contract.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceView {
    pub ipsc: ContractId,
    /// Admitted by the identity registry the view was taken against.
    pub approved: bool,
    pub lroot_pb: Option<Commitment>,
    /// Every root the contract has accepted, oldest first.
    pub roots: Vec<Commitment>,
    pub pk_tee: PublicKey,
    pub pk_pb: PublicKey,
    pub t_i: u64,
    pub t_s: u64,
    pub i_r: InflationRate,
    pub issue_authority: bool,
    pub created_at: Timestamp,
}
impl_codec!(InstanceView {
    ipsc,
    approved,
    lroot_pb,
    roots,
    pk_tee,
    pk_pb,
    t_i,
    t_s,
    i_r,
    issue_authority,
    created_at
});

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChainView {
    pub height: u64,
    pub time: Timestamp,
    pub imsc: ContractId,
    pub instances: Vec<InstanceView>,
}
impl_codec!(ChainView {
    height,
    time,
    imsc,
    instances
});
impl Tagged for ChainView {
    const TAG: &'static str = "chain-view";
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SignedView {
    pub view: ChainView,
    pub sig: Signature,
}
impl_codec!(SignedView { view, sig });

impl SignedView {
    pub fn sign(key: &KeyPair, view: ChainView) -> Self {
        SignedView {
            sig: key.sign(&view.signing_bytes()),
            view,
        }
    }

    pub fn verifies(&self) -> bool {
        view_authority_public().verifies(&self.view.signing_bytes(), &self.sig)
    }

    pub fn instance(&self, ipsc: &ContractId) -> Option<&InstanceView> {
        self.view.instances.iter().find(|i| i.ipsc == *ipsc)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ViewError {
    #[error("view signature does not verify")]
    Signature,
    #[error("view is for another identity registry")]
    WrongRegistry,
    #[error("view at height {got} is older than tracked height {tracked}")]
    Regressed { tracked: u64, got: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ForeignError {
    #[error("instance {0} is unknown to the light client")]
    UnknownInstance(ContractId),
    #[error("instance {0} is not admitted")]
    NotApproved(ContractId),
    #[error("claimed snapshot was never accepted by the instance's contract")]
    NotSnapshotted,
    #[error("incremental proof does not link the evidence root to the snapshot")]
    Inconsistent,
    #[error("inclusion proofs or receipt status rejected")]
    BadInclusion,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LightClient {
    height: u64,
    time: Timestamp,
    instances: BTreeMap<ContractId, InstanceView>,
}
impl_codec!(LightClient {
    height,
    time,
    instances
});

impl LightClient {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn height(&self) -> u64 {
        self.height
    }

    /// Chain time of the newest accepted view; the enclave's trusted clock.
    pub fn time(&self) -> Timestamp {
        self.time
    }

    pub fn instance(&self, ipsc: &ContractId) -> Option<&InstanceView> {
        self.instances.get(ipsc)
    }

    pub fn update(&mut self, signed: &SignedView, imsc: &ContractId) -> Result<(), ViewError> {
        if !signed.verifies() {
            return Err(ViewError::Signature);
        }
        let v = &signed.view;
        if v.imsc != *imsc {
            return Err(ViewError::WrongRegistry);
        }
        if v.height < self.height {
            return Err(ViewError::Regressed {
                tracked: self.height,
                got: v.height,
            });
        }
        self.height = v.height;
        self.time = self.time.max(v.time);
        for inst in self.instances.values_mut() {
            inst.approved = false;
        }
        for inst in &v.instances {
            self.instances.insert(inst.ipsc, inst.clone());
        }
        Ok(())
    }

    pub fn is_approved(&self, ipsc: &ContractId) -> bool {
        self.instances.get(ipsc).is_some_and(|i| i.approved)
    }

    /// Checks that `ev` proves an OK receipt in a ledger version linked to a
    /// root the foreign contract has accepted.
    pub fn verify_foreign(&self, ev: &ForeignEvidence) -> Result<(), ForeignError> {
        let inst = self
            .instances
            .get(&ev.foreign_ipsc)
            .ok_or(ForeignError::UnknownInstance(ev.foreign_ipsc))?;
        if !inst.approved {
            return Err(ForeignError::NotApproved(ev.foreign_ipsc));
        }
        if !inst.roots.contains(&ev.lroot_pb) {
            return Err(ForeignError::NotSnapshotted);
        }
        if !inc_verify(&ev.inc_proof, &ev.inclusion.lroot, &ev.lroot_pb) {
            return Err(ForeignError::Inconsistent);
        }
        if !ev.inclusion.verify() {
            return Err(ForeignError::BadInclusion);
        }
        Ok(())
    }
}
