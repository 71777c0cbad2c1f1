//! Identity registries: majority-governed and authority-governed.

use std::collections::{BTreeMap, BTreeSet};

use crate::crypto::PublicKey;
use crate::ids::ContractId;
use crate::impl_codec;

use super::Reject;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceInfo {
    pub operator: PublicKey,
    pub is_approved: bool,
    /// Operators who voted for the pending join, or for deletion once approved.
    pub approvals: BTreeSet<PublicKey>,
}
impl_codec!(InstanceInfo {
    operator,
    is_approved,
    approvals
});

/// Registry where admitted operators vote instances in and out.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ImscDecentralized {
    pub instances: BTreeMap<ContractId, InstanceInfo>,
}
impl_codec!(ImscDecentralized { instances });

impl ImscDecentralized {
    /// Initial instances are admitted without a vote.
    pub fn init(members: &[(ContractId, PublicKey)]) -> Result<Self, Reject> {
        let mut instances = BTreeMap::new();
        for (ipsc, operator) in members {
            let info = InstanceInfo {
                operator: *operator,
                is_approved: true,
                approvals: BTreeSet::new(),
            };
            if instances.insert(*ipsc, info).is_some() {
                return Err(Reject::new("duplicate initial instance"));
            }
        }
        Ok(ImscDecentralized { instances })
    }

    /// Majority threshold: strictly more than half of all entries, pending
    /// ones included.
    pub fn threshold(&self) -> usize {
        self.instances.len() / 2
    }

    pub fn new_join(&mut self, ipsc: ContractId, sender: PublicKey) -> Result<(), Reject> {
        if self.instances.contains_key(&ipsc) {
            return Err(Reject::new("instance already exists"));
        }
        self.instances.insert(
            ipsc,
            InstanceInfo {
                operator: sender,
                is_approved: false,
                approvals: BTreeSet::new(),
            },
        );
        Ok(())
    }

    fn check_voter(&self, my: &ContractId, sender: &PublicKey) -> Result<(), Reject> {
        let me = self
            .instances
            .get(my)
            .ok_or(Reject::new("voting instance unknown"))?;
        if me.operator != *sender {
            return Err(Reject::new("sender does not operate the voting instance"));
        }
        if !me.is_approved {
            return Err(Reject::new("voting instance is not approved"));
        }
        Ok(())
    }

    /// Returns whether this vote admitted the instance.
    pub fn approve_join(
        &mut self,
        my: ContractId,
        new: ContractId,
        sender: PublicKey,
    ) -> Result<bool, Reject> {
        self.check_voter(&my, &sender)?;
        if my == new {
            return Err(Reject::new("an instance may not approve itself"));
        }
        let threshold = self.threshold();
        let r = self
            .instances
            .get_mut(&new)
            .ok_or(Reject::new("join request unknown"))?;
        if r.is_approved {
            return Err(Reject::new("instance is already approved"));
        }
        if r.operator == sender {
            return Err(Reject::new("an operator may not approve its own request"));
        }
        r.approvals.insert(sender);
        if r.approvals.len() > threshold {
            r.is_approved = true;
            r.approvals.clear();
            return Ok(true);
        }
        Ok(false)
    }

    /// Returns whether this vote deleted the instance.
    pub fn approve_delete(
        &mut self,
        my: ContractId,
        del: ContractId,
        sender: PublicKey,
    ) -> Result<bool, Reject> {
        self.check_voter(&my, &sender)?;
        let threshold = self.threshold();
        let r = self
            .instances
            .get_mut(&del)
            .ok_or(Reject::new("instance unknown"))?;
        if !r.is_approved {
            return Err(Reject::new("only approved instances can be deleted"));
        }
        r.approvals.insert(sender);
        if r.approvals.len() > threshold {
            self.instances.remove(&del);
            return Ok(true);
        }
        Ok(false)
    }

    pub fn is_approved(&self, ipsc: &ContractId) -> bool {
        self.instances.get(ipsc).is_some_and(|i| i.is_approved)
    }
}

/// Registry where a single authority bank admits and removes instances.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImscCentralized {
    pub authority: ContractId,
    pub authority_operator: PublicKey,
    pub instances: BTreeMap<ContractId, PublicKey>,
}
impl_codec!(ImscCentralized {
    authority,
    authority_operator,
    instances
});

impl ImscCentralized {
    pub fn init(authority: ContractId, sender: PublicKey) -> Self {
        ImscCentralized {
            authority,
            authority_operator: sender,
            instances: BTreeMap::new(),
        }
    }

    pub fn add(
        &mut self,
        ipsc: ContractId,
        operator: PublicKey,
        sender: PublicKey,
    ) -> Result<(), Reject> {
        if sender != self.authority_operator {
            return Err(Reject::new("only the authority can add instances"));
        }
        if self.instances.contains_key(&ipsc) {
            return Err(Reject::new("instance already exists"));
        }
        self.instances.insert(ipsc, operator);
        Ok(())
    }

    pub fn del(&mut self, ipsc: ContractId, sender: PublicKey) -> Result<(), Reject> {
        if sender != self.authority_operator {
            return Err(Reject::new("only the authority can delete instances"));
        }
        self.instances.remove(&ipsc);
        Ok(())
    }

    /// The authority's own instance is admitted implicitly.
    pub fn is_approved(&self, ipsc: &ContractId) -> bool {
        *ipsc == self.authority || self.instances.contains_key(ipsc)
    }
}
