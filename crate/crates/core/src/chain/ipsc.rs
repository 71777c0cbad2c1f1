//! Integrity-preserving contract of one instance.

use crate::authlog::Commitment;
use crate::crypto::{AttestationQuote, PublicKey, QuoteVerifier, SealedBox, Signature};
use crate::enclave::{
    allowed_issued, measurement, sealed_hash, CensStatus, InflationRate, QueryResolution,
    TxResolution, VersionTransitionPair,
};
use crate::ids::ContractId;
use crate::impl_codec;
use crate::ledger::AccessTicket;
use crate::time::Timestamp;

use super::Reject;

/// A request a client escalated; exactly one of `etx` and `equery` is set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CensInfo {
    pub requester: PublicKey,
    pub etx: Option<SealedBox>,
    pub equery: Option<SealedBox>,
    pub status: Option<CensStatus>,
    pub edata: Option<Vec<u8>>,
    pub submitted_at: Timestamp,
    pub resolved_at: Option<Timestamp>,
}
impl_codec!(CensInfo {
    requester,
    etx,
    equery,
    status,
    edata,
    submitted_at,
    resolved_at
});

impl CensInfo {
    pub fn is_query(&self) -> bool {
        self.equery.is_some()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotOutcome {
    Transitioned,
    /// Signature and supply checks passed but `root_from` is not the
    /// current root; nothing changed.
    Ignored,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IpscState {
    pub pk_tee: Vec<PublicKey>,
    pub pk_pb: Vec<PublicKey>,
    pub quotes: Vec<AttestationQuote>,
    pub operator: PublicKey,
    pub lroot_pb: Option<Commitment>,
    /// Every root accepted so far, oldest first.
    pub roots: Vec<Commitment>,
    pub cens_reqs: Vec<CensInfo>,
    pub t_s: u64,
    pub t_i: u64,
    pub t_i0: u64,
    pub issue_authority: bool,
    pub i_r: InflationRate,
    pub created_at: Timestamp,
}
impl_codec!(IpscState {
    pk_tee,
    pk_pb,
    quotes,
    operator,
    lroot_pb,
    roots,
    cens_reqs,
    t_s,
    t_i,
    t_i0,
    issue_authority,
    i_r,
    created_at
});

fn check_quote(
    quote: &AttestationQuote,
    pk_pb: &PublicKey,
    pk_tee: &PublicKey,
) -> Result<(), Reject> {
    if quote.enclave_pk != *pk_tee || quote.enclave_pk_pb != *pk_pb {
        return Err(Reject::new("quote is for other keys"));
    }
    match QuoteVerifier::simulated().verify_quote(quote, &measurement()) {
        Ok(true) => Ok(()),
        _ => Err(Reject::new("quote does not verify")),
    }
}

impl IpscState {
    /// Total issued and total supply both start at the initial issuance.
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        pk_pb: PublicKey,
        pk_tee: PublicKey,
        quote: AttestationQuote,
        operator: PublicKey,
        t_i0: u64,
        i_r: InflationRate,
        issue_authority: bool,
        now: Timestamp,
    ) -> Result<Self, Reject> {
        check_quote(&quote, &pk_pb, &pk_tee)?;
        if !i_r.is_valid() {
            return Err(Reject::new("inflation rate has a zero denominator"));
        }
        Ok(IpscState {
            pk_tee: vec![pk_tee],
            pk_pb: vec![pk_pb],
            quotes: vec![quote],
            operator,
            lroot_pb: None,
            roots: Vec::new(),
            cens_reqs: Vec::new(),
            t_s: t_i0,
            t_i: t_i0,
            t_i0,
            issue_authority,
            i_r,
            created_at: now,
        })
    }

    pub fn latest_pk_pb(&self) -> &PublicKey {
        self.pk_pb.last().expect("key history starts non-empty")
    }

    pub fn latest_pk_tee(&self) -> &PublicKey {
        self.pk_tee.last().expect("key history starts non-empty")
    }

    pub fn meets_inflation_rate(&self, t_i: u64, now: Timestamp) -> bool {
        t_i <= allowed_issued(self.t_i0, self.i_r, self.created_at, now)
    }

    pub fn snapshot_ledger(
        &mut self,
        pair: &VersionTransitionPair,
        now: Timestamp,
    ) -> Result<SnapshotOutcome, Reject> {
        if !pair.verifies_under(self.latest_pk_pb()) {
            return Err(Reject::new("pair not signed by the current enclave"));
        }
        if self.issue_authority {
            if !self.meets_inflation_rate(pair.t_i, now) {
                return Err(Reject::new("issued total exceeds the inflation bound"));
            }
        } else if pair.t_i != self.t_i {
            return Err(Reject::new(
                "instance without issuance authority changed t_i",
            ));
        }
        if self.lroot_pb != pair.root_from {
            return Ok(SnapshotOutcome::Ignored);
        }
        self.t_i = pair.t_i;
        self.t_s = pair.t_s;
        if self.lroot_pb != Some(pair.root_to) {
            self.roots.push(pair.root_to);
        }
        self.lroot_pb = Some(pair.root_to);
        Ok(SnapshotOutcome::Transitioned)
    }

    /// Ticket checks; the message signature is the enclosing chain
    /// transaction's, verified before any contract runs.
    pub fn access_control(
        &self,
        self_id: &ContractId,
        sender: &PublicKey,
        ticket: &AccessTicket,
        now: Timestamp,
    ) -> Result<(), Reject> {
        if ticket.client_pk != *sender {
            return Err(Reject::new("ticket is for another client"));
        }
        if ticket.issuing_ipsc != *self_id {
            return Err(Reject::new("ticket is for another instance"));
        }
        if ticket.expires_at < now {
            return Err(Reject::new("ticket expired"));
        }
        if !ticket.verifies_under(self.latest_pk_tee()) {
            return Err(Reject::new("ticket not signed by the current enclave"));
        }
        Ok(())
    }

    pub fn submit_cens_tx(&mut self, sender: PublicKey, etx: SealedBox, now: Timestamp) -> u64 {
        self.push_req(CensInfo {
            requester: sender,
            etx: Some(etx),
            equery: None,
            status: None,
            edata: None,
            submitted_at: now,
            resolved_at: None,
        })
    }

    pub fn submit_cens_qry(&mut self, sender: PublicKey, equery: SealedBox, now: Timestamp) -> u64 {
        self.push_req(CensInfo {
            requester: sender,
            etx: None,
            equery: Some(equery),
            status: None,
            edata: None,
            submitted_at: now,
            resolved_at: None,
        })
    }

    fn push_req(&mut self, info: CensInfo) -> u64 {
        self.cens_reqs.push(info);
        (self.cens_reqs.len() - 1) as u64
    }

    fn open_req(&self, idx: u64) -> Result<&CensInfo, Reject> {
        let r = usize::try_from(idx)
            .ok()
            .and_then(|i| self.cens_reqs.get(i))
            .ok_or(Reject::new("request index out of range"))?;
        if r.status.is_some() {
            return Err(Reject::new("request already resolved"));
        }
        Ok(r)
    }

    pub fn resolve_cens_tx(
        &mut self,
        idx: u64,
        status: CensStatus,
        sig: &Signature,
        now: Timestamp,
    ) -> Result<(), Reject> {
        let r = self.open_req(idx)?;
        let etx = r
            .etx
            .as_ref()
            .ok_or(Reject::new("request is not a transaction"))?;
        if !TxResolution::verifies(self.latest_pk_pb(), sealed_hash(etx), status, sig) {
            return Err(Reject::new("resolution not signed by the current enclave"));
        }
        let r = &mut self.cens_reqs[idx as usize];
        r.status = Some(status);
        r.resolved_at = Some(now);
        Ok(())
    }

    pub fn resolve_cens_qry(
        &mut self,
        idx: u64,
        status: CensStatus,
        edata: Vec<u8>,
        sig: &Signature,
        now: Timestamp,
    ) -> Result<(), Reject> {
        let r = self.open_req(idx)?;
        let equery = r
            .equery
            .as_ref()
            .ok_or(Reject::new("request is not a query"))?;
        if !QueryResolution::verifies(
            self.latest_pk_pb(),
            sealed_hash(equery),
            status,
            &edata,
            sig,
        ) {
            return Err(Reject::new("resolution not signed by the current enclave"));
        }
        let r = &mut self.cens_reqs[idx as usize];
        r.status = Some(status);
        r.edata = Some(edata);
        r.resolved_at = Some(now);
        Ok(())
    }

    /// Rotates the enclave keys together with a snapshot signed by the
    /// outgoing enclave. Either both take effect or neither does.
    pub fn replace_enclave(
        &mut self,
        sender: &PublicKey,
        pk_pb: PublicKey,
        pk_tee: PublicKey,
        quote: AttestationQuote,
        pair: &VersionTransitionPair,
        now: Timestamp,
    ) -> Result<(), Reject> {
        if *sender != self.operator {
            return Err(Reject::new("only the operator may replace the enclave"));
        }
        check_quote(&quote, &pk_pb, &pk_tee)?;
        let mut next = self.clone();
        match next.snapshot_ledger(pair, now)? {
            SnapshotOutcome::Transitioned => {}
            SnapshotOutcome::Ignored => {
                return Err(Reject::new(
                    "handover snapshot does not extend the current root",
                ))
            }
        }
        next.pk_pb.push(pk_pb);
        next.pk_tee.push(pk_tee);
        next.quotes.push(quote);
        *self = next;
        Ok(())
    }
}
