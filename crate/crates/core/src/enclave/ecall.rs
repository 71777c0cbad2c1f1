//! Frame interface: one canonical-encoded request in, one response out.

use crate::codec::{Decode, Encode};
use crate::crypto::{PublicKey, SealedBox};
use crate::impl_codec_enum;
use crate::ledger::{AccessTicket, ForeignEvidence, MicroTx, PartialState, Receipt};

use super::{
    Checkpoint, Enclave, EnclaveError, ExecOutput, GenesisOutput, GenesisParams, InitOutput,
    QueryAnswer, QueryRequest, QueryResolution, SignedView,
};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EcallRequest {
    Init {},
    Genesis {
        params: GenesisParams,
        view: SignedView,
    },
    UpdateView {
        view: SignedView,
    },
    Exec {
        txs: Vec<MicroTx>,
        censored: Vec<SealedBox>,
        partial: PartialState,
    },
    Flush {},
    Register {
        pk: PublicKey,
    },
    RenewTicket {
        pk: PublicKey,
    },
    OpenQuery {
        equery: SealedBox,
    },
    AnswerQuery {
        equery: SealedBox,
        answer: QueryAnswer,
    },
    VerifyForeign {
        evidence: ForeignEvidence,
    },
    Checkpoint {},
}
impl_codec_enum!(EcallRequest, "ecall request" {
    0 => Init {},
    1 => Genesis { params, view },
    2 => UpdateView { view },
    3 => Exec { txs, censored, partial },
    4 => Flush {},
    5 => Register { pk },
    6 => RenewTicket { pk },
    7 => OpenQuery { equery },
    8 => AnswerQuery { equery, answer },
    9 => VerifyForeign { evidence },
    10 => Checkpoint {},
});

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EcallResponse {
    Init {
        out: InitOutput,
    },
    Genesis {
        out: GenesisOutput,
    },
    Done {},
    Exec {
        out: Box<ExecOutput>,
    },
    Registered {
        receipt: Receipt,
        ticket: AccessTicket,
    },
    Ticket {
        ticket: AccessTicket,
    },
    Query {
        request: QueryRequest,
    },
    Resolution {
        resolution: QueryResolution,
    },
    Checkpoint {
        checkpoint: Checkpoint,
    },
    Error {
        message: String,
    },
}
impl_codec_enum!(EcallResponse, "ecall response" {
    0 => Init { out },
    1 => Genesis { out },
    2 => Done {},
    3 => Exec { out },
    4 => Registered { receipt, ticket },
    5 => Ticket { ticket },
    6 => Query { request },
    7 => Resolution { resolution },
    8 => Checkpoint { checkpoint },
    9 => Error { message },
});

impl Enclave {
    /// Decodes one request frame, runs it, and encodes the response. A frame
    /// that does not decode yields an `Error` response.
    pub fn ecall(&mut self, frame: &[u8]) -> Vec<u8> {
        let resp = match EcallRequest::decode(frame) {
            Ok(req) => self.dispatch(req).unwrap_or_else(|e| EcallResponse::Error {
                message: e.to_string(),
            }),
            Err(e) => EcallResponse::Error {
                message: format!("bad frame: {e}"),
            },
        };
        resp.encode()
    }

    fn dispatch(&mut self, req: EcallRequest) -> Result<EcallResponse, EnclaveError> {
        Ok(match req {
            EcallRequest::Init {} => EcallResponse::Init { out: self.init()? },
            EcallRequest::Genesis { params, view } => EcallResponse::Genesis {
                out: self.genesis(params, &view)?,
            },
            EcallRequest::UpdateView { view } => {
                self.update_light_client(&view)?;
                EcallResponse::Done {}
            }
            EcallRequest::Exec {
                txs,
                censored,
                partial,
            } => EcallResponse::Exec {
                out: Box::new(self.exec(&txs, &censored, &partial)?),
            },
            EcallRequest::Flush {} => {
                self.flush()?;
                EcallResponse::Done {}
            }
            EcallRequest::Register { pk } => {
                let (receipt, ticket) = self.register(pk)?;
                EcallResponse::Registered { receipt, ticket }
            }
            EcallRequest::RenewTicket { pk } => EcallResponse::Ticket {
                ticket: self.renew_ticket(&pk)?,
            },
            EcallRequest::OpenQuery { equery } => EcallResponse::Query {
                request: self.open_query(&equery)?,
            },
            EcallRequest::AnswerQuery { equery, answer } => EcallResponse::Resolution {
                resolution: self.answer_query(&equery, &answer)?,
            },
            EcallRequest::VerifyForeign { evidence } => {
                self.verify_foreign(&evidence)?;
                EcallResponse::Done {}
            }
            EcallRequest::Checkpoint {} => EcallResponse::Checkpoint {
                checkpoint: self.checkpoint()?,
            },
        })
    }
}
