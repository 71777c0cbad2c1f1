//! Identifiers shared by the ledger, the enclave and the public chain.

use std::fmt;

use serde::Serialize;

use crate::codec::{CodecError, Decode, Encode, Reader};
use crate::crypto::{hash_tagged, Digest, PublicKey};
use crate::impl_codec;

macro_rules! newtype_codec {
    ($ty:ident) => {
        impl Encode for $ty {
            fn encode_to(&self, out: &mut Vec<u8>) {
                self.0.encode_to(out);
            }
        }
        impl Decode for $ty {
            fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
                Ok($ty(Digest::decode_from(r)?))
            }
        }
    };
}

/// Account address inside one micro-ledger.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct Address(pub Digest);
newtype_codec!(Address);

impl Address {
    pub fn of(pk: &PublicKey) -> Self {
        Address(hash_tagged(b"address", &[&pk.bytes]))
    }

    /// Address of a native contract, which has no key.
    pub fn native(name: &str) -> Self {
        Address(hash_tagged(b"address/native", &[name.as_bytes()]))
    }

    pub fn iomc_send() -> Self {
        Address::native("iomc-send")
    }

    pub fn iomc_recv() -> Self {
        Address::native("iomc-recv")
    }
}

impl fmt::Debug for Address {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Addr({})", self.0.short())
    }
}

/// Public-chain contract address. An instance is identified by the id of its
/// integrity-preserving contract.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ContractId(pub Digest);
newtype_codec!(ContractId);

impl fmt::Debug for ContractId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Contract({})", self.0.short())
    }
}

impl fmt::Display for ContractId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0.short())
    }
}

/// Globally unique client identity: a key together with its home instance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ClientId {
    pub pk: PublicKey,
    pub ipsc: ContractId,
}
impl_codec!(ClientId { pk, ipsc });

impl ClientId {
    pub fn address(&self) -> Address {
        Address::of(&self.pk)
    }
}
