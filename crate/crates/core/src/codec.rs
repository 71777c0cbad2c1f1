//! Canonical byte encoding shared by hashing, signing and every wire frame.
//!
//! Layout rules:
//!
//! * fields are written in declaration order with no padding;
//! * unsigned integers are big-endian and fixed width;
//! * `bool` is one byte, `0x00` or `0x01`;
//! * fixed-size byte arrays (digests, keys, signatures) are written raw;
//! * variable-length sequences carry a `u32` element count prefix, so a
//!   `Vec<u8>` is a `u32` length followed by the bytes;
//! * `Option<T>` is a `0x00` tag, or `0x01` followed by the value;
//! * enums are a `u8` variant tag followed by the variant's fields.
//!
//! Decoding is strict: unknown tags, non-canonical booleans and trailing
//! bytes are rejected, which keeps the encoding injective and makes
//! `encode(decode(b)) == b` for every accepted `b`.

use std::collections::{BTreeMap, BTreeSet};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("unexpected end of input: needed {needed} bytes at offset {offset}")]
    UnexpectedEof { offset: usize, needed: usize },
    #[error("invalid {what} tag {tag:#04x}")]
    InvalidTag { what: &'static str, tag: u8 },
    #[error("{0} trailing bytes after value")]
    TrailingBytes(usize),
    #[error("length {0} exceeds remaining input")]
    LengthOverflow(u64),
    #[error("invalid value: {0}")]
    Invalid(&'static str),
}

pub trait Encode {
    fn encode_to(&self, out: &mut Vec<u8>);

    fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.encode_to(&mut out);
        out
    }
}

pub trait Decode: Sized {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError>;

    /// Decodes a complete value; leftover bytes are an error.
    fn decode(bytes: &[u8]) -> Result<Self, CodecError> {
        let mut r = Reader::new(bytes);
        let v = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(v)
    }
}

pub struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Reader { buf, pos: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], CodecError> {
        if self.buf.len() - self.pos < n {
            return Err(CodecError::UnexpectedEof {
                offset: self.pos,
                needed: n,
            });
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn finish(&self) -> Result<(), CodecError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(CodecError::TrailingBytes(n)),
        }
    }

    /// Reads a `u32` count prefix and sanity-checks it against the input left.
    pub fn len_prefix(&mut self, min_elem_size: usize) -> Result<usize, CodecError> {
        let n = u32::decode_from(self)? as usize;
        if n.saturating_mul(min_elem_size.max(1)) > self.remaining() && min_elem_size > 0 {
            return Err(CodecError::LengthOverflow(n as u64));
        }
        Ok(n)
    }
}

macro_rules! impl_uint {
    ($($t:ty),*) => {$(
        impl Encode for $t {
            fn encode_to(&self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_be_bytes());
            }
        }
        impl Decode for $t {
            fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
                let b = r.take(std::mem::size_of::<$t>())?;
                Ok(<$t>::from_be_bytes(b.try_into().expect("sized slice")))
            }
        }
    )*};
}
impl_uint!(u8, u16, u32, u64, u128);

impl Encode for bool {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.push(u8::from(*self));
    }
}

impl Decode for bool {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        match u8::decode_from(r)? {
            0 => Ok(false),
            1 => Ok(true),
            tag => Err(CodecError::InvalidTag { what: "bool", tag }),
        }
    }
}

impl<const N: usize> Encode for [u8; N] {
    fn encode_to(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(self);
    }
}

impl<const N: usize> Decode for [u8; N] {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(r.take(N)?.try_into().expect("sized slice"))
    }
}

impl<T: Encode> Encode for Vec<T> {
    fn encode_to(&self, out: &mut Vec<u8>) {
        (self.len() as u32).encode_to(out);
        for item in self {
            item.encode_to(out);
        }
    }
}

impl<T: Decode> Decode for Vec<T> {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let n = r.len_prefix(1)?;
        let mut v = Vec::with_capacity(n.min(4096));
        for _ in 0..n {
            v.push(T::decode_from(r)?);
        }
        Ok(v)
    }
}

impl Encode for String {
    fn encode_to(&self, out: &mut Vec<u8>) {
        (self.len() as u32).encode_to(out);
        out.extend_from_slice(self.as_bytes());
    }
}

impl Decode for String {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let n = r.len_prefix(1)?;
        let b = r.take(n)?;
        String::from_utf8(b.to_vec()).map_err(|_| CodecError::Invalid("utf-8 string"))
    }
}

impl<T: Encode> Encode for Option<T> {
    fn encode_to(&self, out: &mut Vec<u8>) {
        match self {
            None => out.push(0),
            Some(v) => {
                out.push(1);
                v.encode_to(out);
            }
        }
    }
}

impl<T: Decode> Decode for Option<T> {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        match u8::decode_from(r)? {
            0 => Ok(None),
            1 => Ok(Some(T::decode_from(r)?)),
            tag => Err(CodecError::InvalidTag {
                what: "option",
                tag,
            }),
        }
    }
}

impl<K: Encode, V: Encode> Encode for BTreeMap<K, V> {
    fn encode_to(&self, out: &mut Vec<u8>) {
        (self.len() as u32).encode_to(out);
        for (k, v) in self {
            k.encode_to(out);
            v.encode_to(out);
        }
    }
}

/// Keys must arrive strictly increasing so each map has one encoding.
impl<K: Decode + Ord, V: Decode> Decode for BTreeMap<K, V> {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let n = r.len_prefix(1)?;
        let mut m = BTreeMap::new();
        for _ in 0..n {
            let k = K::decode_from(r)?;
            if m.last_key_value().is_some_and(|(last, _)| *last >= k) {
                return Err(CodecError::Invalid("map keys not strictly increasing"));
            }
            let v = V::decode_from(r)?;
            m.insert(k, v);
        }
        Ok(m)
    }
}

impl<T: Encode> Encode for BTreeSet<T> {
    fn encode_to(&self, out: &mut Vec<u8>) {
        (self.len() as u32).encode_to(out);
        for x in self {
            x.encode_to(out);
        }
    }
}

/// Elements must arrive strictly increasing.
impl<T: Decode + Ord> Decode for BTreeSet<T> {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let n = r.len_prefix(1)?;
        let mut s = BTreeSet::new();
        for _ in 0..n {
            let x = T::decode_from(r)?;
            if s.last().is_some_and(|last| *last >= x) {
                return Err(CodecError::Invalid("set elements not strictly increasing"));
            }
            s.insert(x);
        }
        Ok(s)
    }
}

impl<T: Encode> Encode for Box<T> {
    fn encode_to(&self, out: &mut Vec<u8>) {
        (**self).encode_to(out);
    }
}

impl<T: Decode> Decode for Box<T> {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Box::new(T::decode_from(r)?))
    }
}

impl<A: Encode, B: Encode> Encode for (A, B) {
    fn encode_to(&self, out: &mut Vec<u8>) {
        self.0.encode_to(out);
        self.1.encode_to(out);
    }
}

impl<A: Decode, B: Decode> Decode for (A, B) {
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok((A::decode_from(r)?, B::decode_from(r)?))
    }
}

/// Implements [`Encode`] and [`Decode`] for a struct by writing its fields in
/// the listed order, which must be declaration order.
#[macro_export]
macro_rules! impl_codec {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl $crate::codec::Encode for $ty {
            fn encode_to(&self, out: &mut Vec<u8>) {
                $( $crate::codec::Encode::encode_to(&self.$field, out); )*
            }
        }
        impl $crate::codec::Decode for $ty {
            fn decode_from(
                r: &mut $crate::codec::Reader<'_>,
            ) -> Result<Self, $crate::codec::CodecError> {
                Ok($ty { $( $field: $crate::codec::Decode::decode_from(r)?, )* })
            }
        }
    };
}

/// Codec for a fieldless enum stored as a `u8` tag.
#[macro_export]
macro_rules! impl_codec_unit_enum {
    ($ty:ident, $what:literal { $($variant:ident = $tag:literal),* $(,)? }) => {
        impl $crate::codec::Encode for $ty {
            fn encode_to(&self, out: &mut Vec<u8>) {
                out.push(match self { $( $ty::$variant => $tag, )* });
            }
        }
        impl $crate::codec::Decode for $ty {
            fn decode_from(
                r: &mut $crate::codec::Reader<'_>,
            ) -> Result<Self, $crate::codec::CodecError> {
                match <u8 as $crate::codec::Decode>::decode_from(r)? {
                    $( $tag => Ok($ty::$variant), )*
                    tag => Err($crate::codec::CodecError::InvalidTag { what: $what, tag }),
                }
            }
        }
    };
}

/// Codec for an enum whose variants all use brace syntax (unit variants are
/// written `V {}`). Each variant is a `u8` tag followed by its fields.
#[macro_export]
macro_rules! impl_codec_enum {
    ($ty:ident, $what:literal { $($tag:literal => $variant:ident { $($field:ident),* $(,)? }),* $(,)? }) => {
        impl $crate::codec::Encode for $ty {
            #[allow(unused_variables)]
            fn encode_to(&self, out: &mut Vec<u8>) {
                match self {
                    $( $ty::$variant { $($field),* } => {
                        out.push($tag);
                        $( $crate::codec::Encode::encode_to($field, out); )*
                    } )*
                }
            }
        }
        impl $crate::codec::Decode for $ty {
            fn decode_from(
                r: &mut $crate::codec::Reader<'_>,
            ) -> Result<Self, $crate::codec::CodecError> {
                match <u8 as $crate::codec::Decode>::decode_from(r)? {
                    $( $tag => Ok($ty::$variant { $( $field: $crate::codec::Decode::decode_from(r)?, )* }), )*
                    tag => Err($crate::codec::CodecError::InvalidTag { what: $what, tag }),
                }
            }
        }
    };
}

/// Writes a `u32`-length-prefixed frame, the transport framing for every
/// canonical-encoded message.
pub fn write_frame<W: std::io::Write>(w: &mut W, payload: &[u8]) -> std::io::Result<()> {
    w.write_all(&(payload.len() as u32).to_be_bytes())?;
    w.write_all(payload)?;
    w.flush()
}

pub fn read_frame<R: std::io::Read>(r: &mut R) -> std::io::Result<Vec<u8>> {
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut buf = vec![0u8; u32::from_be_bytes(len) as usize];
    r.read_exact(&mut buf)?;
    Ok(buf)
}
