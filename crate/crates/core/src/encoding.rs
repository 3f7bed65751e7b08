//! Canonical binary encoding.
//!
//! Integers are fixed-width big-endian, byte strings and text are prefixed
//! with a u32 length, optional values carry a one-byte presence tag, and every
//! record starts with a one-byte type tag. Field order is fixed per record, so
//! the encoding is injective and `decode(encode(r)) == r`.

use detcore::{DecodeKind, DecodePolicy, ExecutionTuple, InferenceOutput};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("input truncated")]
    Truncated,
    #[error("{0} trailing bytes")]
    Trailing(usize),
    #[error("unexpected tag {found:#04x} for {what}")]
    BadTag { what: &'static str, found: u8 },
    #[error("invalid utf-8 text")]
    Utf8,
    #[error("invalid field: {0}")]
    Invalid(String),
}

pub const TAG_EXECUTION_TUPLE: u8 = 0x01;
pub const TAG_INFERENCE_OUTPUT: u8 = 0x02;
pub const TAG_RECEIPT_BODY: u8 = 0x03;
pub const TAG_RECEIPT: u8 = 0x04;
pub const TAG_DA_RECORD: u8 = 0x05;
pub const TAG_QUOTE: u8 = 0x06;
pub const TAG_KEY_SHARE: u8 = 0x07;

#[derive(Debug, Default)]
pub struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_be_bytes());
        self
    }

    pub fn fixed(&mut self, v: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(v);
        self
    }

    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.u32(u32::try_from(v.len()).expect("field longer than 4 GiB"));
        self.fixed(v)
    }

    pub fn str(&mut self, v: &str) -> &mut Self {
        self.bytes(v.as_bytes())
    }

    pub fn opt_bytes(&mut self, v: Option<&[u8]>) -> &mut Self {
        match v {
            None => self.u8(0),
            Some(b) => self.u8(1).bytes(b),
        }
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

#[derive(Debug)]
pub struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf }
    }

    pub fn fixed(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        if self.buf.len() < n {
            return Err(DecodeError::Truncated);
        }
        let (head, rest) = self.buf.split_at(n);
        self.buf = rest;
        Ok(head)
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        Ok(self.fixed(N)?.try_into().expect("length checked"))
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.fixed(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_be_bytes(self.array()?))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_be_bytes(self.array()?))
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], DecodeError> {
        let n = self.u32()? as usize;
        self.fixed(n)
    }

    pub fn string(&mut self) -> Result<String, DecodeError> {
        String::from_utf8(self.bytes()?.to_vec()).map_err(|_| DecodeError::Utf8)
    }

    pub fn opt_bytes(&mut self) -> Result<Option<Vec<u8>>, DecodeError> {
        match self.u8()? {
            0 => Ok(None),
            1 => Ok(Some(self.bytes()?.to_vec())),
            found => Err(DecodeError::BadTag { what: "option", found }),
        }
    }

    pub fn expect_tag(&mut self, what: &'static str, tag: u8) -> Result<(), DecodeError> {
        match self.u8()? {
            t if t == tag => Ok(()),
            found => Err(DecodeError::BadTag { what, found }),
        }
    }

    pub fn finish(self) -> Result<(), DecodeError> {
        match self.buf.len() {
            0 => Ok(()),
            n => Err(DecodeError::Trailing(n)),
        }
    }
}

/// Records with a canonical byte form.
pub trait Canonical: Sized {
    fn encode_into(&self, w: &mut Writer);
    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError>;

    fn canonical_encode(&self) -> Vec<u8> {
        let mut w = Writer::new();
        self.encode_into(&mut w);
        w.finish()
    }

    fn canonical_decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = Reader::new(bytes);
        let v = Self::decode_from(&mut r)?;
        r.finish()?;
        Ok(v)
    }
}

pub(crate) fn encode_policy(p: &DecodePolicy, w: &mut Writer) {
    match p.kind {
        DecodeKind::Greedy => w.u8(0),
        DecodeKind::TopK { k } => w.u8(1).u32(k),
        DecodeKind::Nucleus { p } => w.u8(2).u32(p.to_bits()),
    };
    w.u32(p.max_tokens);
}

pub(crate) fn decode_policy(r: &mut Reader<'_>) -> Result<DecodePolicy, DecodeError> {
    let kind = match r.u8()? {
        0 => DecodeKind::Greedy,
        1 => DecodeKind::TopK { k: r.u32()? },
        2 => DecodeKind::Nucleus { p: f32::from_bits(r.u32()?) },
        found => return Err(DecodeError::BadTag { what: "decode policy", found }),
    };
    let policy = DecodePolicy { kind, max_tokens: r.u32()? };
    policy.validate().map_err(|e| DecodeError::Invalid(e.to_string()))?;
    Ok(policy)
}

impl Canonical for ExecutionTuple {
    fn encode_into(&self, w: &mut Writer) {
        w.u8(TAG_EXECUTION_TUPLE)
            .str(self.model_id())
            .fixed(self.container_digest())
            .str(self.arch())
            .str(self.driver_tag());
        encode_policy(self.decode_policy(), w);
        w.u64(self.seed()).u32(self.prompt().len() as u32);
        for &t in self.prompt() {
            w.u32(t);
        }
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag("execution tuple", TAG_EXECUTION_TUPLE)?;
        let model_id = r.string()?;
        let container_digest = r.array::<32>()?;
        let arch = r.string()?;
        let driver_tag = r.string()?;
        let policy = decode_policy(r)?;
        let seed = r.u64()?;
        let n = r.u32()? as usize;
        if n > r.buf.len() / 4 {
            return Err(DecodeError::Truncated);
        }
        let prompt = (0..n).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        Ok(ExecutionTuple::new(model_id, container_digest, arch, driver_tag, policy, seed, prompt))
    }
}

impl Canonical for InferenceOutput {
    fn encode_into(&self, w: &mut Writer) {
        w.u8(TAG_INFERENCE_OUTPUT).bytes(self.canonical_bytes());
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag("inference output", TAG_INFERENCE_OUTPUT)?;
        InferenceOutput::from_canonical_bytes(r.bytes()?).map_err(|e| DecodeError::Invalid(e.to_string()))
    }
}
