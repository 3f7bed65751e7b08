//! Signed receipts, response metadata and the auditor's reproduce-and-verify path.

use std::fmt;

use base64::Engine as _;
use detcore::{DecodePolicy, ExecutionTuple, InferenceOutput};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::da::{verify_inclusion, DaPointer, DaStore};
use crate::encoding::{decode_policy, encode_policy, Canonical, DecodeError, Reader, Writer, TAG_DA_RECORD, TAG_RECEIPT, TAG_RECEIPT_BODY};
use crate::hash::{hash_commit, Hash32};
use crate::registry::{ApprovedRegistry, EnvField, EpochStatus};
use crate::signing::{verify_signature, PublicKey, SignError, Signature, Signer};

/// Everything the operator signs.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiptBody {
    pub model_id: String,
    pub chain_id: String,
    pub gpu_arch: String,
    pub req_hash: Hash32,
    pub out_hash: Hash32,
    pub da_pointer: DaPointer,
    pub container_digest: Hash32,
    pub driver_tag: String,
    pub decode_policy: DecodePolicy,
    pub seed: u64,
    pub att_quote: Option<Vec<u8>>,
    pub timestamp: u64,
    pub key_epoch: u32,
}

impl Canonical for ReceiptBody {
    fn encode_into(&self, w: &mut Writer) {
        w.u8(TAG_RECEIPT_BODY)
            .str(&self.model_id)
            .str(&self.chain_id)
            .str(&self.gpu_arch)
            .fixed(self.req_hash.as_bytes())
            .fixed(self.out_hash.as_bytes())
            .u64(self.da_pointer.slot_id)
            .u32(self.da_pointer.leaf_index)
            .fixed(self.container_digest.as_bytes())
            .str(&self.driver_tag);
        encode_policy(&self.decode_policy, w);
        w.u64(self.seed).opt_bytes(self.att_quote.as_deref()).u64(self.timestamp).u32(self.key_epoch);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag("receipt body", TAG_RECEIPT_BODY)?;
        Ok(Self {
            model_id: r.string()?,
            chain_id: r.string()?,
            gpu_arch: r.string()?,
            req_hash: Hash32(r.array()?),
            out_hash: Hash32(r.array()?),
            da_pointer: DaPointer { slot_id: r.u64()?, leaf_index: r.u32()? },
            container_digest: Hash32(r.array()?),
            driver_tag: r.string()?,
            decode_policy: decode_policy(r)?,
            seed: r.u64()?,
            att_quote: r.opt_bytes()?,
            timestamp: r.u64()?,
            key_epoch: r.u32()?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Receipt {
    pub body: ReceiptBody,
    pub sig: Signature,
}

impl Canonical for Receipt {
    fn encode_into(&self, w: &mut Writer) {
        w.u8(TAG_RECEIPT);
        self.body.encode_into(w);
        w.fixed(self.sig.as_bytes());
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag("receipt", TAG_RECEIPT)?;
        let body = ReceiptBody::decode_from(r)?;
        Ok(Self { body, sig: Signature(r.array()?) })
    }
}

/// Receipt fields that do not come from the execution tuple.
#[derive(Debug, Clone, PartialEq)]
pub struct ReceiptContext {
    pub chain_id: String,
    pub da_pointer: DaPointer,
    pub key_epoch: u32,
    pub timestamp: u64,
    pub att_quote: Option<Vec<u8>>,
}

pub fn request_hash(exec: &ExecutionTuple) -> Hash32 {
    hash_commit(&exec.canonical_encode())
}

pub fn output_hash(out: &InferenceOutput) -> Hash32 {
    hash_commit(out.canonical_bytes())
}

pub fn make_receipt(
    exec: &ExecutionTuple,
    out: &InferenceOutput,
    signer: &dyn Signer,
    ctx: ReceiptContext,
) -> Result<Receipt, SignError> {
    let body = ReceiptBody {
        model_id: exec.model_id().to_string(),
        chain_id: ctx.chain_id,
        gpu_arch: exec.arch().to_string(),
        req_hash: request_hash(exec),
        out_hash: output_hash(out),
        da_pointer: ctx.da_pointer,
        container_digest: Hash32(*exec.container_digest()),
        driver_tag: exec.driver_tag().to_string(),
        decode_policy: *exec.decode_policy(),
        seed: exec.seed(),
        att_quote: ctx.att_quote,
        timestamp: ctx.timestamp,
        key_epoch: ctx.key_epoch,
    };
    let sig = signer.sign(&body.canonical_encode())?;
    Ok(Receipt { body, sig })
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReceiptError {
    #[error("signature does not verify under the operator key")]
    BadSignature,
    #[error("chain id {0:?} does not match the registry")]
    WrongChain(String),
    #[error("{field:?} {value:?} is not in the approved set")]
    Unapproved { field: EnvField, value: String },
    #[error("decode policy invalid: {0}")]
    BadPolicy(String),
    #[error("key epoch {0} is unknown")]
    UnknownEpoch(u32),
}

/// Signature plus field constraints.
pub fn check_receipt(receipt: &Receipt, operator: &PublicKey, registry: &ApprovedRegistry) -> Result<(), ReceiptError> {
    let b = &receipt.body;
    if !verify_signature(operator, &b.canonical_encode(), &receipt.sig) {
        return Err(ReceiptError::BadSignature);
    }
    if b.chain_id != registry.chain_id {
        return Err(ReceiptError::WrongChain(b.chain_id.clone()));
    }
    registry
        .check_environment(&b.model_id, &b.container_digest, &b.gpu_arch, &b.driver_tag)
        .map_err(|field| {
            let value = match field {
                EnvField::Model => b.model_id.clone(),
                EnvField::Container => b.container_digest.to_hex(),
                EnvField::Arch => b.gpu_arch.clone(),
                EnvField::Driver => b.driver_tag.clone(),
            };
            ReceiptError::Unapproved { field, value }
        })?;
    b.decode_policy.validate().map_err(|e| ReceiptError::BadPolicy(e.to_string()))?;
    if registry.epoch_status(b.key_epoch).is_none() {
        return Err(ReceiptError::UnknownEpoch(b.key_epoch));
    }
    Ok(())
}

pub fn verify_receipt(receipt: &Receipt, operator: &PublicKey, registry: &ApprovedRegistry) -> bool {
    check_receipt(receipt, operator, registry).is_ok()
}

/// JSON document form of a receipt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiptJson {
    pub model_id: String,
    pub chain_id: String,
    pub container_digest: Hash32,
    pub gpu_arch: String,
    pub driver_tag: String,
    pub decode_policy: String,
    pub seed: u64,
    pub req_hash: Hash32,
    pub out_hash: Hash32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub att_quote: Option<String>,
    pub sig: Signature,
    pub da_pointer: DaPointer,
    pub epoch: u32,
    pub timestamp: u64,
}

impl From<&Receipt> for ReceiptJson {
    fn from(r: &Receipt) -> Self {
        let b = &r.body;
        Self {
            model_id: b.model_id.clone(),
            chain_id: b.chain_id.clone(),
            container_digest: b.container_digest,
            gpu_arch: b.gpu_arch.clone(),
            driver_tag: b.driver_tag.clone(),
            decode_policy: b.decode_policy.to_string(),
            seed: b.seed,
            req_hash: b.req_hash,
            out_hash: b.out_hash,
            att_quote: b.att_quote.as_ref().map(|q| base64::engine::general_purpose::STANDARD.encode(q)),
            sig: r.sig,
            da_pointer: b.da_pointer,
            epoch: b.key_epoch,
            timestamp: b.timestamp,
        }
    }
}

impl TryFrom<ReceiptJson> for Receipt {
    type Error = DecodeError;

    fn try_from(j: ReceiptJson) -> Result<Self, DecodeError> {
        let decode_policy: DecodePolicy =
            j.decode_policy.parse().map_err(|e: detcore::DetError| DecodeError::Invalid(e.to_string()))?;
        let att_quote = j
            .att_quote
            .map(|q| base64::engine::general_purpose::STANDARD.decode(q))
            .transpose()
            .map_err(|e| DecodeError::Invalid(format!("att_quote: {e}")))?;
        Ok(Receipt {
            body: ReceiptBody {
                model_id: j.model_id,
                chain_id: j.chain_id,
                gpu_arch: j.gpu_arch,
                req_hash: j.req_hash,
                out_hash: j.out_hash,
                da_pointer: j.da_pointer,
                container_digest: j.container_digest,
                driver_tag: j.driver_tag,
                decode_policy,
                seed: j.seed,
                att_quote,
                timestamp: j.timestamp,
                key_epoch: j.epoch,
            },
            sig: j.sig,
        })
    }
}

impl Receipt {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ReceiptJson::from(self)).expect("receipt json")
    }

    pub fn from_json(s: &str) -> Result<Self, DecodeError> {
        let j: ReceiptJson = serde_json::from_str(s).map_err(|e| DecodeError::Invalid(e.to_string()))?;
        j.try_into()
    }
}

/// What an operator publishes at its DA pointer.
#[derive(Debug, Clone, PartialEq)]
pub struct DaRecord {
    pub ciphertext: Vec<u8>,
    pub receipt: Receipt,
}

impl Canonical for DaRecord {
    fn encode_into(&self, w: &mut Writer) {
        w.u8(TAG_DA_RECORD).bytes(&self.ciphertext);
        self.receipt.encode_into(w);
    }

    fn decode_from(r: &mut Reader<'_>) -> Result<Self, DecodeError> {
        r.expect_tag("da record", TAG_DA_RECORD)?;
        let ciphertext = r.bytes()?.to_vec();
        Ok(Self { ciphertext, receipt: Receipt::decode_from(r)? })
    }
}

/// Metadata returned to the client alongside an inference result.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMetadata {
    pub system_fingerprint: String,
    pub determinism_seed: u64,
    pub receipt: Receipt,
    pub eigenda_link: DaPointer,
}

pub fn system_fingerprint(container: &Hash32, arch: &str, driver: &str) -> String {
    format!("{container}/{arch}/{driver}")
}

impl ResponseMetadata {
    pub fn new(receipt: Receipt) -> Self {
        let b = &receipt.body;
        Self {
            system_fingerprint: system_fingerprint(&b.container_digest, &b.gpu_arch, &b.driver_tag),
            determinism_seed: b.seed,
            eigenda_link: b.da_pointer,
            receipt,
        }
    }

    pub fn is_consistent(&self) -> bool {
        let b = &self.receipt.body;
        self.system_fingerprint == system_fingerprint(&b.container_digest, &b.gpu_arch, &b.driver_tag)
            && self.determinism_seed == b.seed
            && self.eigenda_link == b.da_pointer
    }
}

/// Environment fields of a decrypted request, safe to reveal outside an enclave.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvironmentSummary {
    pub model_id: String,
    pub container_digest: Hash32,
    pub gpu_arch: String,
    pub driver_tag: String,
    pub decode_policy: DecodePolicy,
    pub seed: u64,
}

impl EnvironmentSummary {
    pub fn of_exec(exec: &ExecutionTuple) -> Self {
        Self {
            model_id: exec.model_id().to_string(),
            container_digest: Hash32(*exec.container_digest()),
            gpu_arch: exec.arch().to_string(),
            driver_tag: exec.driver_tag().to_string(),
            decode_policy: *exec.decode_policy(),
            seed: exec.seed(),
        }
    }

    pub fn of_receipt(b: &ReceiptBody) -> Self {
        Self {
            model_id: b.model_id.clone(),
            container_digest: b.container_digest,
            gpu_arch: b.gpu_arch.clone(),
            driver_tag: b.driver_tag.clone(),
            decode_policy: b.decode_policy,
            seed: b.seed,
        }
    }
}

/// Commitments produced by re-executing a decrypted payload inside an enclave.
/// Carries no plaintext.
#[derive(Debug, Clone, PartialEq)]
pub struct ReexecReport {
    pub request_hash: Hash32,
    pub environment: EnvironmentSummary,
    pub published_output_hash: Hash32,
    pub recomputed_output_hash: Hash32,
}

impl ReexecReport {
    /// Runs inside the enclave on decrypted request and output bytes.
    pub fn from_plaintext(request: &[u8], output: &[u8]) -> Result<Self, String> {
        let exec = ExecutionTuple::canonical_decode(request).map_err(|e| format!("request does not decode: {e}"))?;
        let recomputed = detcore::infer(&exec).map_err(|e| format!("re-execution failed: {e}"))?;
        Ok(Self {
            request_hash: hash_commit(request),
            environment: EnvironmentSummary::of_exec(&exec),
            published_output_hash: hash_commit(output),
            recomputed_output_hash: output_hash(&recomputed),
        })
    }
}

/// Access to decryption and re-execution through an attested enclave session.
pub trait KeyAccess {
    fn reexecute(&mut self, key_epoch: u32, ciphertext: &[u8]) -> Result<ReexecReport, String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VerifyStep {
    Fetch,
    Metadata,
    Signature,
    Inclusion,
    Epoch,
    Decrypt,
    RequestHash,
    Environment,
    OutputHash,
}

impl fmt::Display for VerifyStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VerifyStep::Fetch => "fetch",
            VerifyStep::Metadata => "metadata",
            VerifyStep::Signature => "signature",
            VerifyStep::Inclusion => "da-inclusion",
            VerifyStep::Epoch => "epoch-validity",
            VerifyStep::Decrypt => "decrypt",
            VerifyStep::RequestHash => "request-hash",
            VerifyStep::Environment => "environment",
            VerifyStep::OutputHash => "output-hash",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum VerdictStatus {
    Verified,
    Invalid,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub status: VerdictStatus,
    pub failed_step: Option<VerifyStep>,
    pub detail: String,
}

impl Verdict {
    fn verified() -> Self {
        Self { status: VerdictStatus::Verified, failed_step: None, detail: "all checks passed".into() }
    }

    fn invalid(step: VerifyStep, detail: impl Into<String>) -> Self {
        Self { status: VerdictStatus::Invalid, failed_step: Some(step), detail: format!("{step}: {}", detail.into()) }
    }

    pub fn is_verified(&self) -> bool {
        self.status == VerdictStatus::Verified
    }
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.status {
            VerdictStatus::Verified => write!(f, "VERIFIED ({})", self.detail),
            VerdictStatus::Invalid => write!(f, "INVALID ({})", self.detail),
        }
    }
}

/// Auditor procedure: fetch, check, re-execute in an enclave, compare.
pub fn reproduce_and_verify(
    da: &DaStore,
    meta: &ResponseMetadata,
    operator: &PublicKey,
    registry: &ApprovedRegistry,
    key_access: &mut dyn KeyAccess,
) -> Verdict {
    use VerifyStep::*;
    let pointer = meta.eigenda_link;
    let (blob, proof) = match da.fetch_with_proof(pointer) {
        Ok(v) => v,
        Err(e) => return Verdict::invalid(Fetch, e.to_string()),
    };
    let record = match DaRecord::canonical_decode(&blob) {
        Ok(r) => r,
        Err(e) => return Verdict::invalid(Fetch, format!("record does not decode: {e}")),
    };
    if !meta.is_consistent() || record.receipt != meta.receipt || record.receipt.body.da_pointer != pointer {
        return Verdict::invalid(Metadata, "metadata, receipt and DA record disagree");
    }
    let body = &record.receipt.body;
    if let Err(e) = check_receipt(&record.receipt, operator, registry) {
        return Verdict::invalid(Signature, e.to_string());
    }
    match da.root(pointer.slot_id) {
        Some(root) if proof.leaf == blob && verify_inclusion(&proof, &root) => {}
        _ => return Verdict::invalid(Inclusion, format!("no valid inclusion proof for {pointer}")),
    }
    if registry.epoch_status(body.key_epoch) != Some(EpochStatus::Active) {
        return Verdict::invalid(Epoch, format!("key epoch {} is retired", body.key_epoch));
    }
    let report = match key_access.reexecute(body.key_epoch, &record.ciphertext) {
        Ok(r) => r,
        Err(e) => return Verdict::invalid(Decrypt, e),
    };
    if report.request_hash != body.req_hash {
        return Verdict::invalid(RequestHash, "decrypted request does not match req_hash");
    }
    if report.environment != EnvironmentSummary::of_receipt(body) {
        return Verdict::invalid(Environment, "request environment differs from receipt");
    }
    if report.recomputed_output_hash != body.out_hash {
        return Verdict::invalid(OutputHash, "re-executed output does not match out_hash");
    }
    if report.published_output_hash != body.out_hash {
        return Verdict::invalid(OutputHash, "published output does not match out_hash");
    }
    Verdict::verified()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registry::{default_container, EpochRecord};
    use crate::signing::EcdsaSigner;

    pub(crate) fn sample_exec() -> ExecutionTuple {
        ExecutionTuple::new("toy-7", default_container().0, "archA", "drv-550.54", DecodePolicy::top_k(4, 6), 77, vec![3, 1, 4, 1, 5])
    }

    fn registry() -> ApprovedRegistry {
        let mut r = ApprovedRegistry::default();
        r.key_epochs.insert(1, EpochRecord { public_key: PublicKey([2; 33]), status: EpochStatus::Active });
        r
    }

    fn ctx() -> ReceiptContext {
        ReceiptContext {
            chain_id: "optiverify-devnet".into(),
            da_pointer: DaPointer { slot_id: 0, leaf_index: 0 },
            key_epoch: 1,
            timestamp: 3,
            att_quote: Some(vec![1, 2, 3]),
        }
    }

    #[test]
    fn sign_verify_round_trip() {
        let exec = sample_exec();
        let out = detcore::infer(&exec).unwrap();
        let op = EcdsaSigner::from_seed(b"op");
        let r = make_receipt(&exec, &out, &op, ctx()).unwrap();
        assert!(verify_receipt(&r, &op.public_key(), &registry()));
        assert!(!verify_receipt(&r, &EcdsaSigner::from_seed(b"other").public_key(), &registry()));
        let mut bad = r.clone();
        bad.body.out_hash.0[0] ^= 1;
        assert!(!verify_receipt(&bad, &op.public_key(), &registry()));
        let again = make_receipt(&exec, &out, &op, ctx()).unwrap();
        assert_eq!((again.body.req_hash, again.body.out_hash), (r.body.req_hash, r.body.out_hash));
    }

    #[test]
    fn unapproved_arch_rejected_even_when_signed() {
        let exec = sample_exec().with_arch("H100");
        let out = detcore::infer(&sample_exec()).unwrap();
        let op = EcdsaSigner::from_seed(b"op");
        let r = make_receipt(&exec, &out, &op, ctx()).unwrap();
        assert_eq!(
            check_receipt(&r, &op.public_key(), &registry()),
            Err(ReceiptError::Unapproved { field: EnvField::Arch, value: "H100".into() })
        );
    }

    #[test]
    fn unknown_epoch_rejected() {
        let exec = sample_exec();
        let out = detcore::infer(&exec).unwrap();
        let op = EcdsaSigner::from_seed(b"op");
        let r = make_receipt(&exec, &out, &op, ReceiptContext { key_epoch: 9, ..ctx() }).unwrap();
        assert_eq!(check_receipt(&r, &op.public_key(), &registry()), Err(ReceiptError::UnknownEpoch(9)));
    }

    #[test]
    fn encodings_round_trip() {
        let exec = sample_exec();
        let out = detcore::infer(&exec).unwrap();
        let r = make_receipt(&exec, &out, &EcdsaSigner::from_seed(b"op"), ctx()).unwrap();
        assert_eq!(Receipt::canonical_decode(&r.canonical_encode()).unwrap(), r);
        assert_eq!(Receipt::from_json(&r.to_json()).unwrap(), r);
        let rec = DaRecord { ciphertext: vec![9; 40], receipt: r };
        assert_eq!(DaRecord::canonical_decode(&rec.canonical_encode()).unwrap(), rec);
    }

    #[test]
    fn json_uses_schema_field_names() {
        let exec = sample_exec();
        let out = detcore::infer(&exec).unwrap();
        let r = make_receipt(&exec, &out, &EcdsaSigner::from_seed(b"op"), ctx()).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        let keys: Vec<&str> = v.as_object().unwrap().keys().map(String::as_str).collect();
        for k in [
            "model_id", "chain_id", "container_digest", "gpu_arch", "driver_tag", "decode_policy", "seed",
            "req_hash", "out_hash", "att_quote", "sig", "da_pointer", "epoch",
        ] {
            assert!(keys.contains(&k), "missing {k}");
        }
        assert_eq!(v["decode_policy"], "top_k;k=4;max_tokens=6");
        assert_eq!(v["att_quote"], "AQID");
        assert_eq!(v["da_pointer"], "0:0");
    }

    #[test]
    fn metadata_fingerprint_matches_receipt() {
        let exec = sample_exec();
        let out = detcore::infer(&exec).unwrap();
        let r = make_receipt(&exec, &out, &EcdsaSigner::from_seed(b"op"), ctx()).unwrap();
        let meta = ResponseMetadata::new(r);
        assert!(meta.is_consistent());
        assert!(meta.system_fingerprint.ends_with("/archA/drv-550.54"));
        let mut bad = meta.clone();
        bad.determinism_seed += 1;
        assert!(!bad.is_consistent());
    }

    #[test]
    fn report_from_plaintext() {
        let exec = sample_exec();
        let out = detcore::infer(&exec).unwrap();
        let rep = ReexecReport::from_plaintext(&exec.canonical_encode(), out.canonical_bytes()).unwrap();
        assert_eq!(rep.request_hash, request_hash(&exec));
        assert_eq!(rep.recomputed_output_hash, output_hash(&out));
        assert_eq!(rep.published_output_hash, rep.recomputed_output_hash);
        assert!(ReexecReport::from_plaintext(b"junk", b"").is_err());
    }
}
