//! NVMe-compatible command encoding for near-data SLS.
//!
//! An SLS operation is a pair of ordinary block commands with one otherwise
//! reserved bit set in command dword 0: a write-like command that carries the
//! [`ConfigBlob`] and a read-like command that returns the [`ResultBlob`].
//! Both target the same starting LBA, `table_base + request_id`, which the
//! device splits again with a modulus by the table alignment.

use std::collections::BTreeSet;

use thiserror::Error;

use crate::sls::{SlsJob, SlsOutput};
use crate::table::AttrSize;

/// Default table alignment in logical blocks.
pub const DEFAULT_ALIGNMENT: u64 = 1 << 20;

/// Default logical block size; equal to the flash page size.
pub const DEFAULT_BLOCK_SIZE: u64 = 16384;

const OPC_WRITE: u8 = 0x01;
const OPC_READ: u8 = 0x02;
/// Bit 10 of CDW0 is reserved in the base command format.
const NDP_BIT: u32 = 1 << 10;

const CONFIG_HEADER: usize = 16;
const CONFIG_RECORD: usize = 12;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("request id {id} not below alignment {alignment}")]
    RequestIdOutOfRange { id: u64, alignment: u64 },
    #[error("table base {base} not aligned to {alignment}")]
    UnalignedBase { base: u64, alignment: u64 },
    #[error("unknown opcode {0:#04x}")]
    UnknownOpcode(u8),
    #[error("blob truncated: need {need} bytes, have {have}")]
    Truncated { need: usize, have: usize },
    #[error("config pairs not sorted by input id at record {0}")]
    Unsorted(usize),
    #[error("result id {result_id} not below {num_results}")]
    ResultIdOutOfRange { result_id: u32, num_results: u32 },
    #[error("attribute size {0} is not one of 1, 2, 4")]
    BadAttrSize(u32),
    #[error("vector length must be non-zero")]
    ZeroVecLen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Opcode {
    Read,
    Write,
}

/// A block command as seen by the device. `ndp == false` means plain block
/// I/O; `ndp == true` means the SLS interpretation. There is no third state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NdpCommand {
    pub opcode: Opcode,
    pub ndp: bool,
    pub slba: u64,
    pub num_blocks: u32,
}

impl NdpCommand {
    pub fn plain_read(slba: u64, num_blocks: u32) -> Self {
        NdpCommand {
            opcode: Opcode::Read,
            ndp: false,
            slba,
            num_blocks,
        }
    }

    pub fn sls_config(slba: u64, num_blocks: u32) -> Self {
        NdpCommand {
            opcode: Opcode::Write,
            ndp: true,
            slba,
            num_blocks,
        }
    }

    pub fn sls_result(slba: u64, num_blocks: u32) -> Self {
        NdpCommand {
            opcode: Opcode::Read,
            ndp: true,
            slba,
            num_blocks,
        }
    }

    /// Command dword 0: opcode in bits 0..8, the NDP flag in bit 10.
    pub fn cdw0(&self) -> u32 {
        let opc = match self.opcode {
            Opcode::Write => OPC_WRITE,
            Opcode::Read => OPC_READ,
        } as u32;
        opc | if self.ndp { NDP_BIT } else { 0 }
    }

    /// Rebuild a command from CDW0, the 64-bit SLBA (CDW10/11) and the
    /// 0-based block count in CDW12 bits 0..16.
    pub fn from_dwords(cdw0: u32, slba: u64, cdw12: u32) -> Result<Self, ProtocolError> {
        let opcode = match (cdw0 & 0xff) as u8 {
            OPC_WRITE => Opcode::Write,
            OPC_READ => Opcode::Read,
            other => return Err(ProtocolError::UnknownOpcode(other)),
        };
        Ok(NdpCommand {
            opcode,
            ndp: cdw0 & NDP_BIT != 0,
            slba,
            num_blocks: (cdw12 & 0xffff) + 1,
        })
    }

    pub fn cdw12(&self) -> u32 {
        self.num_blocks.saturating_sub(1) & 0xffff
    }
}

/// Packs a request id into the low bits of an aligned table base.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SlbaCodec {
    pub alignment: u64,
}

impl Default for SlbaCodec {
    fn default() -> Self {
        SlbaCodec {
            alignment: DEFAULT_ALIGNMENT,
        }
    }
}

impl SlbaCodec {
    pub fn new(alignment: u64) -> Self {
        SlbaCodec { alignment }
    }

    pub fn encode(&self, table_base: u64, request_id: u64) -> Result<u64, ProtocolError> {
        if table_base % self.alignment != 0 {
            return Err(ProtocolError::UnalignedBase {
                base: table_base,
                alignment: self.alignment,
            });
        }
        if request_id >= self.alignment {
            return Err(ProtocolError::RequestIdOutOfRange {
                id: request_id,
                alignment: self.alignment,
            });
        }
        Ok(table_base + request_id)
    }

    /// `(table_base, request_id)`.
    pub fn decode(&self, slba: u64) -> (u64, u64) {
        let id = slba % self.alignment;
        (slba - id, id)
    }
}

/// Round-robin request id allocation for one table.
#[derive(Debug, Clone)]
pub struct RequestIdAllocator {
    alignment: u64,
    next: u64,
    in_use: BTreeSet<u64>,
}

impl RequestIdAllocator {
    pub fn new(alignment: u64) -> Self {
        RequestIdAllocator {
            alignment,
            next: 0,
            in_use: BTreeSet::new(),
        }
    }

    /// Next free id at or after the round-robin cursor; `None` when all
    /// `alignment` ids are outstanding.
    pub fn allocate(&mut self) -> Option<u64> {
        if self.in_use.len() as u64 >= self.alignment {
            return None;
        }
        loop {
            let id = self.next;
            self.next = (self.next + 1) % self.alignment;
            if self.in_use.insert(id) {
                return Some(id);
            }
        }
    }

    pub fn release(&mut self, id: u64) {
        self.in_use.remove(&id);
    }

    pub fn outstanding(&self) -> usize {
        self.in_use.len()
    }
}

/// SLS parameters passed with the write-like command.
///
/// Little-endian layout: `attr_size u32, vec_len u32, num_inputs u32,
/// num_results u32`, then `num_inputs` records of `(input_id u64,
/// result_id u32)` sorted by input id, zero-padded to whole blocks.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigBlob {
    pub attr_size: u32,
    pub vec_len: u32,
    pub num_results: u32,
    pub pairs: Vec<(u64, u32)>,
}

impl ConfigBlob {
    /// Flatten a job into (input id, bag index) pairs and stable-sort by id.
    /// `keep` selects which ids are sent; bags stay numbered as in the job.
    pub fn from_job<F>(job: &SlsJob, attr: AttrSize, vec_len: u32, keep: F) -> Self
    where
        F: Fn(u64) -> bool,
    {
        let mut pairs: Vec<(u64, u32)> = job
            .bags
            .iter()
            .flat_map(|bag| {
                bag.input_ids
                    .iter()
                    .copied()
                    .filter(|&id| keep(id))
                    .map(move |id| (id, bag.result_id))
            })
            .collect();
        pairs.sort_by_key(|&(id, _)| id);
        ConfigBlob {
            attr_size: attr.bytes(),
            vec_len,
            num_results: job.bags.len() as u32,
            pairs,
        }
    }

    pub fn num_inputs(&self) -> u32 {
        self.pairs.len() as u32
    }

    pub fn payload_len(&self) -> usize {
        CONFIG_HEADER + CONFIG_RECORD * self.pairs.len()
    }

    pub fn block_count(&self, block_size: u64) -> u64 {
        (self.payload_len() as u64).div_ceil(block_size)
    }

    pub fn encode(&self, block_size: u64) -> Vec<u8> {
        let mut out = Vec::with_capacity((self.block_count(block_size) * block_size) as usize);
        out.extend_from_slice(&self.attr_size.to_le_bytes());
        out.extend_from_slice(&self.vec_len.to_le_bytes());
        out.extend_from_slice(&self.num_inputs().to_le_bytes());
        out.extend_from_slice(&self.num_results.to_le_bytes());
        for &(id, r) in &self.pairs {
            out.extend_from_slice(&id.to_le_bytes());
            out.extend_from_slice(&r.to_le_bytes());
        }
        out.resize((self.block_count(block_size) * block_size) as usize, 0);
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ProtocolError> {
        if bytes.len() < CONFIG_HEADER {
            return Err(ProtocolError::Truncated {
                need: CONFIG_HEADER,
                have: bytes.len(),
            });
        }
        let u32_at = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        let attr_size = u32_at(0);
        if !matches!(attr_size, 1 | 2 | 4) {
            return Err(ProtocolError::BadAttrSize(attr_size));
        }
        let vec_len = u32_at(4);
        if vec_len == 0 {
            return Err(ProtocolError::ZeroVecLen);
        }
        let num_inputs = u32_at(8) as usize;
        let num_results = u32_at(12);
        let need = CONFIG_HEADER + CONFIG_RECORD * num_inputs;
        if bytes.len() < need {
            return Err(ProtocolError::Truncated {
                need,
                have: bytes.len(),
            });
        }
        let mut pairs = Vec::with_capacity(num_inputs);
        for i in 0..num_inputs {
            let at = CONFIG_HEADER + CONFIG_RECORD * i;
            let id = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap());
            let r = u32_at(at + 8);
            if r >= num_results {
                return Err(ProtocolError::ResultIdOutOfRange {
                    result_id: r,
                    num_results,
                });
            }
            if let Some(&(prev, _)) = pairs.last() {
                if id < prev {
                    return Err(ProtocolError::Unsorted(i));
                }
            }
            pairs.push((id, r));
        }
        Ok(ConfigBlob {
            attr_size,
            vec_len,
            num_results,
            pairs,
        })
    }

    /// The job this blob describes, with each bag's ids in ascending order.
    pub fn to_job(&self, table_id: u32) -> SlsJob {
        let mut bags = vec![Vec::new(); self.num_results as usize];
        for &(id, r) in &self.pairs {
            bags[r as usize].push(id);
        }
        SlsJob::new(table_id, bags)
    }
}

/// Blocks needed to return `num_results` vectors of `dim` 4-byte reals.
pub fn result_block_count(num_results: u64, dim: u64, block_size: u64) -> u64 {
    (num_results * dim * 4).div_ceil(block_size)
}

/// Result vectors in result-id order as little-endian `f32`, zero-padded.
pub struct ResultBlob;

impl ResultBlob {
    pub fn encode(out: &SlsOutput, block_size: u64) -> Vec<u8> {
        let blocks = result_block_count(out.num_bags() as u64, out.dim as u64, block_size);
        let mut bytes = Vec::with_capacity((blocks * block_size) as usize);
        for v in &out.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        bytes.resize((blocks * block_size) as usize, 0);
        bytes
    }

    pub fn decode(
        bytes: &[u8],
        num_results: usize,
        dim: usize,
    ) -> Result<SlsOutput, ProtocolError> {
        let need = num_results * dim * 4;
        if bytes.len() < need {
            return Err(ProtocolError::Truncated {
                need,
                have: bytes.len(),
            });
        }
        let data = bytes[..need]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(SlsOutput { dim, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn slba_examples() {
        let c = SlbaCodec::default();
        let s = c.encode(1 << 20, 5).unwrap();
        assert_eq!(s, 1_048_581);
        assert_eq!(c.decode(s), (1 << 20, 5));
        assert_eq!(c.encode(1 << 21, 0).unwrap(), 1 << 21);
        assert_eq!(c.decode(1 << 21), (1 << 21, 0));
    }

    #[test]
    fn slba_errors() {
        let c = SlbaCodec::default();
        assert_eq!(
            c.encode(0, 1 << 20),
            Err(ProtocolError::RequestIdOutOfRange {
                id: 1 << 20,
                alignment: 1 << 20
            })
        );
        assert!(matches!(
            c.encode(7, 0),
            Err(ProtocolError::UnalignedBase { .. })
        ));
    }

    #[test]
    fn slba_boundary_round_trip() {
        let c = SlbaCodec::default();
        let a = c.alignment;
        for base in [0, 1 << 20, 1 << 21] {
            for id in [0, 1, a - 1] {
                assert_eq!(c.decode(c.encode(base, id).unwrap()), (base, id));
            }
        }
    }

    #[test]
    fn cdw0_flag_bit() {
        let plain = NdpCommand::plain_read(10, 1);
        let cfg = NdpCommand::sls_config(10, 2);
        assert_eq!(plain.cdw0(), 0x02);
        assert_eq!(cfg.cdw0(), 0x01 | 0x400);
        let back = NdpCommand::from_dwords(cfg.cdw0(), 10, cfg.cdw12()).unwrap();
        assert_eq!(back, cfg);
        let back = NdpCommand::from_dwords(plain.cdw0(), 10, plain.cdw12()).unwrap();
        assert!(!back.ndp);
        assert_eq!(
            NdpCommand::from_dwords(0x09, 0, 0),
            Err(ProtocolError::UnknownOpcode(0x09))
        );
    }

    #[test]
    fn flatten_and_sort() {
        let job = SlsJob::new(0, vec![vec![3, 1], vec![2]]);
        let blob = ConfigBlob::from_job(&job, AttrSize::Four, 32, |_| true);
        assert_eq!(blob.pairs, vec![(1, 0), (2, 1), (3, 0)]);
        assert_eq!(blob.num_inputs(), 3);
        assert_eq!(blob.num_results, 2);
    }

    #[test]
    fn empty_bag_keeps_result_slot() {
        let job = SlsJob::new(0, vec![vec![4], vec![]]);
        let blob = ConfigBlob::from_job(&job, AttrSize::Four, 8, |_| true);
        assert_eq!(blob.num_results, 2);
        assert!(blob.pairs.iter().all(|&(_, r)| r != 1));
        let back = ConfigBlob::decode(&blob.encode(64)).unwrap().to_job(0);
        assert!(back.bags[1].input_ids.is_empty());
    }

    #[test]
    fn duplicate_ids_keep_bag_order() {
        let job = SlsJob::new(0, vec![vec![5], vec![5, 1], vec![5]]);
        let blob = ConfigBlob::from_job(&job, AttrSize::Four, 8, |_| true);
        assert_eq!(blob.pairs, vec![(1, 1), (5, 0), (5, 1), (5, 2)]);
    }

    #[test]
    fn decode_rejects_unsorted() {
        let blob = ConfigBlob {
            attr_size: 4,
            vec_len: 4,
            num_results: 1,
            pairs: vec![(9, 0), (2, 0)],
        };
        assert_eq!(
            ConfigBlob::decode(&blob.encode(64)),
            Err(ProtocolError::Unsorted(1))
        );
    }

    #[test]
    fn decode_rejects_bad_result_id() {
        let blob = ConfigBlob {
            attr_size: 4,
            vec_len: 4,
            num_results: 1,
            pairs: vec![(2, 1)],
        };
        assert!(matches!(
            ConfigBlob::decode(&blob.encode(64)),
            Err(ProtocolError::ResultIdOutOfRange { .. })
        ));
    }

    #[test]
    fn decode_rejects_truncated() {
        let blob = ConfigBlob {
            attr_size: 4,
            vec_len: 4,
            num_results: 1,
            pairs: vec![(2, 0), (3, 0)],
        };
        let bytes = blob.encode(64);
        assert!(matches!(
            ConfigBlob::decode(&bytes[..30]),
            Err(ProtocolError::Truncated { .. })
        ));
    }

    #[test]
    fn result_blocks() {
        assert_eq!(result_block_count(64, 32, 16384), 1);
        assert_eq!(result_block_count(129, 32, 16384), 2);
        for b in 1..=64u64 {
            for d in [1u64, 8, 32, 64, 128] {
                let bytes = b * d * 4;
                let mut blocks = 0;
                while blocks * 16384 < bytes {
                    blocks += 1;
                }
                assert_eq!(result_block_count(b, d, 16384), blocks);
            }
        }
    }

    #[test]
    fn result_blob_padding() {
        let out = SlsOutput {
            dim: 2,
            data: vec![1.0, -2.5, 0.0, 3.0],
        };
        let bytes = ResultBlob::encode(&out, 64);
        assert_eq!(bytes.len(), 64);
        assert!(bytes[16..].iter().all(|&b| b == 0));
        assert_eq!(ResultBlob::decode(&bytes, 2, 2).unwrap(), out);
    }

    #[test]
    fn allocator_round_robin_and_recycle() {
        let mut a = RequestIdAllocator::new(4);
        assert_eq!(a.allocate(), Some(0));
        assert_eq!(a.allocate(), Some(1));
        a.release(0);
        assert_eq!(a.allocate(), Some(2));
        assert_eq!(a.allocate(), Some(3));
        assert_eq!(a.allocate(), Some(0));
        assert_eq!(a.allocate(), None);
        a.release(2);
        assert_eq!(a.allocate(), Some(2));
    }
}
