use std::path::Path;

use proptest::prelude::*;
use recssd_core::protocol::{
    result_block_count, ConfigBlob, NdpCommand, ProtocolError, SlbaCodec, DEFAULT_ALIGNMENT,
};
use recssd_core::sls::{sls_reference, SlsJob};
use recssd_core::table::{AttrSize, EmbeddingTable};

fn golden(name: &str) -> Vec<u8> {
    let path = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    std::fs::read_to_string(&path)
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#'))
        .flat_map(|l| {
            l.split_whitespace()
                .map(|b| u8::from_str_radix(b, 16).unwrap())
                .collect::<Vec<_>>()
        })
        .collect()
}

fn encode(attr: AttrSize, dim: u32, bags: Vec<Vec<u64>>, block: u64) -> Vec<u8> {
    ConfigBlob::from_job(&SlsJob::new(0, bags), attr, dim, |_| true).encode(block)
}

#[test]
fn golden_flatten_sort() {
    let got = encode(AttrSize::Four, 32, vec![vec![3, 1], vec![2]], 64);
    assert_eq!(got, golden("flatten_sort.hex"));
}

#[test]
fn golden_empty_bag_with_duplicates() {
    let got = encode(AttrSize::Two, 16, vec![vec![7], vec![], vec![7, 5]], 64);
    assert_eq!(got, golden("empty_bag_duplicates.hex"));
}

#[test]
fn golden_wide_id_spans_two_blocks() {
    let got = encode(AttrSize::One, 8, vec![vec![(1 << 40) + 1, 0]], 32);
    assert_eq!(got, golden("wide_id_two_blocks.hex"));
}

#[test]
fn golden_blobs_decode_to_their_jobs() {
    let b = ConfigBlob::decode(&golden("empty_bag_duplicates.hex")).unwrap();
    assert_eq!(b.pairs, [(5, 2), (7, 0), (7, 2)]);
    assert_eq!(b.to_job(0).bags[1].input_ids, Vec::<u64>::new());
}

#[test]
fn slba_boundaries_round_trip() {
    let a = DEFAULT_ALIGNMENT;
    let codec = SlbaCodec::new(a);
    for base in [0, a, 2 * a] {
        for id in [0, 1, a - 1] {
            let slba = codec.encode(base, id).unwrap();
            assert_eq!(slba, base + id);
            assert_eq!(codec.decode(slba), (base, id));
        }
        assert!(codec.encode(base, a).is_err());
    }
    assert!(codec.encode(a + 1, 0).is_err());
}

#[test]
fn result_blocks_match_ceiling_over_sweep() {
    for b in 1..=64u64 {
        for d in [1u64, 8, 32, 64, 128] {
            for block in [512u64, 4096, 16384] {
                let bytes = b * d * 4;
                let want = bytes / block + u64::from(bytes % block != 0);
                assert_eq!(result_block_count(b, d, block), want);
            }
        }
    }
}

#[test]
fn unsorted_blob_is_rejected() {
    let mut bytes = encode(AttrSize::Four, 4, vec![vec![1, 2]], 64);
    // swap the two input ids
    bytes[16] = 2;
    bytes[28] = 1;
    assert!(matches!(
        ConfigBlob::decode(&bytes),
        Err(ProtocolError::Unsorted(1))
    ));
}

fn job_strategy(rows: u64) -> impl Strategy<Value = Vec<Vec<u64>>> {
    prop::collection::vec(prop::collection::vec(0..rows, 0..40), 1..33)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn config_round_trip_preserves_sls(bags in job_strategy(512), seed in any::<u64>(), small in any::<bool>()) {
        let table = EmbeddingTable::seeded(0, 512, 8, AttrSize::Four, seed).unwrap();
        let job = SlsJob::new(0, bags);
        let blob = ConfigBlob::from_job(&job, AttrSize::Four, 8, |_| true);
        let block = if small { 64 } else { 16384 };
        let bytes = blob.encode(block);
        prop_assert_eq!(bytes.len() as u64 % block, 0);
        let back = ConfigBlob::decode(&bytes).unwrap();
        prop_assert_eq!(&back, &blob);
        let a = sls_reference(&table, &job).unwrap();
        let b = sls_reference(&table, &back.to_job(0)).unwrap();
        prop_assert!(a.bits_eq(&b));
    }

    #[test]
    fn commands_survive_dword_packing(slba in any::<u64>(), blocks in 1u32..=u16::MAX as u32 + 1, kind in 0u8..3) {
        let cmd = match kind {
            0 => NdpCommand::plain_read(slba, blocks),
            1 => NdpCommand::sls_config(slba, blocks),
            _ => NdpCommand::sls_result(slba, blocks),
        };
        let back = NdpCommand::from_dwords(cmd.cdw0(), cmd.slba, cmd.cdw12()).unwrap();
        prop_assert_eq!(back, cmd);
    }
}
