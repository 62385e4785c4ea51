//! SparseLengthsSum jobs and the reference gather-reduce.
//!
//! Every execution path in the crate sums a bag's vectors in ascending
//! input-id order, starting from `+0.0`, in `f32`. Holding all paths to one
//! order makes results bit-identical and lets tests compare with `==` on the
//! bit patterns.

use thiserror::Error;

use crate::table::{EmbeddingTable, TableError};

#[derive(Debug, Error)]
pub enum SlsError {
    #[error("job has no bags")]
    NoBags,
    #[error("job targets table {job} but table is {table}")]
    WrongTable { job: u32, table: u32 },
    #[error("input id {id} in bag {bag} out of range ({num_rows} rows)")]
    IdOutOfRange { bag: usize, id: u64, num_rows: u64 },
    #[error(transparent)]
    Table(#[from] TableError),
}

/// One output slot: the ids whose vectors are summed into `result_id`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Bag {
    pub result_id: u32,
    pub input_ids: Vec<u64>,
}

/// A batch of bags against one table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlsJob {
    pub table_id: u32,
    pub bags: Vec<Bag>,
    pub total_inputs: usize,
}

impl SlsJob {
    /// Bags are numbered in the order given.
    pub fn new(table_id: u32, bags: Vec<Vec<u64>>) -> Self {
        let total_inputs = bags.iter().map(Vec::len).sum();
        SlsJob {
            table_id,
            bags: bags
                .into_iter()
                .enumerate()
                .map(|(i, input_ids)| Bag {
                    result_id: i as u32,
                    input_ids,
                })
                .collect(),
            total_inputs,
        }
    }

    pub fn batch_size(&self) -> usize {
        self.bags.len()
    }

    pub fn validate(&self, table: &EmbeddingTable) -> Result<(), SlsError> {
        if self.bags.is_empty() {
            return Err(SlsError::NoBags);
        }
        if self.table_id != table.table_id() {
            return Err(SlsError::WrongTable {
                job: self.table_id,
                table: table.table_id(),
            });
        }
        for (b, bag) in self.bags.iter().enumerate() {
            if let Some(&id) = bag.input_ids.iter().find(|&&id| id >= table.num_rows()) {
                return Err(SlsError::IdOutOfRange {
                    bag: b,
                    id,
                    num_rows: table.num_rows(),
                });
            }
        }
        Ok(())
    }

    /// Every input id, in bag order then list order.
    pub fn all_ids(&self) -> impl Iterator<Item = u64> + '_ {
        self.bags.iter().flat_map(|b| b.input_ids.iter().copied())
    }
}

/// `num_bags` vectors of length `dim`, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct SlsOutput {
    pub dim: usize,
    pub data: Vec<f32>,
}

impl SlsOutput {
    pub fn zeros(num_bags: usize, dim: usize) -> Self {
        SlsOutput {
            dim,
            data: vec![0.0; num_bags * dim],
        }
    }

    pub fn num_bags(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn bag(&self, b: usize) -> &[f32] {
        &self.data[b * self.dim..(b + 1) * self.dim]
    }

    pub fn bag_mut(&mut self, b: usize) -> &mut [f32] {
        &mut self.data[b * self.dim..(b + 1) * self.dim]
    }

    /// Bitwise equality (distinguishes `-0.0` from `0.0`).
    pub fn bits_eq(&self, other: &SlsOutput) -> bool {
        self.dim == other.dim
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

/// Sorted copy of a bag's ids (the canonical accumulation order).
pub fn canonical_ids(ids: &[u64]) -> Vec<u64> {
    let mut v = ids.to_vec();
    v.sort();
    v
}

/// Sum each bag's rows in canonical order.
pub fn sls_reference(table: &EmbeddingTable, job: &SlsJob) -> Result<SlsOutput, SlsError> {
    sls_reference_split(table, job, |_| false)
}

/// Reference for a table split between flash and host memory.
///
/// For each bag: ids with `host_resident(id) == false` are summed in
/// ascending order into a zero vector, then the host-resident ids are added
/// to that partial sum in ascending order. With no host-resident ids this is
/// exactly [`sls_reference`].
pub fn sls_reference_split<F>(
    table: &EmbeddingTable,
    job: &SlsJob,
    host_resident: F,
) -> Result<SlsOutput, SlsError>
where
    F: Fn(u64) -> bool,
{
    job.validate(table)?;
    let dim = table.dim() as usize;
    let mut out = SlsOutput::zeros(job.bags.len(), dim);
    for (b, bag) in job.bags.iter().enumerate() {
        let ids = canonical_ids(&bag.input_ids);
        let acc = out.bag_mut(b);
        for &id in ids.iter().filter(|&&id| !host_resident(id)) {
            table.accumulate_row(id, acc)?;
        }
        for &id in ids.iter().filter(|&&id| host_resident(id)) {
            table.accumulate_row(id, acc)?;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SimRng;
    use crate::table::AttrSize;

    fn tiny() -> EmbeddingTable {
        EmbeddingTable::from_rows(0, 2, AttrSize::Four, &[1.0, 2.0, 10.0, 20.0, 100.0, 200.0])
            .unwrap()
    }

    #[test]
    fn two_term_sum() {
        let out = sls_reference(&tiny(), &SlsJob::new(0, vec![vec![0, 2]])).unwrap();
        assert_eq!(out.bag(0), &[101.0, 202.0]);
    }

    #[test]
    fn singleton_bag() {
        let out = sls_reference(&tiny(), &SlsJob::new(0, vec![vec![1]])).unwrap();
        assert_eq!(out.bag(0), &[10.0, 20.0]);
    }

    #[test]
    fn empty_bag_is_zero() {
        let out = sls_reference(&tiny(), &SlsJob::new(0, vec![vec![1], vec![]])).unwrap();
        assert_eq!(out.bag(1), &[0.0, 0.0]);
    }

    #[test]
    fn out_of_range_id() {
        let err = sls_reference(&tiny(), &SlsJob::new(0, vec![vec![3]]));
        assert!(matches!(err, Err(SlsError::IdOutOfRange { id: 3, .. })));
    }

    #[test]
    fn duplicates_weighted() {
        let out = sls_reference(&tiny(), &SlsJob::new(0, vec![vec![1, 1, 0]])).unwrap();
        assert_eq!(out.bag(0), &[21.0, 42.0]);
    }

    /// Scalar double loop: the independent oracle.
    fn scalar_oracle(table: &EmbeddingTable, job: &SlsJob) -> Vec<f32> {
        let dim = table.dim() as usize;
        let mut out = vec![0.0f32; job.bags.len() * dim];
        for (b, bag) in job.bags.iter().enumerate() {
            let mut ids = bag.input_ids.clone();
            ids.sort();
            for c in 0..dim {
                let mut s = 0.0f32;
                for &id in &ids {
                    s += table.row(id).unwrap()[c];
                }
                out[b * dim + c] = s;
            }
        }
        out
    }

    #[test]
    fn random_jobs_match_scalar_oracle() {
        let mut rng = SimRng::new(99);
        for j in 0..1000 {
            let rows = 1 + rng.below(4096);
            let dim = 1 + rng.below(64) as u32;
            let t = EmbeddingTable::seeded(0, rows, dim, AttrSize::Four, j).unwrap();
            let b = 1 + rng.below(4) as usize;
            let bags: Vec<Vec<u64>> = (0..b)
                .map(|_| (0..rng.below(8)).map(|_| rng.below(rows)).collect())
                .collect();
            let job = SlsJob::new(0, bags);
            let out = sls_reference(&t, &job).unwrap();
            let oracle = scalar_oracle(&t, &job);
            assert!(out
                .data
                .iter()
                .zip(&oracle)
                .all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }

    #[test]
    fn bag_permutation_invariant() {
        let t = EmbeddingTable::seeded(0, 50, 4, AttrSize::Four, 3).unwrap();
        let a = SlsJob::new(0, vec![vec![1, 7, 3], vec![9, 2]]);
        let b = SlsJob::new(0, vec![vec![9, 2], vec![3, 1, 7]]);
        let oa = sls_reference(&t, &a).unwrap();
        let ob = sls_reference(&t, &b).unwrap();
        assert_eq!(oa.bag(0), ob.bag(1));
        assert_eq!(oa.bag(1), ob.bag(0));
    }

    #[test]
    fn split_with_no_host_ids_is_reference() {
        let t = EmbeddingTable::seeded(0, 50, 4, AttrSize::Four, 3).unwrap();
        let job = SlsJob::new(0, vec![vec![4, 1, 30], vec![2]]);
        let a = sls_reference(&t, &job).unwrap();
        let b = sls_reference_split(&t, &job, |_| false).unwrap();
        assert!(a.bits_eq(&b));
    }
}
