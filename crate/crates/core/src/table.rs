//! Embedding tables and their placement on flash pages.

use std::io::{self, Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::mix64;

#[derive(Debug, Error)]
pub enum TableError {
    #[error("table must have at least one row and one element per row")]
    Empty,
    #[error("attribute size {0} is not one of 1, 2, 4")]
    BadAttrSize(u32),
    #[error("row data length {got} does not match {rows} rows of dim {dim}")]
    ShapeMismatch { got: usize, rows: u64, dim: u32 },
    #[error("row {row} out of range for table with {num_rows} rows")]
    RowOutOfRange { row: u64, num_rows: u64 },
    #[error("base lba {base} is not aligned to {alignment} blocks")]
    Misaligned { base: u64, alignment: u64 },
    #[error("vector of {vector_bytes} bytes does not fit in a {page_size} byte page")]
    VectorTooLarge { vector_bytes: u64, page_size: u64 },
    #[error("seeded tables are read-only")]
    ReadOnly,
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Bytes per stored element.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub enum AttrSize {
    One,
    Two,
    Four,
}

impl AttrSize {
    pub fn bytes(self) -> u32 {
        match self {
            AttrSize::One => 1,
            AttrSize::Two => 2,
            AttrSize::Four => 4,
        }
    }
}

impl TryFrom<u32> for AttrSize {
    type Error = TableError;

    fn try_from(v: u32) -> Result<Self, TableError> {
        match v {
            1 => Ok(AttrSize::One),
            2 => Ok(AttrSize::Two),
            4 => Ok(AttrSize::Four),
            other => Err(TableError::BadAttrSize(other)),
        }
    }
}

impl From<AttrSize> for u32 {
    fn from(a: AttrSize) -> u32 {
        a.bytes()
    }
}

/// Affine min-max quantizer shared by every element of a table.
///
/// Widths 1 and 2 map `[min, max]` onto the integer codes `0..=2^(8w)-1`
/// with round-to-nearest and saturation at both ends. Width 4 stores the
/// IEEE-754 bits of the value unchanged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quantizer {
    pub attr: AttrSize,
    pub min: f32,
    pub max: f32,
}

impl Quantizer {
    pub fn lossless() -> Self {
        Quantizer {
            attr: AttrSize::Four,
            min: 0.0,
            max: 0.0,
        }
    }

    pub fn new(attr: AttrSize, min: f32, max: f32) -> Self {
        Quantizer { attr, min, max }
    }

    /// Largest code for this width.
    pub fn levels(&self) -> u32 {
        match self.attr {
            AttrSize::One => u8::MAX as u32,
            AttrSize::Two => u16::MAX as u32,
            AttrSize::Four => u32::MAX,
        }
    }

    /// Distance between adjacent representable values (0 for width 4).
    pub fn step(&self) -> f64 {
        match self.attr {
            AttrSize::Four => 0.0,
            _ => (self.max as f64 - self.min as f64) / self.levels() as f64,
        }
    }

    pub fn quantize(&self, x: f32) -> u32 {
        match self.attr {
            AttrSize::Four => x.to_bits(),
            _ => {
                let step = self.step();
                if step <= 0.0 {
                    return 0;
                }
                let q = ((x as f64 - self.min as f64) / step).round();
                q.clamp(0.0, self.levels() as f64) as u32
            }
        }
    }

    pub fn dequantize(&self, code: u32) -> f32 {
        match self.attr {
            AttrSize::Four => f32::from_bits(code),
            _ => (self.min as f64 + code as f64 * self.step()) as f32,
        }
    }

    fn encode(&self, code: u32, out: &mut [u8]) {
        match self.attr {
            AttrSize::One => out[0] = code as u8,
            AttrSize::Two => out.copy_from_slice(&(code as u16).to_le_bytes()),
            AttrSize::Four => out.copy_from_slice(&code.to_le_bytes()),
        }
    }

    fn decode(&self, bytes: &[u8]) -> u32 {
        match self.attr {
            AttrSize::One => bytes[0] as u32,
            AttrSize::Two => u16::from_le_bytes([bytes[0], bytes[1]]) as u32,
            AttrSize::Four => u32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]),
        }
    }
}

#[derive(Debug, Clone)]
enum Storage {
    /// Stored codes, row-major, little-endian, `attr` bytes each.
    Dense(Vec<u8>),
    /// Codes computed on demand from a hash of (seed, row, column).
    Seeded(u64),
}

/// Rows of fixed-dimension vectors, stored at a fixed quantization width.
#[derive(Debug, Clone)]
pub struct EmbeddingTable {
    table_id: u32,
    num_rows: u64,
    dim: u32,
    quant: Quantizer,
    storage: Storage,
}

impl EmbeddingTable {
    /// A table whose contents are a pure function of `seed`. Needs no memory,
    /// so desk-scale and full-scale tables cost the same to hold.
    ///
    /// Width-4 values are multiples of 2^-23 in `[-1, 1)`; narrower widths use
    /// uniformly distributed codes over the range `[-1, 1]`.
    pub fn seeded(
        table_id: u32,
        num_rows: u64,
        dim: u32,
        attr: AttrSize,
        seed: u64,
    ) -> Result<Self, TableError> {
        if num_rows == 0 || dim == 0 {
            return Err(TableError::Empty);
        }
        let quant = match attr {
            AttrSize::Four => Quantizer::lossless(),
            _ => Quantizer::new(attr, -1.0, 1.0),
        };
        Ok(EmbeddingTable {
            table_id,
            num_rows,
            dim,
            quant,
            storage: Storage::Seeded(seed),
        })
    }

    /// Build a table from row-major values, quantizing when `attr` < 4 with
    /// the min-max range of the data.
    pub fn from_rows(
        table_id: u32,
        dim: u32,
        attr: AttrSize,
        values: &[f32],
    ) -> Result<Self, TableError> {
        if dim == 0 || values.is_empty() {
            return Err(TableError::Empty);
        }
        if values.len() % dim as usize != 0 {
            return Err(TableError::ShapeMismatch {
                got: values.len(),
                rows: (values.len() / dim as usize) as u64,
                dim,
            });
        }
        let quant = match attr {
            AttrSize::Four => Quantizer::lossless(),
            _ => {
                let min = values.iter().copied().fold(f32::INFINITY, f32::min);
                let max = values.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                Quantizer::new(attr, min, max)
            }
        };
        Self::from_rows_with(table_id, dim, quant, values)
    }

    /// Like [`from_rows`](Self::from_rows) with an explicit quantizer.
    pub fn from_rows_with(
        table_id: u32,
        dim: u32,
        quant: Quantizer,
        values: &[f32],
    ) -> Result<Self, TableError> {
        if dim == 0 || values.is_empty() {
            return Err(TableError::Empty);
        }
        if values.len() % dim as usize != 0 {
            return Err(TableError::ShapeMismatch {
                got: values.len(),
                rows: (values.len() / dim as usize) as u64,
                dim,
            });
        }
        let w = quant.attr.bytes() as usize;
        let mut bytes = vec![0u8; values.len() * w];
        for (chunk, &v) in bytes.chunks_exact_mut(w).zip(values) {
            quant.encode(quant.quantize(v), chunk);
        }
        Ok(EmbeddingTable {
            table_id,
            num_rows: (values.len() / dim as usize) as u64,
            dim,
            quant,
            storage: Storage::Dense(bytes),
        })
    }

    pub fn table_id(&self) -> u32 {
        self.table_id
    }

    pub fn num_rows(&self) -> u64 {
        self.num_rows
    }

    pub fn dim(&self) -> u32 {
        self.dim
    }

    pub fn attr_size(&self) -> AttrSize {
        self.quant.attr
    }

    pub fn quantizer(&self) -> &Quantizer {
        &self.quant
    }

    /// Stored bytes per vector.
    pub fn vector_bytes(&self) -> u64 {
        self.dim as u64 * self.quant.attr.bytes() as u64
    }

    fn check_row(&self, row: u64) -> Result<(), TableError> {
        if row >= self.num_rows {
            Err(TableError::RowOutOfRange {
                row,
                num_rows: self.num_rows,
            })
        } else {
            Ok(())
        }
    }

    fn code(&self, row: u64, col: u32) -> u32 {
        match &self.storage {
            Storage::Dense(bytes) => {
                let w = self.quant.attr.bytes() as usize;
                let at = (row as usize * self.dim as usize + col as usize) * w;
                self.quant.decode(&bytes[at..at + w])
            }
            Storage::Seeded(seed) => {
                let h = mix64(seed ^ mix64(row.wrapping_mul(0x1_0000_0001) ^ col as u64));
                match self.quant.attr {
                    AttrSize::One => (h & 0xff) as u32,
                    AttrSize::Two => (h & 0xffff) as u32,
                    AttrSize::Four => {
                        let v = ((h >> 40) as f32) * (2.0 / (1u64 << 24) as f32) - 1.0;
                        v.to_bits()
                    }
                }
            }
        }
    }

    /// Write the dequantized row into `out` (length `dim`).
    pub fn read_row_into(&self, row: u64, out: &mut [f32]) -> Result<(), TableError> {
        self.check_row(row)?;
        for (col, o) in out.iter_mut().enumerate().take(self.dim as usize) {
            *o = self.quant.dequantize(self.code(row, col as u32));
        }
        Ok(())
    }

    pub fn row(&self, row: u64) -> Result<Vec<f32>, TableError> {
        let mut out = vec![0.0; self.dim as usize];
        self.read_row_into(row, &mut out)?;
        Ok(out)
    }

    /// `acc[c] += row[c]` for every column, in column order.
    pub fn accumulate_row(&self, row: u64, acc: &mut [f32]) -> Result<(), TableError> {
        self.check_row(row)?;
        for (col, a) in acc.iter_mut().enumerate().take(self.dim as usize) {
            *a += self.quant.dequantize(self.code(row, col as u32));
        }
        Ok(())
    }

    /// The stored (possibly quantized) bytes of one row.
    pub fn row_bytes(&self, row: u64) -> Result<Vec<u8>, TableError> {
        self.check_row(row)?;
        let w = self.quant.attr.bytes() as usize;
        let mut out = vec![0u8; self.dim as usize * w];
        for (col, chunk) in out.chunks_exact_mut(w).enumerate() {
            self.quant.encode(self.code(row, col as u32), chunk);
        }
        Ok(out)
    }

    /// Decode a vector from stored bytes as produced by [`row_bytes`](Self::row_bytes).
    pub fn decode_vector(&self, bytes: &[u8]) -> Vec<f32> {
        let w = self.quant.attr.bytes() as usize;
        bytes
            .chunks_exact(w)
            .take(self.dim as usize)
            .map(|c| self.quant.dequantize(self.quant.decode(c)))
            .collect()
    }

    /// Overwrite a row. Only dense tables are writable; narrow widths store
    /// the quantized value.
    pub fn set_row(&mut self, row: u64, values: &[f32]) -> Result<(), TableError> {
        self.check_row(row)?;
        if values.len() != self.dim as usize {
            return Err(TableError::ShapeMismatch {
                got: values.len(),
                rows: 1,
                dim: self.dim,
            });
        }
        let quant = self.quant;
        let w = quant.attr.bytes() as usize;
        let dim = self.dim as usize;
        match &mut self.storage {
            Storage::Dense(bytes) => {
                let start = row as usize * dim * w;
                for (chunk, &v) in bytes[start..start + dim * w]
                    .chunks_exact_mut(w)
                    .zip(values)
                {
                    quant.encode(quant.quantize(v), chunk);
                }
                Ok(())
            }
            Storage::Seeded(_) => Err(TableError::ReadOnly),
        }
    }

    /// Serialize as a flat little-endian file: `table_id u32, rows u64,
    /// dim u32, attr_size u32`, then `rows * dim` stored elements. Narrow
    /// widths append the quantizer range as two `f32` (min, max).
    pub fn write_to<W: Write>(&self, mut w: W) -> Result<(), TableError> {
        w.write_all(&self.table_id.to_le_bytes())?;
        w.write_all(&self.num_rows.to_le_bytes())?;
        w.write_all(&self.dim.to_le_bytes())?;
        w.write_all(&self.quant.attr.bytes().to_le_bytes())?;
        for row in 0..self.num_rows {
            w.write_all(&self.row_bytes(row)?)?;
        }
        if self.quant.attr != AttrSize::Four {
            w.write_all(&self.quant.min.to_le_bytes())?;
            w.write_all(&self.quant.max.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self, TableError> {
        let mut u4 = [0u8; 4];
        let mut u8b = [0u8; 8];
        r.read_exact(&mut u4)?;
        let table_id = u32::from_le_bytes(u4);
        r.read_exact(&mut u8b)?;
        let num_rows = u64::from_le_bytes(u8b);
        r.read_exact(&mut u4)?;
        let dim = u32::from_le_bytes(u4);
        r.read_exact(&mut u4)?;
        let attr = AttrSize::try_from(u32::from_le_bytes(u4))?;
        if num_rows == 0 || dim == 0 {
            return Err(TableError::Empty);
        }
        let len = num_rows as usize * dim as usize * attr.bytes() as usize;
        let mut bytes = vec![0u8; len];
        r.read_exact(&mut bytes)?;
        let quant = match attr {
            AttrSize::Four => Quantizer::lossless(),
            _ => {
                r.read_exact(&mut u4)?;
                let min = f32::from_le_bytes(u4);
                r.read_exact(&mut u4)?;
                let max = f32::from_le_bytes(u4);
                Quantizer::new(attr, min, max)
            }
        };
        Ok(EmbeddingTable {
            table_id,
            num_rows,
            dim,
            quant,
            storage: Storage::Dense(bytes),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayoutMode {
    /// One vector per flash page, at offset 0.
    OnePerPage,
    /// As many whole vectors per page as fit.
    Packed,
}

/// Placement of a table's rows on logical blocks (one block = one page).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TableLayout {
    pub table_id: u32,
    pub base_lba: u64,
    pub mode: LayoutMode,
    pub page_size: u64,
    pub vectors_per_page: u64,
    pub vector_bytes: u64,
    pub num_rows: u64,
}

impl TableLayout {
    pub fn build(
        table: &EmbeddingTable,
        mode: LayoutMode,
        page_size: u64,
        base_lba: u64,
        alignment: u64,
    ) -> Result<Self, TableError> {
        if alignment == 0 || base_lba % alignment != 0 {
            return Err(TableError::Misaligned {
                base: base_lba,
                alignment,
            });
        }
        let vector_bytes = table.vector_bytes();
        if vector_bytes > page_size {
            return Err(TableError::VectorTooLarge {
                vector_bytes,
                page_size,
            });
        }
        let vectors_per_page = match mode {
            LayoutMode::OnePerPage => 1,
            LayoutMode::Packed => page_size / vector_bytes,
        };
        Ok(TableLayout {
            table_id: table.table_id(),
            base_lba,
            mode,
            page_size,
            vectors_per_page,
            vector_bytes,
            num_rows: table.num_rows(),
        })
    }

    /// Page index of `row` relative to the table base.
    pub fn page_of(&self, row: u64) -> u64 {
        row / self.vectors_per_page
    }

    pub fn slot_of(&self, row: u64) -> u64 {
        row % self.vectors_per_page
    }

    /// `(lba, byte offset within the page)` of a row.
    pub fn locate(&self, row: u64) -> (u64, u64) {
        (
            self.base_lba + self.page_of(row),
            self.slot_of(row) * self.vector_bytes,
        )
    }

    pub fn num_pages(&self) -> u64 {
        self.num_rows.div_ceil(self.vectors_per_page)
    }

    /// Rows stored on relative page `page`.
    pub fn rows_on_page(&self, page: u64) -> std::ops::Range<u64> {
        let start = page * self.vectors_per_page;
        start.min(self.num_rows)..(start + self.vectors_per_page).min(self.num_rows)
    }

    pub fn contains_lba(&self, lba: u64) -> bool {
        lba >= self.base_lba && lba < self.base_lba + self.num_pages()
    }

    /// Materialize the bytes of page `lba` (zero-filled past the last vector).
    pub fn read_page(&self, table: &EmbeddingTable, lba: u64) -> Result<Vec<u8>, TableError> {
        let mut page = vec![0u8; self.page_size as usize];
        if !self.contains_lba(lba) {
            return Ok(page);
        }
        for row in self.rows_on_page(lba - self.base_lba) {
            let off = (self.slot_of(row) * self.vector_bytes) as usize;
            page[off..off + self.vector_bytes as usize].copy_from_slice(&table.row_bytes(row)?);
        }
        Ok(page)
    }
}
