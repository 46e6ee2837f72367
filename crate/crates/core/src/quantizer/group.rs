//! Entry grouping for low-dimensional feature tables.
//!
//! A table of `N` entries of width `d_f` is reshaped into `ceil(N / g)` vectors of width
//! `g * d_f` by concatenating `g = ceil(target_dim / d_f)` consecutive entries, padding
//! the tail with zero entries. The rotation machinery needs roughly `d >= 16`, hence the
//! default target of 16. Grids reported at an effective width of 32 use `target_dim = 32`.

use serde::{Deserialize, Serialize};

use crate::{Error, Matrix, Result};

pub const DEFAULT_TARGET_DIM: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupedTable {
    pub entry_dim: usize,
    pub group: usize,
    pub pad_count: usize,
}

impl GroupedTable {
    pub fn effective_dim(&self) -> usize {
        self.group * self.entry_dim
    }
}

pub fn group_entries(table: &Matrix, target_dim: usize) -> Result<(Matrix, GroupedTable)> {
    let entry_dim = table.cols();
    if entry_dim == 0 {
        return Err(Error::InvalidDimension {
            dim: 0,
            reason: "entry width must be at least 1",
        });
    }
    if target_dim < DEFAULT_TARGET_DIM {
        return Err(Error::Range {
            what: "target_dim",
            value: target_dim.to_string(),
            allowed: ">= 16",
        });
    }
    let group = target_dim.div_ceil(entry_dim);
    let n = table.rows();
    let groups = n.div_ceil(group);
    let pad_count = groups * group - n;
    let meta = GroupedTable {
        entry_dim,
        group,
        pad_count,
    };
    // Row-major storage makes concatenating consecutive rows a reinterpretation.
    let mut data = table.as_slice().to_vec();
    data.resize(groups * meta.effective_dim(), 0.0);
    Ok((Matrix::new(groups, meta.effective_dim(), data)?, meta))
}

pub fn ungroup_entries(
    grouped: &Matrix,
    meta: &GroupedTable,
    original_count: usize,
) -> Result<Matrix> {
    if meta.entry_dim == 0 || meta.group == 0 || grouped.cols() != meta.effective_dim() {
        return Err(Error::format(format!(
            "grouped width {} does not match {} entries of width {}",
            grouped.cols(),
            meta.group,
            meta.entry_dim
        )));
    }
    if original_count + meta.pad_count != grouped.rows() * meta.group
        || meta.pad_count >= meta.group
    {
        return Err(Error::format(format!(
            "{} grouped rows x {} cannot hold {original_count} entries plus {} padding",
            grouped.rows(),
            meta.group,
            meta.pad_count
        )));
    }
    let mut data = grouped.as_slice().to_vec();
    data.truncate(original_count * meta.entry_dim);
    Matrix::new(original_count, meta.entry_dim, data)
}
