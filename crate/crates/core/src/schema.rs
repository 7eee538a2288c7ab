//! Separator layout of compressed slice tokens for the language model.
//!
//! The overview block comes first and is followed by one row separator.
//! Slice blocks in a row are joined by column separators and rows are
//! joined by row separators:
//!
//! ```text
//! <overview> \n <s00> , <s01> \n <s10> , <s11> \n <s20> , <s21>
//! ```

use serde::Serialize;

use crate::error::{Error, Result};
use crate::partition::{PartitionPlan, SliceGrid};

/// Which image region a content token belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BlockId {
    Overview,
    Slice { row: u32, col: u32 },
}

/// One item of the abstract sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayoutItem {
    Token(BlockId),
    ColSep,
    RowSep,
}

/// Grid shape and block lengths recovered from a sequence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenLayout {
    pub grid: SliceGrid,
    pub overview_len: usize,
    /// Row-major, `rows x cols`.
    pub slice_lens: Vec<Vec<usize>>,
}

/// `K * (slices + 1)` content tokens.
pub fn token_count(plan: &PartitionPlan, k: usize) -> usize {
    k * (plan.slice_count() as usize + 1)
}

pub fn serialize_grid(grid: SliceGrid, k: usize) -> Vec<LayoutItem> {
    let mut seq = Vec::with_capacity(k * (grid.count() as usize + 1) + grid.count() as usize + 1);
    seq.extend(std::iter::repeat(LayoutItem::Token(BlockId::Overview)).take(k));
    for row in 0..grid.rows {
        seq.push(LayoutItem::RowSep);
        for col in 0..grid.cols {
            if col > 0 {
                seq.push(LayoutItem::ColSep);
            }
            seq.extend(std::iter::repeat(LayoutItem::Token(BlockId::Slice { row, col })).take(k));
        }
    }
    seq
}

pub fn serialize_layout(plan: &PartitionPlan, k: usize) -> Vec<LayoutItem> {
    serialize_grid(plan.grid, k)
}

fn layout_err(position: usize, message: impl Into<String>) -> Error {
    Error::Layout {
        position,
        message: message.into(),
    }
}

/// Recovers the grid shape and block lengths.
///
/// Blocks are maximal runs of content tokens. Errors carry the index of the
/// offending item.
pub fn parse_layout(seq: &[LayoutItem]) -> Result<TokenLayout> {
    let overview_len = seq
        .iter()
        .take_while(|i| matches!(i, LayoutItem::Token(_)))
        .count();
    if overview_len == 0 {
        return Err(layout_err(0, "missing overview block"));
    }
    match seq.get(overview_len) {
        None => return Err(layout_err(overview_len, "no slice rows after overview")),
        Some(LayoutItem::RowSep) => {}
        Some(_) => return Err(layout_err(overview_len, "expected row separator after overview")),
    }

    // (start position, block lengths) per row
    let mut rows: Vec<(usize, Vec<usize>)> = vec![(overview_len + 1, Vec::new())];
    let mut run = 0usize;
    for (pos, item) in seq.iter().enumerate().skip(overview_len + 1) {
        match item {
            LayoutItem::Token(_) => {
                run += 1;
                continue;
            }
            LayoutItem::ColSep | LayoutItem::RowSep if run == 0 => {
                return Err(layout_err(pos, "empty slice block"));
            }
            LayoutItem::ColSep => {}
            LayoutItem::RowSep => {}
        }
        let row = rows.last_mut().expect("at least one row");
        row.1.push(run);
        run = 0;
        if *item == LayoutItem::RowSep {
            rows.push((pos + 1, Vec::new()));
        }
    }
    if run == 0 {
        return Err(layout_err(seq.len(), "sequence ends without a slice block"));
    }
    rows.last_mut().expect("at least one row").1.push(run);

    let cols = rows[0].1.len();
    if let Some((index, (start, _))) = rows.iter().enumerate().find(|(_, r)| r.1.len() != cols) {
        return Err(layout_err(*start, format!("ragged rows at row {}", index + 1)));
    }
    let grid = SliceGrid::new(cols as u32, rows.len() as u32)?;
    Ok(TokenLayout {
        grid,
        overview_len,
        slice_lens: rows.into_iter().map(|(_, lens)| lens).collect(),
    })
}

/// Separator and token counts for one serialization.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LayoutSummary {
    pub content_tokens: usize,
    pub col_seps: usize,
    /// Separators between slice rows; excludes the one after the overview.
    pub row_seps: usize,
    pub overview_seps: usize,
    pub total_items: usize,
}

pub fn summarize(seq: &[LayoutItem]) -> LayoutSummary {
    let mut s = LayoutSummary {
        content_tokens: 0,
        col_seps: 0,
        row_seps: 0,
        overview_seps: 0,
        total_items: seq.len(),
    };
    let mut prev = None;
    for item in seq {
        match item {
            LayoutItem::Token(_) => s.content_tokens += 1,
            LayoutItem::ColSep => s.col_seps += 1,
            LayoutItem::RowSep if prev == Some(LayoutItem::Token(BlockId::Overview)) => {
                s.overview_seps += 1
            }
            LayoutItem::RowSep => s.row_seps += 1,
        }
        prev = Some(*item);
    }
    s
}

/// Text rendering: one placeholder per block, literal `,` and newline.
pub fn render(seq: &[LayoutItem]) -> String {
    let mut out = String::new();
    let mut prev: Option<BlockId> = None;
    for item in seq {
        match item {
            LayoutItem::Token(id) => {
                if prev != Some(*id) {
                    let len = seq.iter().filter(|i| **i == LayoutItem::Token(*id)).count();
                    match id {
                        BlockId::Overview => out.push_str(&format!("<overview:{len}>")),
                        BlockId::Slice { row, col } => {
                            out.push_str(&format!("<slice[{row},{col}]:{len}>"))
                        }
                    }
                }
                prev = Some(*id);
            }
            LayoutItem::ColSep => {
                out.push(',');
                prev = None;
            }
            LayoutItem::RowSep => {
                out.push('\n');
                prev = None;
            }
        }
    }
    out
}
