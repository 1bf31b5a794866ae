//! Area maps of the FLOP-optimal variant over two geometry axes, emitted as
//! CSV: embedding-by-rank grids for square or 4x-expanding layers, and
//! batch-by-sequence grids for a fixed layer.

use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::costmodel::{BackwardVariant, ForwardVariant, ShapeConfig, VariantId};
use crate::error::{Error, Result};
use crate::selector::select_by_flops;

/// Which pass a map shows the best choice for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PassKind {
    Forward,
    Backward,
}

/// How an embedding size maps to the layer dimensions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerRule {
    /// Input and output both equal the embedding size.
    Square,
    /// Output is four times the input, the usual MLP expansion.
    Expand4,
}

impl LayerRule {
    pub fn dims(self, embed: u64) -> (u64, u64) {
        match self {
            LayerRule::Square => (embed, embed),
            LayerRule::Expand4 => (embed, embed.saturating_mul(4)),
        }
    }
}

/// Inclusive integer range with a step, e.g. `256..=8192` by `256`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AxisRange {
    pub start: u64,
    pub end: u64,
    pub step: u64,
}

impl AxisRange {
    pub fn new(start: u64, end: u64, step: u64) -> Result<Self> {
        if start == 0 || step == 0 || start > end {
            return Err(Error::InvalidConfig(format!(
                "invalid axis range {start}:{end}:{step} (need 1 <= start <= end, step >= 1)"
            )));
        }
        Ok(Self { start, end, step })
    }

    pub fn values(&self) -> Vec<u64> {
        let mut out = Vec::new();
        let mut v = self.start;
        while v <= self.end {
            out.push(v);
            match v.checked_add(self.step) {
                Some(next) => v = next,
                None => break,
            }
        }
        out
    }
}

/// Grid description: which two axes vary and the fixed remainder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GridSpec {
    /// x = embedding size, y = rank; batch and sequence length fixed.
    EmbedRank {
        embed: AxisRange,
        rank: AxisRange,
        batch: u64,
        seq_len: u64,
        layer_rule: LayerRule,
    },
    /// x = batch size, y = sequence length; layer dimensions and rank fixed.
    BatchSeq {
        batch: AxisRange,
        seq_len: AxisRange,
        input_dim: u64,
        output_dim: u64,
        rank: u64,
    },
}

impl GridSpec {
    fn validate(&self) -> Result<()> {
        match self {
            GridSpec::EmbedRank { batch, seq_len, .. } => {
                if *batch == 0 || *seq_len == 0 {
                    return Err(Error::InvalidConfig(
                        "fixed batch and sequence length must be >= 1".to_string(),
                    ));
                }
            }
            GridSpec::BatchSeq {
                input_dim,
                output_dim,
                rank,
                ..
            } => {
                if *input_dim == 0 || *output_dim == 0 || *rank == 0 {
                    return Err(Error::InvalidConfig(
                        "fixed layer dimensions and rank must be >= 1".to_string(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn x_values(&self) -> Vec<u64> {
        match self {
            GridSpec::EmbedRank { embed, .. } => embed.values(),
            GridSpec::BatchSeq { batch, .. } => batch.values(),
        }
    }

    fn y_values(&self) -> Vec<u64> {
        match self {
            GridSpec::EmbedRank { rank, .. } => rank.values(),
            GridSpec::BatchSeq { seq_len, .. } => seq_len.values(),
        }
    }

    /// Shape of one cell; pure in (self, x, y).
    pub fn cell_shape(&self, x: u64, y: u64) -> Result<ShapeConfig> {
        match *self {
            GridSpec::EmbedRank {
                batch,
                seq_len,
                layer_rule,
                ..
            } => {
                let (i, o) = layer_rule.dims(x);
                ShapeConfig::new(batch, seq_len, i, o, y)
            }
            GridSpec::BatchSeq {
                input_dim,
                output_dim,
                rank,
                ..
            } => ShapeConfig::new(x, y, input_dim, output_dim, rank),
        }
    }
}

/// Winning variant and evidence for one grid cell.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellChoice {
    pub variant: VariantId,
    pub parameter_reduction: bool,
    pub flops_best: u64,
    /// FLOPs of every candidate for the mapped pass, in index order.
    pub flops_all: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Cell {
    pub x: u64,
    pub y: u64,
    /// `None` when the cell's cost arithmetic overflowed.
    pub choice: Option<CellChoice>,
}

/// Grid of best-variant choices; cells are stored row-major with `y` as the
/// outer (row) axis.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AreaMap {
    pub pass: PassKind,
    pub xs: Vec<u64>,
    pub ys: Vec<u64>,
    pub cells: Vec<Cell>,
}

impl AreaMap {
    pub fn cell(&self, xi: usize, yi: usize) -> &Cell {
        &self.cells[yi * self.xs.len() + xi]
    }
}

/// Computes one cell; used by [`area_map`] for every (x, y) pair.
pub fn cell_choice(spec: &GridSpec, pass: PassKind, x: u64, y: u64) -> Result<Cell> {
    let shape = spec.cell_shape(x, y)?;
    let choice = match select_by_flops(&shape) {
        Ok(plan) => {
            let (variant, candidates): (VariantId, &[crate::selector::Candidate]) = match pass {
                PassKind::Forward => (plan.forward_choice.into(), &plan.forward_candidates),
                PassKind::Backward => (plan.backward_choice.into(), &plan.backward_candidates),
            };
            let flops_all: Vec<u64> = candidates.iter().map(|c| c.flops).collect();
            let flops_best = flops_all.iter().copied().min().expect("non-empty");
            Some(CellChoice {
                variant,
                parameter_reduction: plan.parameter_reduction,
                flops_best,
                flops_all,
            })
        }
        Err(Error::Overflow { .. }) => None,
        Err(e) => return Err(e),
    };
    Ok(Cell { x, y, choice })
}

/// Best-variant grid for the requested pass. Cells whose cost arithmetic
/// overflows are marked invalid and generation continues.
pub fn area_map(spec: &GridSpec, pass: PassKind) -> Result<AreaMap> {
    spec.validate()?;
    let xs = spec.x_values();
    let ys = spec.y_values();
    let mut cells = Vec::with_capacity(xs.len() * ys.len());
    for &y in &ys {
        for &x in &xs {
            cells.push(cell_choice(spec, pass, x, y)?);
        }
    }
    Ok(AreaMap { pass, xs, ys, cells })
}

fn candidate_headers(pass: PassKind) -> Vec<String> {
    match pass {
        PassKind::Forward => ForwardVariant::ALL
            .iter()
            .map(|v| format!("flops_{}", v.name()))
            .collect(),
        PassKind::Backward => BackwardVariant::EXECUTABLE
            .iter()
            .map(|v| format!("flops_{}", v.name()))
            .collect(),
    }
}

/// Writes the map as CSV: header `x,y,variant,param_reduction,flops_best`
/// plus one FLOP column per candidate, one row per cell, stable order,
/// newline-terminated. Re-emitting the same grid is byte-identical.
pub fn emit_csv<W: Write>(map: &AreaMap, out: &mut W) -> std::io::Result<()> {
    let headers = candidate_headers(map.pass);
    write!(out, "x,y,variant,param_reduction,flops_best")?;
    for h in &headers {
        write!(out, ",{h}")?;
    }
    writeln!(out)?;
    for cell in &map.cells {
        match &cell.choice {
            Some(c) => {
                write!(
                    out,
                    "{},{},{},{},{}",
                    cell.x, cell.y, c.variant, c.parameter_reduction, c.flops_best
                )?;
                for f in &c.flops_all {
                    write!(out, ",{f}")?;
                }
                writeln!(out)?;
            }
            None => {
                write!(out, "{},{},invalid,,", cell.x, cell.y)?;
                for _ in &headers {
                    write!(out, ",")?;
                }
                writeln!(out)?;
            }
        }
    }
    Ok(())
}

/// [`emit_csv`] straight to a file path.
pub fn write_csv_file<P: AsRef<Path>>(map: &AreaMap, path: P) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut writer = BufWriter::new(file);
    emit_csv(map, &mut writer)?;
    writer.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_embed_rank() -> GridSpec {
        GridSpec::EmbedRank {
            embed: AxisRange::new(64, 256, 64).unwrap(),
            rank: AxisRange::new(8, 64, 8).unwrap(),
            batch: 2,
            seq_len: 100,
            layer_rule: LayerRule::Square,
        }
    }

    #[test]
    fn single_cell_grid_matches_selector() {
        let spec = GridSpec::BatchSeq {
            batch: AxisRange::new(2, 2, 1).unwrap(),
            seq_len: AxisRange::new(100, 100, 1).unwrap(),
            input_dim: 512,
            output_dim: 512,
            rank: 32,
        };
        let map = area_map(&spec, PassKind::Backward).unwrap();
        assert_eq!(map.cells.len(), 1);
        let choice = map.cells[0].choice.as_ref().unwrap();
        let plan = select_by_flops(&ShapeConfig::new(2, 100, 512, 512, 32).unwrap()).unwrap();
        assert_eq!(choice.variant, plan.backward_choice.into());
        assert_eq!(choice.flops_best, 137_625_600);
    }

    #[test]
    fn square_grid_constrained_cells_avoid_dominated_variants() {
        let map = area_map(&small_embed_rank(), PassKind::Backward).unwrap();
        for cell in &map.cells {
            let c = cell.choice.as_ref().unwrap();
            if c.parameter_reduction {
                assert!(
                    matches!(
                        c.variant,
                        VariantId::Backward(BackwardVariant::B1)
                            | VariantId::Backward(BackwardVariant::B4)
                            | VariantId::Backward(BackwardVariant::B5)
                    ),
                    "cell ({}, {}) chose {}",
                    cell.x,
                    cell.y,
                    c.variant
                );
            }
        }
    }

    #[test]
    fn param_reduction_boundary_matches_closed_form() {
        // The flag is rank < i*o/(i+o): embed/2 for square layers, 4*embed/5
        // for 4x-expanding ones.
        let map = area_map(&small_embed_rank(), PassKind::Backward).unwrap();
        for cell in &map.cells {
            let flag = cell.choice.as_ref().unwrap().parameter_reduction;
            assert_eq!(flag, cell.y * (cell.x + cell.x) < cell.x * cell.x);
            assert_eq!(flag, 2 * cell.y < cell.x);
        }

        let spec = GridSpec::EmbedRank {
            embed: AxisRange::new(10, 200, 10).unwrap(),
            rank: AxisRange::new(4, 160, 4).unwrap(),
            batch: 3,
            seq_len: 17,
            layer_rule: LayerRule::Expand4,
        };
        let map = area_map(&spec, PassKind::Backward).unwrap();
        for cell in &map.cells {
            let flag = cell.choice.as_ref().unwrap().parameter_reduction;
            assert_eq!(flag, 5 * cell.y < 4 * cell.x, "cell ({}, {})", cell.x, cell.y);
        }
    }

    #[test]
    fn forward_boundary_matches_crossover_inequality() {
        let spec = GridSpec::BatchSeq {
            batch: AxisRange::new(1, 16, 1).unwrap(),
            seq_len: AxisRange::new(64, 2048, 64).unwrap(),
            input_dim: 4096,
            output_dim: 11008,
            rank: 128,
        };
        let map = area_map(&spec, PassKind::Forward).unwrap();
        let io = 4096u64 * 11008;
        let dim_sum = 4096u64 + 11008;
        let mut seen_f1 = false;
        let mut seen_f2 = false;
        for cell in &map.cells {
            let expected = if io < cell.x * cell.y * dim_sum {
                VariantId::Forward(ForwardVariant::F2)
            } else {
                VariantId::Forward(ForwardVariant::F1)
            };
            assert_eq!(cell.choice.as_ref().unwrap().variant, expected);
            seen_f1 |= expected == VariantId::Forward(ForwardVariant::F1);
            seen_f2 |= expected == VariantId::Forward(ForwardVariant::F2);
        }
        // The boundary actually crosses this grid.
        assert!(seen_f1 && seen_f2);
    }

    #[test]
    fn forward_rows_flip_at_most_once() {
        let spec = GridSpec::BatchSeq {
            batch: AxisRange::new(1, 32, 1).unwrap(),
            seq_len: AxisRange::new(64, 1024, 64).unwrap(),
            input_dim: 1024,
            output_dim: 1024,
            rank: 16,
        };
        let map = area_map(&spec, PassKind::Forward).unwrap();
        for yi in 0..map.ys.len() {
            let mut flips = 0;
            for xi in 1..map.xs.len() {
                let a = &map.cell(xi - 1, yi).choice.as_ref().unwrap().variant;
                let b = &map.cell(xi, yi).choice.as_ref().unwrap().variant;
                if a != b {
                    flips += 1;
                }
            }
            assert!(flips <= 1, "row {yi} flipped {flips} times");
        }
    }

    #[test]
    fn cells_regenerate_identically() {
        let spec = small_embed_rank();
        let map = area_map(&spec, PassKind::Backward).unwrap();
        for (idx, cell) in map.cells.iter().enumerate() {
            let fresh = cell_choice(&spec, PassKind::Backward, cell.x, cell.y).unwrap();
            assert_eq!(&fresh, cell, "cell {idx}");
        }
    }

    #[test]
    fn csv_shape_and_stability() {
        let spec = GridSpec::BatchSeq {
            batch: AxisRange::new(1, 1, 1).unwrap(),
            seq_len: AxisRange::new(64, 64, 1).unwrap(),
            input_dim: 16,
            output_dim: 16,
            rank: 2,
        };
        let map = area_map(&spec, PassKind::Forward).unwrap();
        let mut buf = Vec::new();
        emit_csv(&map, &mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("x,y,variant,param_reduction,flops_best,flops_forward1,flops_forward2\n"));
        assert!(text.ends_with('\n'));

        let mut again = Vec::new();
        emit_csv(&area_map(&spec, PassKind::Forward).unwrap(), &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn row_count_matches_grid() {
        let map = area_map(&small_embed_rank(), PassKind::Backward).unwrap();
        let mut buf = Vec::new();
        emit_csv(&map, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + map.xs.len() * map.ys.len());
    }

    #[test]
    fn overflow_cells_marked_invalid() {
        let spec = GridSpec::BatchSeq {
            batch: AxisRange::new(u64::MAX / 4, u64::MAX / 4, 1).unwrap(),
            seq_len: AxisRange::new(8, 8, 1).unwrap(),
            input_dim: u64::MAX / 4,
            output_dim: 2,
            rank: 1,
        };
        let map = area_map(&spec, PassKind::Backward).unwrap();
        assert_eq!(map.cells.len(), 1);
        assert!(map.cells[0].choice.is_none());
        let mut buf = Vec::new();
        emit_csv(&map, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.lines().nth(1).unwrap().contains(",invalid,"));
    }
}
