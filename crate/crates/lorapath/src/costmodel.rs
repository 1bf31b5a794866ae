//! Exact integer FLOP formulas for every forward/backward variant, the
//! parameter-reduction predicate, workspace and activation-memory accounting,
//! and the cost of the default (cached-intermediate) execution.
//!
//! All counts follow one convention: an `m x k` by `k x n` product costs
//! `2*m*k*n` FLOPs and elementwise matrix additions are free. Arithmetic is
//! checked; absurd shapes report overflow instead of wrapping.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The five geometry integers driving every cost formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ShapeConfig {
    /// Batch size.
    #[serde(rename = "b")]
    pub batch: u64,
    /// Sequence length.
    #[serde(rename = "s")]
    pub seq_len: u64,
    /// Layer input dimension.
    #[serde(rename = "i")]
    pub input_dim: u64,
    /// Layer output dimension.
    #[serde(rename = "o")]
    pub output_dim: u64,
    /// Adapter rank.
    #[serde(rename = "r")]
    pub rank: u64,
}

impl ShapeConfig {
    /// All five values must be at least 1.
    pub fn new(batch: u64, seq_len: u64, input_dim: u64, output_dim: u64, rank: u64) -> Result<Self> {
        let c = Self {
            batch,
            seq_len,
            input_dim,
            output_dim,
            rank,
        };
        if [batch, seq_len, input_dim, output_dim, rank].contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "all shape values must be >= 1, got {c}"
            )));
        }
        Ok(c)
    }

    /// Token rows seen by the layer: batch * sequence length.
    pub fn tokens(&self) -> Result<u64> {
        self.batch
            .checked_mul(self.seq_len)
            .ok_or_else(|| self.overflow())
    }

    /// True iff the adapter has fewer trainable parameters than the layer it
    /// adapts: `rank * (input_dim + output_dim) < input_dim * output_dim`.
    pub fn param_reduction_holds(&self) -> bool {
        let lhs = u128::from(self.rank) * (u128::from(self.input_dim) + u128::from(self.output_dim));
        let rhs = u128::from(self.input_dim) * u128::from(self.output_dim);
        lhs < rhs
    }

    fn overflow(&self) -> Error {
        Error::Overflow {
            shape: self.to_string(),
        }
    }
}

impl fmt::Display for ShapeConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "(b={}, s={}, i={}, o={}, r={})",
            self.batch, self.seq_len, self.input_dim, self.output_dim, self.rank
        )
    }
}

/// The two forward bracketings of `input*weight + (input*down)*up`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ForwardVariant {
    /// `(X W) + ((X A) B)` — adapter applied as two skinny products.
    #[serde(rename = "forward1")]
    F1,
    /// `X (W + A B)` — weight and adapter merged, then one big product.
    #[serde(rename = "forward2")]
    F2,
}

impl ForwardVariant {
    pub const ALL: [ForwardVariant; 2] = [ForwardVariant::F1, ForwardVariant::F2];

    pub fn name(self) -> &'static str {
        match self {
            ForwardVariant::F1 => "forward1",
            ForwardVariant::F2 => "forward2",
        }
    }
}

impl fmt::Display for ForwardVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// The eight backward bracketings. Only the first five are executable; the
/// last three are dominated or duplicated and exist for cost queries only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum BackwardVariant {
    #[serde(rename = "backward1")]
    B1,
    #[serde(rename = "backward2")]
    B2,
    #[serde(rename = "backward3")]
    B3,
    #[serde(rename = "backward4")]
    B4,
    #[serde(rename = "backward5")]
    B5,
    #[serde(rename = "backward6")]
    B6,
    #[serde(rename = "backward7")]
    B7,
    #[serde(rename = "backward8")]
    B8,
}

impl BackwardVariant {
    pub const ALL: [BackwardVariant; 8] = [
        BackwardVariant::B1,
        BackwardVariant::B2,
        BackwardVariant::B3,
        BackwardVariant::B4,
        BackwardVariant::B5,
        BackwardVariant::B6,
        BackwardVariant::B7,
        BackwardVariant::B8,
    ];

    /// The variants that have an implementation (candidates for selection).
    pub const EXECUTABLE: [BackwardVariant; 5] = [
        BackwardVariant::B1,
        BackwardVariant::B2,
        BackwardVariant::B3,
        BackwardVariant::B4,
        BackwardVariant::B5,
    ];

    pub fn is_executable(self) -> bool {
        (self as u8) < 5
    }

    pub fn name(self) -> &'static str {
        match self {
            BackwardVariant::B1 => "backward1",
            BackwardVariant::B2 => "backward2",
            BackwardVariant::B3 => "backward3",
            BackwardVariant::B4 => "backward4",
            BackwardVariant::B5 => "backward5",
            BackwardVariant::B6 => "backward6",
            BackwardVariant::B7 => "backward7",
            BackwardVariant::B8 => "backward8",
        }
    }
}

impl fmt::Display for BackwardVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Either kind of variant, for APIs that take both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum VariantId {
    Forward(ForwardVariant),
    Backward(BackwardVariant),
}

impl VariantId {
    pub const ALL: [VariantId; 10] = [
        VariantId::Forward(ForwardVariant::F1),
        VariantId::Forward(ForwardVariant::F2),
        VariantId::Backward(BackwardVariant::B1),
        VariantId::Backward(BackwardVariant::B2),
        VariantId::Backward(BackwardVariant::B3),
        VariantId::Backward(BackwardVariant::B4),
        VariantId::Backward(BackwardVariant::B5),
        VariantId::Backward(BackwardVariant::B6),
        VariantId::Backward(BackwardVariant::B7),
        VariantId::Backward(BackwardVariant::B8),
    ];

    pub fn name(self) -> &'static str {
        match self {
            VariantId::Forward(v) => v.name(),
            VariantId::Backward(v) => v.name(),
        }
    }

    pub fn is_executable(self) -> bool {
        match self {
            VariantId::Forward(_) => true,
            VariantId::Backward(v) => v.is_executable(),
        }
    }
}

impl fmt::Display for VariantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for VariantId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let all = VariantId::ALL;
        all.iter()
            .copied()
            .find(|v| v.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown variant name: {s:?}")))
    }
}

impl Serialize for VariantId {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for VariantId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl From<ForwardVariant> for VariantId {
    fn from(v: ForwardVariant) -> Self {
        VariantId::Forward(v)
    }
}

impl From<BackwardVariant> for VariantId {
    fn from(v: BackwardVariant) -> Self {
        VariantId::Backward(v)
    }
}

// Every cost polynomial has the form 2*(bs*(a*io + b*ir + c*or) + d*ior),
// with bs = batch*seq_len, io = input*output and so on. Coefficients per
// variant, in the order (io, ir, or, ior):
//
//   forward1   (1, 1, 1, 0)      backward4  (2, 0, 0, 3)
//   forward2   (1, 0, 0, 1)      backward5  (1, 2, 2, 1)
//   backward1  (1, 3, 2, 0)      backward6  (2, 2, 2, 2)
//   backward2  (2, 2, 1, 1)      backward7  (2, 1, 1, 2)
//   backward3  (2, 1, 1, 2)      backward8  (2, 1, 1, 2)
struct PolyCoeffs {
    io: u64,
    ir: u64,
    or: u64,
    ior: u64,
}

impl ForwardVariant {
    fn coeffs(self) -> PolyCoeffs {
        match self {
            ForwardVariant::F1 => PolyCoeffs { io: 1, ir: 1, or: 1, ior: 0 },
            ForwardVariant::F2 => PolyCoeffs { io: 1, ir: 0, or: 0, ior: 1 },
        }
    }
}

impl BackwardVariant {
    fn coeffs(self) -> PolyCoeffs {
        match self {
            BackwardVariant::B1 => PolyCoeffs { io: 1, ir: 3, or: 2, ior: 0 },
            BackwardVariant::B2 => PolyCoeffs { io: 2, ir: 2, or: 1, ior: 1 },
            BackwardVariant::B3 => PolyCoeffs { io: 2, ir: 1, or: 1, ior: 2 },
            BackwardVariant::B4 => PolyCoeffs { io: 2, ir: 0, or: 0, ior: 3 },
            BackwardVariant::B5 => PolyCoeffs { io: 1, ir: 2, or: 2, ior: 1 },
            BackwardVariant::B6 => PolyCoeffs { io: 2, ir: 2, or: 2, ior: 2 },
            BackwardVariant::B7 | BackwardVariant::B8 => {
                PolyCoeffs { io: 2, ir: 1, or: 1, ior: 2 }
            }
        }
    }
}

fn eval_poly(c: &ShapeConfig, p: &PolyCoeffs) -> Option<u64> {
    let bs = c.batch.checked_mul(c.seq_len)?;
    let io = c.input_dim.checked_mul(c.output_dim)?;
    let ir = c.input_dim.checked_mul(c.rank)?;
    let or = c.output_dim.checked_mul(c.rank)?;
    let ior = io.checked_mul(c.rank)?;
    let per_token = p
        .io
        .checked_mul(io)?
        .checked_add(p.ir.checked_mul(ir)?)?
        .checked_add(p.or.checked_mul(or)?)?;
    bs.checked_mul(per_token)?
        .checked_add(p.ior.checked_mul(ior)?)?
        .checked_mul(2)
}

/// Exact FLOPs of a forward variant.
pub fn flops_forward(v: ForwardVariant, c: &ShapeConfig) -> Result<u64> {
    eval_poly(c, &v.coeffs()).ok_or_else(|| c.overflow())
}

/// Exact FLOPs of a backward variant; all eight accept cost queries.
pub fn flops_backward(v: BackwardVariant, c: &ShapeConfig) -> Result<u64> {
    eval_poly(c, &v.coeffs()).ok_or_else(|| c.overflow())
}

/// Exact FLOPs of any variant.
pub fn flops(v: VariantId, c: &ShapeConfig) -> Result<u64> {
    match v {
        VariantId::Forward(f) => flops_forward(f, c),
        VariantId::Backward(b) => flops_backward(b, c),
    }
}

/// See [`ShapeConfig::param_reduction_holds`].
pub fn param_reduction_holds(c: &ShapeConfig) -> bool {
    c.param_reduction_holds()
}

/// Total temporary elements a variant materializes while executing.
///
/// Counts only the internal scratch matrices, not operands or outputs.
/// Cost-model-only variants have no execution and therefore no workspace.
pub fn workspace_elements(v: VariantId, c: &ShapeConfig) -> Result<u64> {
    let bs = c.tokens()?;
    let bsr = bs.checked_mul(c.rank).ok_or_else(|| c.overflow())?;
    let io = c
        .input_dim
        .checked_mul(c.output_dim)
        .ok_or_else(|| c.overflow())?;
    let sum = |a: u64, b: u64| a.checked_add(b).ok_or_else(|| c.overflow());
    match v {
        VariantId::Forward(ForwardVariant::F1) => Ok(bsr),
        VariantId::Forward(ForwardVariant::F2) => Ok(io),
        VariantId::Backward(BackwardVariant::B1) => sum(bsr, bsr),
        VariantId::Backward(BackwardVariant::B2) => sum(bsr, io),
        VariantId::Backward(BackwardVariant::B3) => sum(bsr, io),
        VariantId::Backward(BackwardVariant::B4) => sum(io, io),
        VariantId::Backward(BackwardVariant::B5) => sum(sum(bsr, bsr)?, io),
        VariantId::Backward(v) => Err(Error::UnsupportedVariant(v.into())),
    }
}

/// Bytes of forward-pass activation the default execution stores per adapter
/// layer and this implementation does not: `batch * seq_len * rank * bytes`.
pub fn activation_memory_saved(c: &ShapeConfig, bytes_per_element: u64) -> Result<u64> {
    c.tokens()?
        .checked_mul(c.rank)
        .and_then(|v| v.checked_mul(bytes_per_element))
        .ok_or_else(|| c.overflow())
}

/// Costs of the default execution: forward computes and caches the
/// `input*down` intermediate, backward reuses it instead of recomputing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BaselineCosts {
    pub forward_flops: u64,
    pub backward_flops: u64,
    /// Elements of the cached intermediate (`batch * seq_len * rank`).
    pub saved_activation_elements: u64,
}

pub fn baseline_costs(c: &ShapeConfig) -> Result<BaselineCosts> {
    let forward_flops = flops_forward(ForwardVariant::F1, c)?;
    let recompute = c
        .tokens()?
        .checked_mul(c.input_dim)
        .and_then(|v| v.checked_mul(c.rank))
        .and_then(|v| v.checked_mul(2))
        .ok_or_else(|| c.overflow())?;
    let backward_flops = flops_backward(BackwardVariant::B1, c)? - recompute;
    let saved_activation_elements = c
        .tokens()?
        .checked_mul(c.rank)
        .ok_or_else(|| c.overflow())?;
    Ok(BaselineCosts {
        forward_flops,
        backward_flops,
        saved_activation_elements,
    })
}

/// Per-variant cost line of a [`CostReport`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantCost {
    pub variant: VariantId,
    pub flops: u64,
    /// `None` for cost-model-only variants, which are never executed.
    pub workspace_elements: Option<u64>,
}

/// Full cost picture of one shape: every variant's FLOPs and workspace, the
/// parameter-reduction flag, and the baseline for comparison.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostReport {
    pub shape: ShapeConfig,
    pub parameter_reduction: bool,
    pub variants: Vec<VariantCost>,
    /// Activation elements saved vs. the baseline (`batch * seq_len * rank`).
    pub saved_activation_elements: u64,
    pub baseline: BaselineCosts,
}

pub fn cost_report(c: &ShapeConfig) -> Result<CostReport> {
    let variants = VariantId::ALL
        .iter()
        .map(|&v| {
            Ok(VariantCost {
                variant: v,
                flops: flops(v, c)?,
                workspace_elements: if v.is_executable() {
                    Some(workspace_elements(v, c)?)
                } else {
                    None
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let baseline = baseline_costs(c)?;
    Ok(CostReport {
        shape: *c,
        parameter_reduction: c.param_reduction_holds(),
        variants,
        saved_activation_elements: baseline.saved_activation_elements,
        baseline,
    })
}
