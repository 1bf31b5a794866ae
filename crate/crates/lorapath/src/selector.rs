//! Chooses the cheapest (forward, backward) variant pair for a layer
//! geometry — by exact FLOPs or by measured time — and plans whole models.

use serde::{Deserialize, Serialize};

use crate::bench::{clock_resolution_ns, BenchConfig, MeasurementSession, TimingStats};
use crate::costmodel::{
    baseline_costs, flops_backward, flops_forward, BackwardVariant, ForwardVariant, ShapeConfig,
    VariantId,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Criterion {
    Flops,
    Time,
}

/// One considered variant with its cost evidence. Timing is present only
/// under the time criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub variant: VariantId,
    pub flops: u64,
    pub timing: Option<TimingStats>,
}

/// Selection result: the chosen pair plus evidence for every candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairPlan {
    pub shape: ShapeConfig,
    pub criterion: Criterion,
    pub parameter_reduction: bool,
    pub forward_choice: ForwardVariant,
    pub backward_choice: BackwardVariant,
    /// Both forward bracketings, in index order.
    pub forward_candidates: Vec<Candidate>,
    /// The five executable backward bracketings, in index order.
    pub backward_candidates: Vec<Candidate>,
}

fn forward_candidates(c: &ShapeConfig) -> Result<Vec<Candidate>> {
    ForwardVariant::ALL
        .iter()
        .map(|&v| {
            Ok(Candidate {
                variant: v.into(),
                flops: flops_forward(v, c)?,
                timing: None,
            })
        })
        .collect()
}

fn backward_candidates(c: &ShapeConfig) -> Result<Vec<Candidate>> {
    BackwardVariant::EXECUTABLE
        .iter()
        .map(|&v| {
            Ok(Candidate {
                variant: v.into(),
                flops: flops_backward(v, c)?,
                timing: None,
            })
        })
        .collect()
}

/// Index of the candidate with the fewest FLOPs; ties keep the lowest index.
fn argmin_flops(cands: &[Candidate]) -> usize {
    let mut best = 0;
    for (idx, cand) in cands.iter().enumerate().skip(1) {
        if cand.flops < cands[best].flops {
            best = idx;
        }
    }
    best
}

/// Index of the candidate with the smallest median; medians within twice the
/// clock resolution count as tied and fall back to FLOP order, then index.
fn argmin_time(cands: &[Candidate], resolution_ns: f64) -> usize {
    let median = |c: &Candidate| c.timing.as_ref().expect("timed candidate").median_ns;
    let mut best = 0;
    for (idx, cand) in cands.iter().enumerate().skip(1) {
        let tied = (median(cand) - median(&cands[best])).abs() <= 2.0 * resolution_ns;
        if tied {
            if cand.flops < cands[best].flops {
                best = idx;
            }
        } else if median(cand) < median(&cands[best]) {
            best = idx;
        }
    }
    best
}

/// Cheapest pair by the exact FLOP model. Pure: identical shapes give
/// identical plans.
pub fn select_by_flops(c: &ShapeConfig) -> Result<PairPlan> {
    let forward = forward_candidates(c)?;
    let backward = backward_candidates(c)?;
    let fwd_idx = argmin_flops(&forward);
    let bwd_idx = argmin_flops(&backward);
    Ok(PairPlan {
        shape: *c,
        criterion: Criterion::Flops,
        parameter_reduction: c.param_reduction_holds(),
        forward_choice: ForwardVariant::ALL[fwd_idx],
        backward_choice: BackwardVariant::EXECUTABLE[bwd_idx],
        forward_candidates: forward,
        backward_candidates: backward,
    })
}

/// Cheapest pair by measured median time. Forward and backward are timed and
/// chosen independently; their costs are additive and share no state.
pub fn select_by_time(c: &ShapeConfig, cfg: &BenchConfig) -> Result<PairPlan> {
    let mut session = MeasurementSession::acquire()?;
    select_by_time_in(&mut session, c, cfg)
}

/// [`select_by_time`] inside an already-held measurement session.
pub fn select_by_time_in(
    session: &mut MeasurementSession,
    c: &ShapeConfig,
    cfg: &BenchConfig,
) -> Result<PairPlan> {
    let mut forward = forward_candidates(c)?;
    let mut backward = backward_candidates(c)?;
    for cand in forward.iter_mut().chain(backward.iter_mut()) {
        cand.timing = Some(session.time_variant(cand.variant, c, cfg)?);
    }
    let resolution = clock_resolution_ns();
    let fwd_idx = argmin_time(&forward, resolution);
    let bwd_idx = argmin_time(&backward, resolution);
    Ok(PairPlan {
        shape: *c,
        criterion: Criterion::Time,
        parameter_reduction: c.param_reduction_holds(),
        forward_choice: ForwardVariant::ALL[fwd_idx],
        backward_choice: BackwardVariant::EXECUTABLE[bwd_idx],
        forward_candidates: forward,
        backward_candidates: backward,
    })
}

/// One linear layer of a model: a name and its two dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerDims {
    pub name: String,
    #[serde(rename = "in")]
    pub input_dim: u64,
    #[serde(rename = "out")]
    pub output_dim: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerPlan {
    pub name: String,
    pub plan: PairPlan,
}

/// Aggregate FLOPs and activation savings of a whole model plan, compared to
/// running every layer with the baseline execution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PlanTotals {
    pub plan_forward_flops: u64,
    pub plan_backward_flops: u64,
    pub baseline_forward_flops: u64,
    pub baseline_backward_flops: u64,
    pub saved_activation_elements: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelPlan {
    pub layers: Vec<LayerPlan>,
    pub totals: PlanTotals,
}

/// Plans every layer with the same batch, sequence length, and rank.
/// An empty layer list yields an empty plan.
pub fn plan_model(
    layers: &[LayerDims],
    batch: u64,
    seq_len: u64,
    rank: u64,
    criterion: Criterion,
    bench: Option<&BenchConfig>,
) -> Result<ModelPlan> {
    let default_cfg;
    let bench_cfg = match bench {
        Some(cfg) => cfg,
        None => {
            default_cfg = BenchConfig::default();
            &default_cfg
        }
    };
    let mut session = match criterion {
        Criterion::Time if !layers.is_empty() => Some(MeasurementSession::acquire()?),
        _ => None,
    };

    let mut plans = Vec::with_capacity(layers.len());
    let mut totals = PlanTotals::default();
    let add = |acc: &mut u64, v: u64, shape: &ShapeConfig| -> Result<()> {
        *acc = acc.checked_add(v).ok_or(Error::Overflow {
            shape: shape.to_string(),
        })?;
        Ok(())
    };
    for layer in layers {
        let shape = ShapeConfig::new(batch, seq_len, layer.input_dim, layer.output_dim, rank)?;
        let plan = match (&criterion, session.as_mut()) {
            (Criterion::Flops, _) => select_by_flops(&shape)?,
            (Criterion::Time, Some(session)) => select_by_time_in(session, &shape, bench_cfg)?,
            (Criterion::Time, None) => unreachable!("session held whenever layers exist"),
        };
        let base = baseline_costs(&shape)?;
        add(
            &mut totals.plan_forward_flops,
            flops_forward(plan.forward_choice, &shape)?,
            &shape,
        )?;
        add(
            &mut totals.plan_backward_flops,
            flops_backward(plan.backward_choice, &shape)?,
            &shape,
        )?;
        add(&mut totals.baseline_forward_flops, base.forward_flops, &shape)?;
        add(&mut totals.baseline_backward_flops, base.backward_flops, &shape)?;
        add(
            &mut totals.saved_activation_elements,
            base.saved_activation_elements,
            &shape,
        )?;
        plans.push(LayerPlan {
            name: layer.name.clone(),
            plan,
        });
    }
    Ok(ModelPlan {
        layers: plans,
        totals,
    })
}
