//! Acceptance suite: one test per release criterion, each printing a
//! PASS/FAIL line (visible with `cargo test --test acceptance -- --nocapture`).
//!
//! Criterion 6 is timing-based and environment-sensitive; it reports a soft
//! failure instead of panicking, per its documented semantics.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use lorapath::bench::{BenchConfig, MeasurementSession, Precision};
use lorapath::costmodel::{
    activation_memory_saved, flops_backward, flops_forward, BackwardVariant, ForwardVariant,
    ShapeConfig, VariantId,
};
use lorapath::dense::max_rel_diff;
use lorapath::mapgen::{area_map, emit_csv, AxisRange, GridSpec, LayerRule, PassKind};
use lorapath::variants::{
    backward, backward_counted, fd_errors_against, forward, forward_counted, positive_operands,
    reference_backward, Gradients,
};

fn sample(rng: &mut ChaCha8Rng, lo: u64, hi: u64) -> u64 {
    lo + rng.next_u64() % (hi - lo + 1)
}

fn worst_gradient_diff(got: &Gradients, want: &Gradients) -> f64 {
    let d = max_rel_diff(&got.down, &want.down).unwrap();
    let u = max_rel_diff(&got.up, &want.up).unwrap();
    let x = max_rel_diff(&got.input, &want.input).unwrap();
    d.max(u).max(x)
}

#[test]
fn criterion_1_gradient_equivalence() {
    const TRIALS: usize = 200;
    const BACKWARD_TOL: f64 = 1e-10;
    const FORWARD_TOL: f64 = 1e-12;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut worst_backward = 0.0f64;
    let mut worst_forward = 0.0f64;
    for trial in 0..TRIALS {
        // dims <= 64, b*s <= 64, high precision.
        let c = ShapeConfig::new(
            sample(&mut rng, 1, 8),
            sample(&mut rng, 1, 8),
            sample(&mut rng, 1, 64),
            sample(&mut rng, 1, 64),
            sample(&mut rng, 1, 32),
        )
        .unwrap();
        let (input, layer, grad_output) = positive_operands::<f64>(&c, 42 + trial as u64).unwrap();
        let y1 = forward(ForwardVariant::F1, &input, &layer).unwrap();
        let y2 = forward(ForwardVariant::F2, &input, &layer).unwrap();
        let fwd = max_rel_diff(&y1, &y2).unwrap();
        worst_forward = worst_forward.max(fwd);
        assert!(fwd <= FORWARD_TOL, "criterion 1 FAIL: forward variants differ by {fwd:.3e} at {c}");
        let reference = reference_backward(&input, &layer, &grad_output).unwrap();
        for v in BackwardVariant::EXECUTABLE {
            let grads = backward(v, &input, &layer, &grad_output).unwrap();
            let diff = worst_gradient_diff(&grads, &reference);
            worst_backward = worst_backward.max(diff);
            assert!(
                diff <= BACKWARD_TOL,
                "criterion 1 FAIL: {v} differs from reference by {diff:.3e} at {c}"
            );
        }
    }
    println!(
        "criterion 1 (gradient equivalence): PASS — {TRIALS} configs, \
         worst backward {worst_backward:.2e} <= {BACKWARD_TOL:.0e}, \
         worst forward {worst_forward:.2e} <= {FORWARD_TOL:.0e}"
    );
}

#[test]
fn criterion_2_finite_differences() {
    const CONFIGS: usize = 20;
    const STEP: f64 = 1e-5;
    const TOL: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(43);
    let mut worst = 0.0f64;
    for trial in 0..CONFIGS {
        let c = ShapeConfig::new(
            sample(&mut rng, 1, 2),
            sample(&mut rng, 1, 3),
            sample(&mut rng, 2, 6),
            sample(&mut rng, 2, 6),
            sample(&mut rng, 1, 3),
        )
        .unwrap();
        let (input, layer, probe) = positive_operands::<f64>(&c, 430 + trial as u64).unwrap();
        // Gradients of every executable variant, contracted with the probe by
        // construction, must match central differences of the probe loss.
        for v in BackwardVariant::EXECUTABLE {
            let grads = backward(v, &input, &layer, &probe).unwrap();
            let report = fd_errors_against(&input, &layer, &probe, STEP, &grads).unwrap();
            worst = worst.max(report.worst());
            assert!(
                report.worst() <= TOL,
                "criterion 2 FAIL: {v} vs central differences {:.3e} at {c}",
                report.worst()
            );
        }
    }
    println!(
        "criterion 2 (finite differences): PASS — {CONFIGS} configs x 5 variants, \
         worst relative error {worst:.2e} <= {TOL:.0e} at step {STEP:.0e}"
    );
}

#[test]
fn criterion_3_dominance_theorems() {
    const SWEEPS: usize = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(44);

    // Constrained sweep: parameter reduction holds by construction.
    let mut done = 0usize;
    while done < SWEEPS {
        let i = sample(&mut rng, 2, 4096);
        let o = sample(&mut rng, 2, 4096);
        let rmax = (i * o - 1) / (i + o);
        if rmax == 0 {
            continue;
        }
        let r = sample(&mut rng, 1, rmax);
        let c = ShapeConfig::new(
            sample(&mut rng, 1, 4096),
            sample(&mut rng, 1, 4096),
            i,
            o,
            r,
        )
        .unwrap();
        assert!(c.param_reduction_holds());
        let b2 = flops_backward(BackwardVariant::B2, &c).unwrap();
        let b3 = flops_backward(BackwardVariant::B3, &c).unwrap();
        let b5 = flops_backward(BackwardVariant::B5, &c).unwrap();
        assert!(b2 > b5, "criterion 3 FAIL: B2 {b2} <= B5 {b5} at {c}");
        assert!(b3 > b5, "criterion 3 FAIL: B3 {b3} <= B5 {b5} at {c}");
        // Symbolic reductions of the two differences, as exact integers:
        //   B2 - B5 = 2bs*o*(i - r)        (requires i > r, implied here)
        //   B3 - B5 = 2bs*(io - r(i+o)) + 2ior
        let bs = u128::from(c.batch) * u128::from(c.seq_len);
        let (iu, ou, ru) = (u128::from(i), u128::from(o), u128::from(r));
        // The reduction chain behind the contradiction: the constraint forces
        // r < io/(i+o), and io/(i+o) never exceeds either dimension.
        assert!(ru * (iu + ou) < iu * ou);
        assert!(iu * ou <= iu * (iu + ou) && iu * ou <= ou * (iu + ou));
        assert!(ru < iu && ru < ou);
        assert_eq!(u128::from(b2 - b5), 2 * bs * ou * (iu - ru));
        assert_eq!(
            u128::from(b3 - b5),
            2 * bs * (iu * ou - ru * (iu + ou)) + 2 * iu * ou * ru
        );
        done += 1;
    }

    // Unconstrained sweep: strict domination of the sixth variant, exact
    // equality of the seventh/eighth with the third.
    for _ in 0..SWEEPS {
        let c = ShapeConfig::new(
            sample(&mut rng, 1, 4096),
            sample(&mut rng, 1, 4096),
            sample(&mut rng, 1, 4096),
            sample(&mut rng, 1, 4096),
            sample(&mut rng, 1, 4096),
        )
        .unwrap();
        let b3 = flops_backward(BackwardVariant::B3, &c).unwrap();
        let b5 = flops_backward(BackwardVariant::B5, &c).unwrap();
        let b6 = flops_backward(BackwardVariant::B6, &c).unwrap();
        assert!(b6 > b5, "criterion 3 FAIL: B6 {b6} <= B5 {b5} at {c}");
        assert_eq!(flops_backward(BackwardVariant::B7, &c).unwrap(), b3);
        assert_eq!(flops_backward(BackwardVariant::B8, &c).unwrap(), b3);
    }
    println!(
        "criterion 3 (dominance theorems): PASS — {SWEEPS} constrained shapes \
         (B2 > B5, B3 > B5, difference identities exact) and {SWEEPS} unconstrained \
         (B6 > B5, B7 = B8 = B3), zero exceptions"
    );
}

#[test]
fn criterion_4_flop_audit() {
    let shapes = [
        (1, 1, 1, 1, 1),
        (2, 3, 5, 4, 2),
        (3, 7, 64, 48, 8),
        (1, 16, 96, 128, 12),
        (4, 25, 128, 64, 16),
    ];
    for (b, s, i, o, r) in shapes {
        let c = ShapeConfig::new(b, s, i, o, r).unwrap();
        let (input, layer, grad_output) = positive_operands::<f64>(&c, 7).unwrap();
        for v in ForwardVariant::ALL {
            let (_, counted) = forward_counted(v, &input, &layer).unwrap();
            let modeled = flops_forward(v, &c).unwrap();
            assert_eq!(counted, modeled, "criterion 4 FAIL: {v} at {c}");
        }
        for v in BackwardVariant::EXECUTABLE {
            let (_, counted) = backward_counted(v, &input, &layer, &grad_output).unwrap();
            let modeled = flops_backward(v, &c).unwrap();
            assert_eq!(counted, modeled, "criterion 4 FAIL: {v} at {c}");
        }
    }
    println!(
        "criterion 4 (executed-FLOP audit): PASS — {} shapes x 7 executable variants, \
         integer-exact against the cost polynomials",
        shapes.len()
    );
}

#[test]
fn criterion_5_map_regression() {
    // Square and 4x-expanding embedding-by-rank grids at the default
    // resolution, plus the fixed-layer batch-by-sequence grid.
    let embed_rank = |rule: LayerRule| GridSpec::EmbedRank {
        embed: AxisRange::new(256, 8192, 256).unwrap(),
        rank: AxisRange::new(8, 4096, 8).unwrap(),
        batch: 2,
        seq_len: 100,
        layer_rule: rule,
    };
    let batch_seq = GridSpec::BatchSeq {
        batch: AxisRange::new(1, 64, 1).unwrap(),
        seq_len: AxisRange::new(64, 2048, 64).unwrap(),
        input_dim: 4096,
        output_dim: 11008,
        rank: 128,
    };

    let mut constrained_cells = 0usize;
    for spec in [embed_rank(LayerRule::Square), embed_rank(LayerRule::Expand4)] {
        let map = area_map(&spec, PassKind::Backward).unwrap();
        for cell in &map.cells {
            let choice = cell.choice.as_ref().expect("grid cells fit in u64");
            if choice.parameter_reduction {
                constrained_cells += 1;
                assert!(
                    matches!(
                        choice.variant,
                        VariantId::Backward(BackwardVariant::B1)
                            | VariantId::Backward(BackwardVariant::B4)
                            | VariantId::Backward(BackwardVariant::B5)
                    ),
                    "criterion 5 FAIL: cell ({}, {}) chose {}",
                    cell.x,
                    cell.y,
                    choice.variant
                );
            }
        }
    }
    assert!(constrained_cells > 1000, "grid barely crosses the boundary");

    // Forward boundary must coincide cell-exactly with io <> bs*(i+o).
    let mut boundary_cells = 0usize;
    for (spec, fixed_dims) in [
        (embed_rank(LayerRule::Square), None),
        (embed_rank(LayerRule::Expand4), None),
        (batch_seq, Some((4096u64, 11008u64))),
    ] {
        let map = area_map(&spec, PassKind::Forward).unwrap();
        for cell in &map.cells {
            let choice = cell.choice.as_ref().unwrap();
            let (i, o, bs) = match (fixed_dims, &spec) {
                (Some((i, o)), _) => (i, o, cell.x * cell.y),
                (None, GridSpec::EmbedRank { layer_rule, batch, seq_len, .. }) => {
                    let (i, o) = layer_rule.dims(cell.x);
                    (i, o, batch * seq_len)
                }
                _ => unreachable!(),
            };
            let expected: VariantId = if (i as u128) * (o as u128) < (bs as u128) * ((i + o) as u128)
            {
                ForwardVariant::F2.into()
            } else {
                ForwardVariant::F1.into()
            };
            assert_eq!(
                choice.variant, expected,
                "criterion 5 FAIL: forward boundary off at cell ({}, {})",
                cell.x, cell.y
            );
            if expected == ForwardVariant::F2.into() {
                boundary_cells += 1;
            }
        }
    }
    assert!(boundary_cells > 0, "forward boundary never crossed the grids");

    // Byte stability: regenerate and re-emit, compare bytes.
    let spec = embed_rank(LayerRule::Square);
    let mut first = Vec::new();
    emit_csv(&area_map(&spec, PassKind::Backward).unwrap(), &mut first).unwrap();
    let mut second = Vec::new();
    emit_csv(&area_map(&spec, PassKind::Backward).unwrap(), &mut second).unwrap();
    assert_eq!(first, second, "criterion 5 FAIL: CSV emission is not byte-stable");

    println!(
        "criterion 5 (map regression): PASS — constrained cells avoid dominated variants \
         ({constrained_cells} cells), forward boundary cell-exact on 3 grids, CSV byte-stable \
         ({} bytes)",
        first.len()
    );
}

/// Timing sanity is environment-sensitive: a shortfall prints a soft
/// failure for investigation instead of failing the build.
#[test]
fn criterion_6_timing_sanity_soft() {
    const SESSIONS: usize = 20;
    const NEEDED_WINS: usize = 16; // 80%
    let shapes = [
        ShapeConfig::new(8, 64, 64, 64, 64).unwrap(), // merged forward 62.5% fewer FLOPs
        ShapeConfig::new(2, 2, 512, 512, 128).unwrap(), // split forward ~95% fewer
        ShapeConfig::new(2, 128, 128, 128, 64).unwrap(), // merged forward 37.5% fewer
    ];
    let mut all_ok = true;
    let mut summaries = Vec::new();
    for c in &shapes {
        let f1 = flops_forward(ForwardVariant::F1, c).unwrap();
        let f2 = flops_forward(ForwardVariant::F2, c).unwrap();
        let (fast, slow, fast_flops, slow_flops) = if f1 < f2 {
            (ForwardVariant::F1, ForwardVariant::F2, f1, f2)
        } else {
            (ForwardVariant::F2, ForwardVariant::F1, f2, f1)
        };
        // Precondition of the criterion: at least 30% fewer FLOPs.
        assert!(
            (fast_flops as f64) <= 0.7 * slow_flops as f64,
            "shape {c} does not meet the >=30% FLOP gap precondition"
        );
        let mut wins = 0usize;
        for session_idx in 0..SESSIONS {
            let cfg = BenchConfig {
                warmup_iters: 1,
                repeat_iters: 3,
                seed: 1000 + session_idx as u64,
                precision: Precision::Single,
                single_thread: true,
            };
            let mut session = MeasurementSession::acquire().unwrap();
            let fast_stats = session.time_variant(fast.into(), c, &cfg).unwrap();
            let slow_stats = session.time_variant(slow.into(), c, &cfg).unwrap();
            if fast_stats.median_ns < slow_stats.median_ns {
                wins += 1;
            }
        }
        let ok = wins >= NEEDED_WINS;
        all_ok &= ok;
        summaries.push(format!(
            "{c}: {fast} won {wins}/{SESSIONS}{}",
            if ok { "" } else { " (below 80%)" }
        ));
    }
    if all_ok {
        println!(
            "criterion 6 (timing sanity, soft): PASS — {}",
            summaries.join("; ")
        );
    } else {
        println!(
            "criterion 6 (timing sanity, soft): SOFT FAIL — environment-sensitive, \
             investigate before release — {}",
            summaries.join("; ")
        );
    }
}

#[test]
fn criterion_7_memory_model() {
    let c = ShapeConfig::new(22, 2048, 512, 512, 512).unwrap();
    let bytes = activation_memory_saved(&c, 2).unwrap();
    assert_eq!(bytes, 46_137_344, "criterion 7 FAIL");
    // Integer-exact composition: elements * bytes, no rounding anywhere.
    assert_eq!(activation_memory_saved(&c, 4).unwrap(), 2 * bytes);
    assert_eq!(activation_memory_saved(&c, 0).unwrap(), 0);
    println!(
        "criterion 7 (memory model): PASS — b=22 s=2048 r=512 at 2 bytes/element \
         saves exactly {bytes} bytes per adapter layer"
    );
}
