//! Command-line front end: cost queries, pair selection, model planning,
//! verification, benchmarking, and area-map generation.
//!
//! Exit codes: 0 success, 2 usage error, 3 numeric/overflow error,
//! 4 verification failure, 5 I/O error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use serde::Deserialize;

use lorapath::bench::{BenchConfig, MeasurementSession, Precision, TimingStats};
use lorapath::costmodel::{
    activation_memory_saved, cost_report, flops_backward, flops_forward, BackwardVariant,
    ForwardVariant, ShapeConfig,
};
use lorapath::dense::max_rel_diff;
use lorapath::mapgen::{self, AxisRange, GridSpec, LayerRule, PassKind};
use lorapath::selector::{self, Criterion, LayerDims};
use lorapath::variants::{
    backward, backward_counted, finite_difference_check, forward, forward_counted,
    positive_operands, random_operands, reference_backward,
};
use lorapath::{Error, Result};

#[derive(Parser)]
#[command(
    name = "lorapath",
    version,
    about = "Pick the cheapest forward/backward computation graph for low-rank adapted linear layers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ShapeArgs {
    /// Batch size
    #[arg(long)]
    b: u64,
    /// Sequence length
    #[arg(long)]
    s: u64,
    /// Layer input dimension
    #[arg(long)]
    i: u64,
    /// Layer output dimension
    #[arg(long)]
    o: u64,
    /// Adapter rank
    #[arg(long)]
    r: u64,
}

impl ShapeArgs {
    fn shape(&self) -> Result<ShapeConfig> {
        ShapeConfig::new(self.b, self.s, self.i, self.o, self.r)
    }
}

#[derive(Args)]
struct BenchArgs {
    /// Warmup iterations, discarded
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    /// Timed iterations
    #[arg(long, default_value_t = 7)]
    repeats: usize,
    /// Seed for operand data
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Run the kernel strictly single-threaded
    #[arg(long)]
    single_thread: bool,
    /// Element precision for the timed kernels
    #[arg(long, value_enum, default_value_t = PrecisionArg::High)]
    precision: PrecisionArg,
}

impl BenchArgs {
    fn config(&self) -> BenchConfig {
        BenchConfig {
            warmup_iters: self.warmup,
            repeat_iters: self.repeats,
            seed: self.seed,
            precision: self.precision.into(),
            single_thread: self.single_thread,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PrecisionArg {
    High,
    Single,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::High => Precision::High,
            PrecisionArg::Single => Precision::Single,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum CriterionArg {
    Flops,
    Time,
}

impl From<CriterionArg> for Criterion {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::Flops => Criterion::Flops,
            CriterionArg::Time => Criterion::Time,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum AxisArg {
    /// x = embedding size, y = rank
    EmbedRank,
    /// x = batch size, y = sequence length
    BatchSeq,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum RuleArg {
    /// Output dimension equals the embedding size
    Square,
    /// Output dimension is four times the embedding size
    Expand4,
    /// Dimensions given explicitly via --i and --o
    Explicit,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum PassArg {
    Forward,
    Backward,
}

#[derive(Subcommand)]
enum Command {
    /// Exact FLOP, workspace, and activation-memory costs for every variant
    Flops {
        #[command(flatten)]
        shape: ShapeArgs,
        /// Bytes per activation element for the memory figure
        #[arg(long, default_value_t = 2)]
        bytes_per_element: u64,
        /// Emit one machine-readable JSON document on stdout
        #[arg(long)]
        json: bool,
    },
    /// Choose the cheapest forward/backward pair for one shape
    Select {
        #[command(flatten)]
        shape: ShapeArgs,
        #[arg(long, value_enum, default_value_t = CriterionArg::Flops)]
        criterion: CriterionArg,
        #[command(flatten)]
        bench: BenchArgs,
        #[arg(long)]
        json: bool,
    },
    /// Plan variant choices for every layer in a model description file
    Plan {
        /// JSON file: {"defaults": {"b","s","r"}, "layers": [{"name","in","out"}]}
        /// or a bare layer array
        #[arg(long)]
        layers: PathBuf,
        #[arg(long)]
        b: Option<u64>,
        #[arg(long)]
        s: Option<u64>,
        #[arg(long)]
        r: Option<u64>,
        #[arg(long, value_enum, default_value_t = CriterionArg::Flops)]
        criterion: CriterionArg,
        #[command(flatten)]
        bench: BenchArgs,
        #[arg(long)]
        json: bool,
    },
    /// Check gradient equivalence, finite differences, dominance, and the FLOP audit
    Verify {
        /// Random configurations for the gradient-equivalence check
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Max relative gradient difference vs. the analytic reference
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// Time the FLOP-selected plan against the baseline execution
    Bench {
        #[command(flatten)]
        shape: ShapeArgs,
        #[command(flatten)]
        bench: BenchArgs,
    },
    /// Emit an area map of best variants as CSV
    Map {
        #[arg(long, value_enum)]
        axis: AxisArg,
        #[arg(long, value_enum, default_value_t = RuleArg::Square)]
        layer_rule: RuleArg,
        #[arg(long, value_enum, default_value_t = PassArg::Backward)]
        pass: PassArg,
        /// Output CSV path
        #[arg(long)]
        out: PathBuf,
        /// Fixed batch size (embed-rank maps)
        #[arg(long, default_value_t = 2)]
        b: u64,
        /// Fixed sequence length (embed-rank maps)
        #[arg(long, default_value_t = 100)]
        s: u64,
        /// Fixed rank (batch-seq maps)
        #[arg(long, default_value_t = 128)]
        r: u64,
        /// Explicit input dimension (batch-seq maps with --layer-rule explicit)
        #[arg(long)]
        i: Option<u64>,
        /// Explicit output dimension (batch-seq maps with --layer-rule explicit)
        #[arg(long)]
        o: Option<u64>,
        /// Fixed embedding size (batch-seq maps with square/expand4 rule)
        #[arg(long)]
        embed: Option<u64>,
        /// x axis as start:end:step (defaults depend on --axis)
        #[arg(long)]
        x_range: Option<String>,
        /// y axis as start:end:step (defaults depend on --axis)
        #[arg(long)]
        y_range: Option<String>,
    },
}

fn main() -> ExitCode {
    // Die quietly when the consumer closes the pipe (`lorapath ... | head`).
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code_for(&err))
        }
    }
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidConfig(_) | Error::ShapeMismatch { .. } => 2,
        Error::Overflow { .. }
        | Error::NonFinite(_)
        | Error::UnsupportedVariant(_)
        | Error::Measurement(_)
        | Error::TooLarge { .. } => 3,
        Error::Io(_) => 5,
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Flops {
            shape,
            bytes_per_element,
            json,
        } => cmd_flops(&shape.shape()?, bytes_per_element, json),
        Command::Select {
            shape,
            criterion,
            bench,
            json,
        } => cmd_select(&shape.shape()?, criterion.into(), &bench.config(), json),
        Command::Plan {
            layers,
            b,
            s,
            r,
            criterion,
            bench,
            json,
        } => cmd_plan(&layers, b, s, r, criterion.into(), &bench.config(), json),
        Command::Verify { trials, seed, tol } => cmd_verify(trials, seed, tol),
        Command::Bench { shape, bench } => cmd_bench(&shape.shape()?, &bench.config()),
        Command::Map {
            axis,
            layer_rule,
            pass,
            out,
            b,
            s,
            r,
            i,
            o,
            embed,
            x_range,
            y_range,
        } => cmd_map(
            axis, layer_rule, pass, &out, b, s, r, i, o, embed, x_range, y_range,
        ),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    let doc = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Io(format!("JSON serialization failed: {e}")))?;
    println!("{doc}");
    Ok(())
}

fn cmd_flops(shape: &ShapeConfig, bytes_per_element: u64, json: bool) -> Result<ExitCode> {
    let report = cost_report(shape)?;
    if json {
        print_json(&report)?;
        return Ok(ExitCode::SUCCESS);
    }
    println!(
        "shape {shape}   parameter reduction: {}",
        if report.parameter_reduction { "yes" } else { "no" }
    );
    println!("{:<12} {:>16} {:>16}", "variant", "flops", "workspace");
    for v in &report.variants {
        match v.workspace_elements {
            Some(ws) => println!("{:<12} {:>16} {:>16}", v.variant.name(), v.flops, ws),
            None => println!("{:<12} {:>16} {:>16}", v.variant.name(), v.flops, "-"),
        }
    }
    println!(
        "baseline     forward {} backward {} (reuses {} cached elements)",
        report.baseline.forward_flops,
        report.baseline.backward_flops,
        report.baseline.saved_activation_elements
    );
    let bytes = activation_memory_saved(shape, bytes_per_element)?;
    println!(
        "activation saved vs baseline: {} elements ({} bytes at {} B/element) per layer",
        report.saved_activation_elements, bytes, bytes_per_element
    );
    Ok(ExitCode::SUCCESS)
}

fn warn_if_no_param_reduction(shape: &ShapeConfig) {
    if !shape.param_reduction_holds() {
        eprintln!(
            "warning: parameter reduction does not hold for {shape}: \
             rank*(i+o) >= i*o, the adapter is not smaller than the layer"
        );
    }
}

fn cmd_select(
    shape: &ShapeConfig,
    criterion: Criterion,
    cfg: &BenchConfig,
    json: bool,
) -> Result<ExitCode> {
    warn_if_no_param_reduction(shape);
    let plan = match criterion {
        Criterion::Flops => selector::select_by_flops(shape)?,
        Criterion::Time => selector::select_by_time(shape, cfg)?,
    };
    if json {
        print_json(&plan)?;
        return Ok(ExitCode::SUCCESS);
    }
    println!(
        "shape {shape}   criterion: {}   parameter reduction: {}",
        match plan.criterion {
            Criterion::Flops => "flops",
            Criterion::Time => "time",
        },
        if plan.parameter_reduction { "yes" } else { "no" }
    );
    println!(
        "chosen pair: {} + {}",
        plan.forward_choice, plan.backward_choice
    );
    for cand in plan
        .forward_candidates
        .iter()
        .chain(plan.backward_candidates.iter())
    {
        match &cand.timing {
            Some(t) => println!(
                "  {:<12} {:>16} flops   median {:>12.1} us",
                cand.variant.name(),
                cand.flops,
                t.median_ns / 1e3
            ),
            None => println!("  {:<12} {:>16} flops", cand.variant.name(), cand.flops),
        }
    }
    Ok(ExitCode::SUCCESS)
}

/// On-disk model description: a layer list with optional shared defaults.
#[derive(Deserialize)]
#[serde(untagged)]
enum LayerSpecFile {
    WithDefaults {
        #[serde(default)]
        defaults: Option<SpecDefaults>,
        layers: Vec<LayerDims>,
    },
    Bare(Vec<LayerDims>),
}

#[derive(Deserialize, Default)]
struct SpecDefaults {
    b: Option<u64>,
    s: Option<u64>,
    r: Option<u64>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_plan(
    path: &PathBuf,
    b: Option<u64>,
    s: Option<u64>,
    r: Option<u64>,
    criterion: Criterion,
    cfg: &BenchConfig,
    json: bool,
) -> Result<ExitCode> {
    let text = std::fs::read_to_string(path)?;
    let file: LayerSpecFile = serde_json::from_str(&text)
        .map_err(|e| Error::InvalidConfig(format!("cannot parse {}: {e}", path.display())))?;
    let (defaults, layers) = match file {
        LayerSpecFile::WithDefaults { defaults, layers } => {
            (defaults.unwrap_or_default(), layers)
        }
        LayerSpecFile::Bare(layers) => (SpecDefaults::default(), layers),
    };
    for layer in &layers {
        if layer.name.is_empty() {
            return Err(Error::InvalidConfig(
                "layer names must be nonempty".to_string(),
            ));
        }
    }
    let need = |flag: &str, cli: Option<u64>, file: Option<u64>| -> Result<u64> {
        cli.or(file).ok_or_else(|| {
            Error::InvalidConfig(format!(
                "--{flag} not given and the layer file has no default for it"
            ))
        })
    };
    let b = need("b", b, defaults.b)?;
    let s = need("s", s, defaults.s)?;
    let r = need("r", r, defaults.r)?;

    let plan = selector::plan_model(&layers, b, s, r, criterion, Some(cfg))?;
    if json {
        print_json(&plan)?;
        return Ok(ExitCode::SUCCESS);
    }
    println!(
        "{:<20} {:>8} {:>8} {:<10} {:<10} {:>6}",
        "layer", "in", "out", "forward", "backward", "p.red"
    );
    for lp in &plan.layers {
        println!(
            "{:<20} {:>8} {:>8} {:<10} {:<10} {:>6}",
            lp.name,
            lp.plan.shape.input_dim,
            lp.plan.shape.output_dim,
            lp.plan.forward_choice.name(),
            lp.plan.backward_choice.name(),
            if lp.plan.parameter_reduction { "yes" } else { "no" }
        );
    }
    let t = &plan.totals;
    println!(
        "totals: plan {} + {} flops, baseline {} + {} flops, {} activation elements saved",
        t.plan_forward_flops,
        t.plan_backward_flops,
        t.baseline_forward_flops,
        t.baseline_backward_flops,
        t.saved_activation_elements
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(shape: &ShapeConfig, cfg: &BenchConfig) -> Result<ExitCode> {
    let plan = selector::select_by_flops(shape)?;
    let mut session = MeasurementSession::acquire()?;
    let report = session.compare_to_baseline(shape, &plan, cfg)?;
    println!(
        "shape {shape}   plan: {} + {} (flops criterion)",
        plan.forward_choice, plan.backward_choice
    );
    let row = |name: &str, t: &TimingStats| {
        println!(
            "{:<10} median {:>12.3} ms   mean {:>12.3} ms   std {:>10.3} ms   min {:>12.3} ms   ({} samples)",
            name,
            t.median_ns / 1e6,
            t.mean_ns / 1e6,
            t.std_ns / 1e6,
            t.min_ns / 1e6,
            t.samples
        );
    };
    row("plan", &report.plan_timing);
    row("baseline", &report.baseline_timing);
    for t in [&report.plan_timing, &report.baseline_timing] {
        if let Some(w) = &t.quality_warning {
            eprintln!("warning: {w}");
        }
    }
    println!(
        "measured speedup: {:+.2}%   predicted from FLOPs: {:+.2}% (plan {} vs baseline {} flops)",
        report.measured_speedup_pct,
        report.predicted_speedup_pct,
        report.plan_flops,
        report.baseline_flops
    );
    Ok(ExitCode::SUCCESS)
}

#[allow(clippy::too_many_arguments)]
fn cmd_map(
    axis: AxisArg,
    rule: RuleArg,
    pass: PassArg,
    out: &PathBuf,
    b: u64,
    s: u64,
    r: u64,
    i: Option<u64>,
    o: Option<u64>,
    embed: Option<u64>,
    x_range: Option<String>,
    y_range: Option<String>,
) -> Result<ExitCode> {
    let pass = match pass {
        PassArg::Forward => PassKind::Forward,
        PassArg::Backward => PassKind::Backward,
    };
    let parse_range = |text: Option<String>, fallback: (u64, u64, u64)| -> Result<AxisRange> {
        match text {
            None => AxisRange::new(fallback.0, fallback.1, fallback.2),
            Some(t) => {
                let parts: Vec<&str> = t.split(':').collect();
                if parts.len() != 3 {
                    return Err(Error::InvalidConfig(format!(
                        "range must be start:end:step, got {t:?}"
                    )));
                }
                let nums: Vec<u64> = parts
                    .iter()
                    .map(|p| {
                        p.parse::<u64>().map_err(|_| {
                            Error::InvalidConfig(format!("range component {p:?} is not a number"))
                        })
                    })
                    .collect::<Result<_>>()?;
                AxisRange::new(nums[0], nums[1], nums[2])
            }
        }
    };

    let spec = match axis {
        AxisArg::EmbedRank => {
            let layer_rule = match rule {
                RuleArg::Square => LayerRule::Square,
                RuleArg::Expand4 => LayerRule::Expand4,
                RuleArg::Explicit => {
                    return Err(Error::InvalidConfig(
                        "embed-rank maps need --layer-rule square or expand4; explicit \
                         dimensions leave the embedding axis meaningless"
                            .to_string(),
                    ))
                }
            };
            GridSpec::EmbedRank {
                embed: parse_range(x_range, (256, 8192, 256))?,
                rank: parse_range(y_range, (8, 4096, 8))?,
                batch: b,
                seq_len: s,
                layer_rule,
            }
        }
        AxisArg::BatchSeq => {
            let (input_dim, output_dim) = match rule {
                RuleArg::Explicit => {
                    let input_dim = i.ok_or_else(|| {
                        Error::InvalidConfig("explicit rule needs --i".to_string())
                    })?;
                    let output_dim = o.ok_or_else(|| {
                        Error::InvalidConfig("explicit rule needs --o".to_string())
                    })?;
                    (input_dim, output_dim)
                }
                RuleArg::Square | RuleArg::Expand4 => {
                    let e = embed.ok_or_else(|| {
                        Error::InvalidConfig(
                            "batch-seq maps with square/expand4 rule need --embed".to_string(),
                        )
                    })?;
                    match rule {
                        RuleArg::Square => LayerRule::Square.dims(e),
                        _ => LayerRule::Expand4.dims(e),
                    }
                }
            };
            GridSpec::BatchSeq {
                batch: parse_range(x_range, (1, 64, 1))?,
                seq_len: parse_range(y_range, (64, 2048, 64))?,
                input_dim,
                output_dim,
                rank: r,
            }
        }
    };

    let map = mapgen::area_map(&spec, pass)?;
    mapgen::write_csv_file(&map, out)?;
    eprintln!(
        "wrote {} cells ({} x {}) to {}",
        map.cells.len(),
        map.xs.len(),
        map.ys.len(),
        out.display()
    );
    Ok(ExitCode::SUCCESS)
}

// ---- verify ----------------------------------------------------------------

struct CheckOutcome {
    name: &'static str,
    detail: String,
    passed: bool,
}

fn sample(rng: &mut ChaCha8Rng, lo: u64, hi: u64) -> u64 {
    lo + rng.next_u64() % (hi - lo + 1)
}

fn worst_gradient_diff(
    got: &lorapath::Gradients,
    want: &lorapath::Gradients,
) -> Result<f64> {
    let d = max_rel_diff(&got.down, &want.down)?;
    let u = max_rel_diff(&got.up, &want.up)?;
    let x = max_rel_diff(&got.input, &want.input)?;
    Ok(d.max(u).max(x))
}

fn check_gradient_equivalence(trials: usize, seed: u64, tol: f64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_backward = 0.0f64;
    let mut worst_forward = 0.0f64;
    let mut failures = 0usize;
    for trial in 0..trials {
        let shape = ShapeConfig::new(
            sample(&mut rng, 1, 8),
            sample(&mut rng, 1, 8),
            sample(&mut rng, 1, 64),
            sample(&mut rng, 1, 64),
            sample(&mut rng, 1, 16),
        )?;
        let (input, layer, grad_output) =
            positive_operands::<f64>(&shape, seed.wrapping_add(trial as u64))?;
        let y1 = forward(ForwardVariant::F1, &input, &layer)?;
        let y2 = forward(ForwardVariant::F2, &input, &layer)?;
        let fwd = max_rel_diff(&y1, &y2)?;
        worst_forward = worst_forward.max(fwd);
        if fwd > 1e-12 {
            failures += 1;
            eprintln!("forward mismatch {fwd:.3e} at {shape}");
        }
        let reference = reference_backward(&input, &layer, &grad_output)?;
        for v in BackwardVariant::EXECUTABLE {
            let grads = backward(v, &input, &layer, &grad_output)?;
            let diff = worst_gradient_diff(&grads, &reference)?;
            worst_backward = worst_backward.max(diff);
            if diff > tol {
                failures += 1;
                eprintln!("{v} differs from reference by {diff:.3e} at {shape}");
            }
        }
    }
    Ok(CheckOutcome {
        name: "gradient equivalence",
        detail: format!(
            "{trials} configs, worst backward {worst_backward:.2e} (tol {tol:.0e}), worst forward {worst_forward:.2e} (tol 1e-12)"
        ),
        passed: failures == 0,
    })
}

fn check_finite_differences(seed: u64) -> Result<CheckOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed));
    let configs = 20;
    let mut worst = 0.0f64;
    let mut failures = 0usize;
    for trial in 0..configs {
        let shape = ShapeConfig::new(
            sample(&mut rng, 1, 2),
            sample(&mut rng, 1, 3),
            sample(&mut rng, 2, 6),
            sample(&mut rng, 2, 6),
            sample(&mut rng, 1, 3),
        )?;
        let (input, layer, probe) =
            positive_operands::<f64>(&shape, seed.wrapping_add(trial as u64))?;
        let report = finite_difference_check(&input, &layer, &probe, 1e-5)?;
        worst = worst.max(report.worst());
        if report.worst() > 1e-6 {
            failures += 1;
            eprintln!(
                "finite differences disagree at {shape}: down {:.2e} up {:.2e} input {:.2e}",
                report.down, report.up, report.input
            );
        }
    }
    Ok(CheckOutcome {
        name: "finite differences",
        detail: format!("{configs} configs, worst relative error {worst:.2e} (tol 1e-6)"),
        passed: failures == 0,
    })
}

fn check_dominance(seed: u64) -> Result<CheckOutcome> {
    let sweeps = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0xd011));
    let mut failures = 0usize;

    // Constrained: parameter reduction holds.
    let mut done = 0;
    while done < sweeps {
        let i = sample(&mut rng, 2, 4096);
        let o = sample(&mut rng, 2, 4096);
        let rmax = (i * o - 1) / (i + o);
        if rmax == 0 {
            continue;
        }
        let c = ShapeConfig::new(
            sample(&mut rng, 1, 4096),
            sample(&mut rng, 1, 4096),
            i,
            o,
            sample(&mut rng, 1, rmax),
        )?;
        debug_assert!(c.param_reduction_holds());
        let b5 = flops_backward(BackwardVariant::B5, &c)?;
        if flops_backward(BackwardVariant::B2, &c)? <= b5
            || flops_backward(BackwardVariant::B3, &c)? <= b5
        {
            failures += 1;
            eprintln!("dominance violated at {c}");
        }
        done += 1;
    }

    // Unconstrained: strict domination of the sixth variant and the exact
    // duplication of the third by the seventh and eighth.
    for _ in 0..sweeps {
        let c = ShapeConfig::new(
            sample(&mut rng, 1, 4096),
            sample(&mut rng, 1, 4096),
            sample(&mut rng, 1, 4096),
            sample(&mut rng, 1, 4096),
            sample(&mut rng, 1, 4096),
        )?;
        let b3 = flops_backward(BackwardVariant::B3, &c)?;
        let b5 = flops_backward(BackwardVariant::B5, &c)?;
        if flops_backward(BackwardVariant::B6, &c)? <= b5
            || flops_backward(BackwardVariant::B7, &c)? != b3
            || flops_backward(BackwardVariant::B8, &c)? != b3
        {
            failures += 1;
            eprintln!("unconstrained dominance/equality violated at {c}");
        }
    }
    Ok(CheckOutcome {
        name: "dominance",
        detail: format!("{sweeps} constrained + {sweeps} unconstrained shapes, {failures} violations"),
        passed: failures == 0,
    })
}

fn check_flop_audit(seed: u64) -> Result<CheckOutcome> {
    let shapes = [
        (1, 1, 1, 1, 1),
        (2, 3, 5, 4, 2),
        (3, 7, 64, 48, 8),
        (1, 16, 96, 128, 12),
        (4, 25, 128, 64, 16),
    ];
    let mut failures = 0usize;
    for (b, s, i, o, r) in shapes {
        let c = ShapeConfig::new(b, s, i, o, r)?;
        let (input, layer, grad_output) = random_operands::<f64>(&c, seed, 1.0)?;
        for v in ForwardVariant::ALL {
            let (_, counted) = forward_counted(v, &input, &layer)?;
            if counted != flops_forward(v, &c)? {
                failures += 1;
                eprintln!("{v} executed {counted} flops, model says {}", flops_forward(v, &c)?);
            }
        }
        for v in BackwardVariant::EXECUTABLE {
            let (_, counted) = backward_counted(v, &input, &layer, &grad_output)?;
            if counted != flops_backward(v, &c)? {
                failures += 1;
                eprintln!("{v} executed {counted} flops, model says {}", flops_backward(v, &c)?);
            }
        }
    }
    Ok(CheckOutcome {
        name: "executed-FLOP audit",
        detail: format!("{} shapes x 7 executable variants, {failures} mismatches", shapes.len()),
        passed: failures == 0,
    })
}

fn cmd_verify(trials: usize, seed: u64, tol: f64) -> Result<ExitCode> {
    if trials == 0 {
        return Err(Error::InvalidConfig("--trials must be at least 1".to_string()));
    }
    let outcomes = vec![
        check_gradient_equivalence(trials, seed, tol)?,
        check_finite_differences(seed)?,
        check_dominance(seed)?,
        check_flop_audit(seed)?,
    ];
    let mut all_passed = true;
    for outcome in &outcomes {
        println!(
            "{:<24} {}  [{}]",
            outcome.name,
            outcome.detail,
            if outcome.passed { "ok" } else { "FAILED" }
        );
        all_passed &= outcome.passed;
    }
    if all_passed {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(4))
    }
}
