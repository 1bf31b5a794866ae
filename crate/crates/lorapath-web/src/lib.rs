//! Browser bindings for the static demo page: three JSON-string entry points
//! over the core crate (cost exploration, area maps, gradient checking).
//!
//! All heavy logic stays in plain functions returning `Result<String, Error>`
//! so it is testable on the host; the `#[wasm_bindgen]` wrappers only map
//! errors to `JsValue`.

use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

use lorapath::costmodel::{cost_report, CostReport, ShapeConfig, VariantId};
use lorapath::dense::max_rel_diff;
use lorapath::mapgen::{area_map, AreaMap, AxisRange, GridSpec, LayerRule, PassKind};
use lorapath::selector::{select_by_flops, PairPlan};
use lorapath::variants::{
    backward, fd_errors_against, forward, positive_operands, reference_backward, FdReport,
};
use lorapath::{BackwardVariant, Error, ForwardVariant, Result};

/// Grid cells a single map request may produce.
const MAX_GRID_CELLS: usize = 250_000;
/// Execution caps for the in-browser gradient check.
const MAX_CHECK_DIM: u64 = 64;
const MAX_CHECK_RANK: u64 = 16;
const MAX_CHECK_TOKENS: u64 = 64;
/// Above this many perturbed elements the finite-difference sweep is skipped.
const MAX_FD_ELEMENTS: u64 = 300;

fn to_js(err: Error) -> JsValue {
    JsValue::from_str(&err.to_string())
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string(value).map_err(|e| Error::Io(format!("JSON encoding failed: {e}")))
}

fn shape_from(b: u32, s: u32, i: u32, o: u32, r: u32) -> Result<ShapeConfig> {
    ShapeConfig::new(
        u64::from(b),
        u64::from(s),
        u64::from(i),
        u64::from(o),
        u64::from(r),
    )
}

#[derive(Serialize)]
struct CostView {
    report: CostReport,
    plan: PairPlan,
}

pub fn cost_view_json(b: u32, s: u32, i: u32, o: u32, r: u32) -> Result<String> {
    let shape = shape_from(b, s, i, o, r)?;
    let view = CostView {
        report: cost_report(&shape)?,
        plan: select_by_flops(&shape)?,
    };
    to_json(&view)
}

/// Costs of every variant plus the FLOP-selected pair, as one JSON document.
#[wasm_bindgen]
pub fn cost_report_json(
    b: u32,
    s: u32,
    i: u32,
    o: u32,
    r: u32,
) -> std::result::Result<String, JsValue> {
    cost_view_json(b, s, i, o, r).map_err(to_js)
}

#[derive(Deserialize)]
struct GridRequest {
    /// "embed-rank" or "batch-seq"
    axis: String,
    /// "square", "expand4", or "explicit"
    #[serde(default = "default_rule")]
    rule: String,
    /// "forward" or "backward"
    #[serde(default = "default_pass")]
    pass: String,
    #[serde(default)]
    b: Option<u64>,
    #[serde(default)]
    s: Option<u64>,
    #[serde(default)]
    r: Option<u64>,
    #[serde(default)]
    i: Option<u64>,
    #[serde(default)]
    o: Option<u64>,
    #[serde(default)]
    embed: Option<u64>,
    /// start, end, step
    x: (u64, u64, u64),
    y: (u64, u64, u64),
}

fn default_rule() -> String {
    "square".to_string()
}

fn default_pass() -> String {
    "backward".to_string()
}

fn build_spec(req: &GridRequest) -> Result<(GridSpec, PassKind)> {
    let pass = match req.pass.as_str() {
        "forward" => PassKind::Forward,
        "backward" => PassKind::Backward,
        other => {
            return Err(Error::InvalidConfig(format!(
                "pass must be forward or backward, got {other:?}"
            )))
        }
    };
    let x = AxisRange::new(req.x.0, req.x.1, req.x.2)?;
    let y = AxisRange::new(req.y.0, req.y.1, req.y.2)?;
    let spec = match req.axis.as_str() {
        "embed-rank" => {
            let layer_rule = match req.rule.as_str() {
                "square" => LayerRule::Square,
                "expand4" => LayerRule::Expand4,
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "embed-rank maps take rule square or expand4, got {other:?}"
                    )))
                }
            };
            GridSpec::EmbedRank {
                embed: x,
                rank: y,
                batch: req.b.unwrap_or(2),
                seq_len: req.s.unwrap_or(100),
                layer_rule,
            }
        }
        "batch-seq" => {
            let (input_dim, output_dim) = match req.rule.as_str() {
                "explicit" => {
                    let i = req.i.ok_or_else(|| {
                        Error::InvalidConfig("explicit rule needs \"i\"".to_string())
                    })?;
                    let o = req.o.ok_or_else(|| {
                        Error::InvalidConfig("explicit rule needs \"o\"".to_string())
                    })?;
                    (i, o)
                }
                "square" | "expand4" => {
                    let e = req.embed.ok_or_else(|| {
                        Error::InvalidConfig("square/expand4 rule needs \"embed\"".to_string())
                    })?;
                    if req.rule == "square" {
                        LayerRule::Square.dims(e)
                    } else {
                        LayerRule::Expand4.dims(e)
                    }
                }
                other => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown layer rule {other:?}"
                    )))
                }
            };
            GridSpec::BatchSeq {
                batch: x,
                seq_len: y,
                input_dim,
                output_dim,
                rank: req.r.unwrap_or(128),
            }
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "axis must be embed-rank or batch-seq, got {other:?}"
            )))
        }
    };
    Ok((spec, pass))
}

fn checked_map(spec: &GridSpec, pass: PassKind) -> Result<AreaMap> {
    let map = area_map(spec, pass)?;
    if map.cells.len() > MAX_GRID_CELLS {
        return Err(Error::InvalidConfig(format!(
            "grid has {} cells, the demo caps at {MAX_GRID_CELLS}",
            map.cells.len()
        )));
    }
    Ok(map)
}

pub fn area_map_view_json(request: &str) -> Result<String> {
    let req: GridRequest = serde_json::from_str(request)
        .map_err(|e| Error::InvalidConfig(format!("bad grid request: {e}")))?;
    let (spec, pass) = build_spec(&req)?;
    to_json(&checked_map(&spec, pass)?)
}

/// Best-variant grid for a JSON request, returned as a JSON `AreaMap`.
#[wasm_bindgen]
pub fn area_map_json(request: &str) -> std::result::Result<String, JsValue> {
    area_map_view_json(request).map_err(to_js)
}

#[derive(Serialize)]
struct VariantCheck {
    variant: VariantId,
    max_rel_diff: f64,
}

#[derive(Serialize)]
struct GradientCheckView {
    shape: ShapeConfig,
    seed: u64,
    forward_rel_diff: f64,
    forward_tolerance: f64,
    backward_tolerance: f64,
    variants: Vec<VariantCheck>,
    /// Absent when the shape is too large for an interactive sweep.
    fd: Option<FdReport>,
    fd_tolerance: f64,
}

pub fn gradient_check_view_json(
    b: u32,
    s: u32,
    i: u32,
    o: u32,
    r: u32,
    seed: u32,
) -> Result<String> {
    let shape = shape_from(b, s, i, o, r)?;
    if shape.input_dim > MAX_CHECK_DIM
        || shape.output_dim > MAX_CHECK_DIM
        || shape.rank > MAX_CHECK_RANK
        || shape.tokens()? > MAX_CHECK_TOKENS
    {
        return Err(Error::InvalidConfig(format!(
            "gradient check caps at i,o <= {MAX_CHECK_DIM}, r <= {MAX_CHECK_RANK}, \
             b*s <= {MAX_CHECK_TOKENS}; got {shape}"
        )));
    }
    let seed = u64::from(seed);
    let (input, layer, grad_output) = positive_operands::<f64>(&shape, seed)?;

    let y1 = forward(ForwardVariant::F1, &input, &layer)?;
    let y2 = forward(ForwardVariant::F2, &input, &layer)?;
    let forward_rel_diff = max_rel_diff(&y1, &y2)?;

    let reference = reference_backward(&input, &layer, &grad_output)?;
    let mut variants = Vec::new();
    for v in BackwardVariant::EXECUTABLE {
        let grads = backward(v, &input, &layer, &grad_output)?;
        let diff = max_rel_diff(&grads.down, &reference.down)?
            .max(max_rel_diff(&grads.up, &reference.up)?)
            .max(max_rel_diff(&grads.input, &reference.input)?);
        variants.push(VariantCheck {
            variant: v.into(),
            max_rel_diff: diff,
        });
    }

    let perturbed_elements = shape.input_dim * shape.rank
        + shape.rank * shape.output_dim
        + shape.tokens()? * shape.input_dim;
    let fd = if perturbed_elements <= MAX_FD_ELEMENTS {
        Some(fd_errors_against(
            &input,
            &layer,
            &grad_output,
            1e-5,
            &reference,
        )?)
    } else {
        None
    };

    to_json(&GradientCheckView {
        shape,
        seed,
        forward_rel_diff,
        forward_tolerance: 1e-12,
        backward_tolerance: 1e-10,
        variants,
        fd,
        fd_tolerance: 1e-6,
    })
}

/// Runs every backward variant against the analytic reference (plus a
/// finite-difference sweep on small shapes) and reports the errors.
#[wasm_bindgen]
pub fn gradient_check_json(
    b: u32,
    s: u32,
    i: u32,
    o: u32,
    r: u32,
    seed: u32,
) -> std::result::Result<String, JsValue> {
    gradient_check_view_json(b, s, i, o, r, seed).map_err(to_js)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cost_view_is_valid_json_with_plan() {
        let text = cost_view_json(2, 100, 512, 512, 32).unwrap();
        let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(
            doc["report"]["variants"][0]["flops"],
            serde_json::Value::from(117_964_800u64)
        );
        assert_eq!(doc["plan"]["forward_choice"], "forward1");
    }

    // The demo page reads these exact field names; renaming any of them
    // must fail here before it breaks the JS.
    #[test]
    fn json_schema_matches_what_the_page_reads() {
        let view: serde_json::Value =
            serde_json::from_str(&cost_view_json(2, 4, 8, 8, 2).unwrap()).unwrap();
        for key in ["shape", "parameter_reduction", "variants", "baseline"] {
            assert!(!view["report"][key].is_null(), "report.{key}");
        }
        for key in ["forward_flops", "backward_flops", "saved_activation_elements"] {
            assert!(view["report"]["baseline"][key].is_u64(), "baseline.{key}");
        }
        let cand = &view["plan"]["forward_candidates"][0];
        assert!(cand["variant"].is_string() && cand["flops"].is_u64());
        assert!(view["report"]["variants"][9]["workspace_elements"].is_null());

        let map: serde_json::Value = serde_json::from_str(
            &area_map_view_json(
                r#"{"axis":"batch-seq","rule":"explicit","i":8,"o":8,"r":2,
                    "x":[1,2,1],"y":[1,2,1]}"#,
            )
            .unwrap(),
        )
        .unwrap();
        let cell = &map["cells"][0];
        assert!(cell["x"].is_u64() && cell["y"].is_u64());
        for key in ["variant", "parameter_reduction", "flops_best", "flops_all"] {
            assert!(!cell["choice"][key].is_null(), "choice.{key}");
        }

        let check: serde_json::Value =
            serde_json::from_str(&gradient_check_view_json(1, 2, 3, 3, 1, 5).unwrap()).unwrap();
        for key in [
            "forward_rel_diff",
            "forward_tolerance",
            "backward_tolerance",
            "fd_tolerance",
        ] {
            assert!(check[key].is_f64(), "{key}");
        }
        assert!(check["variants"][0]["max_rel_diff"].is_f64());
        for key in ["down", "up", "input"] {
            assert!(check["fd"][key].is_f64(), "fd.{key}");
        }
    }

    #[test]
    fn area_map_request_round_trip() {
        let req = r#"{
            "axis": "embed-rank",
            "rule": "square",
            "pass": "backward",
            "b": 2, "s": 100,
            "x": [256, 1024, 256],
            "y": [8, 64, 8]
        }"#;
        let text = area_map_view_json(req).unwrap();
        let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(doc["xs"].as_array().unwrap().len(), 4);
        assert_eq!(doc["ys"].as_array().unwrap().len(), 8);
        assert_eq!(doc["cells"].as_array().unwrap().len(), 32);
    }

    #[test]
    fn oversized_grid_rejected() {
        let req = r#"{
            "axis": "batch-seq",
            "rule": "explicit",
            "i": 64, "o": 64, "r": 8,
            "x": [1, 1024, 1],
            "y": [1, 1024, 1]
        }"#;
        assert!(area_map_view_json(req).is_err());
    }

    #[test]
    fn gradient_check_reports_tiny_errors() {
        let text = gradient_check_view_json(2, 3, 6, 5, 2, 9).unwrap();
        let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(doc["forward_rel_diff"].as_f64().unwrap() <= 1e-12);
        for check in doc["variants"].as_array().unwrap() {
            assert!(check["max_rel_diff"].as_f64().unwrap() <= 1e-10);
        }
        assert!(doc["fd"]["down"].as_f64().unwrap() <= 1e-6);
    }

    #[test]
    fn gradient_check_caps_enforced() {
        assert!(gradient_check_view_json(64, 64, 64, 64, 16, 1).is_err());
        // Large-but-allowed shapes skip the finite-difference sweep.
        let text = gradient_check_view_json(4, 16, 64, 64, 16, 1).unwrap();
        let doc: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert!(doc["fd"].is_null());
    }
}
