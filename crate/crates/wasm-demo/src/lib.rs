//! Browser demo: three interactive views of the testbed, rendered to SVG/JSON
//! strings so they work identically under wasm-bindgen and in native tests.
//!
//! - `grid_goodness_svg`: a randomly shifted planar grid with cubes colored
//!   by the good/bad classification against a second independent grid
//! - `corona_svg`: a 1D measure with the stopping tree of a spiky function
//! - `badness_curve_json`: Monte-Carlo badness frequencies against r

use czlab_core::dyadic::Dyadic;
use czlab_core::goodness::{BadnessEstimator, GammaValue, GoodnessContext, Goodness};
use czlab_core::grid::{sample_shift, DyadicGrid, GridIndex};
use czlab_core::interval::ParamValue;
use czlab_core::lab::{build_instance, ExponentSpec, Instance, KernelSpec, MeasureSpec, Scenario};
use czlab_core::measure::builtin;
use num_bigint::BigInt;
use num_rational::BigRational;
use std::fmt::Write as _;
use std::sync::Arc;
use wasm_bindgen::prelude::wasm_bindgen;

fn esc(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

/// Level-`level` cubes of a shifted grid inside [0,1)², filled green when
/// good and red when bad against both grids; the second grid's lattice is
/// drawn as dashed lines.
#[wasm_bindgen]
pub fn grid_goodness_svg(seed: u64, r: u32, gamma_num: i64, gamma_den: i64, level: i32) -> String {
    let level = level.clamp(-6, -2);
    let r = r.clamp(1, 8);
    let (gn, gd) = if 0 < gamma_num && gamma_num < gamma_den {
        (gamma_num, gamma_den)
    } else {
        (3, 4)
    };
    let g1 = Arc::new(DyadicGrid::free(sample_shift(seed, 1, 2, -10, 2)));
    let g2 = Arc::new(DyadicGrid::free(sample_shift(seed ^ 0xaa, 2, 2, -10, 2)));
    let ctx = GoodnessContext::with_gamma(
        r,
        BigRational::new(BigInt::from(1), BigInt::from(1)),
        ParamValue::rational_i64(1, 1),
        GammaValue::Exact(BigRational::new(BigInt::from(gn), BigInt::from(gd))),
        [g1.clone(), g2.clone()],
    );
    let size = 640.0;
    let cell = Dyadic::two_pow(level).to_f64();
    let n_cells = (1.0 / cell) as i64 + 2;
    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns='http://www.w3.org/2000/svg' viewBox='0 0 {size} {size}' width='{size}' height='{size}'>"
    );
    let _ = write!(svg, "<rect width='{size}' height='{size}' fill='#10141a'/>");
    let origin1 = g1.point_index(&[Dyadic::ZERO, Dyadic::ZERO], level);
    let mut good_count = 0usize;
    let mut total = 0usize;
    for i in -1..n_cells {
        for j in -1..n_cells {
            let idx = vec![origin1[0] + i, origin1[1] + j];
            let Ok(cube) = g1.cube_at(level, idx) else { continue };
            let x = cube.anchor[0].to_f64();
            let y = cube.anchor[1].to_f64();
            if x + cell < 0.0 || x > 1.0 || y + cell < 0.0 || y > 1.0 {
                continue;
            }
            total += 1;
            let class = ctx.classify(&cube);
            let fill = match class {
                Goodness::Good => {
                    good_count += 1;
                    "#2f9e44"
                }
                Goodness::VacuouslyGood => {
                    good_count += 1;
                    "#74b816"
                }
                Goodness::Bad => "#c2414d",
            };
            let _ = write!(
                svg,
                "<rect x='{}' y='{}' width='{}' height='{}' fill='{fill}' stroke='#10141a' stroke-width='1'/>",
                esc(x * size),
                esc((1.0 - y - cell) * size),
                esc(cell * size),
                esc(cell * size)
            );
        }
    }
    // second grid's lattice at the admissible coarse level, dashed
    let coarse = (level + r as i32).min(0);
    let cc = Dyadic::two_pow(coarse).to_f64();
    let origin2 = g2.point_index(&[Dyadic::ZERO, Dyadic::ZERO], coarse);
    for i in -1..((1.0 / cc) as i64 + 2) {
        let c2 = g2
            .cube_at(coarse, vec![origin2[0] + i, origin2[1]])
            .expect("level in range");
        let x = c2.anchor[0].to_f64();
        if (0.0..=1.0).contains(&x) {
            let _ = write!(
                svg,
                "<line x1='{0}' y1='0' x2='{0}' y2='{size}' stroke='#e8c547' stroke-width='1.5' stroke-dasharray='6 4' opacity='0.8'/>",
                esc(x * size)
            );
        }
        let c2y = g2
            .cube_at(coarse, vec![origin2[0], origin2[1] + i])
            .expect("level in range");
        let y = c2y.anchor[1].to_f64();
        if (0.0..=1.0).contains(&y) {
            let _ = write!(
                svg,
                "<line x1='0' y1='{0}' x2='{size}' y2='{0}' stroke='#e8c547' stroke-width='1.5' stroke-dasharray='6 4' opacity='0.8'/>",
                esc((1.0 - y) * size)
            );
        }
    }
    let _ = write!(
        svg,
        "<text x='10' y='22' fill='#dde' font-family='monospace' font-size='15'>good {good_count}/{total}  r={r}  γ={gn}/{gd}  ℓQ=2^{level}</text>"
    );
    svg.push_str("</svg>");
    svg
}

/// A 1D measure with the stopping tree of a heavy-tailed function: atoms on
/// the baseline (height = |f|), stopping cubes as nested bars colored by
/// generation.
#[wasm_bindgen]
pub fn corona_svg(measure: &str, level: u32, seed: u64) -> String {
    let spec = match measure {
        "cantor" => MeasureSpec::CantorThird { level: level.clamp(2, 8) },
        _ => MeasureSpec::Uniform1d { m: 1u32 << level.clamp(3, 8) },
    };
    let sc = Scenario {
        measure: spec,
        kernel: KernelSpec::SignPower {
            s: if measure == "cantor" {
                ExponentSpec::Named("log2/log3".into())
            } else {
                ExponentSpec::Number(1.0)
            },
        },
        r: 3,
        gamma_override: Some((3, 4)),
        seed,
        ..Scenario::default()
    };
    let inst: Instance<f64> = match build_instance(&sc) {
        Ok(i) => i,
        Err(e) => return format!("<svg xmlns='http://www.w3.org/2000/svg'><text y='20'>{e}</text></svg>"),
    };
    let tree = &inst.trees[0];
    let (w, h) = (760.0, 420.0);
    let base = h - 60.0;
    let max_abs = inst.f[0].values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns='http://www.w3.org/2000/svg' viewBox='0 0 {w} {h}' width='{w}' height='{h}'>"
    );
    let _ = write!(svg, "<rect width='{w}' height='{h}' fill='#10141a'/>");
    let palette = ["#4dabf7", "#69db7c", "#ffd43b", "#ff922b", "#ff6b6b", "#da77f2"];
    let max_depth = tree.nodes.iter().map(|n| n.depth).max().unwrap_or(0);
    for node in &tree.nodes {
        let x0 = node.cube.anchor[0].to_f64().max(-0.02);
        let side = node.cube.side().to_f64().min(1.2);
        let y = 30.0 + node.depth as f64 * 26.0;
        let color = palette[(node.depth as usize) % palette.len()];
        let _ = write!(
            svg,
            "<rect x='{}' y='{}' width='{}' height='18' fill='{color}' opacity='0.85' rx='3'/>",
            esc(x0 * (w - 40.0) + 20.0),
            esc(y),
            esc((side * (w - 40.0)).max(2.0))
        );
        let _ = write!(
            svg,
            "<text x='{}' y='{}' fill='#10141a' font-family='monospace' font-size='11'>σ={:.2}</text>",
            esc(x0 * (w - 40.0) + 24.0),
            esc(y + 13.0),
            node.sigma
        );
    }
    for (i, v) in inst.f[0].values.iter().enumerate() {
        let x = inst.measure.pos(i)[0].to_f64();
        let bar = (v.abs() / max_abs) * 120.0;
        let _ = write!(
            svg,
            "<rect x='{}' y='{}' width='2' height='{}' fill='{}'/>",
            esc(x * (w - 40.0) + 19.0),
            esc(base - bar),
            esc(bar.max(1.0)),
            if *v >= 0.0 { "#74c0fc" } else { "#f783ac" }
        );
    }
    let _ = write!(
        svg,
        "<line x1='20' y1='{base}' x2='{}' y2='{base}' stroke='#556' stroke-width='1'/>",
        w - 20.0
    );
    let _ = write!(
        svg,
        "<text x='10' y='{h}' dy='-8' fill='#dde' font-family='monospace' font-size='14'>{} stopping cubes, depth {max_depth}; bars: |f| at atoms</text>",
        tree.nodes.len()
    );
    svg.push_str("</svg>");
    svg
}

/// JSON rows `{r, freq, ci}` of the Monte-Carlo badness frequency of a deep
/// cube under independent shift pairs.
#[wasm_bindgen]
pub fn badness_curve_json(samples: u32, seed: u64, rs_csv: &str) -> String {
    let rs: Vec<u32> = rs_csv
        .split(',')
        .filter_map(|v| v.trim().parse().ok())
        .filter(|&r| (1..=12).contains(&r))
        .collect();
    let est = BadnessEstimator {
        dim: 1,
        level_min: -14,
        level_max: 0,
        eta: BigRational::new(BigInt::from(1), BigInt::from(1)),
        d: ParamValue::rational_i64(1, 1),
    };
    let mut out = String::from("[");
    for (i, &r) in rs.iter().enumerate() {
        let s = est.run(r, -12, samples.clamp(100, 4000), seed);
        if i > 0 {
            out.push(',');
        }
        let _ = write!(
            out,
            "{{\"r\":{},\"freq\":{},\"ci\":{}}}",
            r, s.freq_bad, s.ci_halfwidth
        );
    }
    out.push(']');
    out
}

/// Quick textual summary used by the page header.
#[wasm_bindgen]
pub fn demo_banner() -> String {
    let m = builtin::cantor_third(4).expect("builtin");
    let g = Arc::new(DyadicGrid::over_measure(1, 1, &m, -12, 2).expect("grid"));
    let idx = GridIndex::new(g, Arc::new(m));
    format!(
        "cantor-4 loaded: {} atoms, top cube side {}",
        idx.measure.len(),
        idx.top().side().to_f64()
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_svg_renders() {
        let svg = grid_goodness_svg(7, 3, 3, 4, -4);
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("good "));
        assert!(svg.ends_with("</svg>"));
        // deterministic in the seed
        assert_eq!(svg, grid_goodness_svg(7, 3, 3, 4, -4));
        assert_ne!(svg, grid_goodness_svg(8, 3, 3, 4, -4));
    }

    #[test]
    fn corona_svg_renders_both_measures() {
        for m in ["cantor", "uniform"] {
            let svg = corona_svg(m, 5, 11);
            assert!(svg.starts_with("<svg"), "{m}");
            assert!(svg.contains("stopping cubes"), "{m}");
        }
    }

    #[test]
    fn badness_curve_is_json() {
        let json = badness_curve_json(120, 3, "2,4");
        let rows: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(rows.as_array().unwrap().len(), 2);
        assert!(rows[0]["freq"].as_f64().unwrap() <= 1.0);
    }
}
