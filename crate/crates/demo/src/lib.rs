//! Browser bindings for three interactive views: DD-risk curves for a given
//! error volume, rebalancing weights of a truncated-Gaussian sample, and the
//! greedy adversary against a rectangle-shaped error region.
//!
//! Each view has a plain Rust function returning flat `f64` buffers (tested
//! natively) and a thin `#[wasm_bindgen]` wrapper that maps errors to JS.

// `!(x >= 0.0)` style checks are deliberate: they also reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

use wasm_bindgen::prelude::*;

use ddrisk::adversarial::{build_pool, greedy_adversarial};
use ddrisk::bounds::{dd_risk_bound, dd_risk_exact, simplified_bound};
use ddrisk::density::{fit_gmm, GmmConfig};
use ddrisk::rebalance::{rebalance_cross_fitted, HoldOut, WeightConfig};
use ddrisk::tasks::{sample_task, sample_truncated_gaussian};
use ddrisk::{BinGrid, Label, Point2};

/// Rows of `(γ, exact, bound, simplified)` for `steps + 1` evenly spaced
/// gaps in `[0, gamma_max]`. The simplified bound is NaN where undefined.
pub fn dd_curves(r: f64, gamma_max: f64, steps: usize) -> Result<Vec<f64>, String> {
    if steps == 0 || !(gamma_max >= 0.0) {
        return Err("need steps ≥ 1 and gamma_max ≥ 0".into());
    }
    let mut out = Vec::with_capacity(4 * (steps + 1));
    for i in 0..=steps {
        let g = gamma_max * i as f64 / steps as f64;
        out.push(g);
        out.push(dd_risk_exact(r, g).map_err(|e| e.to_string())?);
        out.push(dd_risk_bound(r, g).map_err(|e| e.to_string())?);
        out.push(simplified_bound(r, g).unwrap_or(f64::NAN));
    }
    Ok(out)
}

/// Rows of `(x, y, label, weight)` for a rebalanced truncated-Gaussian sample.
pub fn rebalance_points(sigma: f64, n: usize, tau: f64, beta_quantile: f64, seed: u64) -> Result<Vec<f64>, String> {
    let task = sample_task(seed).map_err(|e| e.to_string())?;
    let data = sample_truncated_gaussian(&task, n, sigma, seed).map_err(|e| e.to_string())?;
    let cfg = WeightConfig {
        tau,
        beta_quantile,
        normalize: true,
    };
    let gmm = GmmConfig {
        components: 4,
        ..GmmConfig::default()
    };
    let wd = rebalance_cross_fitted(
        &data,
        |pts, s| fit_gmm(pts, &GmmConfig { seed: s, ..gmm.clone() }).map(|r| r.0),
        &cfg,
        HoldOut::CrossFit,
        seed,
    )
    .map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(4 * n);
    for (s, w) in data.samples().iter().zip(wd.weights()) {
        out.extend([s.point.x(), s.point.y(), s.label.index() as f64, *w]);
    }
    Ok(out)
}

/// Greedy adversary for a classifier that is wrong exactly on
/// `[x0, x1) × [y0, y1)`.
///
/// Layout: `[risk, achieved_gap, exact, pool_risk, exhausted, then (x, y,
/// mislabeled) per selected point]`.
#[allow(clippy::too_many_arguments)]
pub fn adversary(
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    gamma: f64,
    cells_per_axis: usize,
    pool_size: usize,
    seed: u64,
) -> Result<Vec<f64>, String> {
    if !(x0 < x1 && y0 < y1) {
        return Err("empty rectangle".into());
    }
    let truth = |_: Point2| Label::Negative;
    let model = move |p: Point2| Label::from(p.x() >= x0 && p.x() < x1 && p.y() >= y0 && p.y() < y1);
    let grid = BinGrid::new(cells_per_axis).map_err(|e| e.to_string())?;
    let pool = build_pool(&model, &truth, pool_size, seed).map_err(|e| e.to_string())?;
    let res = greedy_adversarial(&pool, gamma, grid).map_err(|e| e.to_string())?;
    let area = (x1.min(1.0) - x0.max(0.0)).max(0.0) * (y1.min(1.0) - y0.max(0.0)).max(0.0);
    let exact = dd_risk_exact(area, gamma).map_err(|e| e.to_string())?;
    let mut out = vec![
        res.risk,
        res.achieved_gap.unwrap_or(f64::NAN),
        exact,
        pool.uniform_risk(),
        if res.exhausted { 1.0 } else { 0.0 },
    ];
    for &i in &res.selected {
        let p = pool.points[i];
        let wrong = pool.predictions[i] != pool.truth[i];
        out.extend([p.x(), p.y(), if wrong { 1.0 } else { 0.0 }]);
    }
    Ok(out)
}

fn js_err(e: String) -> JsError {
    JsError::new(&e)
}

#[wasm_bindgen(js_name = ddCurves)]
pub fn dd_curves_js(r: f64, gamma_max: f64, steps: usize) -> Result<Vec<f64>, JsError> {
    dd_curves(r, gamma_max, steps).map_err(js_err)
}

#[wasm_bindgen(js_name = rebalancePoints)]
pub fn rebalance_points_js(sigma: f64, n: usize, tau: f64, beta_quantile: f64, seed: u32) -> Result<Vec<f64>, JsError> {
    rebalance_points(sigma, n, tau, beta_quantile, seed as u64).map_err(js_err)
}

#[wasm_bindgen(js_name = adversary)]
#[allow(clippy::too_many_arguments)]
pub fn adversary_js(
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    gamma: f64,
    cells_per_axis: usize,
    pool_size: usize,
    seed: u32,
) -> Result<Vec<f64>, JsError> {
    adversary(x0, x1, y0, y1, gamma, cells_per_axis, pool_size, seed as u64).map_err(js_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curves_are_ordered() {
        let c = dd_curves(0.1, 2.0, 20).unwrap();
        assert_eq!(c.len(), 4 * 21);
        for row in c.chunks(4) {
            assert!(row[1] <= row[2] + 1e-12);
            assert!(row[1] >= 0.1 - 1e-12);
        }
        assert!((c[1] - 0.1).abs() < 1e-12);
        assert!(dd_curves(0.1, 1.0, 0).is_err());
    }

    #[test]
    fn weights_have_unit_mean() {
        let p = rebalance_points(0.2, 300, 1.0, 0.99, 3).unwrap();
        assert_eq!(p.len(), 4 * 300);
        let mean = p.chunks(4).map(|r| r[3]).sum::<f64>() / 300.0;
        assert!((mean - 1.0).abs() < 1e-9);
    }

    #[test]
    fn adversary_output_layout() {
        let a = adversary(0.0, 0.5, 0.0, 0.2, 0.51, 10, 4000, 1).unwrap();
        let (risk, exact) = (a[0], a[2]);
        assert!((risk - exact).abs() < 0.08);
        assert_eq!((a.len() - 5) % 3, 0);
        let wrong = a[5..].chunks(3).filter(|r| r[2] == 1.0).count();
        assert!((wrong as f64 / ((a.len() - 5) / 3) as f64 - risk).abs() < 1e-12);
        assert!(adversary(0.5, 0.2, 0.0, 1.0, 0.5, 10, 100, 0).is_err());
    }
}
