use rayon::prelude::*;
use serde::Serialize;

use super::fit::{fit_series, FitOptions, Series};
use super::ForecastError;
use crate::stats::{absolute_percentage_errors, quantile};
use crate::trace::TraceWindow;

/// Scores closer than this (relative) are treated as ties.
const TIE_RTOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneCell {
    pub order: usize,
    pub window: usize,
    /// 95th percentile absolute percentage error on the validation segment.
    pub ape95: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TuneReport {
    pub cells: Vec<TuneCell>,
    pub best_order: usize,
    pub best_window: usize,
}

/// Grid search over Fourier order and training-window length. Each cell fits
/// on the `W` intervals preceding the validation segment and forecasts the
/// whole segment; the cell with the lowest 95th-percentile APE wins, ties go
/// to the smaller order and then the smaller window.
pub fn tune(
    window: &TraceWindow<'_>,
    base: &FitOptions,
    orders: &[usize],
    windows: &[usize],
) -> Result<TuneReport, ForecastError> {
    if orders.is_empty() || windows.is_empty() {
        return Err(ForecastError::InvalidParams("tuning grids must be non-empty".into()));
    }
    let validation = window.validation_range();
    if validation.is_empty() {
        return Err(ForecastError::InvalidParams(
            "tuning needs a non-empty validation segment".into(),
        ));
    }
    let trace = window.trace();
    let values = trace.values();
    let train_end = window.train_range().end;
    let actual: Vec<f64> = values[validation.clone()].to_vec();

    let grid: Vec<(usize, usize)> = orders
        .iter()
        .flat_map(|&n| windows.iter().map(move |&w| (n, w)))
        .collect();
    let cells: Vec<TuneCell> = grid
        .par_iter()
        .map(|&(order, w)| {
            let score = (|| {
                if w > train_end {
                    return Err(ForecastError::InsufficientData {
                        needed: w,
                        available: train_end,
                    });
                }
                let options = FitOptions {
                    order,
                    ..base.clone()
                };
                let model = fit_series(
                    Series {
                        values: &values[train_end - w..train_end],
                        start_index: train_end - w,
                        start_epoch: trace.start_epoch(),
                        resolution_s: trace.resolution(),
                    },
                    &options,
                )?;
                let predicted: Vec<f64> = validation
                    .clone()
                    .map(|t| model.predict(t).map(|f| f.y))
                    .collect::<Result<_, _>>()?;
                let ape = absolute_percentage_errors(&actual, &predicted);
                if ape.is_empty() {
                    return Err(ForecastError::InvalidParams(
                        "validation segment has no non-zero observations".into(),
                    ));
                }
                Ok(quantile(&ape, 0.95))
            })();
            match score {
                Ok(v) => TuneCell {
                    order,
                    window: w,
                    ape95: Some(v),
                    error: None,
                },
                Err(e) => TuneCell {
                    order,
                    window: w,
                    ape95: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect();

    let mut best: Option<&TuneCell> = None;
    for cell in &cells {
        let Some(score) = cell.ape95 else { continue };
        best = match best {
            None => Some(cell),
            Some(b) => {
                let b_score = b.ape95.unwrap_or(f64::INFINITY);
                let tie = (score - b_score).abs() <= TIE_RTOL * score.abs().max(b_score.abs());
                let better = if tie {
                    (cell.order, cell.window) < (b.order, b.window)
                } else {
                    score < b_score
                };
                Some(if better { cell } else { b })
            }
        };
    }
    let best = best.ok_or_else(|| {
        ForecastError::NoViableCell(
            cells
                .iter()
                .filter_map(|c| c.error.as_ref().map(|e| format!("(N={}, W={}): {e}", c.order, c.window)))
                .collect::<Vec<_>>()
                .join("; "),
        )
    })?;
    Ok(TuneReport {
        best_order: best.order,
        best_window: best.window,
        cells: cells.clone(),
    })
}
