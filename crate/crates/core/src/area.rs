//! Surface area between band envelopes, and method comparison tables.

use serde::Serialize;

use crate::band::PredictionBand;
use crate::error::{Error, Result};

pub const DEFAULT_GRID_CELLS: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct AreaConfig {
    pub grid_cells: usize,
}

impl Default for AreaConfig {
    fn default() -> Self {
        Self {
            grid_cells: DEFAULT_GRID_CELLS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BandArea {
    pub area: f64,
    /// The band spans a single x value; the area is zero by convention.
    pub degenerate: bool,
}

fn knots_of(band: &PredictionBand) -> Result<Vec<(f64, f64, f64)>> {
    if band.len() < 2 {
        return Err(Error::InvalidArgument(
            "band area needs at least two grid points".into(),
        ));
    }
    Ok(band.knots())
}

/// Midpoint rule on `grid_cells` uniform cells over the band's x-range. The
/// height `max(upper - lower, 0)` is taken at each cell midpoint from the
/// linearly interpolated envelopes.
pub fn band_area(band: &PredictionBand, cfg: &AreaConfig) -> Result<BandArea> {
    if cfg.grid_cells == 0 {
        return Err(Error::InvalidArgument("grid_cells must be at least 1".into()));
    }
    let knots = knots_of(band)?;
    if knots.len() < 2 {
        return Ok(BandArea {
            area: 0.0,
            degenerate: true,
        });
    }
    let lo = knots[0].0;
    let hi = knots[knots.len() - 1].0;
    let width = (hi - lo) / cfg.grid_cells as f64;
    let mut seg = 0;
    let mut total = 0.0;
    for c in 0..cfg.grid_cells {
        let xm = lo + (c as f64 + 0.5) * width;
        while seg + 2 < knots.len() && knots[seg + 1].0 < xm {
            seg += 1;
        }
        let (a, b) = (knots[seg], knots[seg + 1]);
        let t = ((xm - a.0) / (b.0 - a.0)).clamp(0.0, 1.0);
        let h = (a.2 - a.1) + t * ((b.2 - b.1) - (a.2 - a.1));
        total += h.max(0.0);
    }
    Ok(BandArea {
        area: total * width,
        degenerate: false,
    })
}

/// Exact integral of `max(upper - lower, 0)` for piecewise-linear envelopes.
pub fn band_area_exact(band: &PredictionBand) -> Result<BandArea> {
    let knots = knots_of(band)?;
    if knots.len() < 2 {
        return Ok(BandArea {
            area: 0.0,
            degenerate: true,
        });
    }
    let area = knots
        .windows(2)
        .map(|w| {
            let dx = w[1].0 - w[0].0;
            let (ha, hb) = (w[0].2 - w[0].1, w[1].2 - w[1].1);
            if ha >= 0.0 && hb >= 0.0 {
                0.5 * (ha + hb) * dx
            } else if ha <= 0.0 && hb <= 0.0 {
                0.0
            } else {
                let pos = ha.max(hb);
                0.5 * pos * pos / (ha.abs() + hb.abs()) * dx
            }
        })
        .sum();
    Ok(BandArea {
        area,
        degenerate: false,
    })
}

/// Breakpoint intervals reported by one method.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MethodIntervals {
    pub method: String,
    /// Coverage label, e.g. "80%".
    pub coverage: String,
    pub alpha1: (f64, f64),
    pub alpha2: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WidthCell {
    pub method: String,
    pub lower: f64,
    pub upper: f64,
    pub width: f64,
    pub minimum: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WidthRow {
    pub parameter: String,
    pub cells: Vec<WidthCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AreaCell {
    pub method: String,
    pub area: f64,
    pub minimum: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Ratio {
    pub quantity: String,
    pub numerator: String,
    pub denominator: String,
    pub ratio: f64,
    /// `ratio` as a percentage with two decimals, e.g. "74.60%".
    pub percent: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonReport {
    pub gamma: Option<f64>,
    pub coverage: Option<String>,
    pub grid_cells: usize,
    pub widths: Vec<WidthRow>,
    pub areas: Vec<AreaCell>,
    pub ratios: Vec<Ratio>,
}

const GAMMA_TOL: f64 = 1e-9;

pub fn percent(ratio: f64) -> String {
    format!("{:.2}%", 100.0 * ratio)
}

/// Flags every entry equal to the minimum (ties are all flagged).
fn minimum_flags(values: &[f64]) -> Vec<bool> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    values.iter().map(|&v| v == min).collect()
}

fn ratios(quantity: &str, entries: &[(String, f64)]) -> Vec<Ratio> {
    let mut out = Vec::new();
    for (num, a) in entries {
        for (den, b) in entries {
            if num != den && *b != 0.0 {
                out.push(Ratio {
                    quantity: quantity.to_string(),
                    numerator: num.clone(),
                    denominator: den.clone(),
                    ratio: a / b,
                    percent: percent(a / b),
                });
            }
        }
    }
    out
}

/// Width table (one row per breakpoint) and area table (one row), with the
/// minimum per row flagged and all pairwise ratios. Bands must share gamma and
/// intervals must share their coverage label.
pub fn compare_methods(
    bands: &[(String, PredictionBand)],
    intervals: &[MethodIntervals],
    cfg: &AreaConfig,
) -> Result<ComparisonReport> {
    let gamma = bands.first().map(|(_, b)| b.gamma);
    if let Some(g) = gamma {
        for (_, b) in bands {
            if (b.gamma - g).abs() > GAMMA_TOL {
                return Err(Error::GammaMismatch(g, b.gamma));
            }
        }
    }
    let coverage = intervals.first().map(|i| i.coverage.clone());
    if let Some(c) = &coverage {
        for i in intervals {
            if &i.coverage != c {
                return Err(Error::CoverageMismatch(c.clone(), i.coverage.clone()));
            }
        }
    }

    let mut widths = Vec::new();
    let mut out_ratios = Vec::new();
    if !intervals.is_empty() {
        for (name, pick) in [
            ("alpha1", (|m: &MethodIntervals| m.alpha1) as fn(&MethodIntervals) -> (f64, f64)),
            ("alpha2", |m: &MethodIntervals| m.alpha2),
        ] {
            let w: Vec<f64> = intervals.iter().map(|m| pick(m).1 - pick(m).0).collect();
            let flags = minimum_flags(&w);
            let cells = intervals
                .iter()
                .zip(&w)
                .zip(flags)
                .map(|((m, &width), minimum)| WidthCell {
                    method: m.method.clone(),
                    lower: pick(m).0,
                    upper: pick(m).1,
                    width,
                    minimum,
                })
                .collect();
            widths.push(WidthRow {
                parameter: name.to_string(),
                cells,
            });
            let entries: Vec<(String, f64)> =
                intervals.iter().map(|m| m.method.clone()).zip(w).collect();
            out_ratios.extend(ratios(&format!("{name}_width"), &entries));
        }
    }

    let area_values: Vec<f64> = bands
        .iter()
        .map(|(_, b)| band_area(b, cfg).map(|a| a.area))
        .collect::<Result<_>>()?;
    let flags = minimum_flags(&area_values);
    let areas = bands
        .iter()
        .zip(&area_values)
        .zip(flags)
        .map(|(((m, _), &area), minimum)| AreaCell {
            method: m.clone(),
            area,
            minimum,
        })
        .collect();
    let entries: Vec<(String, f64)> = bands.iter().map(|(m, _)| m.clone()).zip(area_values).collect();
    out_ratios.extend(ratios("area", &entries));

    Ok(ComparisonReport {
        gamma,
        coverage,
        grid_cells: cfg.grid_cells,
        widths,
        areas,
        ratios: out_ratios,
    })
}
