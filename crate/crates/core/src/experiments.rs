//! Synthetic study: Ackley-plus-indicator targets whose effective subspace is
//! span(e₁, e₂), swept over dimension, bump height C and penalty weight λ.

use std::collections::BTreeMap;
use std::f64::consts::{E, PI};
use std::fmt::Write as _;
use std::time::Instant;

use rayon::prelude::*;

use crate::driver::{run_alternating, RunConfig};
use crate::error::{Result, SdrError};
use crate::objective::TargetFunction;
use crate::spectral::Projector;

pub const DEFAULT_LAMBDAS: [f64; 5] = [1e-3, 1e-2, 1e-1, 1.0, 10.0];
pub const DEFAULT_C_VALUES: [f64; 3] = [0.0, 1.0, 5.0];
pub const CSV_HEADER: &str = "n,C,lambda,seed,acc,phi1,phi2,total,gap,runtime_s";

/// A(x, y) = −20 exp(−0.2 √(0.5(x² + y²))) − exp(0.5(cos 2πx + cos 2πy)) + e + 20
pub fn ackley(x: f64, y: f64) -> f64 {
    -20.0 * (-0.2 * (0.5 * (x * x + y * y)).sqrt()).exp() - (0.5 * ((2.0 * PI * x).cos() + (2.0 * PI * y).cos())).exp()
        + E
        + 20.0
}

/// f(x) = A(x₁, x₂) + C·[|x| ≤ 1]
pub fn ackley_indicator_target(n: usize, c: f64) -> Result<TargetFunction> {
    if n < 2 {
        return Err(SdrError::invalid(format!("the Ackley target needs n ≥ 2, got {n}")));
    }
    Ok(TargetFunction::new(n, move |x| {
        let r2: f64 = x.iter().map(|v| v * v).sum();
        ackley(x[0], x[1]) + if r2 <= 1.0 { c } else { 0.0 }
    }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSpec {
    pub dims: Vec<usize>,
    pub c_values: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub seeds: Vec<u64>,
    /// n, k, λ and seed are overwritten per cell; k is always 2.
    pub base: RunConfig,
}

impl SweepSpec {
    /// Default grids on the scaled-down preset.
    pub fn desk(dims: Vec<usize>, seeds: Vec<u64>) -> Self {
        Self {
            dims,
            c_values: DEFAULT_C_VALUES.to_vec(),
            lambdas: DEFAULT_LAMBDAS.to_vec(),
            seeds,
            base: RunConfig::desk(4, 2),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dims.is_empty() || self.c_values.is_empty() || self.lambdas.is_empty() || self.seeds.is_empty() {
            return Err(SdrError::invalid("sweep grids must be non-empty"));
        }
        for cell in self.cells() {
            cell.validate()?;
        }
        Ok(())
    }

    /// Cell configurations in table order: n, then C, then λ, then seed.
    fn cells(&self) -> Vec<RunConfig> {
        let mut out = Vec::new();
        for &n in &self.dims {
            for _ in &self.c_values {
                for &lambda in &self.lambdas {
                    for &seed in &self.seeds {
                        out.push(RunConfig {
                            n,
                            k: 2,
                            lambda,
                            seed,
                            ..self.base.clone()
                        });
                    }
                }
            }
        }
        out
    }
}

/// One sweep cell. A failed run has NaN in every numeric result column.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub n: usize,
    pub c: f64,
    pub lambda: f64,
    pub seed: u64,
    pub acc: f64,
    pub phi1: f64,
    pub phi2: f64,
    pub total: f64,
    pub gap: f64,
    pub runtime_s: f64,
}

impl SweepRow {
    pub fn failed(&self) -> bool {
        !self.acc.is_finite()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
}

/// Projector onto span(e₁, e₂).
pub fn ackley_subspace(n: usize) -> Result<Projector> {
    Projector::coordinate(n, &[0, 1])
}

/// Runs every (n, C, λ, seed) cell in parallel. Failures are recorded in the
/// table (and reported on stderr) instead of aborting the sweep.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepTable> {
    spec.validate()?;
    let cells = spec.cells();
    let per_c = spec.lambdas.len() * spec.seeds.len();
    let rows = cells
        .par_iter()
        .enumerate()
        .map(|(i, cfg)| {
            let c = spec.c_values[(i / per_c) % spec.c_values.len()];
            run_cell(cfg, c)
        })
        .collect();
    Ok(SweepTable { rows })
}

fn run_cell(cfg: &RunConfig, c: f64) -> SweepRow {
    let clock = Instant::now();
    let outcome = ackley_indicator_target(cfg.n, c).and_then(|target| {
        let p_true = ackley_subspace(cfg.n)?;
        run_alternating(cfg, &target, Some(&p_true))
    });
    let mut row = SweepRow {
        n: cfg.n,
        c,
        lambda: cfg.lambda,
        seed: cfg.seed,
        acc: f64::NAN,
        phi1: f64::NAN,
        phi2: f64::NAN,
        total: f64::NAN,
        gap: f64::NAN,
        runtime_s: 0.0,
    };
    match outcome {
        Ok(res) => {
            if let Some(last) = res.trace.last() {
                row.acc = last.acc.unwrap_or(f64::NAN);
                row.phi1 = last.phi1;
                row.phi2 = last.phi2;
                row.total = last.total;
                row.gap = last.gap;
            } else {
                row.acc = res.final_acc().unwrap_or(f64::NAN);
            }
        }
        Err(e) => eprintln!("sweep cell n={} C={c} lambda={} seed={} failed: {e}", cfg.n, cfg.lambda, cfg.seed),
    }
    row.runtime_s = clock.elapsed().as_secs_f64();
    row
}

impl SweepTable {
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{CSV_HEADER}").unwrap();
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                r.n, r.c, r.lambda, r.seed, r.acc, r.phi1, r.phi2, r.total, r.gap, r.runtime_s
            )
            .unwrap();
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        match lines.next() {
            Some((_, h)) if h.trim() == CSV_HEADER => {}
            _ => {
                return Err(SdrError::Parse {
                    line: 1,
                    msg: format!("expected header `{CSV_HEADER}`"),
                })
            }
        }
        let mut rows = Vec::new();
        for (idx, line) in lines {
            let err = |msg: String| SdrError::Parse { line: idx + 1, msg };
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 10 {
                return Err(err(format!("expected 10 fields, got {}", fields.len())));
            }
            let float = |i: usize| fields[i].parse::<f64>().map_err(|e| err(format!("field {}: {e}", i + 1)));
            rows.push(SweepRow {
                n: fields[0].parse().map_err(|e| err(format!("field 1: {e}")))?,
                c: float(1)?,
                lambda: float(2)?,
                seed: fields[3].parse().map_err(|e| err(format!("field 4: {e}")))?,
                acc: float(4)?,
                phi1: float(5)?,
                phi2: float(6)?,
                total: float(7)?,
                gap: float(8)?,
                runtime_s: float(9)?,
            });
        }
        Ok(Self { rows })
    }

    /// Mean acc over seeds (failed cells skipped) for each (n, C), as
    /// λ-sorted curves. Keys order by n, then C.
    pub fn mean_curves(&self) -> Vec<Curve> {
        let mut groups: BTreeMap<(usize, u64), BTreeMap<u64, (f64, usize)>> = BTreeMap::new();
        for r in self.rows.iter().filter(|r| !r.failed()) {
            let slot = groups
                .entry((r.n, ordered(r.c)))
                .or_default()
                .entry(ordered(r.lambda))
                .or_insert((0.0, 0));
            slot.0 += r.acc;
            slot.1 += 1;
        }
        groups
            .into_iter()
            .map(|((n, c), pts)| Curve {
                n,
                c: from_ordered(c),
                points: pts
                    .into_iter()
                    .map(|(l, (sum, count))| (from_ordered(l), sum / count as f64))
                    .collect(),
            })
            .collect()
    }
}

/// Total-order key for non-NaN floats, so they can index a BTreeMap.
fn ordered(v: f64) -> u64 {
    let bits = v.to_bits();
    if bits >> 63 == 1 {
        !bits
    } else {
        bits | 1 << 63
    }
}

fn from_ordered(k: u64) -> f64 {
    f64::from_bits(if k >> 63 == 1 { k & !(1 << 63) } else { !k })
}

/// Mean accuracy against λ for one (n, C) group.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    pub n: usize,
    pub c: f64,
    /// (λ, mean acc), ascending in λ.
    pub points: Vec<(f64, f64)>,
}

impl Curve {
    /// True when the minimum over λ is attained strictly inside the grid.
    pub fn has_interior_minimum(&self) -> bool {
        let Some((arg, _)) = self
            .points
            .iter()
            .enumerate()
            .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
        else {
            return false;
        };
        arg > 0 && arg + 1 < self.points.len()
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN_L: f64 = 60.0;
const MARGIN_R: f64 = 130.0;
const MARGIN_T: f64 = 20.0;
const MARGIN_B: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// Standalone SVG of mean acc versus λ (log axis), one polyline per C (per
/// (n, C) when the table holds several dimensions).
pub fn emit_chart(table: &SweepTable) -> Result<String> {
    if table.rows.is_empty() {
        return Err(SdrError::invalid("cannot chart an empty table"));
    }
    let curves = table.mean_curves();
    if curves.is_empty() {
        return Err(SdrError::invalid("every sweep cell failed; nothing to chart"));
    }
    let multi_n = curves.iter().any(|c| c.n != curves[0].n);

    let lx: Vec<f64> = curves.iter().flat_map(|c| c.points.iter().map(|p| p.0.log10())).collect();
    let (mut x0, mut x1) = (lx.iter().copied().fold(f64::INFINITY, f64::min), lx.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    if x1 - x0 < 1e-12 {
        x0 -= 0.5;
        x1 += 0.5;
    }
    let y_max = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.1))
        .fold(0.0, f64::max);
    let y1 = if y_max > 0.0 { y_max * 1.1 } else { 1.0 };
    let plot_w = WIDTH - MARGIN_L - MARGIN_R;
    let plot_h = HEIGHT - MARGIN_T - MARGIN_B;
    let px = |l: f64| MARGIN_L + (l.log10() - x0) / (x1 - x0) * plot_w;
    let py = |a: f64| MARGIN_T + (1.0 - a / y1) * plot_h;

    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    )
    .unwrap();
    writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<rect x="{MARGIN_L}" y="{MARGIN_T}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    )
    .unwrap();

    for d in (x0.ceil() as i32)..=(x1.floor() as i32) {
        let x = px(10f64.powi(d));
        writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
            MARGIN_T + plot_h,
            MARGIN_T + plot_h + 5.0
        )
        .unwrap();
        writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" font-size="12" text-anchor="middle">1e{d}</text>"#,
            MARGIN_T + plot_h + 20.0
        )
        .unwrap();
    }
    for i in 0..=4 {
        let a = y1 * i as f64 / 4.0;
        let y = py(a);
        writeln!(s, r#"<line x1="{:.2}" y1="{y:.2}" x2="{MARGIN_L:.2}" y2="{y:.2}" stroke="black"/>"#, MARGIN_L - 5.0).unwrap();
        writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="end">{a:.2}</text>"#,
            MARGIN_L - 8.0,
            y + 4.0
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" font-size="13" text-anchor="middle">lambda</text>"#,
        MARGIN_L + plot_w / 2.0,
        HEIGHT - 10.0
    )
    .unwrap();
    writeln!(
        s,
        r#"<text x="15" y="{:.2}" font-size="13" text-anchor="middle" transform="rotate(-90 15 {:.2})">mean acc</text>"#,
        MARGIN_T + plot_h / 2.0,
        MARGIN_T + plot_h / 2.0
    )
    .unwrap();

    for (i, curve) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let pts: Vec<String> = curve
            .points
            .iter()
            .map(|&(l, a)| format!("{:.2},{:.2}", px(l), py(a)))
            .collect();
        writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            pts.join(" ")
        )
        .unwrap();
        for &(l, a) in &curve.points {
            writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, px(l), py(a)).unwrap();
        }
        let label = if multi_n {
            format!("n={}, C={}", curve.n, curve.c)
        } else {
            format!("C={}", curve.c)
        };
        let ly = MARGIN_T + 15.0 + 20.0 * i as f64;
        let lx0 = WIDTH - MARGIN_R + 10.0;
        writeln!(
            s,
            r#"<line x1="{lx0:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx0 + 20.0
        )
        .unwrap();
        writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="12">{label}</text>"#, lx0 + 25.0, ly + 4.0).unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}
