//! Command-line frontend.
//!
//! Exit codes: 0 success, 2 input error, 3 fit failure, 4 partial result
//! (some tau rows failed). On failure an `error.json` record is written to the
//! output directory and anything produced before the failure goes to
//! `<out>/quarantine/`.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use crate::area::{band_area, compare_methods, AreaConfig, MethodIntervals};
use crate::band::PredictionBand;
use crate::bootstrap::{bootstrap_pool, BandConfig, DEFAULT_REPLICATES};
use crate::dataset::{load_dataset, read_dataset, summarize, BivariateDataset, LoadSpec, Transform};
use crate::error::{Error, Result};
use crate::loess::LoessConfig;
use crate::quantile::{
    band_taus, coverage_label, fit_segmented_quantile, fit_tau_grid,
    pqrm_prediction_band, quantile_breakpoint_intervals, QuantileOptions, QuantileSegmentedFit,
};
use crate::report::{self, Figure};
use crate::rng::{RngSpec, ALGORITHM};
use crate::segmented::{
    fit_segmented, plrm_band_with_fallback, PlrmBandMethod, SegmentedFit, SegmentedFitter,
    SegmentedModel, SegmentedOptions,
};
use crate::synth::{generate, Noise, SyntheticSpec, XDesign};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_FIT: i32 = 3;
pub const EXIT_PARTIAL: i32 = 4;

const DEFAULT_SEED: u64 = 20190101;

#[derive(Debug, Parser)]
#[command(name = "breakline", version, about = "Breakpoints and prediction bands for bivariate data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Loess fit with residual-bootstrap prediction bands.
    LoessBand(LoessBandArgs),
    /// Two-breakpoint piecewise linear least squares.
    Plrm(PlrmArgs),
    /// Two-breakpoint piecewise linear quantile regression over a tau grid.
    Pqrm(PqrmArgs),
    /// All three methods at one gamma, with width and area tables.
    Compare(CompareArgs),
    /// Synthetic data from a known segmented truth, as CSV.
    Synth(SynthArgs),
}

#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// CSV file with a header row; `-` reads standard input.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "x")]
    pub x: String,
    #[arg(long, default_value = "y")]
    pub y: String,
    /// Optional grouping column, used to colour points.
    #[arg(long)]
    pub label: Option<String>,
    /// identity | log10 | affine:a,b
    #[arg(long, default_value = "identity")]
    pub x_transform: Transform,
    #[arg(long, default_value = "identity")]
    pub y_transform: Transform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Svg,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Comma-separated subset of json,csv,svg.
    #[arg(long, value_delimiter = ',', default_value = "json,csv,svg")]
    pub format: Vec<Format>,
}

#[derive(Debug, Clone, Copy, Args)]
pub struct LoessArgs {
    #[arg(long, default_value_t = 0.75)]
    pub span: f64,
    #[arg(long, default_value_t = 2)]
    pub degree: usize,
    #[arg(long, default_value_t = 4)]
    pub robust_iters: usize,
}

impl LoessArgs {
    fn config(&self) -> LoessConfig {
        LoessConfig {
            span: self.span,
            degree: self.degree,
            robust_iterations: self.robust_iters,
        }
    }
}

#[derive(Debug, Clone, Copy, Args)]
pub struct BootArgs {
    /// Bootstrap replicates B.
    #[arg(long = "bootstrap", default_value_t = DEFAULT_REPLICATES)]
    pub replicates: usize,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, Args)]
pub struct FitArgs {
    /// Minimum observations per segment.
    #[arg(long, default_value_t = 3)]
    pub min_seg_points: usize,
    /// Uniform cells for band areas.
    #[arg(long, default_value_t = crate::area::DEFAULT_GRID_CELLS)]
    pub grid_cells: usize,
}

#[derive(Debug, Clone, Args)]
pub struct LoessBandArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub loess: LoessArgs,
    #[command(flatten)]
    pub boot: BootArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.8,0.95")]
    pub gamma: Vec<f64>,
    #[arg(long, default_value_t = crate::area::DEFAULT_GRID_CELLS)]
    pub grid_cells: usize,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BandMode {
    Parametric,
    Bootstrap,
}

#[derive(Debug, Clone, Args)]
pub struct PlrmArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.8,0.95")]
    pub gamma: Vec<f64>,
    /// Parametric bands fall back to the bootstrap when the covariance is singular.
    #[arg(long, value_enum, default_value = "parametric")]
    pub band_mode: BandMode,
    #[command(flatten)]
    pub boot: BootArgs,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct PqrmArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    /// Strictly increasing tau values in (0, 1).
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
    pub tau_grid: Vec<f64>,
    /// Band between the (1-gamma)/2 and (1+gamma)/2 quantile curves.
    #[arg(long, default_value_t = 0.8)]
    pub gamma: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct CompareArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub loess: LoessArgs,
    #[command(flatten)]
    pub boot: BootArgs,
    #[command(flatten)]
    pub fit: FitArgs,
    #[arg(long, value_delimiter = ',', default_value = "0.1,0.2,0.3,0.4,0.5,0.6,0.7,0.8,0.9")]
    pub tau_grid: Vec<f64>,
    #[arg(long, default_value_t = 0.8)]
    pub gamma: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DesignKind {
    Uniform,
    Equispaced,
}

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// b0,b1,b2,b3
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "10,0,-5,5")]
    pub beta: Vec<f64>,
    /// a1,a2
    #[arg(long, value_delimiter = ',', default_value = "0.3,0.6")]
    pub alpha: Vec<f64>,
    #[arg(long, default_value_t = 100)]
    pub n: usize,
    #[arg(long, value_enum, default_value = "uniform")]
    pub design: DesignKind,
    /// lo,hi
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true, default_value = "0,1")]
    pub x_range: Vec<f64>,
    /// Gaussian noise standard deviation.
    #[arg(long, default_value_t = 0.5)]
    pub sigma: f64,
    /// sigma0,c for noise sd sigma0 * (1 + c x); overrides --sigma.
    #[arg(long, value_delimiter = ',')]
    pub wedge: Option<Vec<f64>>,
    #[arg(long, default_value_t = DEFAULT_SEED)]
    pub seed: u64,
    /// Output CSV; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Files produced by a command, written only once the command finishes.
struct Outputs {
    dir: PathBuf,
    formats: Vec<Format>,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn new(args: &OutputArgs) -> Self {
        Self {
            dir: args.out.clone(),
            formats: args.format.clone(),
            files: Vec::new(),
        }
    }

    fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }

    fn add(&mut self, f: Format, name: impl Into<String>, content: impl Into<Vec<u8>>) {
        if self.wants(f) {
            self.files.push((name.into(), content.into()));
        }
    }

    fn add_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        if self.wants(Format::Json) {
            let mut s = serde_json::to_string_pretty(value)?;
            s.push('\n');
            self.files.push((name.to_string(), s.into_bytes()));
        }
        Ok(())
    }

    fn add_figure(&mut self, stem: &str, fig: &Figure) {
        if self.wants(Format::Svg) {
            self.files
                .push((format!("{stem}.svg"), report::render_svg(fig).into_bytes()));
            self.files.push((
                format!("{stem}_geometry.csv"),
                report::figure_geometry_csv(fig).into_bytes(),
            ));
        }
    }

    fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }

    fn commit(&self) -> Result<()> {
        self.write_to(&self.dir)
    }
}

#[derive(Serialize)]
struct ErrorRecord<'a> {
    command: &'a str,
    exit_code: i32,
    kind: &'a str,
    message: String,
    quarantine: Option<String>,
}

fn exit_code_of(e: &Error) -> i32 {
    if e.is_input_error() {
        EXIT_INPUT
    } else {
        EXIT_FIT
    }
}

fn write_error(dir: &Path, rec: &ErrorRecord<'_>) {
    let _ = std::fs::create_dir_all(dir);
    if let Ok(s) = serde_json::to_string_pretty(rec) {
        let _ = std::fs::write(dir.join("error.json"), s + "\n");
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(cli),
        Err(e) => {
            let _ = e.print();
            if e.use_stderr() {
                EXIT_INPUT
            } else {
                EXIT_OK
            }
        }
    }
}

pub fn run(cli: Cli) -> i32 {
    let (name, output) = match &cli.command {
        Command::LoessBand(a) => ("loess-band", Some(&a.output)),
        Command::Plrm(a) => ("plrm", Some(&a.output)),
        Command::Pqrm(a) => ("pqrm", Some(&a.output)),
        Command::Compare(a) => ("compare", Some(&a.output)),
        Command::Synth(_) => ("synth", None),
    };
    let Some(output) = output else {
        let Command::Synth(a) = &cli.command else {
            unreachable!()
        };
        return match synth(a) {
            Ok(()) => EXIT_OK,
            Err(e) => {
                eprintln!("error: {e}");
                exit_code_of(&e)
            }
        };
    };

    let mut out = Outputs::new(output);
    let result = match &cli.command {
        Command::LoessBand(a) => loess_band(a, &mut out),
        Command::Plrm(a) => plrm(a, &mut out),
        Command::Pqrm(a) => pqrm(a, &mut out),
        Command::Compare(a) => compare(a, &mut out),
        Command::Synth(_) => unreachable!(),
    };
    match result {
        Ok(failed) if failed.is_empty() => match out.commit() {
            Ok(()) => EXIT_OK,
            Err(e) => {
                eprintln!("error: {e}");
                EXIT_INPUT
            }
        },
        Ok(failed) => {
            let message = failed
                .iter()
                .map(|(tau, msg)| format!("tau {tau}: {msg}"))
                .collect::<Vec<_>>()
                .join("; ");
            eprintln!("warning: partial result: {message}");
            if let Err(e) = out.commit() {
                eprintln!("error: {e}");
                return EXIT_INPUT;
            }
            write_error(
                &out.dir,
                &ErrorRecord {
                    command: name,
                    exit_code: EXIT_PARTIAL,
                    kind: "partial",
                    message,
                    quarantine: None,
                },
            );
            EXIT_PARTIAL
        }
        Err(e) => {
            eprintln!("error: {e}");
            let code = exit_code_of(&e);
            let qdir = out.dir.join("quarantine");
            let quarantine = if out.files.is_empty() {
                None
            } else {
                out.write_to(&qdir).ok().map(|_| qdir.display().to_string())
            };
            write_error(
                &out.dir,
                &ErrorRecord {
                    command: name,
                    exit_code: code,
                    kind: e.kind(),
                    message: e.to_string(),
                    quarantine,
                },
            );
            code
        }
    }
}

/// Failed tau rows as `(tau, message)`; empty on full success.
type Partial = Vec<(f64, String)>;

fn load(args: &DataArgs) -> Result<BivariateDataset> {
    let spec = LoadSpec {
        x_column: args.x.clone(),
        y_column: args.y.clone(),
        label_column: args.label.clone(),
        x_transform: args.x_transform,
        y_transform: args.y_transform,
    };
    if args.input.as_os_str() == "-" {
        read_dataset(std::io::stdin().lock(), &spec)
    } else {
        load_dataset(&args.input, &spec)
    }
}

fn check_gammas(gammas: &[f64]) -> Result<()> {
    if gammas.is_empty() {
        return Err(Error::InvalidArgument("at least one gamma is required".into()));
    }
    for &g in gammas {
        if !(g > 0.0 && g < 1.0) {
            return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1), got {g}")));
        }
    }
    Ok(())
}

fn check_tau_grid(taus: &[f64]) -> Result<()> {
    if taus.len() < 2 {
        return Err(Error::InvalidArgument("tau grid needs at least two values".into()));
    }
    if taus.iter().any(|&t| !(t > 0.0 && t < 1.0)) {
        return Err(Error::InvalidArgument("tau values must lie in (0, 1)".into()));
    }
    if taus.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArgument("tau grid must be strictly increasing".into()));
    }
    Ok(())
}

fn pct(gamma: f64) -> String {
    format!("{}", (gamma * 100.0).round() as i64)
}

fn with_area(mut band: PredictionBand, cells: usize) -> Result<PredictionBand> {
    band.area = Some(band_area(&band, &AreaConfig { grid_cells: cells })?.area);
    Ok(band)
}

#[derive(Serialize)]
struct DatasetInfo<'a> {
    x_name: &'a str,
    y_name: &'a str,
    x_transform: String,
    y_transform: String,
    n: usize,
    summary: Option<crate::dataset::Summary>,
}

fn dataset_info(ds: &BivariateDataset) -> DatasetInfo<'_> {
    DatasetInfo {
        x_name: &ds.x_name,
        y_name: &ds.y_name,
        x_transform: ds.x_transform.to_string(),
        y_transform: ds.y_transform.to_string(),
        n: ds.len(),
        summary: summarize(ds).ok(),
    }
}

#[derive(Serialize)]
struct BandInfo {
    gamma: f64,
    area: Option<f64>,
    crossings: usize,
    method: &'static str,
}

fn band_info(b: &PredictionBand, method: &'static str) -> BandInfo {
    BandInfo {
        gamma: b.gamma,
        area: b.area,
        crossings: b.crossings.len(),
        method,
    }
}

fn base_figure(ds: &BivariateDataset, title: &str) -> Figure {
    let labels = ds.labels();
    Figure {
        title: title.to_string(),
        x_label: ds.x_name.clone(),
        y_label: ds.y_name.clone(),
        points: (0..ds.len())
            .map(|i| (ds.xs()[i], ds.ys()[i], labels.map(|l| l[i].clone())))
            .collect(),
        ..Default::default()
    }
}

fn push_bands(fig: &mut Figure, prefix: &str, bands: &[PredictionBand]) {
    // widest first so narrower bands stay visible on top
    let mut sorted: Vec<&PredictionBand> = bands.iter().collect();
    sorted.sort_by(|a, b| b.gamma.total_cmp(&a.gamma));
    for b in sorted {
        fig.bands.push((
            format!("{prefix} {}%", pct(b.gamma)),
            b.grid_x.clone(),
            b.lower.clone(),
            b.upper.clone(),
        ));
    }
}

/// Model evaluated on an even grid over the x-range, for smooth drawing.
fn model_curve(m: &SegmentedModel, ds: &BivariateDataset) -> (Vec<f64>, Vec<f64>) {
    let (lo, hi) = ds.x_range();
    let mut xs: Vec<f64> = (0..=200).map(|i| lo + (hi - lo) * i as f64 / 200.0).collect();
    xs.extend(m.alpha.iter().filter(|a| **a > lo && **a < hi));
    xs.sort_by(f64::total_cmp);
    let ys = xs.iter().map(|&x| m.eval(x)).collect();
    (xs, ys)
}

fn loess_bands(
    ds: &BivariateDataset,
    loess: &LoessArgs,
    boot: &BootArgs,
    gammas: &[f64],
    cells: usize,
) -> Result<Vec<PredictionBand>> {
    let cfg = loess.config();
    cfg.validate(ds.len())?;
    let pool = bootstrap_pool(ds, &cfg, boot.replicates, RngSpec::new(boot.seed))?;
    gammas
        .iter()
        .map(|&g| with_area(pool.band(g)?, cells))
        .collect()
}

fn loess_band(a: &LoessBandArgs, out: &mut Outputs) -> Result<Partial> {
    check_gammas(&a.gamma)?;
    let ds = load(&a.data)?;
    let bands = loess_bands(&ds, &a.loess, &a.boot, &a.gamma, a.grid_cells)?;

    out.add_json(
        "loess_band.json",
        &json!({
            "command": "loess-band",
            "dataset": dataset_info(&ds),
            "loess": a.loess.config(),
            "bootstrap": { "B": a.boot.replicates, "seed": a.boot.seed, "rng": ALGORITHM },
            "grid_cells": a.grid_cells,
            "bands": bands.iter().map(|b| band_info(b, "bootstrap")).collect::<Vec<_>>(),
        }),
    )?;
    for b in &bands {
        out.add(
            Format::Csv,
            format!("loess_band_g{}.csv", pct(b.gamma)),
            report::band_csv(b, Some(a.boot.replicates), Some(a.boot.seed)),
        );
    }
    let mut fig = base_figure(&ds, "Loess with bootstrap prediction bands");
    push_bands(&mut fig, "bootstrap", &bands);
    fig.curves.push(("loess".into(), bands[0].grid_x.clone(), bands[0].center.clone()));
    out.add_figure("loess_band", &fig);
    Ok(Vec::new())
}

fn plrm_options(fit: &FitArgs) -> SegmentedOptions {
    SegmentedOptions {
        min_points: fit.min_seg_points,
        ..Default::default()
    }
}

fn plrm_bands(
    ds: &BivariateDataset,
    fit: &SegmentedFit,
    opts: &SegmentedOptions,
    gammas: &[f64],
    mode: BandMode,
    boot: &BootArgs,
    cells: usize,
) -> Result<Vec<(PredictionBand, PlrmBandMethod)>> {
    match mode {
        BandMode::Parametric => {
            let cfg = BandConfig::new(boot.replicates, gammas[0], boot.seed);
            gammas
                .iter()
                .map(|&g| {
                    let (b, m) = plrm_band_with_fallback(fit, ds, g, opts, &cfg)?;
                    Ok((with_area(b, cells)?, m))
                })
                .collect()
        }
        BandMode::Bootstrap => {
            let pool = bootstrap_pool(
                ds,
                &SegmentedFitter { options: *opts },
                boot.replicates,
                RngSpec::new(boot.seed),
            )?;
            gammas
                .iter()
                .map(|&g| Ok((with_area(pool.band(g)?, cells)?, PlrmBandMethod::Bootstrap)))
                .collect()
        }
    }
}

fn method_name(m: PlrmBandMethod) -> &'static str {
    match m {
        PlrmBandMethod::Parametric => "parametric",
        PlrmBandMethod::Bootstrap => "bootstrap",
        PlrmBandMethod::BootstrapFallback => "bootstrap-fallback",
    }
}

fn plrm(a: &PlrmArgs, out: &mut Outputs) -> Result<Partial> {
    check_gammas(&a.gamma)?;
    let ds = load(&a.data)?;
    let opts = plrm_options(&a.fit);
    let fit = fit_segmented(&ds, None, &opts)?;
    let bands = plrm_bands(&ds, &fit, &opts, &a.gamma, a.band_mode, &a.boot, a.fit.grid_cells)?;

    let ci95 = fit.breakpoint_intervals(0.95);
    let mut levels = vec![0.95];
    levels.extend(a.gamma.iter().copied().filter(|&g| g != 0.95));
    let intervals: Vec<_> = levels
        .iter()
        .map(|&l| {
            let iv = fit.breakpoint_intervals(l);
            json!({
                "level": l,
                "alpha1": { "lower": iv[0].0, "upper": iv[0].1, "width": iv[0].1 - iv[0].0 },
                "alpha2": { "lower": iv[1].0, "upper": iv[1].1, "width": iv[1].1 - iv[1].0 },
            })
        })
        .collect();
    let uses_boot = bands.iter().any(|(_, m)| *m != PlrmBandMethod::Parametric);
    out.add_json(
        "plrm_fit.json",
        &json!({
            "command": "plrm",
            "dataset": dataset_info(&ds),
            "fit": fit,
            "slopes": fit.model.slopes(),
            "breakpoint_intervals": intervals,
            "bands": bands.iter().map(|(b, m)| band_info(b, method_name(*m))).collect::<Vec<_>>(),
            "bootstrap": if uses_boot { Some(json!({ "B": a.boot.replicates, "seed": a.boot.seed, "rng": ALGORITHM })) } else { None },
            "grid_cells": a.fit.grid_cells,
        }),
    )?;
    out.add(Format::Csv, "plrm_params.csv", report::params_csv(&fit.rows));
    for (b, m) in &bands {
        let (reps, seed) = if *m == PlrmBandMethod::Parametric {
            (None, None)
        } else {
            (Some(a.boot.replicates), Some(a.boot.seed))
        };
        out.add(
            Format::Csv,
            format!("plrm_band_g{}.csv", pct(b.gamma)),
            report::band_csv(b, reps, seed),
        );
    }
    let mut fig = base_figure(&ds, "Piecewise linear regression with prediction bands");
    let plain: Vec<PredictionBand> = bands.iter().map(|(b, _)| b.clone()).collect();
    push_bands(&mut fig, "prediction", &plain);
    let (cx, cy) = model_curve(&fit.model, &ds);
    fig.curves.push(("plrm".into(), cx, cy));
    fig.x_intervals.push(("alpha1 95% CI".into(), ci95[0].0, ci95[0].1));
    fig.x_intervals.push(("alpha2 95% CI".into(), ci95[1].0, ci95[1].1));
    out.add_figure("plrm", &fig);
    Ok(Vec::new())
}

struct PqrmRun {
    taus: Vec<f64>,
    fits: Vec<Result<QuantileSegmentedFit>>,
    table: crate::quantile::QuantileBreakpointTable,
    band: Option<(PredictionBand, [QuantileSegmentedFit; 3])>,
    failed: Partial,
}

fn run_pqrm(ds: &BivariateDataset, taus: &[f64], gamma: f64, fit: &FitArgs) -> Result<PqrmRun> {
    check_tau_grid(taus)?;
    check_gammas(&[gamma])?;
    let qopts = QuantileOptions {
        min_points: fit.min_seg_points,
        ..Default::default()
    };
    // the least-squares fit orders the quantile search
    let init = fit_segmented(ds, None, &plrm_options(fit)).ok().map(|f| f.model);
    let fits = fit_tau_grid(ds, taus, init.as_ref(), &qopts);
    if fits.iter().all(|f| f.is_err()) {
        let e = fits.into_iter().find_map(|f| f.err()).expect("non-empty grid");
        return Err(e);
    }
    let table = quantile_breakpoint_intervals(taus, &fits)?;
    let mut failed: Partial = taus
        .iter()
        .zip(&fits)
        .filter_map(|(&t, f)| f.as_ref().err().map(|e| (t, e.to_string())))
        .collect();

    let (tlo, thi) = band_taus(gamma);
    let get = |tau: f64| -> Result<QuantileSegmentedFit> {
        match taus.iter().position(|&t| (t - tau).abs() < 1e-12) {
            Some(i) => match &fits[i] {
                Ok(f) => Ok(f.clone()),
                Err(e) => Err(Error::InvalidArgument(e.to_string())),
            },
            None => fit_segmented_quantile(ds, tau, init.as_ref(), &qopts),
        }
    };
    let band = match (get(tlo), get(0.5), get(thi)) {
        (Ok(lo), Ok(mid), Ok(hi)) => {
            let b = with_area(pqrm_prediction_band(&lo, &mid, &hi, ds.xs())?, fit.grid_cells)?;
            Some((b, [lo, mid, hi]))
        }
        (lo, mid, hi) => {
            for (t, r) in [(tlo, lo), (0.5, mid), (thi, hi)] {
                if let Err(e) = r {
                    if !failed.iter().any(|(ft, _)| *ft == t) {
                        failed.push((t, format!("band quantile: {e}")));
                    }
                }
            }
            None
        }
    };
    Ok(PqrmRun {
        taus: taus.to_vec(),
        fits,
        table,
        band,
        failed,
    })
}

fn pqrm_json(ds: &BivariateDataset, r: &PqrmRun, gamma: f64) -> serde_json::Value {
    let rows: Vec<_> = r
        .taus
        .iter()
        .zip(&r.fits)
        .map(|(&tau, f)| match f {
            Ok(f) => json!({
                "tau": tau,
                "model": f.model,
                "slopes": f.model.slopes(),
                "objective": f.objective,
                "status": f.status,
                "residual_signs": residual_signs(ds, f),
            }),
            Err(e) => json!({ "tau": tau, "error": e.to_string(), "kind": e.kind() }),
        })
        .collect();
    json!({
        "command": "pqrm",
        "dataset": dataset_info(ds),
        "fits": rows,
        "intervals": r.table,
        "band": r.band.as_ref().map(|(b, f)| json!({
            "gamma": gamma,
            "taus": [f[0].tau, f[1].tau, f[2].tau],
            "area": b.area,
            "crossings": b.crossings.len(),
        })),
    })
}

fn residual_signs(ds: &BivariateDataset, f: &QuantileSegmentedFit) -> serde_json::Value {
    let r = f.residuals(ds.xs(), ds.ys());
    let scale = ds.ys().iter().fold(0.0_f64, |m, y| m.max(y.abs()));
    let (neg, nonpos) = crate::quantile::sign_counts(&r, scale);
    json!({ "negative": neg, "non_positive": nonpos, "n_tau": ds.len() as f64 * f.tau })
}

fn pqrm_figure(ds: &BivariateDataset, r: &PqrmRun, title: &str) -> Figure {
    let mut fig = base_figure(ds, title);
    if let Some((b, f)) = &r.band {
        push_bands(&mut fig, "quantile", std::slice::from_ref(b));
        for q in f {
            let (cx, cy) = model_curve(&q.model, ds);
            fig.curves.push((format!("tau {}", q.tau), cx, cy));
        }
    }
    if let (Some(a1), Some(a2)) = (&r.table.alpha1, &r.table.alpha2) {
        fig.x_intervals.push(("alpha1 tau range".into(), a1.lower, a1.upper));
        fig.x_intervals.push(("alpha2 tau range".into(), a2.lower, a2.upper));
    }
    fig
}

fn pqrm(a: &PqrmArgs, out: &mut Outputs) -> Result<Partial> {
    let ds = load(&a.data)?;
    let r = run_pqrm(&ds, &a.tau_grid, a.gamma, &a.fit)?;
    out.add_json("pqrm_fit.json", &pqrm_json(&ds, &r, a.gamma))?;
    out.add(Format::Csv, "pqrm_table.csv", report::quantile_table_csv(&r.table));
    if let Some((b, _)) = &r.band {
        out.add(
            Format::Csv,
            format!("pqrm_band_g{}.csv", pct(b.gamma)),
            report::band_csv(b, None, None),
        );
    }
    out.add_figure("pqrm", &pqrm_figure(&ds, &r, "Piecewise linear quantile regression"));
    Ok(r.failed)
}

fn compare(a: &CompareArgs, out: &mut Outputs) -> Result<Partial> {
    check_gammas(&[a.gamma])?;
    let ds = load(&a.data)?;
    let cells = a.fit.grid_cells;

    let bl = loess_bands(&ds, &a.loess, &a.boot, &[a.gamma], cells)?.remove(0);
    let opts = plrm_options(&a.fit);
    let fit = fit_segmented(&ds, None, &opts)?;
    let (pl, pl_method) = plrm_bands(&ds, &fit, &opts, &[a.gamma], BandMode::Parametric, &a.boot, cells)?
        .remove(0);
    let q = run_pqrm(&ds, &a.tau_grid, a.gamma, &a.fit)?;
    let Some((pq, _)) = q.band.clone() else {
        return Err(Error::InvalidArgument(format!(
            "quantile band unavailable: {}",
            q.failed.iter().map(|f| f.1.clone()).collect::<Vec<_>>().join("; ")
        )));
    };

    let ci = fit.breakpoint_intervals(a.gamma);
    let mut intervals = vec![MethodIntervals {
        method: "PLRM".into(),
        coverage: coverage_label(0.5 - a.gamma / 2.0, 0.5 + a.gamma / 2.0),
        alpha1: ci[0],
        alpha2: ci[1],
    }];
    if let (Some(a1), Some(a2)) = (&q.table.alpha1, &q.table.alpha2) {
        intervals.push(MethodIntervals {
            method: "PQRM".into(),
            coverage: q.table.coverage_label.clone(),
            alpha1: (a1.lower, a1.upper),
            alpha2: (a2.lower, a2.upper),
        });
    }
    let bands = vec![
        ("BL".to_string(), bl.clone()),
        ("PLRM".to_string(), pl.clone()),
        ("PQRM".to_string(), pq.clone()),
    ];
    let cmp = compare_methods(&bands, &intervals, &AreaConfig { grid_cells: cells })?;

    out.add_json(
        "compare.json",
        &json!({
            "command": "compare",
            "dataset": dataset_info(&ds),
            "gamma": a.gamma,
            "comparison": cmp,
            "methods": {
                "BL": { "loess": a.loess.config(), "B": a.boot.replicates, "seed": a.boot.seed, "rng": ALGORITHM },
                "PLRM": { "model": fit.model, "band": method_name(pl_method), "rows": fit.rows },
                "PQRM": { "taus": a.tau_grid, "intervals": q.table },
            },
        }),
    )?;
    out.add(Format::Csv, "compare_widths.csv", report::widths_csv(&cmp));
    out.add(Format::Csv, "compare_areas.csv", report::areas_csv(&cmp));
    out.add(Format::Csv, "compare_ratios.csv", report::ratios_csv(&cmp));
    let g = pct(a.gamma);
    out.add(
        Format::Csv,
        format!("compare_bl_band_g{g}.csv"),
        report::band_csv(&bl, Some(a.boot.replicates), Some(a.boot.seed)),
    );
    out.add(
        Format::Csv,
        format!("compare_plrm_band_g{g}.csv"),
        report::band_csv(&pl, None, None),
    );
    out.add(
        Format::Csv,
        format!("compare_pqrm_band_g{g}.csv"),
        report::band_csv(&pq, None, None),
    );
    out.add(Format::Csv, "compare_pqrm_table.csv", report::quantile_table_csv(&q.table));

    let mut f_bl = base_figure(&ds, "Loess with bootstrap prediction band");
    push_bands(&mut f_bl, "bootstrap", std::slice::from_ref(&bl));
    f_bl.curves.push(("loess".into(), bl.grid_x.clone(), bl.center.clone()));
    out.add_figure("compare_bl", &f_bl);

    let mut f_pl = base_figure(&ds, "Piecewise linear regression");
    push_bands(&mut f_pl, "prediction", std::slice::from_ref(&pl));
    let (cx, cy) = model_curve(&fit.model, &ds);
    f_pl.curves.push(("plrm".into(), cx, cy));
    f_pl.x_intervals.push((format!("alpha1 {g}% CI"), ci[0].0, ci[0].1));
    f_pl.x_intervals.push((format!("alpha2 {g}% CI"), ci[1].0, ci[1].1));
    out.add_figure("compare_plrm", &f_pl);
    out.add_figure("compare_pqrm", &pqrm_figure(&ds, &q, "Piecewise linear quantile regression"));
    Ok(q.failed)
}

fn synth(a: &SynthArgs) -> Result<()> {
    let pick = |v: &[f64], k: usize, what: &str| -> Result<Vec<f64>> {
        if v.len() != k {
            return Err(Error::InvalidArgument(format!("--{what} takes {k} comma-separated values")));
        }
        Ok(v.to_vec())
    };
    let beta = pick(&a.beta, 4, "beta")?;
    let alpha = pick(&a.alpha, 2, "alpha")?;
    let range = pick(&a.x_range, 2, "x-range")?;
    let noise = match &a.wedge {
        Some(w) => {
            let w = pick(w, 2, "wedge")?;
            Noise::Wedge { sigma0: w[0], c: w[1] }
        }
        None => Noise::Gaussian { sigma: a.sigma },
    };
    let (lo, hi) = (range[0], range[1]);
    let spec = SyntheticSpec {
        model: SegmentedModel::new([beta[0], beta[1], beta[2], beta[3]], [alpha[0], alpha[1]]),
        n: a.n,
        design: match a.design {
            DesignKind::Uniform => XDesign::Uniform { lo, hi },
            DesignKind::Equispaced => XDesign::Equispaced { lo, hi },
        },
        noise,
        rng: RngSpec::new(a.seed),
    };
    let ds = generate(&spec)?;
    match &a.out {
        Some(path) => {
            let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
            ds.write_csv(std::io::BufWriter::new(f))
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            ds.write_csv(&mut lock)?;
            lock.flush().map_err(|e| Error::io("<stdout>", e))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantile::default_tau_grid;

    #[test]
    fn tau_grid_validation() {
        assert!(check_tau_grid(&default_tau_grid()).is_ok());
        assert!(check_tau_grid(&[0.5]).is_err());
        assert!(check_tau_grid(&[0.5, 0.5]).is_err());
        assert!(check_tau_grid(&[0.0, 0.5]).is_err());
        assert!(check_tau_grid(&[0.9, 0.5]).is_err());
    }

    #[test]
    fn default_flags() {
        let cli = Cli::try_parse_from(["breakline", "pqrm", "--input", "d.csv"]).unwrap();
        let Command::Pqrm(a) = cli.command else {
            panic!("wrong subcommand")
        };
        assert_eq!(a.tau_grid, default_tau_grid());
        assert_eq!(a.gamma, 0.8);
        assert_eq!(a.output.format, vec![Format::Json, Format::Csv, Format::Svg]);

        let cli = Cli::try_parse_from(["breakline", "plrm", "--input", "d.csv"]).unwrap();
        let Command::Plrm(a) = cli.command else {
            panic!("wrong subcommand")
        };
        assert_eq!(a.gamma, vec![0.8, 0.95]);
        assert_eq!(a.band_mode, BandMode::Parametric);
    }

    #[test]
    fn transforms_parse_from_flags() {
        let cli = Cli::try_parse_from([
            "breakline",
            "loess-band",
            "--input",
            "d.csv",
            "--x-transform",
            "affine:0.341774,0.196037",
            "--y-transform",
            "log10",
        ])
        .unwrap();
        let Command::LoessBand(a) = cli.command else {
            panic!("wrong subcommand")
        };
        assert_eq!(a.data.x_transform, Transform::Affine { a: 0.341774, b: 0.196037 });
        assert_eq!(a.data.y_transform, Transform::Log10);
        assert_eq!(a.boot.replicates, DEFAULT_REPLICATES);
    }
}
