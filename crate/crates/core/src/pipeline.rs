//! Reproducible experiment runs behind the `qdent` binary.
//!
//! Every command reads an [`ExperimentConfig`] (TOML), writes its artifacts
//! into an output directory and finishes with a `manifest.json` recording the
//! command, a SHA-256 digest of the inputs and parameters, the seed and the
//! files written. Artifacts depend only on the inputs and the seed, so a rerun
//! with the same manifest reproduces them byte for byte; the manifest itself
//! differs only in `wall_time_s`.

#![allow(non_snake_case)]

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cascade::{
    fef_analytic, fit_fef_curve, g2_correct_density_matrix, g2_corrected_fef, time_averaged_density_matrix,
    CascadeParams, FefFit, FefPoint,
};
use crate::lifetime::{fit_decay, synthesize_trace, DecayFitResult, DecayTrace, FitDecayOptions, TraceSpec};
use crate::positioning::{
    locate_qds, read_image, render_image, repeatability_from_fits, write_image, write_positions_csv, ImageSpec,
    LocateOptions, Localization, RepeatabilityReport,
};
use crate::quantum::{concurrence, fully_entangled_fraction, DensityMatrixDocument, MetricReport, Metadata};
use crate::rng::domain_stream;
use crate::strain::{
    curve_minima, energy_at, extract_fss, find_null, sweep_fss, synthesize_polarization_scan, write_sweep_csv,
    DriveUnits, FieldSetting, FssEstimate, ScanSpec, StrainModel,
};
use crate::stream::{
    expected_click_rate, expected_g2_zero, g2_zero, hbt_histogram, hom_simulate, hom_upper_bound, hom_visibility,
    indistinguishability_from_hom, simulate_stream, DetectorConfig, EventStream, G2Estimate, HomSetup, Line,
    SourceConfig,
};
use crate::tomography::{monte_carlo_errors, reconstruct_mle, synthesize_counts, CountTable, MetricErrors, MleOptions};
use crate::{Error, Result};

pub const ENV_OUT_DIR: &str = "QDENT_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "qdent-out";
pub const MANIFEST_FILE: &str = "manifest.json";

const DOMAIN_FEF: u64 = 0x6665_66;
const DOMAIN_FEF_MC: u64 = 0x6665_6d63;

/// g²(0) values of the two cascade lines.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct G2Values {
    pub x: f64,
    pub xx: f64,
    /// g²(0) measured under the HOM excitation conditions, if different.
    #[serde(default)]
    pub hom: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TomographySection {
    /// Mean detected pairs per basis group (9 groups of 4 projections).
    pub pairs_per_group: f64,
    pub acquisition_time_s: f64,
}

impl Default for TomographySection {
    fn default() -> Self {
        Self { pairs_per_group: 1e5, acquisition_time_s: 1.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HbtSection {
    /// ns
    pub bin_width: f64,
    /// Histogram half range, ns.
    pub window: f64,
}

impl Default for HbtSection {
    fn default() -> Self {
        Self { bin_width: 0.05, window: 62.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifetimeSection {
    pub trace: TraceSpec,
    pub fit: FitDecayOptions,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImagingSection {
    pub image: ImageSpec,
    pub locate: LocateOptions,
    pub frames: usize,
}

impl Default for ImagingSection {
    fn default() -> Self {
        Self { image: ImageSpec::example_field(), locate: LocateOptions::default(), frames: 30 }
    }
}

/// All physical parameters of one emitter and its setup. Each command reads
/// only the sections it needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub cascade: Option<CascadeParams>,
    #[serde(default)]
    pub g2: Option<G2Values>,
    #[serde(default)]
    pub tomography: Option<TomographySection>,
    #[serde(default)]
    pub source: Option<SourceConfig>,
    #[serde(default)]
    pub detectors: Option<Vec<DetectorConfig>>,
    #[serde(default)]
    pub hbt: Option<HbtSection>,
    #[serde(default)]
    pub hom: Option<HomSetup>,
    #[serde(default)]
    pub lifetime: Option<LifetimeSection>,
    #[serde(default)]
    pub strain: Option<StrainModel>,
    #[serde(default)]
    pub scan: Option<ScanSpec>,
    #[serde(default)]
    pub imaging: Option<ImagingSection>,
}

impl ExperimentConfig {
    pub fn from_toml(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Config(e.to_string()))
    }

    fn require<'a, T>(section: &'a Option<T>, name: &str) -> Result<&'a T> {
        section.as_ref().ok_or_else(|| Error::Config(format!("config has no [{name}] section")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// SHA-256 over every input file and the canonical parameter list.
    pub config_digest: String,
    pub seed: Option<u64>,
    pub tool_version: String,
    pub parameters: serde_json::Value,
    pub inputs: Vec<String>,
    /// Relative to the output directory.
    pub outputs: Vec<String>,
    pub wall_time_s: f64,
}

/// Output directory from the flag, then the environment, then the default.
pub fn resolve_out_dir(flag: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| std::env::var_os(ENV_OUT_DIR).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |source| Error::Io { path: path.display().to_string(), source }
}

struct Run {
    command: String,
    out_dir: PathBuf,
    seed: Option<u64>,
    hasher: Sha256,
    parameters: serde_json::Map<String, serde_json::Value>,
    inputs: Vec<String>,
    outputs: Vec<String>,
    started: Instant,
}

impl Run {
    fn new(command: &str, out_dir: &Path, seed: Option<u64>) -> Result<Self> {
        fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
        Ok(Self {
            command: command.to_string(),
            out_dir: out_dir.to_path_buf(),
            seed,
            hasher: Sha256::new(),
            parameters: serde_json::Map::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            started: Instant::now(),
        })
    }

    fn read_input(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = fs::read(path).map_err(io_err(path))?;
        self.hasher.update((bytes.len() as u64).to_le_bytes());
        self.hasher.update(&bytes);
        self.inputs.push(path.display().to_string());
        Ok(bytes)
    }

    fn read_config(&mut self, path: &Path) -> Result<ExperimentConfig> {
        let bytes = self.read_input(path)?;
        let text = String::from_utf8(bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        ExperimentConfig::from_toml(&text)
    }

    fn param<T: Serialize>(&mut self, key: &str, value: T) {
        let v = serde_json::to_value(value).expect("parameter serializes");
        self.parameters.insert(key.to_string(), v);
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.outputs.push(name.to_string());
        self.out_dir.join(name)
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let p = self.path(name);
        fs::write(&p, bytes).map_err(io_err(&p))
    }

    fn write_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut s = serde_json::to_string_pretty(value).map_err(|e| Error::Data(e.to_string()))?;
        s.push('\n');
        self.write(name, s.as_bytes())
    }

    fn finish(mut self) -> Result<RunManifest> {
        if let Some(seed) = self.seed {
            self.param("seed", seed);
        }
        let params = serde_json::Value::Object(self.parameters);
        self.hasher.update(params.to_string().as_bytes());
        let manifest = RunManifest {
            command: self.command,
            config_digest: hex::encode(self.hasher.finalize()),
            seed: self.seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            parameters: params,
            inputs: self.inputs,
            outputs: self.outputs,
            wall_time_s: self.started.elapsed().as_secs_f64(),
        };
        let p = self.out_dir.join(MANIFEST_FILE);
        let s = serde_json::to_string_pretty(&manifest).map_err(|e| Error::Data(e.to_string()))?;
        fs::write(&p, s + "\n").map_err(io_err(&p))?;
        Ok(manifest)
    }
}

/// Parses `start:stop:step` (inclusive of `stop` up to rounding) or a comma
/// separated list.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let bad = |m: &str| Error::Usage(format!("grid '{spec}': {m}"));
    let spec = spec.trim();
    if spec.is_empty() {
        return Err(bad("empty"));
    }
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(&format!("'{s}' is not a number")));
    let values = if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(bad("expected start:stop:step"));
        }
        let (a, b, h) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(h > 0.0) || !a.is_finite() || !b.is_finite() {
            return Err(bad("step must be > 0"));
        }
        if b < a {
            return Err(bad("stop is below start"));
        }
        let n = ((b - a) / h + 1e-9).floor() as usize;
        (0..=n).map(|i| a + i as f64 * h).collect()
    } else {
        spec.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    if values.is_empty() || values.iter().any(|v| !v.is_finite()) {
        return Err(bad("no finite values"));
    }
    Ok(values)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FefCurveRow {
    pub s_ueV: f64,
    pub fef_analytic_raw: f64,
    pub fef_analytic_corrected: f64,
    pub fef_sim_raw: f64,
    pub fef_sim_raw_err: Option<f64>,
    pub fef_sim_corrected: f64,
    pub fef_sim_corrected_err: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FefCurveSummary {
    pub rows: Vec<FefCurveRow>,
    /// Model fits to the simulated curves (only with Monte Carlo errors).
    pub fit_raw: Option<FefFit>,
    pub fit_corrected: Option<FefFit>,
}

/// FEF against FSS: analytic and simulated-tomography curves, each raw and
/// g²-corrected. Monte Carlo error bars (and model fits to the simulated
/// points) need `runs ≥ 2`.
pub fn cmd_fef_curve(config: &Path, grid: &[f64], runs: usize, seed: u64, out: &Path) -> Result<FefCurveSummary> {
    if grid.is_empty() {
        return Err(Error::Usage("empty FSS grid".into()));
    }
    let mut run = Run::new("fef-curve", out, Some(seed))?;
    let cfg = run.read_config(config)?;
    run.param("grid", grid);
    run.param("runs", runs);
    let base = *ExperimentConfig::require(&cfg.cascade, "cascade")?;
    base.validate()?;
    let g2 = cfg.g2.unwrap_or(G2Values { x: 0.0, xx: 0.0, hom: None });
    let tomo = cfg.tomography.unwrap_or_default();
    let opts = MleOptions::default();

    let mut rows = Vec::with_capacity(grid.len());
    for (i, &s) in grid.iter().enumerate() {
        let p = base.with_s(s);
        p.validate()?;
        let raw = fef_analytic(&p);
        let rho = time_averaged_density_matrix(&p)?;
        let mut rng = domain_stream(seed, DOMAIN_FEF, i as u64);
        let counts = synthesize_counts(&rho, tomo.pairs_per_group, tomo.acquisition_time_s, &mut rng);
        let rec = reconstruct_mle(&counts, opts)?;
        let corrected_rho = g2_correct_density_matrix(&rec.rho, g2.x, g2.xx)?;
        let err = if runs >= 2 {
            Some(monte_carlo_errors(&counts, runs, seed ^ DOMAIN_FEF_MC.wrapping_add(i as u64), opts)?.fef)
        } else {
            None
        };
        rows.push(FefCurveRow {
            s_ueV: s,
            fef_analytic_raw: raw,
            fef_analytic_corrected: g2_corrected_fef(raw, g2.x, g2.xx),
            fef_sim_raw: rec.metrics.fef,
            fef_sim_raw_err: err,
            fef_sim_corrected: fully_entangled_fraction(&corrected_rho),
            // the correction is affine in ρ with slope 1/(1 − ε)
            fef_sim_corrected_err: err.map(|e| e / (1.0 - g2.x - g2.xx)),
        });
    }

    let fit = |pick: fn(&FefCurveRow) -> (f64, Option<f64>)| -> Option<FefFit> {
        let points: Vec<FefPoint> = rows
            .iter()
            .filter_map(|r| {
                let (f, e) = pick(r);
                e.map(|e| FefPoint { s: r.s_ueV, fef: f, fef_err: e })
            })
            .collect();
        if points.len() < 3 {
            return None;
        }
        fit_fef_curve(&points).ok()
    };
    let summary = FefCurveSummary {
        fit_raw: fit(|r| (r.fef_sim_raw, r.fef_sim_raw_err)),
        fit_corrected: fit(|r| (r.fef_sim_corrected, r.fef_sim_corrected_err)),
        rows,
    };

    let mut csv = csv::Writer::from_writer(Vec::new());
    for r in &summary.rows {
        csv.serialize(r).map_err(|e| Error::Data(e.to_string()))?;
    }
    let bytes = csv.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    run.write("fef_curve.csv", &bytes)?;
    run.write_json("fef_curve.json", &summary)?;
    run.finish()?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomographyReport {
    pub density_matrix: DensityMatrixDocument,
    pub metrics: MetricReport,
    pub metric_errors: Option<MetricErrors>,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
    pub total_counts: u64,
    /// Present when the config supplies g² values.
    pub g2_corrected: Option<CorrectedMetrics>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrectedMetrics {
    pub fef: f64,
    pub concurrence: f64,
}

/// MLE reconstruction of a 36-row count table with Monte Carlo error bars
/// (`runs ≥ 2`). With a config carrying `[g2]`, the g²-corrected FEF and
/// concurrence are added.
pub fn cmd_tomography(counts_csv: &Path, config: Option<&Path>, runs: usize, seed: u64, out: &Path) -> Result<TomographyReport> {
    let mut run = Run::new("tomography", out, Some(seed))?;
    let bytes = run.read_input(counts_csv)?;
    let cfg = match config {
        Some(c) => run.read_config(c)?,
        None => ExperimentConfig::default(),
    };
    run.param("runs", runs);
    let counts = CountTable::read_csv(bytes.as_slice())?;
    let opts = MleOptions::default();
    let rec = reconstruct_mle(&counts, opts)?;
    let errors = if runs >= 2 { Some(monte_carlo_errors(&counts, runs, seed, opts)?) } else { None };
    let corrected = match cfg.g2 {
        Some(g) => {
            let r = g2_correct_density_matrix(&rec.rho, g.x, g.xx)?;
            Some(CorrectedMetrics { fef: fully_entangled_fraction(&r), concurrence: concurrence(&r) })
        }
        None => None,
    };
    let meta = Metadata {
        source: "qdent tomography".into(),
        timestamp: None,
        provenance: vec![format!("counts: {}", counts_csv.display())],
    };
    let report = TomographyReport {
        density_matrix: DensityMatrixDocument::new(&rec.rho, meta),
        metrics: rec.metrics,
        metric_errors: errors,
        loglik: rec.loglik,
        iterations: rec.iterations,
        converged: rec.converged,
        total_counts: counts.total_counts(),
        g2_corrected: corrected,
    };
    run.write_json("tomography.json", &report)?;
    run.finish()?;
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum StreamFormat {
    Binary,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSummary {
    pub channel: u8,
    pub clicks: usize,
    pub rate_hz: f64,
    pub expected_rate_hz: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamSummary {
    pub duration_s: f64,
    pub events: usize,
    pub channels: Vec<ChannelSummary>,
}

fn source_and_detectors(cfg: &ExperimentConfig) -> Result<(SourceConfig, Vec<DetectorConfig>)> {
    let source = ExperimentConfig::require(&cfg.source, "source")?.clone();
    let dets = ExperimentConfig::require(&cfg.detectors, "detectors")?.clone();
    Ok((source, dets))
}

fn check_duration(duration_s: f64) -> Result<()> {
    if !(duration_s > 0.0 && duration_s.is_finite()) {
        return Err(Error::Usage(format!("duration must be > 0 s, got {duration_s}")));
    }
    Ok(())
}

/// Simulated detector clicks for the configured source and detectors.
pub fn cmd_stream(config: &Path, duration_s: f64, seed: u64, format: StreamFormat, out: &Path) -> Result<StreamSummary> {
    check_duration(duration_s)?;
    let mut run = Run::new("stream", out, Some(seed))?;
    let cfg = run.read_config(config)?;
    run.param("duration_s", duration_s);
    run.param("format", format);
    let (source, dets) = source_and_detectors(&cfg)?;
    let stream = simulate_stream(&source, &dets, duration_s, seed)?;
    let channels = (0..dets.len())
        .map(|ch| {
            let n = stream.count(ch as u8);
            ChannelSummary {
                channel: ch as u8,
                clicks: n,
                rate_hz: n as f64 / duration_s,
                expected_rate_hz: expected_click_rate(&source, &dets, ch),
            }
        })
        .collect();
    let summary = StreamSummary { duration_s, events: stream.events.len(), channels };
    match format {
        StreamFormat::Binary => {
            let mut buf = Vec::new();
            stream.write_binary(&mut buf).map_err(|e| Error::Data(e.to_string()))?;
            run.write("stream.qdts", &buf)?;
        }
        StreamFormat::Csv => {
            let mut buf = Vec::new();
            stream.write_csv(&mut buf)?;
            run.write("stream.csv", &buf)?;
        }
    }
    run.write_json("stream_summary.json", &summary)?;
    run.finish()?;
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HbtReport {
    pub estimate: G2Estimate,
    /// Generator expectation; absent when the clicks were read from a file.
    pub expected_g2: Option<f64>,
    pub clicks: [usize; 2],
}

/// HBT histogram and g²(0) between channels 0 and 1, either on a simulated
/// stream (`duration_s`) or on a recorded binary stream file.
pub fn cmd_hbt(config: &Path, stream_file: Option<&Path>, duration_s: f64, seed: u64, out: &Path) -> Result<HbtReport> {
    let mut run = Run::new("hbt", out, Some(seed))?;
    let cfg = run.read_config(config)?;
    let hbt = cfg.hbt.unwrap_or_default();
    let (stream, expected) = match stream_file {
        Some(p) => {
            let bytes = run.read_input(p)?;
            (EventStream::read_binary(bytes.as_slice())?, None)
        }
        None => {
            check_duration(duration_s)?;
            run.param("duration_s", duration_s);
            let (source, dets) = source_and_detectors(&cfg)?;
            if dets.len() < 2 || dets[0].line != dets[1].line {
                return Err(Error::Config("HBT needs detectors 0 and 1 on the same line".into()));
            }
            (simulate_stream(&source, &dets, duration_s, seed)?, Some(source))
        }
    };
    let hist = hbt_histogram(&stream, hbt.bin_width, hbt.window)?;
    let estimate = g2_zero(&hist, stream.rep_period_ns)?;
    let report = HbtReport {
        expected_g2: expected.map(|s| expected_g2_zero(&s, estimate.side_peaks_per_side)),
        estimate,
        clicks: [stream.count(0), stream.count(1)],
    };
    let mut buf = Vec::new();
    hist.write_csv(&mut buf)?;
    run.write("hbt_histogram.csv", &buf)?;
    run.write_json("hbt.json", &report)?;
    run.finish()?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomReport {
    pub visibility: f64,
    pub visibility_err: f64,
    /// `2RT M V_s² / (R² + T²)` for the configured setup, without multiphoton
    /// events.
    pub ideal_visibility: f64,
    pub g2_used: f64,
    pub indistinguishability: f64,
    /// Lifetime-limited bound from the source's lifetimes.
    pub upper_bound: f64,
}

/// Co- and cross-polarized HOM histograms for photons of one line (XX),
/// visibility fit and inversion to the indistinguishability.
pub fn cmd_hom(config: &Path, duration_s: f64, seed: u64, out: &Path) -> Result<HomReport> {
    check_duration(duration_s)?;
    let mut run = Run::new("hom", out, Some(seed))?;
    let cfg = run.read_config(config)?;
    run.param("duration_s", duration_s);
    let mut source = ExperimentConfig::require(&cfg.source, "source")?.clone();
    let setup = ExperimentConfig::require(&cfg.hom, "hom")?.clone();
    if source.pulse_pair_delay.is_none() {
        source.pulse_pair_delay = Some(setup.delay);
    }
    // the interferometer input is ideal; losses and jitter sit at its outputs
    let input = vec![DetectorConfig { jitter_fwhm: 0.0, efficiency: 1.0, line: Line::XX, ..Default::default() }];
    let stream = simulate_stream(&source, &input, duration_s, seed)?;
    let co = hom_simulate(&stream, &HomSetup { copolarized: true, ..setup.clone() }, seed ^ 1)?;
    let cross = hom_simulate(&stream, &HomSetup { copolarized: false, ..setup.clone() }, seed ^ 2)?;
    let v = hom_visibility(&co, &cross, setup.delay, stream.rep_period_ns)?;
    let g2 = cfg.g2.map(|g| g.hom.unwrap_or(g.xx)).unwrap_or(0.0);
    let report = HomReport {
        visibility: v.v,
        visibility_err: v.v_err,
        ideal_visibility: setup.ideal_visibility(),
        g2_used: g2,
        indistinguishability: indistinguishability_from_hom(v.v, g2, setup.bs_reflectivity, setup.interferometer_visibility)?,
        upper_bound: hom_upper_bound(source.tau_x, source.tau_xx)?,
    };
    for (name, h) in [("hom_co.csv", &co), ("hom_cross.csv", &cross)] {
        let mut buf = Vec::new();
        h.write_csv(&mut buf)?;
        run.write(name, &buf)?;
    }
    run.write_json("hom.json", &report)?;
    run.finish()?;
    Ok(report)
}

/// Lifetime fit of a synthesized trace (from `[lifetime]`) or of a trace CSV.
pub fn cmd_lifetime(config: &Path, trace_csv: Option<&Path>, seed: u64, out: &Path) -> Result<DecayFitResult> {
    let mut run = Run::new("lifetime", out, Some(seed))?;
    let cfg = run.read_config(config)?;
    let section = ExperimentConfig::require(&cfg.lifetime, "lifetime")?.clone();
    let trace = match trace_csv {
        Some(p) => {
            let bytes = run.read_input(p)?;
            DecayTrace::read_csv(bytes.as_slice(), section.trace.irf_fwhm)?
        }
        None => {
            let t = synthesize_trace(&section.trace, seed)?;
            let mut buf = Vec::new();
            t.write_csv(&mut buf)?;
            run.write("trace.csv", &buf)?;
            t
        }
    };
    let fit = fit_decay(&trace, &section.fit)?;
    run.write_json("lifetime.json", &fit)?;
    run.finish()?;
    Ok(fit)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullReport {
    pub field: FieldSetting,
    pub condition_number: f64,
    pub within_limits: bool,
    /// Exciton energy at the null, eV.
    pub energy_eV: f64,
}

pub fn cmd_strain_null(config: &Path, out: &Path) -> Result<NullReport> {
    let mut run = Run::new("strain find-null", out, None)?;
    let cfg = run.read_config(config)?;
    let model = ExperimentConfig::require(&cfg.strain, "strain")?;
    model.validate()?;
    let field = find_null(model)?;
    let report = NullReport {
        field,
        condition_number: model.condition_number(),
        within_limits: model.within_limits(&field),
        energy_eV: energy_at(model, &field, DriveUnits::Fields),
    };
    run.write_json("null.json", &report)?;
    run.finish()?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveMinimum {
    pub e14_kV_cm: f64,
    pub e25_kV_cm: f64,
    pub s_ueV: f64,
}

/// FSS map over an `e14 × e25` grid plus the minimum of each fixed-e14 curve.
pub fn cmd_strain_sweep(config: &Path, e14: &[f64], e25: &[f64], out: &Path) -> Result<Vec<CurveMinimum>> {
    let mut run = Run::new("strain sweep", out, None)?;
    let cfg = run.read_config(config)?;
    run.param("e14", e14);
    run.param("e25", e25);
    let model = ExperimentConfig::require(&cfg.strain, "strain")?;
    model.validate()?;
    let rows = sweep_fss(model, e14, e25)?;
    let minima = curve_minima(&rows, e25.len())
        .iter()
        .enumerate()
        .flat_map(|(c, idx)| {
            let rows = &rows;
            idx.iter().map(move |&k| {
                let r = rows[c * e25.len() + k];
                CurveMinimum { e14_kV_cm: r.e14, e25_kV_cm: r.e25, s_ueV: r.s }
            })
        })
        .collect::<Vec<_>>();
    let mut buf = Vec::new();
    write_sweep_csv(&rows, &mut buf)?;
    run.write("sweep.csv", &buf)?;
    run.write_json("sweep_minima.json", &minima)?;
    run.finish()?;
    Ok(minima)
}

/// Synthetic polarization scan (from `[scan]`) and its sinusoid fit.
pub fn cmd_strain_scan(config: &Path, seed: u64, out: &Path) -> Result<FssEstimate> {
    let mut run = Run::new("strain scan", out, Some(seed))?;
    let cfg = run.read_config(config)?;
    let spec = ExperimentConfig::require(&cfg.scan, "scan")?;
    let scan = synthesize_polarization_scan(spec, seed)?;
    let est = extract_fss(&scan)?;
    let mut csv = csv::Writer::from_writer(Vec::new());
    csv.write_record(["hwp_angle_rad", "energy_difference_ueV"]).map_err(|e| Error::Data(e.to_string()))?;
    for (a, d) in scan.hwp_angle_rad.iter().zip(&scan.energy_difference_ueV) {
        csv.write_record([a.to_string(), d.to_string()]).map_err(|e| Error::Data(e.to_string()))?;
    }
    let bytes = csv.into_inner().map_err(|e| Error::Data(e.to_string()))?;
    run.write("scan.csv", &bytes)?;
    run.write_json("fss.json", &est)?;
    run.finish()?;
    Ok(est)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LocateReport {
    pub frames: usize,
    pub single_frame: Localization,
    pub repeatability: Option<RepeatabilityReport>,
    pub fraction_below_15nm: Option<f64>,
}

/// Spot localization. With `image` set, one recorded frame (PGM plus JSON
/// sidecar) is analysed; otherwise `frames` frames are rendered from
/// `[imaging]` and the per-spot repeatability is reported.
pub fn cmd_locate(config: &Path, image: Option<(&Path, &Path)>, seed: u64, out: &Path) -> Result<LocateReport> {
    let mut run = Run::new("locate", out, Some(seed))?;
    let cfg = run.read_config(config)?;
    let section = cfg.imaging.clone().unwrap_or_default();
    let report = match image {
        Some((pgm, sidecar)) => {
            run.read_input(pgm)?;
            run.read_input(sidecar)?;
            let img = read_image(pgm, sidecar)?;
            let loc = locate_qds(&img, &section.locate)?;
            let mut buf = Vec::new();
            write_positions_csv(&loc.position_rows(), &mut buf)?;
            run.write("positions.csv", &buf)?;
            LocateReport { frames: 1, single_frame: loc, repeatability: None, fraction_below_15nm: None }
        }
        None => {
            run.param("frames", section.frames);
            use rayon::prelude::*;
            let locs: Vec<Localization> = (0..section.frames as u64)
                .into_par_iter()
                .map(|k| {
                    let img = render_image(&section.image, seed.wrapping_add(k))?;
                    locate_qds(&img, &section.locate)
                })
                .collect::<std::result::Result<_, _>>()?;
            let first = render_image(&section.image, seed)?;
            let (pgm, json) = (run.path("frame_000.pgm"), run.path("frame_000.json"));
            write_image(&first, &pgm, &json)?;
            let rep = repeatability_from_fits(&locs, 3.0 * section.locate.spot_sigma_nm)?;
            let mut buf = Vec::new();
            write_positions_csv(&rep.position_rows(), &mut buf)?;
            run.write("positions.csv", &buf)?;
            LocateReport {
                frames: section.frames,
                fraction_below_15nm: Some(rep.fraction_below(15.0)),
                single_frame: locs.into_iter().next().expect("at least two frames"),
                repeatability: Some(rep),
            }
        }
    };
    run.write_json("positioning.json", &report)?;
    run.finish()?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grids() {
        assert_eq!(parse_grid("0:1:0.25").unwrap(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(parse_grid("1, 2.5,4").unwrap(), vec![1.0, 2.5, 4.0]);
        for bad in ["", "1:0:1", "0:1:0", "a,b", "0:1"] {
            assert!(matches!(parse_grid(bad), Err(Error::Usage(_))), "{bad}");
        }
    }

    #[test]
    fn config_sections_are_optional_but_strict() {
        let c = ExperimentConfig::from_toml("name = \"x\"\n[cascade]\ns_ueV = 0.0\ntau_x_ns = 0.05\ntau_xx_ns = 0.02\nk = 0.9\n").unwrap();
        assert!(c.cascade.is_some() && c.source.is_none());
        assert!(ExperimentConfig::from_toml("[cascade]\nbogus = 1\n").is_err());
        assert!(ExperimentConfig::from_toml("[nonsense]\n").is_err());
    }

    #[test]
    fn out_dir_resolution() {
        assert_eq!(resolve_out_dir(Some(Path::new("a"))), PathBuf::from("a"));
    }
}
