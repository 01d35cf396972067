//! Configuration, commands and artifact export for the `sgbound` binary.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use sgbound::hhull::{certify_inclusion, gap_metric, hhull, HHull, InclusionCertificate, Slack};
use sgbound::lmi::{grid, sweep, Strategy, SweepOptions, SweepReport};
use sgbound::partition::{build_partition, common_quadratic, ConicalPartition};
use sgbound::plot::Figure;
use sgbound::region::{RegionSG, Window};
use sgbound::reset_model::{ResetSystem, SystemFile};
use sgbound::sdp::SolverOptions;
use sgbound::simulator::{
    read_samples_csv, run_inputs, simulate, write_samples_csv, write_trajectory_csv, BatterySpec,
    SgSample, SimOptions,
};
use sgbound::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_ZENO: i32 = 4;

#[derive(Debug, Clone, Serialize)]
pub struct CliError {
    pub exit_code: i32,
    pub kind: String,
    pub message: String,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            exit_code: EXIT_CONFIG,
            kind: "config".into(),
            message: message.into(),
        }
    }

    fn solver(message: impl Into<String>) -> Self {
        Self {
            exit_code: EXIT_SOLVER,
            kind: "solver".into(),
            message: message.into(),
        }
    }

    fn context(self, what: &str) -> Self {
        Self {
            message: format!("{what}: {}", self.message),
            ..self
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} error: {}", self.kind, self.message)
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let (exit_code, kind) = match &e {
            Error::ZenoDetected { .. } => (EXIT_ZENO, "zeno"),
            Error::Solver(_)
            | Error::AllFailed(_)
            | Error::StepFailure { .. }
            | Error::TailNotSettled(_) => (EXIT_SOLVER, "solver"),
            _ => (EXIT_CONFIG, "config"),
        };
        Self {
            exit_code,
            kind: kind.into(),
            message: e.to_string(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::config(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Centers `start + step·k`, k = 0..count.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub start: f64,
    pub step: f64,
    pub count: usize,
}

impl GridSpec {
    pub fn centers(&self) -> Vec<f64> {
        grid(self.start, self.step, self.count)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SystemSource {
    Path(PathBuf),
    Inline(SystemFile),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlotSpec {
    /// [re_min, re_max, im_min, im_max]
    pub window: [f64; 4],
    pub res: usize,
    pub width_px: f64,
}

impl Default for PlotSpec {
    fn default() -> Self {
        Self {
            window: [-0.5, 1.5, -1.0, 1.0],
            res: 401,
            width_px: 600.0,
        }
    }
}

impl PlotSpec {
    pub fn window(&self) -> CliResult<Window> {
        let [a, b, c, d] = self.window;
        Window::new(a, b, c, d).map_err(|e| CliError::config(format!("plot window: {e}")))
    }
}

fn default_cells() -> usize {
    8
}

fn default_strategy() -> Strategy {
    Strategy::Direct
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: SystemSource,
    /// Partition size N (N ≥ 4 with N − 2 even), or 1 for the common quadratic baseline.
    #[serde(default = "default_cells")]
    pub partition_cells: usize,
    pub interior: GridSpec,
    pub exterior: GridSpec,
    #[serde(default)]
    pub solver: SolverOptions,
    #[serde(default = "default_strategy")]
    pub strategy: Strategy,
    #[serde(default)]
    pub hard_sg: bool,
    #[serde(default)]
    pub baseline: bool,
    #[serde(default)]
    pub prune_pairs: bool,
    #[serde(default)]
    pub battery: BatterySpec,
    #[serde(default)]
    pub simulation: SimOptions,
    #[serde(default)]
    pub slack: Slack,
    #[serde(default)]
    pub plot: PlotSpec,
    /// Output directory, relative to the config file.
    #[serde(default)]
    pub out: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| CliError::config(format!("config: {e}")))
    }

    pub fn validate(&self) -> CliResult<()> {
        let n = self.partition_cells;
        if n != 1 && (n < 4 || !n.is_multiple_of(2)) {
            return Err(CliError::config(format!(
                "partition_cells must be 1 or an even number ≥ 4, got {n}"
            )));
        }
        for (name, g) in [("interior", &self.interior), ("exterior", &self.exterior)] {
            if !g.start.is_finite() || !g.step.is_finite() {
                return Err(CliError::config(format!("{name} grid must be finite")));
            }
        }
        if self.interior.count + self.exterior.count == 0 {
            return Err(CliError::config("both center grids are empty"));
        }
        self.plot.window()?;
        Ok(())
    }
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub out: Option<PathBuf>,
    pub baseline: bool,
    pub hard_sg: bool,
    pub seed: Option<u64>,
}

/// A loaded, validated configuration with its system and output directory.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub system: ResetSystem,
    pub out: PathBuf,
    pub config_hash: String,
}

/// What the hash covers: everything that can change an output byte.
#[derive(Serialize)]
struct Hashed<'a> {
    system: SystemFile,
    config: &'a RunConfig,
}

impl Run {
    pub fn load(path: &Path, ov: &Overrides) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_config(RunConfig::from_toml(&text)?, base, ov)
    }

    /// Builds a run from a parsed config; relative paths resolve against `base`.
    pub fn from_config(mut config: RunConfig, base: &Path, ov: &Overrides) -> CliResult<Self> {
        config.baseline |= ov.baseline;
        config.hard_sg |= ov.hard_sg;
        if let Some(s) = ov.seed {
            config.battery.seed = s;
        }
        config.validate()?;
        let file = match &config.system {
            SystemSource::Inline(f) => f.clone(),
            SystemSource::Path(p) => {
                let p = base.join(p);
                let text = fs::read_to_string(&p)
                    .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
                serde_json::from_str(&text)
                    .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?
            }
        };
        let system =
            ResetSystem::from_file_repr(&file).map_err(|e| CliError::from(e).context("system"))?;
        let out = match (&ov.out, &config.out) {
            (Some(o), _) => o.clone(),
            (None, Some(o)) => base.join(o),
            (None, None) => PathBuf::from("out"),
        };
        let mut hashed = config.clone();
        hashed.out = None;
        hashed.system = SystemSource::Path(PathBuf::new());
        let bytes = serde_json::to_vec(&Hashed {
            system: file,
            config: &hashed,
        })
        .expect("config serializes");
        let config_hash = format!("{:x}", Sha256::digest(bytes));
        Ok(Self {
            config,
            system,
            out,
            config_hash,
        })
    }

    pub fn partition(&self) -> CliResult<ConicalPartition> {
        let m = self.system.m();
        let part = if self.config.baseline || self.config.partition_cells == 1 {
            common_quadratic(m)
        } else {
            build_partition(m, self.config.partition_cells)
        };
        part.map_err(|e| CliError::from(e).context("partition"))
    }

    fn sweep_options(&self) -> SweepOptions {
        SweepOptions {
            hard_sg: self.config.hard_sg,
            prune_pairs: self.config.prune_pairs,
            strategy: self.config.strategy,
            solver: self.config.solver,
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write(&self, name: &str, contents: &[u8]) -> CliResult<PathBuf> {
        fs::create_dir_all(&self.out)?;
        let p = self.path(name);
        fs::write(&p, contents).map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
        Ok(p)
    }

    fn write_json<T: Serialize>(&self, name: &str, value: &T) -> CliResult<PathBuf> {
        let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
        text.push('\n');
        self.write(name, text.as_bytes())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RegionFile {
    pub config_hash: String,
    pub window: Window,
    #[serde(flatten)]
    pub region: RegionSG,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportFile {
    pub config_hash: String,
    pub partition_cells: usize,
    pub baseline: bool,
    pub hard_sg: bool,
    #[serde(flatten)]
    pub report: SweepReport,
}

#[derive(Debug, Clone)]
pub struct BoundOutcome {
    pub region: RegionSG,
    pub report: SweepReport,
}

/// Sweeps all centers, writes region.json, sweep_report.json and region.svg.
pub fn cmd_bound(run: &Run) -> CliResult<BoundOutcome> {
    let part = run.partition()?;
    let s = sweep(
        &run.system,
        &part,
        &run.config.interior.centers(),
        &run.config.exterior.centers(),
        &run.sweep_options(),
    )?;
    let window = run.config.plot.window()?;
    run.write_json(
        "sweep_report.json",
        &ReportFile {
            config_hash: run.config_hash.clone(),
            partition_cells: part.len(),
            baseline: run.config.baseline || run.config.partition_cells == 1,
            hard_sg: run.config.hard_sg,
            report: s.report.clone(),
        },
    )?;
    if s.region.constraints.is_empty() {
        return Err(CliError::solver("no disc was certified"));
    }
    run.write_json(
        "region.json",
        &RegionFile {
            config_hash: run.config_hash.clone(),
            window,
            region: s.region.clone(),
        },
    )?;
    let raster = s.region.raster(&window, run.config.plot.res)?;
    let svg = Figure::new(window, run.config.plot.width_px)
        .region(&raster)
        .axes()
        .render();
    run.write(
        "region.svg",
        svg_with_hash(&svg, &run.config_hash).as_bytes(),
    )?;
    Ok(BoundOutcome {
        region: s.region,
        report: s.report,
    })
}

fn svg_with_hash(svg: &str, hash: &str) -> String {
    format!("<!-- config_hash={hash} -->\n{svg}")
}

#[derive(Debug, Clone)]
pub struct SampleOutcome {
    pub samples: Vec<SgSample>,
    pub failures: Vec<(usize, String)>,
    pub zeno: usize,
}

/// Runs the input battery and writes samples.csv.
pub fn cmd_sample(run: &Run) -> CliResult<SampleOutcome> {
    let members = run.config.battery.members(run.system.p())?;
    if members.is_empty() {
        return Err(CliError::config("battery has no members"));
    }
    let mut out = SampleOutcome {
        samples: Vec::new(),
        failures: Vec::new(),
        zeno: 0,
    };
    let mut last_err = None;
    for (k, r) in run_inputs(&run.system, &members, &run.config.simulation)
        .into_iter()
        .enumerate()
    {
        match r {
            Ok(s) => out.samples.push(s),
            Err(e) => {
                log::warn!("battery member {k}: {e}");
                if matches!(e, Error::ZenoDetected { .. }) {
                    out.zeno += 1;
                }
                out.failures.push((k, e.to_string()));
                last_err = Some(e);
            }
        }
    }
    if out.samples.is_empty() {
        let e = CliError::from(last_err.expect("members failed"));
        return Err(CliError {
            message: format!(
                "all {} battery members failed; last: {}",
                members.len(),
                e.message
            ),
            ..e
        });
    }
    let mut buf = Vec::new();
    write_samples_csv(
        &mut buf,
        &out.samples,
        &[format!("config_hash={}", run.config_hash)],
    )?;
    run.write("samples.csv", &buf)?;
    Ok(out)
}

/// Re-simulates battery member `index` with recording on; writes trajectory_<index>.csv.
pub fn cmd_dump_trajectory(run: &Run, index: usize) -> CliResult<PathBuf> {
    let members = run.config.battery.members(run.system.p())?;
    let inp = members.get(index).ok_or_else(|| {
        CliError::config(format!(
            "battery has {} members, no index {index}",
            members.len()
        ))
    })?;
    let opts = SimOptions {
        record: true,
        ..run.config.simulation
    };
    let traj = simulate(&run.system, inp, &opts)?;
    let mut buf = format!("# config_hash={}\n", run.config_hash).into_bytes();
    write_trajectory_csv(&mut buf, &traj)?;
    run.write(&format!("trajectory_{index}.csv"), &buf)
}

fn load_samples(path: &Path) -> CliResult<Vec<SgSample>> {
    let file =
        fs::File::open(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
    let samples = read_samples_csv(file)
        .map_err(|e| CliError::from(e).context(&path.display().to_string()))?;
    if samples.is_empty() {
        return Err(CliError::config(format!("{}: no samples", path.display())));
    }
    Ok(samples)
}

fn load_region(path: &Path) -> CliResult<RegionSG> {
    RegionSG::load(path).map_err(|e| CliError::from(e).context(&path.display().to_string()))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HullFile {
    pub config_hash: String,
    #[serde(flatten)]
    pub hull: HHull,
}

/// Hulls the samples; writes hull.json and hull.svg (over the region when
/// one exists in the output directory).
pub fn cmd_hull(run: &Run, samples: Option<&Path>) -> CliResult<HHull> {
    let sp = samples.map_or_else(|| run.path("samples.csv"), Path::to_path_buf);
    let samples = load_samples(&sp)?;
    let zs: Vec<Complex64> = samples.iter().map(|s| s.z).collect();
    let hull = hhull(&zs)?;
    run.write_json(
        "hull.json",
        &HullFile {
            config_hash: run.config_hash.clone(),
            hull: hull.clone(),
        },
    )?;
    let window = run.config.plot.window()?;
    let mut fig = Figure::new(window, run.config.plot.width_px);
    let rp = run.path("region.json");
    if rp.exists() {
        fig = fig.region(&load_region(&rp)?.raster(&window, run.config.plot.res)?);
    }
    let svg = fig.axes().hull(&hull).samples(&zs).render();
    run.write("hull.svg", svg_with_hash(&svg, &run.config_hash).as_bytes())?;
    Ok(hull)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedViolation {
    pub index: usize,
    pub z: Complex64,
    pub margin: f64,
    pub kind: String,
    pub params: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CertificateFile {
    pub config_hash: String,
    pub verdict: bool,
    pub region_constraints: usize,
    pub sample_count: usize,
    pub violating_samples: Vec<NamedViolation>,
    /// Region area covered by the hull; None when the region has no area in the window.
    pub gap_metric: Option<f64>,
    pub hull_vertices: Vec<Complex64>,
    pub certificate: InclusionCertificate,
}

/// Checks hull inclusion of the samples in the region; writes certificate.json.
pub fn cmd_check(
    run: &Run,
    region: Option<&Path>,
    samples: Option<&Path>,
) -> CliResult<CertificateFile> {
    let rp = region.map_or_else(|| run.path("region.json"), Path::to_path_buf);
    let sp = samples.map_or_else(|| run.path("samples.csv"), Path::to_path_buf);
    let region = load_region(&rp)?;
    let samples = load_samples(&sp)?;
    let zs: Vec<Complex64> = samples.iter().map(|s| s.z).collect();
    let cert = certify_inclusion(&zs, &region, run.config.slack);
    let hull = hhull(&zs)?;
    let window = run.config.plot.window()?;
    let gap = match gap_metric(&hull, &region, &window, run.config.plot.res) {
        Ok(g) => Some(g),
        Err(Error::ZeroArea) => None,
        Err(e) => return Err(e.into()),
    };
    let violating_samples = cert
        .violations
        .iter()
        .map(|&k| NamedViolation {
            index: k,
            z: zs[k],
            margin: cert.samples[k].margin,
            kind: samples[k].kind.clone(),
            params: samples[k].params.clone(),
        })
        .collect();
    let file = CertificateFile {
        config_hash: run.config_hash.clone(),
        verdict: cert.verdict,
        region_constraints: region.constraints.len(),
        sample_count: zs.len(),
        violating_samples,
        gap_metric: gap,
        hull_vertices: hull.vertices,
        certificate: cert,
    };
    run.write_json("certificate.json", &file)?;
    Ok(file)
}

/// Machine-readable error report, also written to the output directory when possible.
pub fn report_error(err: &CliError, out: Option<&Path>) -> String {
    let text = serde_json::to_string_pretty(err).expect("error serializes");
    if let Some(dir) = out {
        if fs::create_dir_all(dir).is_ok() {
            let _ = fs::write(dir.join("error.json"), format!("{text}\n"));
        }
    }
    text
}
