//! Experiment orchestration: a versioned JSON configuration, validation that
//! enumerates every violated invariant, deterministic execution and a
//! manifest listing every artifact with its content hash.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{run_chain, Chain, ChainConfig, Observable, Sampler, SiteMap, TiltSpec};
use crate::green::{green_solve, heat_kernel_tilted, srw_capacity, Convention, FormOptions, HeatMethod};
use crate::harness::{
    estimate_sigma, form_ladder, isomorphism_residual, naddaf_spencer_gaussian, occupation_limit_check, ContinuumModel,
    IsomorphismConfig, OccupationLimitConfig, SigmaConfig, TestFunction, Verdict,
};
use crate::lattice::{Boundary, Domain, Site};
use crate::potential::Potential;
use crate::rng;
use crate::soup::{occupation_field, GaussianSoupSampler, GeneralSoupSampler, SoupConfig, SoupSample};
use crate::stats::{iid, log_mean_exp, Estimate};
use crate::walk::{feynman_kac_weight, hs_covariance, simulate_joint, HsConfig, JointState, WalkConfig};

/// Version of the configuration schema understood by this build.
pub const SCHEMA_VERSION: u32 = 1;

fn default_schema() -> u32 {
    SCHEMA_VERSION
}

fn default_threads() -> usize {
    1
}

fn default_lambda_max() -> f64 {
    1.0
}

fn default_tolerance() -> f64 {
    0.02
}

/// Top-level run configuration. Seeds inside sub-configurations are ignored:
/// every stochastic component draws from a stream derived from `seed`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    #[serde(default = "default_schema")]
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    /// Worker threads; results do not depend on it.
    #[serde(default = "default_threads")]
    pub threads: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    pub experiment: Experiment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Experiment {
    Field(FieldExperiment),
    Walk(WalkExperiment),
    Green(GreenExperiment),
    Soup(SoupExperiment),
    Isomorphism(IsomorphismConfig),
    Scaling(ScalingExperiment),
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::Field(_) => "field",
            Experiment::Walk(_) => "walk",
            Experiment::Green(_) => "green",
            Experiment::Soup(_) => "soup",
            Experiment::Isomorphism(_) => "isomorphism",
            Experiment::Scaling(_) => "scaling",
        }
    }
}

/// Equilibrium chain with declared observables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldExperiment {
    pub domain: Domain,
    pub potential: Potential,
    #[serde(default)]
    pub tilt: TiltSpec,
    pub chain: ChainConfig,
    pub observables: Vec<Observable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "snake_case")]
pub enum WalkTask {
    /// Independent joint trajectories from `start`, each on its own field
    /// path started from one equilibrated field.
    Trajectories { start: Site, horizon: f64, count: usize },
    /// Field-side vs walk-side covariances `cov(φ_x, φ_y)`.
    Covariance { x: Site, ys: Vec<Site>, config: HsConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkExperiment {
    pub domain: Domain,
    pub potential: Potential,
    #[serde(default)]
    pub tilt: TiltSpec,
    pub chain: ChainConfig,
    #[serde(default)]
    pub frozen: bool,
    #[serde(flatten)]
    pub task: WalkTask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatTask {
    pub x: Site,
    pub y: Site,
    pub times: Vec<f64>,
    pub method: HeatMethod,
}

/// Lattice potential theory on one domain: Green columns, capacity, heat kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreenExperiment {
    pub domain: Domain,
    #[serde(default)]
    pub v: SiteMap,
    #[serde(default = "default_convention")]
    pub convention: Convention,
    #[serde(default)]
    pub columns: Vec<Site>,
    #[serde(default)]
    pub capacity: Option<Vec<Site>>,
    #[serde(default)]
    pub heat: Option<HeatTask>,
    #[serde(default)]
    pub lambda0: Option<f64>,
}

fn default_convention() -> Convention {
    Convention::Occupation
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoupExperiment {
    pub soup: SoupConfig,
    pub potential: Potential,
    pub replicas: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "check", rename_all = "snake_case")]
pub enum ScalingExperiment {
    /// `⟨f, (G_N^V)^p f⟩` along a doubling ladder vs the continuum form.
    FormLadder {
        f: TestFunction,
        #[serde(default)]
        v: Option<TestFunction>,
        ladder: Vec<usize>,
        power: u8,
        #[serde(default)]
        options: FormOptions,
        #[serde(default = "ContinuumModel::gaussian")]
        model: ContinuumModel,
        #[serde(default = "default_tolerance")]
        tolerance: f64,
        #[serde(default = "default_lambda_max")]
        lambda_max: f64,
    },
    /// Gaussian `log E e^{⟨Φ_N, W⟩}` along a ladder vs `½E_Σ(W, W)`.
    FreeEnergy {
        w: TestFunction,
        ladder: Vec<usize>,
        #[serde(default = "ContinuumModel::gaussian")]
        model: ContinuumModel,
        #[serde(default = "default_tolerance")]
        tolerance: f64,
    },
    /// Low-intensity soup MGF trend vs the continuum.
    OccupationLimit {
        #[serde(flatten)]
        config: OccupationLimitConfig,
        #[serde(default = "default_lambda_max")]
        lambda_max: f64,
    },
    /// Homogenized diffusivity from mean-squared displacements.
    Sigma(SigmaConfig),
}

/// One named validation outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Finding {
    pub check: String,
    /// Dotted path of the offending configuration entry.
    pub location: String,
    pub pass: bool,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn ok(&self) -> bool {
        self.findings.iter().all(|f| f.pass)
    }

    pub fn failures(&self) -> Vec<&Finding> {
        self.findings.iter().filter(|f| !f.pass).collect()
    }

    fn push(&mut self, check: &str, location: &str, r: Result<()>) {
        let (pass, message) = match r {
            Ok(()) => (true, "ok".to_string()),
            Err(e) => (false, e.to_string()),
        };
        self.findings.push(Finding { check: check.into(), location: location.into(), pass, message });
    }

    fn require(&mut self, check: &str, location: &str, ok: bool, message: impl Into<String>) {
        let r = if ok { Ok(()) } else { Err(Error::Config(message.into())) };
        self.push(check, location, r);
    }
}

fn check_potential(rep: &mut ValidationReport, loc: &str, p: &Potential) {
    rep.push("ellipticity", loc, p.certify().map(|_| ()));
}

fn check_field_setup(
    rep: &mut ValidationReport,
    loc: &str,
    d: &Domain,
    p: &Potential,
    tilt: &TiltSpec,
    chain: &ChainConfig,
) {
    rep.push("domain", &format!("{loc}.domain"), d.check());
    check_potential(rep, &format!("{loc}.potential"), p);
    rep.push("tilt admissibility", &format!("{loc}.tilt"), tilt.check(p.c1));
    rep.push("time-step stability", &format!("{loc}.chain.dt"), chain.check(d.dimension, p, tilt));
    rep.require(
        "heat-bath applicability",
        &format!("{loc}.chain.sampler"),
        chain.sampler != Sampler::HeatBath || p.is_quadratic(),
        "the heat-bath sampler needs the quadratic potential",
    );
}

fn check_test_function(rep: &mut ValidationReport, loc: &str, f: &TestFunction, lambda_max: f64) {
    rep.push("test-function admissibility", loc, f.check(lambda_max));
}

fn check_ladder(rep: &mut ValidationReport, loc: &str, ladder: &[usize]) {
    rep.require(
        "ladder",
        loc,
        ladder.len() >= 2 && ladder[0] > 0 && ladder.windows(2).all(|w| w[1] == 2 * w[0]),
        format!("ladder {ladder:?} must have at least two positive rungs, doubling at each step"),
    );
}

/// Check a configuration against every invariant of the modules it uses,
/// without running anything. Never short-circuits.
pub fn validate(cfg: &RunConfig) -> ValidationReport {
    let mut rep = ValidationReport { findings: vec![] };
    rep.require(
        "schema version",
        "schema_version",
        cfg.schema_version == SCHEMA_VERSION,
        format!("schema version {} is not {SCHEMA_VERSION}", cfg.schema_version),
    );
    rep.require("threads", "threads", cfg.threads >= 1, "threads must be at least 1");
    match &cfg.experiment {
        Experiment::Field(e) => {
            check_field_setup(&mut rep, "experiment", &e.domain, &e.potential, &e.tilt, &e.chain);
            rep.require("observables", "experiment.observables", !e.observables.is_empty(), "no observables declared");
            rep.require(
                "samples",
                "experiment.chain.n_samples",
                e.chain.n_samples >= 64,
                "need at least 64 samples for batch means",
            );
        }
        Experiment::Walk(e) => {
            check_field_setup(&mut rep, "experiment", &e.domain, &e.potential, &e.tilt, &e.chain);
            let inside = |s: &Site| e.domain.index(s).is_some() && e.domain.contains(s);
            match &e.task {
                WalkTask::Trajectories { start, horizon, count } => {
                    rep.require(
                        "start site",
                        "experiment.start",
                        inside(start),
                        format!("{start:?} lies outside the domain"),
                    );
                    rep.require("horizon", "experiment.horizon", *horizon >= 0.0, "horizon must be nonnegative");
                    rep.require("count", "experiment.count", *count >= 2, "need at least two trajectories");
                }
                WalkTask::Covariance { x, ys, config } => {
                    rep.require("start site", "experiment.x", inside(x), format!("{x:?} lies outside the domain"));
                    for (k, y) in ys.iter().enumerate() {
                        rep.require(
                            "target site",
                            &format!("experiment.ys[{k}]"),
                            inside(y),
                            format!("{y:?} lies outside the domain"),
                        );
                    }
                    rep.require(
                        "field chain",
                        "experiment.config.chain.sampler",
                        config.chain.sampler == Sampler::Langevin,
                        "the covariance identity needs a Langevin chain",
                    );
                    rep.push(
                        "time-step stability",
                        "experiment.config.chain.dt",
                        config.chain.check(e.domain.dimension, &e.potential, &e.tilt),
                    );
                    rep.require(
                        "launches",
                        "experiment.config.n_launches",
                        config.n_launches >= 32,
                        "need at least 32 launches",
                    );
                }
            }
        }
        Experiment::Green(e) => {
            rep.push("domain", "experiment.domain", e.domain.check());
            let tilt = TiltSpec {
                v: e.v.clone(),
                lambda0: e.lambda0.unwrap_or(crate::field::DEFAULT_LAMBDA0),
                ..TiltSpec::none()
            };
            rep.push("tilt admissibility", "experiment.v", tilt.check(1.0));
            rep.require(
                "periodic boundary",
                "experiment.domain.boundary",
                e.domain.boundary == Boundary::Dirichlet,
                "potential theory runs on Dirichlet boxes",
            );
            for (k, s) in e.columns.iter().chain(e.capacity.iter().flatten()).enumerate() {
                rep.require(
                    "site",
                    &format!("experiment.sites[{k}]"),
                    e.domain.index(s).is_some() && e.domain.contains(s),
                    format!("{s:?} lies outside the domain"),
                );
            }
            if let Some(h) = &e.heat {
                rep.require(
                    "heat times",
                    "experiment.heat.times",
                    h.times.iter().all(|&t| t >= 0.0),
                    "times must be nonnegative",
                );
            }
        }
        Experiment::Soup(e) => {
            rep.push("soup", "experiment.soup", e.soup.check());
            check_potential(&mut rep, "experiment.potential", &e.potential);
            rep.push("tilt admissibility", "experiment.soup.tilt", e.soup.tilt.check(e.potential.c1));
            if !e.potential.is_quadratic() {
                rep.push(
                    "time-step stability",
                    "experiment.soup.chain.dt",
                    e.soup.chain.check(e.soup.kill_box.dimension, &e.potential, &e.soup.tilt),
                );
            }
            rep.require("replicas", "experiment.replicas", e.replicas >= 2, "need at least two replicas");
        }
        Experiment::Isomorphism(c) => {
            let tilt = TiltSpec { h: c.v.clone(), v: c.v.clone(), ..TiltSpec::none() };
            check_field_setup(&mut rep, "experiment", &c.domain, &c.potential, &tilt, &c.chain);
            rep.require("level", "experiment.u", c.u >= 0.0 && c.u.is_finite(), "u must be finite and nonnegative");
            rep.require(
                "simpson nodes",
                "experiment.sigma_nodes",
                c.sigma_nodes >= 3 && c.sigma_nodes % 2 == 1,
                "Simpson's rule needs an odd node count of at least 3",
            );
        }
        Experiment::Scaling(s) => match s {
            ScalingExperiment::FormLadder { f, v, ladder, power, lambda_max, .. } => {
                check_test_function(&mut rep, "experiment.f", f, f64::INFINITY);
                if let Some(v) = v {
                    check_test_function(&mut rep, "experiment.v", v, *lambda_max);
                }
                check_ladder(&mut rep, "experiment.ladder", ladder);
                rep.require("power", "experiment.power", *power == 1 || *power == 2, "power must be 1 or 2");
            }
            ScalingExperiment::FreeEnergy { w, ladder, .. } => {
                check_test_function(&mut rep, "experiment.w", w, f64::INFINITY);
                check_ladder(&mut rep, "experiment.ladder", ladder);
            }
            ScalingExperiment::OccupationLimit { config, lambda_max } => {
                check_test_function(&mut rep, "experiment.v", &config.v, *lambda_max);
                rep.require("ladder", "experiment.ladder", !config.ladder.is_empty(), "empty ladder");
                rep.require("soups", "experiment.soups", config.soups >= 2, "need at least two soups");
                rep.require(
                    "box",
                    "experiment.half_side",
                    config.half_side >= 2.0 * config.v.support_radius(),
                    "the box must contain twice the support of V",
                );
            }
            ScalingExperiment::Sigma(c) => {
                rep.push("sigma", "experiment", c.check());
                check_potential(&mut rep, "experiment.potential", &c.potential);
                rep.push(
                    "time-step stability",
                    "experiment.chain.dt",
                    c.chain.check(c.dimension, &c.potential, &TiltSpec::none()),
                );
            }
        },
    }
    rep
}

/// Outcome of one named check within a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckVerdict {
    pub check: String,
    pub verdict: Verdict,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub file: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub experiment: String,
    /// SHA-256 of the canonical JSON of the resolved configuration.
    pub config_hash: String,
    pub code_version: String,
    pub seed: u64,
    pub threads: usize,
    /// Seconds since the Unix epoch.
    pub started: f64,
    pub finished: f64,
    pub verdicts: Vec<CheckVerdict>,
    pub artifacts: Vec<Artifact>,
    /// Compute error that stopped the run, if any.
    pub error: Option<String>,
}

impl RunManifest {
    /// No failed check and no compute error.
    pub fn passed(&self) -> bool {
        self.error.is_none() && self.verdicts.iter().all(|v| v.verdict != Verdict::Fail)
    }
}

/// A CSV table produced by an experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Table { name: name.into(), header: header.iter().map(|s| s.to_string()).collect(), rows: vec![] }
    }

    fn row(&mut self, cells: Vec<String>) {
        self.rows.push(cells);
    }

    fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(vec![]);
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.into_inner().map_err(|e| Error::Io(e.into_error()))
    }
}

/// Everything an experiment computes, before anything is written.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub report: Value,
    pub tables: Vec<Table>,
    pub verdicts: Vec<CheckVerdict>,
}

fn verdict(check: &str, v: Verdict, detail: impl Into<String>) -> CheckVerdict {
    CheckVerdict { check: check.into(), verdict: v, detail: detail.into() }
}

fn site_str(s: &[i64]) -> String {
    s.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// Resolve sub-configuration seeds from the master seed.
pub fn resolve(cfg: &RunConfig) -> RunConfig {
    let mut c = cfg.clone();
    let seed = c.seed;
    let sub = |label: &str| rng::derive(seed, &[rng::tag(label)]);
    match &mut c.experiment {
        Experiment::Field(e) => e.chain.seed = sub("field"),
        Experiment::Walk(e) => {
            e.chain.seed = sub("walk");
            if let WalkTask::Covariance { config, .. } = &mut e.task {
                config.chain.seed = sub("walk-covariance");
            }
        }
        Experiment::Green(e) => {
            if let Some(HeatTask { method: HeatMethod::MonteCarlo { seed: s, .. }, .. }) = &mut e.heat {
                *s = sub("green-heat");
            }
        }
        Experiment::Soup(e) => {
            e.soup.seed = sub("soup");
            e.soup.chain.seed = sub("soup-chain");
        }
        Experiment::Isomorphism(c) => {
            c.seed = sub("isomorphism");
            c.chain.seed = sub("isomorphism-chain");
        }
        Experiment::Scaling(s) => match s {
            ScalingExperiment::OccupationLimit { config, .. } => config.seed = sub("occupation-limit"),
            ScalingExperiment::Sigma(c) => c.chain.seed = sub("sigma"),
            _ => {}
        },
    }
    c
}

/// SHA-256 of the canonical JSON form of `cfg` (output directory excluded).
pub fn config_hash(cfg: &RunConfig) -> Result<String> {
    let mut c = cfg.clone();
    c.output_dir = None;
    // serde_json::Value orders object keys, so the text is canonical
    let v = serde_json::to_value(&c)?;
    Ok(hex::encode(Sha256::digest(serde_json::to_vec(&v)?)))
}

/// Execute the experiment of a resolved configuration in memory.
pub fn execute(cfg: &RunConfig) -> Result<Outcome> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match &cfg.experiment {
        Experiment::Field(e) => run_field(e),
        Experiment::Walk(e) => run_walk(e),
        Experiment::Green(e) => run_green(e),
        Experiment::Soup(e) => run_soup(e),
        Experiment::Isomorphism(c) => run_isomorphism(c),
        Experiment::Scaling(s) => run_scaling(s),
    })
}

fn now() -> f64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0)
}

fn write_artifact(dir: &Path, name: &str, bytes: &[u8]) -> Result<Artifact> {
    fs::write(dir.join(name), bytes)?;
    Ok(Artifact { file: name.into(), sha256: hex::encode(Sha256::digest(bytes)), bytes: bytes.len() as u64 })
}

/// Validate, execute and persist: `report.json`, one CSV per table and
/// `manifest.json` in the output directory. Validation failures are returned
/// as an error listing every violation; compute errors are recorded in the
/// manifest.
pub fn run(cfg: &RunConfig) -> Result<RunManifest> {
    let rep = validate(cfg);
    if !rep.ok() {
        let list: Vec<String> =
            rep.failures().iter().map(|f| format!("{} ({}): {}", f.check, f.location, f.message)).collect();
        return Err(Error::Config(list.join("\n")));
    }
    let dir = cfg.output_dir.clone().unwrap_or_else(|| PathBuf::from("gradfield-out"));
    fs::create_dir_all(&dir)?;
    let resolved = resolve(cfg);
    let started = now();
    let mut manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        experiment: cfg.experiment.name().into(),
        config_hash: config_hash(&resolved)?,
        code_version: env!("CARGO_PKG_VERSION").into(),
        seed: cfg.seed,
        threads: cfg.threads,
        started,
        finished: started,
        verdicts: vec![],
        artifacts: vec![],
        error: None,
    };
    let mut resolved_out = resolved.clone();
    resolved_out.output_dir = None;
    manifest.artifacts.push(write_artifact(&dir, "config.json", &serde_json::to_vec_pretty(&resolved_out)?)?);
    match execute(&resolved) {
        Ok(out) => {
            manifest.artifacts.push(write_artifact(&dir, "report.json", &serde_json::to_vec_pretty(&out.report)?)?);
            for t in &out.tables {
                manifest.artifacts.push(write_artifact(&dir, &format!("{}.csv", t.name), &t.to_bytes()?)?);
            }
            manifest.verdicts = out.verdicts;
        }
        Err(e) => {
            manifest.error = Some(e.to_string());
            manifest.verdicts.push(verdict("compute", Verdict::Fail, e.to_string()));
        }
    }
    manifest.finished = now();
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Result of re-hashing a run directory against its manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestCheck {
    pub manifest: RunManifest,
    /// Artifacts that are missing or whose hash changed.
    pub mismatched: Vec<String>,
}

/// Load `manifest.json` from `dir` and verify every listed artifact.
pub fn verify_run(dir: &Path) -> Result<ManifestCheck> {
    let manifest: RunManifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    let mismatched = manifest
        .artifacts
        .iter()
        .filter(|a| match fs::read(dir.join(&a.file)) {
            Ok(b) => hex::encode(Sha256::digest(&b)) != a.sha256,
            Err(_) => true,
        })
        .map(|a| a.file.clone())
        .collect();
    Ok(ManifestCheck { manifest, mismatched })
}

// ---------------------------------------------------------------- experiments

/// Gaussian oracle for the mean and second moments of a tilted quadratic
/// model on a Dirichlet box: mean `(−Δ−V)⁻¹h`, covariance `(−Δ−V)⁻¹`.
fn gaussian_expectation(e: &FieldExperiment, o: &Observable) -> Result<Option<f64>> {
    if !e.potential.is_quadratic() || e.domain.boundary != Boundary::Dirichlet || !e.tilt.q.is_empty() {
        return Ok(None);
    }
    let g = green_solve(&e.tilt.v, &e.domain, Convention::Occupation)?;
    let m = g.apply(&e.tilt.h.to_dense(&e.domain)?)?;
    let idx = |s: &Site| e.domain.index(s).filter(|_| e.domain.contains(s));
    let mean = |s: &Site| idx(s).map_or(0.0, |i| m[i]);
    let cov = |x: &Site, y: &Site| -> Result<f64> {
        match (idx(x), idx(y)) {
            (Some(_), Some(_)) => g.value(x, y),
            _ => Ok(0.0),
        }
    };
    Ok(Some(match o {
        Observable::Value { site } => mean(site),
        Observable::Product { x, y } => cov(x, y)? + mean(x) * mean(y),
        Observable::Linear { weights } => weights.iter().map(|(s, w)| w * mean(s)).sum(),
        Observable::Quadratic { weights } => {
            let mut acc = 0.0;
            for (s, w) in weights.iter() {
                acc += w * (cov(s, s)? + mean(s).powi(2));
            }
            acc
        }
    }))
}

fn run_field(e: &FieldExperiment) -> Result<Outcome> {
    let out = run_chain(&e.chain, &e.domain, &e.potential, &e.tilt, &e.observables, false)?;
    let mut t = Table::new("observables", &["observable", "estimate", "std_error", "n_eff", "oracle", "z"]);
    let mut verdicts = vec![];
    let mut rows = vec![];
    for (o, s) in e.observables.iter().zip(&out.summaries) {
        let oracle = gaussian_expectation(e, o)?;
        let z = oracle.map(|x| {
            Estimate { value: s.estimate, std_error: s.std_error, n_eff: s.n_eff }.z_against(&Estimate::exact(x))
        });
        t.row(vec![
            s.observable.clone(),
            s.estimate.to_string(),
            s.std_error.to_string(),
            s.n_eff.to_string(),
            oracle.map_or(String::new(), |x| x.to_string()),
            z.map_or(String::new(), |x| x.to_string()),
        ]);
        if let (Some(x), Some(z)) = (oracle, z) {
            verdicts.push(verdict(
                &format!("gaussian oracle {}", s.observable),
                Verdict::from_bool(z <= 3.0),
                format!("{:.6} ± {:.2e} vs {x:.6} (z = {z:.2})", s.estimate, s.std_error),
            ));
        }
        rows.push(json!({ "summary": s, "oracle": oracle, "z": z }));
    }
    Ok(Outcome { report: json!({ "observables": rows }), tables: vec![t], verdicts })
}

fn run_walk(e: &WalkExperiment) -> Result<Outcome> {
    match &e.task {
        WalkTask::Trajectories { start, horizon, count } => {
            let mut chain = Chain::new(&e.domain, &e.potential, &e.tilt, &e.chain)?;
            chain.burn_in()?;
            let phi = chain.state.clone();
            let t0 = phi.time;
            let trajs: Vec<_> = (0..*count)
                .into_par_iter()
                .map(|i| {
                    let state = JointState { x: start.clone(), t: t0, phi: phi.clone() };
                    let wc = WalkConfig { chain: e.chain.clone(), frozen: e.frozen, stream: i as u64 };
                    simulate_joint(&state, &e.domain, *horizon, &e.potential, &e.tilt, &wc)
                })
                .collect::<Result<_>>()?;
            let mut t =
                Table::new("trajectories", &["index", "duration", "jumps", "killed", "final_site", "fk_weight"]);
            let (mut dur, mut fk, mut killed) = (vec![], vec![], vec![]);
            for (i, tr) in trajs.iter().enumerate() {
                let w = feynman_kac_weight(tr, &e.domain, &e.tilt.v);
                t.row(vec![
                    i.to_string(),
                    tr.total_time().to_string(),
                    tr.jumps.len().to_string(),
                    tr.killed.to_string(),
                    site_str(&e.domain.site(tr.final_site())),
                    w.to_string(),
                ]);
                dur.push(tr.total_time());
                fk.push(w);
                killed.push(if tr.killed { 1.0 } else { 0.0 });
            }
            let report = json!({
                "count": count,
                "duration": iid(&dur),
                "killed_fraction": iid(&killed),
                "feynman_kac_weight": iid(&fk),
            });
            Ok(Outcome { report, tables: vec![t], verdicts: vec![] })
        }
        WalkTask::Covariance { x, ys, config } => {
            let rep = hs_covariance(x, ys, &e.domain, &e.tilt, &e.potential, config)?;
            let mut t = Table::new("covariance", &["y", "field", "field_se", "walk", "walk_se", "z"]);
            let mut verdicts = vec![];
            for p in &rep.points {
                t.row(vec![
                    site_str(&p.y),
                    p.field.value.to_string(),
                    p.field.std_error.to_string(),
                    p.walk.value.to_string(),
                    p.walk.std_error.to_string(),
                    p.z.to_string(),
                ]);
                verdicts.push(verdict(
                    &format!("covariance identity at {:?}", p.y),
                    Verdict::from_bool(p.z <= 3.0),
                    format!("field {:.5} vs walk {:.5} (z = {:.2})", p.field.value, p.walk.value, p.z),
                ));
            }
            Ok(Outcome { report: serde_json::to_value(&rep)?, tables: vec![t], verdicts })
        }
    }
}

fn run_green(e: &GreenExperiment) -> Result<Outcome> {
    let g = green_solve(&e.v, &e.domain, e.convention)?;
    let mut tables = vec![];
    let mut verdicts = vec![];
    let mut report = serde_json::Map::new();
    if !e.columns.is_empty() {
        let mut t = Table::new("columns", &["y", "x", "g"]);
        for y in &e.columns {
            let col = g.column(y)?;
            for (i, v) in col.iter().enumerate() {
                t.row(vec![site_str(y), site_str(&e.domain.site(i)), v.to_string()]);
            }
        }
        tables.push(t);
        let res = g.max_residual();
        verdicts.push(verdict(
            "solver residual",
            Verdict::from_bool(res <= 1e-8),
            format!("max relative residual {res:.2e}"),
        ));
        report.insert("max_residual".into(), json!(res));
    }
    if let Some(k) = &e.capacity {
        let cap = srw_capacity(k, &e.domain)?;
        let mut t = Table::new("equilibrium", &["site", "e_K"]);
        for (s, v) in cap.equilibrium.iter() {
            t.row(vec![site_str(s), v.to_string()]);
        }
        tables.push(t);
        // last-exit decomposition: Σ_y e_K(y) g(x, y) = 1 on K
        let g0 = green_solve(&SiteMap::new(), &e.domain, Convention::Occupation)?;
        let mut worst = 0.0f64;
        for x in k {
            let col = g0.column(x)?;
            let s: f64 = cap.equilibrium.iter().map(|(y, v)| v * col[e.domain.index(y).unwrap()]).sum();
            worst = worst.max((s - 1.0).abs());
        }
        verdicts.push(verdict(
            "last-exit decomposition",
            Verdict::from_bool(worst <= 1e-7),
            format!("max |Σ e_K g − 1| on K = {worst:.2e}"),
        ));
        report.insert("capacity".into(), json!(cap.capacity));
        report.insert("equilibrium".into(), serde_json::to_value(&cap.equilibrium)?);
    }
    if let Some(h) = &e.heat {
        let mut t = Table::new("heat_kernel", &["t", "value", "std_error"]);
        let mut vals = vec![];
        for &time in &h.times {
            let q = heat_kernel_tilted(&e.v, &e.domain, &h.x, &h.y, time, h.method)?;
            t.row(vec![time.to_string(), q.value.to_string(), q.std_error.to_string()]);
            vals.push(json!({ "t": time, "value": q }));
        }
        tables.push(t);
        report.insert("heat_kernel".into(), Value::Array(vals));
    }
    Ok(Outcome { report: Value::Object(report), tables, verdicts })
}

fn run_soup(e: &SoupExperiment) -> Result<Outcome> {
    let gaussian = e.potential.is_quadratic();
    type Draw = Box<dyn Fn(u64) -> Result<SoupSample> + Sync>;
    let draw: Draw = if gaussian {
        let s = GaussianSoupSampler::new(&e.soup)?;
        Box::new(move |r| s.sample(r))
    } else {
        let s = GeneralSoupSampler::new(&e.soup, &e.potential)?;
        Box::new(move |r| s.sample(r))
    };
    let samples: Vec<SoupSample> = (0..e.replicas as u64).into_par_iter().map(|r| draw(r)).collect::<Result<_>>()?;
    let domain = &e.soup.kill_box;
    let v = &e.soup.tilt.v;
    let mut t = Table::new("replicas", &["replica", "count", "pairing"]);
    let mut counts = vec![];
    let mut pairs = vec![];
    let mut occ = vec![vec![]; e.soup.window.len()];
    for (r, s) in samples.iter().enumerate() {
        let l = occupation_field(s, domain);
        let p = l.pair(v);
        t.row(vec![r.to_string(), s.count().to_string(), p.to_string()]);
        counts.push(s.count() as f64);
        pairs.push(p);
        for (k, x) in e.soup.window.iter().enumerate() {
            occ[k].push(l.get(x));
        }
    }
    let mut w = Table::new("occupation", &["site", "mean", "std_error"]);
    let occ_est: Vec<Estimate> = occ.iter().map(|x| iid(x)).collect();
    for (x, m) in e.soup.window.iter().zip(&occ_est) {
        w.row(vec![site_str(x), m.value.to_string(), m.std_error.to_string()]);
    }
    let count = iid(&counts);
    let intensity = samples.first().map_or(0.0, |s| s.intensity);
    // log E e^{⟨V,L⟩} with a delta-method standard error
    let log_mgf = {
        let lme = log_mean_exp(&pairs);
        let w: Vec<f64> = pairs.iter().map(|p| (p - lme).exp()).collect();
        Estimate { value: lme, std_error: iid(&w).std_error, n_eff: pairs.len() as f64 }
    };
    let mut verdicts = vec![verdict(
        "trajectory count",
        Verdict::from_bool(count.agrees(&Estimate::exact(intensity), 3.0)),
        format!("mean count {:.4} ± {:.4} vs intensity {intensity:.4}", count.value, count.std_error),
    )];
    let mut closed = None;
    if gaussian {
        for (x, m) in e.soup.window.iter().zip(&occ_est) {
            verdicts.push(verdict(
                &format!("mean occupation at {x:?}"),
                Verdict::from_bool(m.agrees(&Estimate::exact(e.soup.u), 3.0)),
                format!("{:.4} ± {:.4} vs u = {}", m.value, m.std_error, e.soup.u),
            ));
        }
        if !v.is_empty() {
            let g = green_solve(v, domain, Convention::Occupation)?;
            let exact = e.soup.u * (v.iter().map(|(_, x)| x).sum::<f64>() + g.quadratic(v)?);
            verdicts.push(verdict(
                "isomorphism closed form",
                Verdict::from_bool(log_mgf.agrees(&Estimate::exact(exact), 3.0)),
                format!("log MGF {:.5} ± {:.5} vs {exact:.5}", log_mgf.value, log_mgf.std_error),
            ));
            closed = Some(exact);
        }
    }
    let report = json!({
        "replicas": e.replicas,
        "intensity": intensity,
        "count": count,
        "occupation": e.soup.window.iter().zip(&occ_est).map(|(x, m)| json!({ "site": x, "mean": m })).collect::<Vec<_>>(),
        "log_mgf": log_mgf,
        "closed_form": closed,
    });
    Ok(Outcome { report, tables: vec![t, w], verdicts })
}

fn run_isomorphism(c: &IsomorphismConfig) -> Result<Outcome> {
    let rep = isomorphism_residual(c)?;
    let mut t = Table::new("routes", &["route", "value", "std_error"]);
    if let Some(o) = rep.occupation_route {
        t.row(vec!["occupation".into(), o.value.to_string(), o.std_error.to_string()]);
    }
    t.row(vec!["field".into(), rep.field_route.value.to_string(), rep.field_route.std_error.to_string()]);
    t.row(vec!["variance".into(), rep.variance_route.value.to_string(), rep.variance_route.std_error.to_string()]);
    if let Some(x) = rep.closed_form {
        t.row(vec!["closed_form".into(), x.to_string(), "0".into()]);
    }
    let verdicts = vec![verdict(
        "isomorphism",
        rep.verdict,
        format!("field vs variance: z = {:.2}, relative gap {:.3}", rep.z_field_variance, rep.rel_field_variance),
    )];
    Ok(Outcome { report: serde_json::to_value(&rep)?, tables: vec![t], verdicts })
}

fn run_scaling(s: &ScalingExperiment) -> Result<Outcome> {
    match s {
        ScalingExperiment::FormLadder { f, v, ladder, power, options, model, tolerance, .. } => {
            let rep = form_ladder(f, v.as_ref(), ladder, *power, options, model)?;
            let mut t = Table::new("ladder", &["n", "value", "ratio_to_previous"]);
            for (k, (n, x)) in rep.ns.iter().zip(&rep.values).enumerate() {
                let r = if k == 0 { String::new() } else { rep.ratios[k - 1].to_string() };
                t.row(vec![n.to_string(), x.to_string(), r]);
            }
            let top = *rep.ratios.last().unwrap_or(&f64::NAN);
            let verdicts = vec![
                verdict(
                    "cauchy",
                    Verdict::from_bool(rep.cauchy && top <= *tolerance),
                    format!("ratios {:?}", rep.ratios),
                ),
                verdict(
                    "continuum",
                    Verdict::from_bool(rep.rel_gap <= *tolerance),
                    format!(
                        "extrapolated {:.6} vs continuum {:.6} (gap {:.2e})",
                        rep.extrapolated, rep.continuum, rep.rel_gap
                    ),
                ),
            ];
            Ok(Outcome { report: serde_json::to_value(&rep)?, tables: vec![t], verdicts })
        }
        ScalingExperiment::FreeEnergy { w, ladder, model, tolerance } => {
            let rep = naddaf_spencer_gaussian(w, ladder, model)?;
            let mut t = Table::new("ladder", &["n", "log_mgf", "gap"]);
            for ((n, x), g) in rep.ns.iter().zip(&rep.values).zip(&rep.gaps) {
                t.row(vec![n.to_string(), x.value.to_string(), g.to_string()]);
            }
            let verdicts = vec![verdict(
                "free energy limit",
                Verdict::from_bool(rep.rel_gap <= *tolerance),
                format!("extrapolated {:.6} vs {:.6} (gap {:.2e})", rep.extrapolated, rep.continuum, rep.rel_gap),
            )];
            Ok(Outcome { report: serde_json::to_value(&rep)?, tables: vec![t], verdicts })
        }
        ScalingExperiment::OccupationLimit { config, .. } => {
            let rep = occupation_limit_check(config)?;
            let mut t = Table::new("rungs", &["n", "u_n", "mgf", "mgf_se", "lattice", "gap"]);
            for r in &rep.rungs {
                t.row(vec![
                    r.n.to_string(),
                    r.u_n.to_string(),
                    r.mgf.value.to_string(),
                    r.mgf.std_error.to_string(),
                    r.lattice.to_string(),
                    r.gap.to_string(),
                ]);
            }
            let verdicts = vec![
                verdict(
                    "gap trend",
                    Verdict::from_bool(rep.gap_decreasing),
                    "gap to the continuum decreases along the ladder",
                ),
                verdict(
                    "lattice consistency",
                    Verdict::from_bool(rep.mc_consistent),
                    "soup MGF matches the lattice value",
                ),
            ];
            Ok(Outcome { report: serde_json::to_value(&rep)?, tables: vec![t], verdicts })
        }
        ScalingExperiment::Sigma(c) => {
            let est = estimate_sigma(c)?;
            let mut t = Table::new("sigma", &["i", "j", "value", "std_error"]);
            for (i, row) in est.matrix.iter().enumerate() {
                for (j, v) in row.iter().enumerate() {
                    t.row(vec![i.to_string(), j.to_string(), v.to_string(), est.std_errors[i][j].to_string()]);
                }
            }
            let (m, se) = est.isotropic();
            let (lo, hi) = (2.0 * c.potential.c1, 2.0 * c.potential.c2);
            let mut verdicts = vec![
                verdict(
                    "isotropy",
                    Verdict::from_bool(est.max_offdiag_z() <= 3.0 && est.max_diag_spread_z() <= 3.0),
                    format!(
                        "off-diagonal z {:.2}, diagonal spread z {:.2}",
                        est.max_offdiag_z(),
                        est.max_diag_spread_z()
                    ),
                ),
                verdict(
                    "ellipticity sandwich",
                    Verdict::from_bool(m + 3.0 * se >= lo && m - 3.0 * se <= hi),
                    format!("mean diagonal {m:.4} ± {se:.4} vs [{lo}, {hi}]"),
                ),
            ];
            if let Some(w) = &est.window_warning {
                verdicts.push(verdict("fit window", Verdict::Inconclusive, w.clone()));
            }
            Ok(Outcome { report: serde_json::to_value(&est)?, tables: vec![t], verdicts })
        }
    }
}
