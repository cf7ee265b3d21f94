//! The four subcommands, callable as library functions.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use snpekit_core::baselines::{glm_reference_mcmc, pilot_scaling, rejection_abc, smc_abc};
use snpekit_core::features::{autapse_trace_features, gru_inputs, hh_features, write_feature_table, FeatureVector};
use snpekit_core::guard::save_guard;
use snpekit_core::mdn::save_checkpoint;
use snpekit_core::rng::{derive_seed, derived_rng, rng_from_seed};
use snpekit_core::simulators::{simulate_autapse, simulate_glm, simulate_hh, Trace};
use snpekit_core::snpe::{run_cdelfi, run_snpe, Model, Observation};
use snpekit_core::{Distribution, GaussianMixture};

use crate::artifacts::{csv_bytes, read_manifest, RoundTiming, RunDir};
use crate::config::{LoadedConfig, MethodConfig, ModelConfig, PriorConfig};
use crate::error::{CliError, Result};

/// Stream tags local to the runner.
const SIMULATE_STREAM: u64 = 0x51;
const SAMPLE_STREAM: u64 = 0x52;
/// Posterior draws exported next to every posterior.
const EXPORT_SAMPLES: usize = 1000;

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
}

fn out_dir(loaded: &LoadedConfig, opts: &RunOptions, command: &str) -> PathBuf {
    opts.out.clone().or_else(|| loaded.config.output.dir.as_ref().map(|d| loaded.base_dir.join(d))).unwrap_or_else(|| {
        let name = if loaded.config.name.is_empty() { "experiment" } else { &loaded.config.name };
        PathBuf::from("runs").join(format!("{name}-{command}"))
    })
}

fn names(loaded: &LoadedConfig) -> Vec<String> {
    loaded.config.model.parameter_names()
}

/// Observed data, with the raw spike train kept for the GLM reference sampler.
pub struct Observed {
    pub observation: Observation,
    pub features: Option<FeatureVector>,
    pub trace: Option<Trace>,
    pub spikes: Option<Vec<f64>>,
}

pub fn observe(loaded: &LoadedConfig, model: &dyn Model) -> Result<Observed> {
    let cfg = &loaded.config;
    let obs = &cfg.observation;
    if let Some(values) = &obs.features {
        if values.len() != model.feature_dim() {
            return Err(CliError::Config(format!(
                "observation.features has {} entries, the model produces {}",
                values.len(),
                model.feature_dim()
            )));
        }
        let f = FeatureVector::complete(values.clone());
        return Ok(Observed { observation: Observation::Features(f.clone()), features: Some(f), trace: None, spikes: None });
    }
    if let Some(rel) = &obs.trace {
        let path = loaded.base_dir.join(rel);
        let file = fs::File::open(&path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let trace = Trace::read_csv(std::io::BufReader::new(file))?;
        let (features, observation) = match &cfg.model {
            ModelConfig::Hh { spec, features, gru_stride } => {
                let f = hh_features(&trace, features);
                let o = match gru_stride {
                    Some(s) => Observation::Sequence(gru_inputs(&trace, *s, spec.stimulus.scale())),
                    None => Observation::Features(f.clone()),
                };
                (f, o)
            }
            ModelConfig::Autapse { .. } => {
                let f = autapse_trace_features(&trace);
                (f.clone(), Observation::Features(f))
            }
            _ => unreachable!("validated: trace import needs a trace-producing model"),
        };
        return Ok(Observed { observation, features: Some(features), trace: Some(trace), spikes: None });
    }
    let theta = obs.theta.clone().or_else(|| cfg.model.default_theta()).expect("validated: observation source present");
    let theta = cfg.model.to_inference_space(&theta);
    let sim = model.simulate(&theta, obs.seed)?;
    if sim.features.bad {
        return Err(snpekit_core::Error::Simulation("the observed simulation diverged".into()).into());
    }
    let features = Some(sim.features.clone());
    let trace = raw_trace(&cfg.model, &theta, obs.seed)?;
    let spikes = match &cfg.model {
        ModelConfig::Glm { spec } => Some(simulate_glm(&spec.design(), &theta, &mut rng_from_seed(obs.seed))?),
        _ => None,
    };
    Ok(Observed { observation: Observation::from_simulation(sim), features, trace, spikes })
}

/// The raw trace behind `Model::simulate(theta, seed)`, for models that have one.
fn raw_trace(model: &ModelConfig, theta: &[f64], seed: u64) -> Result<Option<Trace>> {
    Ok(match model {
        ModelConfig::Hh { spec, .. } => Some(simulate_hh(spec, theta, &mut rng_from_seed(seed))?.trace),
        ModelConfig::Autapse { spec } => Some(simulate_autapse(spec, theta, &mut rng_from_seed(seed))?.trace),
        _ => None,
    })
}

fn trace_bytes(trace: &Trace) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    trace.write_csv(&mut buf)?;
    Ok(buf)
}

/// Simulate at `simulate.theta` or at prior draws; writes a feature table and traces.
pub fn cmd_simulate(loaded: &LoadedConfig, opts: &RunOptions) -> Result<PathBuf> {
    let cfg = &loaded.config;
    let seed = opts.seed.unwrap_or(cfg.seed);
    let mut dir = RunDir::create(out_dir(loaded, opts, "simulate"), "simulate", &cfg.name, "simulate", &loaded.source)?;
    dir.manifest.seeds.insert("master".into(), seed);
    let start = Instant::now();
    let result = (|| -> Result<()> {
        let model = cfg.model.build();
        let prior = cfg.prior.build()?;
        let thetas: Vec<Vec<f64>> = match &cfg.simulate.theta {
            Some(t) => vec![cfg.model.to_inference_space(t)],
            None => prior.sample(cfg.simulate.draws, &mut derived_rng(seed, &[SIMULATE_STREAM, 0])),
        };
        let seeds: Vec<u64> = (0..thetas.len()).map(|i| derive_seed(seed, &[SIMULATE_STREAM, 1, i as u64])).collect();
        let features = {
            use rayon::prelude::*;
            thetas
                .par_iter()
                .zip(&seeds)
                .map(|(t, s)| model.simulate(t, *s).map(|sim| sim.features))
                .collect::<snpekit_core::Result<Vec<_>>>()?
        };
        if cfg.simulate.theta.is_some() && features[0].bad {
            return Err(snpekit_core::Error::Simulation("the simulation at simulate.theta diverged".into()).into());
        }
        let ones = vec![1.0; thetas.len()];
        dir.write_with("features.csv", |buf| Ok(write_feature_table(buf, &thetas, &features, &ones)?))?;
        if cfg.simulate.traces {
            for (i, (t, s)) in thetas.iter().zip(&seeds).enumerate() {
                if let Some(trace) = raw_trace(&cfg.model, t, *s)? {
                    dir.write(&format!("traces/trace_{i:04}.csv"), &trace_bytes(&trace)?)?;
                }
            }
        }
        Ok(())
    })();
    dir.finish(result.as_ref().map(|_| ()), start.elapsed().as_secs_f64())?;
    result.map(|_| dir.root.clone())
}

/// Outcome of `infer`, for callers that keep going in-process.
#[derive(Debug, Clone)]
pub struct InferOutcome {
    pub dir: PathBuf,
    pub posterior: GaussianMixture,
    /// Per-round posteriors where the method has rounds.
    pub rounds: Vec<GaussianMixture>,
}

fn write_posterior(dir: &mut RunDir, prefix: &str, posterior: &GaussianMixture, seed: u64) -> Result<()> {
    dir.write(&format!("{prefix}posterior.json"), posterior.to_json()?.as_bytes())?;
    let draws = posterior.sample(EXPORT_SAMPLES, &mut derived_rng(seed, &[SAMPLE_STREAM]));
    let header: Vec<String> = posterior.names().to_vec();
    dir.write(&format!("{prefix}posterior_samples.csv"), &csv_bytes(&header, &draws)?)
}

fn weighted_samples(dir: &mut RunDir, names: &[String], samples: &[Vec<f64>], weights: &[f64]) -> Result<()> {
    let header: Vec<String> = names.iter().cloned().chain(["weight".to_string()]).collect();
    let rows: Vec<Vec<f64>> = samples.iter().zip(weights).map(|(s, w)| s.iter().copied().chain([*w]).collect()).collect();
    dir.write("samples.csv", &csv_bytes(&header, &rows)?)
}

fn hand_features(observed: &Observed) -> Result<&FeatureVector> {
    observed.features.as_ref().ok_or_else(|| CliError::Config("this method needs hand-designed observation features".into()))
}

/// Run the configured inference method and persist its artifacts.
pub fn cmd_infer(loaded: &LoadedConfig, opts: &RunOptions) -> Result<InferOutcome> {
    let cfg = &loaded.config;
    let seed = opts.seed.unwrap_or(cfg.seed);
    let label = cfg.method.label();
    let mut dir = RunDir::create(out_dir(loaded, opts, "infer"), "infer", &cfg.name, label, &loaded.source)?;
    dir.manifest.seeds.insert("master".into(), seed);
    dir.manifest.seeds.insert("observation".into(), cfg.observation.seed);
    let start = Instant::now();
    let result = infer_into(loaded, seed, &mut dir);
    dir.finish(result.as_ref().map(|_| ()), start.elapsed().as_secs_f64())?;
    let (posterior, rounds) = result?;
    Ok(InferOutcome { dir: dir.root.clone(), posterior, rounds })
}

fn infer_into(loaded: &LoadedConfig, seed: u64, dir: &mut RunDir) -> Result<(GaussianMixture, Vec<GaussianMixture>)> {
    let cfg = &loaded.config;
    let model = cfg.model.build();
    let prior = cfg.prior.build()?;
    let names = names(loaded);
    let observed = observe(loaded, model.as_ref())?;
    if let Some(f) = &observed.features {
        let header: Vec<String> = (0..f.dim()).map(|i| format!("x_{i}")).chain(["missing_count".into()]).collect();
        let missing = f.mask.iter().filter(|m| **m).count() as f64;
        let row: Vec<f64> = f.values.iter().copied().chain([missing]).collect();
        dir.write("observation.csv", &csv_bytes(&header, &[row])?)?;
    }
    if let Some(t) = &observed.trace {
        dir.write("observation_trace.csv", &trace_bytes(t)?)?;
    }

    match &cfg.method {
        MethodConfig::Snpe(sc) => {
            let mut rounds = Vec::new();
            let mut clock = Instant::now();
            let mut timings = Vec::new();
            let mut pending: Vec<(String, Vec<u8>)> = Vec::new();
            let run = run_snpe(model.as_ref(), &prior, &observed.observation, sc, seed, |report| {
                let r = report.diagnostics.round;
                timings.push(RoundTiming { round: r, seconds: clock.elapsed().as_secs_f64() });
                clock = Instant::now();
                let posterior = report.posterior.clone().with_names(names.clone())?;
                let prefix = format!("rounds/round_{r:02}/");
                pending.push((format!("{prefix}posterior.json"), posterior.to_json()?.into_bytes()));
                pending.push((format!("{prefix}diagnostics.json"), serde_json::to_vec_pretty(&report.diagnostics)?));
                let mut table = Vec::new();
                write_feature_table(&mut table, &report.thetas, &report.features, &report.weights)?;
                pending.push((format!("{prefix}features.csv"), table));
                rounds.push(posterior);
                Ok(())
            });
            for (rel, bytes) in pending.drain(..) {
                dir.write(&rel, &bytes)?;
            }
            dir.manifest.rounds = timings;
            let run = run?;
            let posterior = run.posterior.with_names(names)?;
            write_posterior(dir, "", &posterior, seed)?;
            let ck = save_checkpoint(&run.mdn, &dir.root, "network")?;
            dir.register(&ck);
            dir.register(&ck.with_extension("bin"));
            if let Some(g) = &run.guard {
                let p = save_guard(g, &dir.root, "guard")?;
                dir.register(&p);
                dir.register(&p.with_extension("bin"));
            }
            dir.write_json("diagnostics.json", &run.state.diagnostics)?;
            Ok((posterior, rounds))
        }
        MethodConfig::Cdelfi(sc) => {
            let run = run_cdelfi(model.as_ref(), &prior, &observed.observation, sc, seed)?;
            let posterior = run.posterior.with_names(names)?;
            write_posterior(dir, "", &posterior, seed)?;
            dir.write_json("diagnostics.json", &run.diagnostics)?;
            Ok((posterior, Vec::new()))
        }
        MethodConfig::SmcAbc(c) => {
            let x_o = hand_features(&observed)?;
            let state = smc_abc(&prior, model.as_ref(), x_o, c, seed)?;
            let posterior = state.to_gaussian()?.with_names(names.clone())?;
            dir.write("posterior.json", posterior.to_json()?.as_bytes())?;
            weighted_samples(dir, &names, &state.particles, &state.weights)?;
            #[derive(Serialize)]
            struct SmcSummary<'a> {
                schedule: &'a [f64],
                ess: &'a [f64],
                acceptance: &'a [f64],
                simulations: usize,
            }
            let summary =
                SmcSummary { schedule: &state.schedule, ess: &state.ess, acceptance: &state.acceptance, simulations: state.simulations };
            dir.write_json("diagnostics.json", &summary)?;
            Ok((posterior, Vec::new()))
        }
        MethodConfig::RejectionAbc(c) => {
            let x_o = hand_features(&observed)?;
            let scaling = pilot_scaling(model.as_ref(), &prior, c.pilot, seed)?;
            let out = rejection_abc(&prior, model.as_ref(), x_o, &scaling, c.eps, c.simulations, seed)?;
            let w = vec![1.0 / out.accepted.len() as f64; out.accepted.len()];
            let posterior = moment_matched(&out.accepted, &w)?.with_names(names.clone())?;
            dir.write("posterior.json", posterior.to_json()?.as_bytes())?;
            weighted_samples(dir, &names, &out.accepted, &w)?;
            Ok((posterior, Vec::new()))
        }
        MethodConfig::Mcmc(c) => {
            let (ModelConfig::Glm { spec }, Distribution::Mixture(g)) = (&cfg.model, &prior) else {
                unreachable!("validated: mcmc needs the GLM and a Gaussian prior")
            };
            let spikes = observed
                .spikes
                .as_ref()
                .ok_or_else(|| CliError::Config("mcmc reference needs a simulated observation (observation.theta)".into()))?;
            let result = glm_reference_mcmc(g, &spec.design(), spikes, c, seed)?;
            let posterior = result.to_gaussian()?.with_names(names.clone())?;
            dir.write("posterior.json", posterior.to_json()?.as_bytes())?;
            let pooled: Vec<Vec<f64>> = result.pooled().into_iter().map(<[f64]>::to_vec).collect();
            let w = vec![1.0 / pooled.len() as f64; pooled.len()];
            weighted_samples(dir, &names, &pooled, &w)?;
            #[derive(Serialize)]
            struct McmcSummary {
                rhat: Vec<f64>,
                acceptance: Vec<f64>,
                step_size: Vec<f64>,
            }
            dir.write_json(
                "diagnostics.json",
                &McmcSummary {
                    rhat: result.rhat.clone(),
                    acceptance: result.chains.iter().map(|c| c.acceptance_rate).collect(),
                    step_size: result.chains.iter().map(|c| c.step_size).collect(),
                },
            )?;
            Ok((posterior, Vec::new()))
        }
    }
}

fn moment_matched(samples: &[Vec<f64>], w: &[f64]) -> Result<GaussianMixture> {
    let d = samples[0].len();
    let total: f64 = w.iter().sum();
    let mean: Vec<f64> = (0..d).map(|i| samples.iter().zip(w).map(|(s, wi)| s[i] * wi).sum::<f64>() / total).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for (s, wi) in samples.iter().zip(w) {
        for i in 0..d {
            for j in 0..d {
                cov[i][j] += wi * (s[i] - mean[i]) * (s[j] - mean[j]) / total;
            }
        }
    }
    let cov = nalgebra::DMatrix::from_fn(d, d, |i, j| cov[i][j]);
    Ok(GaussianMixture::gaussian(mean, &cov)?)
}

/// `compare --config` file: run directories relative to the file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub runs: Vec<PathBuf>,
    /// Points per axis of the 2-D marginal grids.
    #[serde(default = "default_grid")]
    pub grid: usize,
    pub out: Option<PathBuf>,
}

fn default_grid() -> usize {
    50
}

/// `eval --config` file: a posterior plus either a grid or a points CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    /// A run directory or a `posterior.json` file.
    pub posterior: PathBuf,
    pub grid: Option<GridSpec>,
    pub points: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<(T, PathBuf)> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    let value = toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((value, base))
}

/// `compare --config FILE`.
pub fn run_compare(path: &Path, out: Option<&Path>) -> Result<Vec<ComparisonRow>> {
    let (cfg, base): (CompareConfig, _) = read_toml(path)?;
    if cfg.grid < 2 {
        return Err(CliError::Config("grid must be at least 2".into()));
    }
    let runs: Vec<PathBuf> = cfg.runs.iter().map(|r| base.join(r)).collect();
    let out = out.map(Path::to_path_buf).or(cfg.out.map(|o| base.join(o))).unwrap_or_else(|| PathBuf::from("compare"));
    cmd_compare(&runs, &out, cfg.grid)
}

/// `eval --config FILE`.
pub fn run_eval(path: &Path, out: Option<&Path>) -> Result<PathBuf> {
    let (cfg, base): (EvalConfig, _) = read_toml(path)?;
    let query = match (cfg.grid, cfg.points) {
        (Some(g), None) => EvalQuery::Grid(g),
        (None, Some(p)) => EvalQuery::Points(base.join(p)),
        _ => return Err(CliError::Config("eval needs exactly one of grid and points".into())),
    };
    let mut posterior = base.join(cfg.posterior);
    if posterior.is_dir() {
        posterior = posterior.join("posterior.json");
    }
    let out = out.map(Path::to_path_buf).or(cfg.out.map(|o| base.join(o))).unwrap_or_else(|| PathBuf::from("eval"));
    cmd_eval(&posterior, &query, &out)
}

/// One row of `summary.csv`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub run: String,
    pub method: String,
    pub parameter: String,
    pub mean: f64,
    pub sd: f64,
    /// Relative to the first run.
    pub mean_diff: f64,
    pub sd_ratio: f64,
}

fn load_posterior(path: &Path) -> Result<GaussianMixture> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(format!("reading {}", path.display()), e))?;
    Ok(GaussianMixture::from_json(&text)?)
}

/// Tabulate means, sds, covariances and 2-D marginal grids of several runs.
pub fn cmd_compare(runs: &[PathBuf], out: &Path, grid: usize) -> Result<Vec<ComparisonRow>> {
    if runs.len() < 2 {
        return Err(CliError::IncompatibleRuns("need at least two runs".into()));
    }
    let mut posts = Vec::new();
    let mut methods = Vec::new();
    for r in runs {
        posts.push(load_posterior(&r.join("posterior.json"))?);
        methods.push(read_manifest(r).map(|m| m.method).unwrap_or_else(|_| "unknown".into()));
    }
    let d = posts[0].dim();
    for (r, p) in runs.iter().zip(&posts) {
        if p.dim() != d {
            return Err(CliError::IncompatibleRuns(format!("{} has {} parameters, expected {d}", r.display(), p.dim())));
        }
        if p.names() != posts[0].names() {
            return Err(CliError::IncompatibleRuns(format!("{} names its parameters differently", r.display())));
        }
    }
    let names = posts[0].names().to_vec();
    let stats: Vec<(Vec<f64>, Vec<f64>)> = posts
        .iter()
        .map(|p| {
            let c = p.covariance();
            (p.mean(), (0..d).map(|i| c[(i, i)].sqrt()).collect())
        })
        .collect();
    let mut rows = Vec::new();
    for (k, (r, (m, s))) in runs.iter().zip(&stats).enumerate() {
        for i in 0..d {
            rows.push(ComparisonRow {
                run: r.display().to_string(),
                method: methods[k].clone(),
                parameter: names[i].clone(),
                mean: m[i],
                sd: s[i],
                mean_diff: m[i] - stats[0].0[i],
                sd_ratio: s[i] / stats[0].1[i],
            });
        }
    }
    let write = |rel: &str, bytes: &[u8]| crate::artifacts::write_atomic(&out.join(rel), bytes);
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in &rows {
        w.serialize(row)?;
    }
    write("summary.csv", &w.into_inner().map_err(|e| CliError::Core(snpekit_core::Error::Io(e.to_string())))?)?;
    for (k, p) in posts.iter().enumerate() {
        let c = p.covariance();
        let body: Vec<Vec<f64>> = (0..d).map(|i| (0..d).map(|j| c[(i, j)]).collect()).collect();
        write(&format!("covariance_{k}.csv"), &csv_bytes(&names, &body)?)?;
    }
    // shared window: union of mean ± 4 sd over runs
    let lo: Vec<f64> = (0..d).map(|i| stats.iter().map(|(m, s)| m[i] - 4.0 * s[i]).fold(f64::INFINITY, f64::min)).collect();
    let hi: Vec<f64> = (0..d).map(|i| stats.iter().map(|(m, s)| m[i] + 4.0 * s[i]).fold(f64::NEG_INFINITY, f64::max)).collect();
    let axis = |i: usize| -> Vec<f64> { (0..grid).map(|k| lo[i] + (hi[i] - lo[i]) * k as f64 / (grid - 1).max(1) as f64).collect() };
    let run_cols: Vec<String> = (0..posts.len()).map(|k| format!("density_{k}")).collect();
    if d == 1 {
        let header: Vec<String> = [names[0].clone()].into_iter().chain(run_cols.iter().cloned()).collect();
        let body: Vec<Vec<f64>> = axis(0)
            .into_iter()
            .map(|x| std::iter::once(x).chain(posts.iter().map(|p| p.log_pdf(&[x]).map_or(0.0, f64::exp))).collect())
            .collect();
        write("marginal_0.csv", &csv_bytes(&header, &body)?)?;
    }
    for i in 0..d {
        for j in i + 1..d {
            let margs = posts.iter().map(|p| p.marginal(&[i, j])).collect::<snpekit_core::Result<Vec<_>>>()?;
            let header: Vec<String> = [names[i].clone(), names[j].clone()].into_iter().chain(run_cols.iter().cloned()).collect();
            let mut body = Vec::with_capacity(grid * grid);
            for x in axis(i) {
                for y in axis(j) {
                    let mut row = vec![x, y];
                    row.extend(margs.iter().map(|m| m.log_pdf(&[x, y]).map_or(0.0, f64::exp)));
                    body.push(row);
                }
            }
            write(&format!("marginals/pair_{i:02}_{j:02}.csv"), &csv_bytes(&header, &body)?)?;
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
    /// Marginal dimension; may be omitted for one-dimensional posteriors.
    pub dim: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EvalQuery {
    Grid(GridSpec),
    /// CSV of θ rows with a header.
    Points(PathBuf),
}

/// Log-density of a posterior on a 1-D grid or at listed points; returns the
/// written table's path.
pub fn cmd_eval(posterior: &Path, query: &EvalQuery, out: &Path) -> Result<PathBuf> {
    let post = load_posterior(posterior)?;
    let (header, rows) = match query {
        EvalQuery::Grid(g) => {
            if g.n < 2 || !(g.hi > g.lo) {
                return Err(CliError::Config("grid needs lo < hi and n ≥ 2".into()));
            }
            let dim = match (g.dim, post.dim()) {
                (Some(k), _) => k,
                (None, 1) => 0,
                (None, _) => return Err(CliError::Config("grid evaluation of a multivariate posterior needs dim".into())),
            };
            let marg = post.marginal(&[dim])?;
            let rows: Vec<Vec<f64>> = (0..g.n)
                .map(|k| {
                    let x = g.lo + (g.hi - g.lo) * k as f64 / (g.n - 1) as f64;
                    marg.log_pdf(&[x]).map(|lp| vec![x, lp])
                })
                .collect::<snpekit_core::Result<_>>()?;
            (vec![post.names()[dim].clone(), "log_density".into()], rows)
        }
        EvalQuery::Points(path) => {
            let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
            let mut rows = Vec::new();
            for (i, rec) in rdr.records().enumerate() {
                let rec = rec.map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
                let theta: Vec<f64> = rec
                    .iter()
                    .map(|s| s.trim().parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| CliError::Config(format!("{} row {}: {e}", path.display(), i + 2)))?;
                let lp = post.log_pdf(&theta)?;
                rows.push(theta.into_iter().chain([lp]).collect());
            }
            (post.names().iter().cloned().chain(["log_density".to_string()]).collect(), rows)
        }
    };
    let target = out.join("eval.csv");
    crate::artifacts::write_atomic(&target, &csv_bytes(&header, &rows)?)?;
    Ok(target)
}

/// Prior as configured, for callers that need it alongside a run.
pub fn build_prior(config: &PriorConfig) -> Result<Distribution> {
    Ok(config.build()?)
}
