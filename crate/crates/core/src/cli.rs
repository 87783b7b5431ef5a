//! Command implementations behind the `elpd` binary.
//!
//! Every command takes a [`RunConfig`] and returns the JSON text it reports.
//! Configuration comes from flags and an optional flat `key = value` file
//! whose keys are the long flag names (`draws-used` or `draws_used`); flags
//! override the file.

use std::path::{Path, PathBuf};

use clap::{Args, Parser};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::estimators::{compare_models, estimate_model, ElpdEstimate};
use crate::harness::{
    blr_surrogate, pareto_k_summary, replicate, surrogate_from_loglik, verify_enumeration, BlrFixture,
    BlrFixtureSpec, VerifyGrid,
};
use crate::io;
use crate::subsampling::{pps_weights_from_surrogate, pps_wr, srs_wor, srs_wr, Scheme, SubsamplePlan};
use crate::surrogates::{LogLikSource, SurrogateMethod, SurrogateVector};

#[derive(Debug, Clone, Default, PartialEq, Args, Serialize)]
pub struct RunConfig {
    /// Flat key = value configuration file; flags override its entries.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Base random seed (required by every command that draws random numbers).
    #[arg(long)]
    pub seed: Option<u64>,
    /// Subsample size.
    #[arg(long)]
    pub m: Option<usize>,
    /// Surrogate method: plpd, waic, tis, psis, delta1_waic_m, delta1_waic, delta2_waic, exact.
    #[arg(long)]
    pub surrogate: Option<SurrogateMethod>,
    /// Number of leading posterior draws the surrogate may read.
    #[arg(long)]
    pub draws_used: Option<usize>,
    /// Subsampling scheme: srs_wor (default), srs_wr or pps_wr.
    #[arg(long)]
    pub scheme: Option<Scheme>,
    /// Output path (a directory for `simulate`, a CSV for `surrogate`, the JSON report otherwise).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    pub threads: Option<usize>,
    /// Draws × observations log-likelihood CSV.
    #[arg(long)]
    pub loglik: Option<PathBuf>,
    /// BLR dataset CSV (`y,x1,…,xP`).
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// BLR parameter draws CSV (`beta1,…,betaP,log_sigma`).
    #[arg(long)]
    pub draws: Option<PathBuf>,
    /// Precomputed surrogate CSV (`obs_id,value[,pareto_k]`).
    #[arg(long)]
    pub surrogate_file: Option<PathBuf>,
    /// Exact LOO values CSV (`obs_id,value`).
    #[arg(long)]
    pub exact: Option<PathBuf>,
    /// Model B log-likelihood CSV for `compare`.
    #[arg(long)]
    pub loglik_b: Option<PathBuf>,
    /// Model B dataset CSV for `compare`.
    #[arg(long)]
    pub dataset_b: Option<PathBuf>,
    /// Model B draws CSV for `compare`.
    #[arg(long)]
    pub draws_b: Option<PathBuf>,
    /// Model B surrogate CSV for `compare`.
    #[arg(long)]
    pub surrogate_file_b: Option<PathBuf>,
    /// Model B exact LOO values CSV for `compare`.
    #[arg(long)]
    pub exact_b: Option<PathBuf>,
    /// Number of subsample replicates for `replicate`.
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Observations to simulate.
    #[arg(long)]
    pub n: Option<usize>,
    /// Covariates to simulate (default 5).
    #[arg(long)]
    pub p: Option<usize>,
    /// Population R² of the simulated data (default 0.5).
    #[arg(long)]
    pub r2: Option<f64>,
    /// Simulate a single nonzero coefficient.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub sparse: Option<bool>,
    /// Also write a nested model B that omits the last covariate.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub nested: Option<bool>,
    /// Posterior draws to simulate (default 4000).
    #[arg(long)]
    pub posterior_draws: Option<usize>,
    /// Random (π, π̃) pairs per grid cell for `verify` (default 20).
    #[arg(long)]
    pub pairs: Option<usize>,
    /// Include wall-clock time in the `replicate` report (makes it non-reproducible).
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub timing: Option<bool>,
}

#[derive(Parser)]
#[command(no_binary_name = true)]
struct FileArgs {
    #[command(flatten)]
    config: RunConfig,
}

macro_rules! overlay {
    ($base:ident, $top:ident, $($field:ident),*) => {
        RunConfig { $($field: $top.$field.or($base.$field)),* }
    };
}

impl RunConfig {
    /// `self` with unset fields filled from `base`.
    pub fn over(self, base: RunConfig) -> RunConfig {
        let top = self;
        overlay!(
            base, top, config, seed, m, surrogate, draws_used, scheme, out, threads, loglik, dataset, draws,
            surrogate_file, exact, loglik_b, dataset_b, draws_b, surrogate_file_b, exact_b, replicates, n, p,
            r2, sparse, nested, posterior_draws, pairs, timing
        )
    }

    /// Merges the file named by `--config`, if any, under the flags.
    pub fn resolve(self) -> Result<RunConfig> {
        match self.config.clone() {
            Some(path) => {
                let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
                Ok(self.over(parse_config_text(&path, &text)?))
            }
            None => Ok(self),
        }
    }

    fn seed(&self) -> Result<u64> {
        self.seed
            .ok_or_else(|| Error::InvalidArgument("a seed is required (--seed or `seed = …` in the config file)".into()))
    }

    fn required<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T> {
        value
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument(format!("--{flag} is required")))
    }
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config_text(path: &Path, text: &str) -> Result<RunConfig> {
    let mut args = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::parse(path, format!("line {}: expected key = value", k + 1)))?;
        let key = key.trim().replace('_', "-");
        if key == "config" {
            return Err(Error::parse(path, format!("line {}: nested config files are not supported", k + 1)));
        }
        let arg = format!("--{key}={}", value.trim());
        FileArgs::try_parse_from([arg.as_str()])
            .map_err(|e| Error::parse(path, format!("line {}: {}", k + 1, first_line(&e.to_string()))))?;
        args.push(arg);
    }
    FileArgs::try_parse_from(&args)
        .map(|f| f.config)
        .map_err(|e| Error::parse(path, first_line(&e.to_string())))
}

fn first_line(s: &str) -> String {
    s.lines().next().unwrap_or_default().trim_start_matches("error: ").to_owned()
}

/// Output of a command: JSON text and whether it reports a failed check.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandOutput {
    pub json: String,
    pub failed: bool,
}

impl CommandOutput {
    fn ok(value: &impl Serialize) -> Result<Self> {
        Ok(Self {
            json: to_json(value)?,
            failed: false,
        })
    }
}

/// Pretty JSON with a trailing newline; key order is declaration order.
pub fn to_json(value: &impl Serialize) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Invariant(format!("JSON serialisation failed: {e}")))?;
    s.push('\n');
    Ok(s)
}

/// Observation ids plus surrogate for one model.
struct ModelInputs {
    ids: Vec<String>,
    surrogate: SurrogateVector,
    exact_path: PathBuf,
    exact: std::collections::HashMap<String, f64>,
}

struct ModelPaths<'a> {
    loglik: &'a Option<PathBuf>,
    dataset: &'a Option<PathBuf>,
    draws: &'a Option<PathBuf>,
    surrogate_file: &'a Option<PathBuf>,
    exact: &'a Option<PathBuf>,
    suffix: &'static str,
}

fn model_a(cfg: &RunConfig) -> ModelPaths<'_> {
    ModelPaths {
        loglik: &cfg.loglik,
        dataset: &cfg.dataset,
        draws: &cfg.draws,
        surrogate_file: &cfg.surrogate_file,
        exact: &cfg.exact,
        suffix: "",
    }
}

fn model_b(cfg: &RunConfig) -> ModelPaths<'_> {
    ModelPaths {
        loglik: &cfg.loglik_b,
        dataset: &cfg.dataset_b,
        draws: &cfg.draws_b,
        surrogate_file: &cfg.surrogate_file_b,
        exact: &cfg.exact_b,
        suffix: "-b",
    }
}

fn warn_if_large(cells: usize) {
    if cells > io::SIZE_WARNING_CELLS {
        eprintln!("warning: log-likelihood matrix has {cells} cells; memory use is proportional to draws × observations");
    }
}

/// Surrogate from a log-likelihood CSV or a dataset plus draws.
fn compute_surrogate(
    paths: &ModelPaths<'_>,
    method: SurrogateMethod,
    draws_used: Option<usize>,
) -> Result<(Vec<String>, SurrogateVector)> {
    match (paths.loglik, paths.dataset, paths.draws) {
        (Some(ll), _, _) if method.needs_only_loglik() => {
            let table = io::ingest_loglik_csv(ll)?;
            warn_if_large(table.matrix.draw_count() * table.matrix.obs_count());
            let sv = surrogate_from_loglik(&table.matrix, method, draws_used)?;
            Ok((table.obs_ids, sv))
        }
        (_, Some(ds), Some(dr)) => {
            let data = io::read_dataset_csv(ds)?;
            let draws = io::read_draws_csv(dr)?;
            warn_if_large(draws.nrows() * data.n());
            let sv = blr_surrogate(&data, &draws, method, draws_used)?;
            Ok((io::default_obs_ids(data.n()), sv))
        }
        _ => Err(Error::InvalidArgument(format!(
            "surrogate '{method}' needs {}--dataset{s} and --draws{s}",
            if method.needs_only_loglik() { format!("--loglik{} or ", paths.suffix) } else { String::new() },
            s = paths.suffix
        ))),
    }
}

fn load_model(cfg: &RunConfig, paths: &ModelPaths<'_>) -> Result<ModelInputs> {
    let method = *RunConfig::required(&cfg.surrogate, "surrogate")?;
    let exact_path = RunConfig::required(paths.exact, &format!("exact{}", paths.suffix))?.clone();
    let exact = io::read_exact_csv(&exact_path)?;
    let (ids, surrogate) = if let Some(file) = paths.surrogate_file {
        io::read_surrogate_csv(file, method)?
    } else if method == SurrogateMethod::Exact {
        let ids: Vec<String> = match (paths.loglik, paths.dataset) {
            (Some(ll), _) => io::ingest_loglik_csv(ll)?.obs_ids,
            (None, Some(ds)) => io::default_obs_ids(io::read_dataset_csv(ds)?.n()),
            (None, None) => {
                let mut ids: Vec<String> = exact.keys().cloned().collect();
                ids.sort_by(|a, b| natural_key(a).cmp(&natural_key(b)));
                ids
            }
        };
        let refs: Vec<&str> = ids.iter().map(String::as_str).collect();
        let values = io::lookup_exact(&exact_path, &exact, &refs)?;
        (ids, SurrogateVector::new(values, SurrogateMethod::Exact, 0)?)
    } else {
        compute_surrogate(paths, method, cfg.draws_used)?
    };
    Ok(ModelInputs {
        ids,
        surrogate,
        exact_path,
        exact,
    })
}

fn natural_key(id: &str) -> (u8, u64, &str) {
    match id.parse::<u64>() {
        Ok(v) => (0, v, id),
        Err(_) => (1, 0, id),
    }
}

fn make_plan(cfg: &RunConfig, surrogate: &SurrogateVector, seed: u64) -> Result<SubsamplePlan> {
    let n = surrogate.len();
    let m = *RunConfig::required(&cfg.m, "m")?;
    match cfg.scheme.unwrap_or(Scheme::SrsWor) {
        Scheme::SrsWor => srs_wor(n, m, seed),
        Scheme::SrsWr => srs_wr(n, m, seed),
        Scheme::PpsWr => pps_wr(&pps_weights_from_surrogate(surrogate.values())?, m, seed),
    }
}

fn exact_at(model: &ModelInputs, plan: &SubsamplePlan) -> Result<Vec<f64>> {
    let ids: Vec<&str> = plan.indices().iter().map(|&i| model.ids[i].as_str()).collect();
    io::lookup_exact(&model.exact_path, &model.exact, &ids)
}

fn pareto_json(surrogate: &SurrogateVector) -> Value {
    surrogate
        .pareto_k()
        .map_or(Value::Null, |k| serde_json::to_value(pareto_k_summary(k)).unwrap_or(Value::Null))
}

fn estimate_json(est: &ElpdEstimate, surrogate: &SurrogateVector, scheme: Scheme, seed: u64) -> Value {
    json!({
        "elpd_hat": est.elpd_hat,
        "se_subsampling": est.se_subsampling,
        "sigma_loo_hat": est.sigma_loo_hat,
        "n": est.n,
        "m": est.m,
        "estimator": est.estimator.name(),
        "surrogate": surrogate.method().name(),
        "seed": seed,
        "pareto_k_summary": pareto_json(surrogate),
        "scheme": scheme.name(),
        "draws_used": surrogate.draws_used(),
        "sigma_loo_degenerate": est.sigma_loo_degenerate(),
    })
}

pub fn cmd_estimate(cfg: &RunConfig) -> Result<CommandOutput> {
    let seed = cfg.seed()?;
    let model = load_model(cfg, &model_a(cfg))?;
    let plan = make_plan(cfg, &model.surrogate, seed)?;
    let est = estimate_model(&model.surrogate, &exact_at(&model, &plan)?, &plan)?;
    CommandOutput::ok(&estimate_json(&est, &model.surrogate, plan.scheme(), seed))
}

pub fn cmd_compare(cfg: &RunConfig) -> Result<CommandOutput> {
    let seed = cfg.seed()?;
    let a = load_model(cfg, &model_a(cfg))?;
    let b = load_model(cfg, &model_b(cfg))?;
    if a.ids != b.ids {
        let first = a.ids.iter().zip(&b.ids).position(|(x, y)| x != y);
        return Err(Error::InvalidArgument(match first {
            Some(i) => format!(
                "observation identifiers differ between models at position {}: '{}' vs '{}'",
                i + 1,
                a.ids[i],
                b.ids[i]
            ),
            None => format!(
                "models have different numbers of observations ({} vs {})",
                a.ids.len(),
                b.ids.len()
            ),
        }));
    }
    let plan = make_plan(cfg, &a.surrogate, seed)?;
    let r = compare_models(&a.surrogate, &b.surrogate, &exact_at(&a, &plan)?, &exact_at(&b, &plan)?, &plan)?;
    let out = json!({
        "elpd_d_hat": r.elpd_d_hat,
        "se_d": r.se_d,
        "sigma_d_hat": r.sigma_d_hat,
        "naive_sigma_d": r.naive_sigma_d,
        "per_model": [
            estimate_json(&r.per_model[0], &a.surrogate, plan.scheme(), seed),
            estimate_json(&r.per_model[1], &b.surrogate, plan.scheme(), seed),
        ],
        "n": plan.n(),
        "m": plan.m(),
        "scheme": plan.scheme().name(),
        "seed": seed,
        "sigma_d_degenerate": r.sigma_d_degenerate,
    });
    CommandOutput::ok(&out)
}

pub fn cmd_replicate(cfg: &RunConfig) -> Result<CommandOutput> {
    let seed = cfg.seed()?;
    let replicates = *RunConfig::required(&cfg.replicates, "replicates")?;
    let m = *RunConfig::required(&cfg.m, "m")?;
    let start = std::time::Instant::now();
    let model = load_model(cfg, &model_a(cfg))?;
    let ids: Vec<&str> = model.ids.iter().map(String::as_str).collect();
    let exact = io::lookup_exact(&model.exact_path, &model.exact, &ids)?;
    let mut report = replicate(
        &model.surrogate,
        &exact,
        m,
        cfg.scheme.unwrap_or(Scheme::SrsWor),
        replicates,
        seed,
    )?;
    if cfg.timing.unwrap_or(false) {
        report.wall_time_secs = Some(start.elapsed().as_secs_f64());
    }
    CommandOutput::ok(&report)
}

pub fn cmd_verify(cfg: &RunConfig) -> Result<CommandOutput> {
    let seed = cfg.seed()?;
    let grid = VerifyGrid {
        pairs: cfg.pairs.unwrap_or(VerifyGrid::default().pairs),
        ..VerifyGrid::default()
    };
    let report = verify_enumeration(&grid, seed)?;
    let mut out = CommandOutput::ok(&report)?;
    out.failed = !report.pass;
    Ok(out)
}

pub fn cmd_surrogate(cfg: &RunConfig) -> Result<CommandOutput> {
    let method = *RunConfig::required(&cfg.surrogate, "surrogate")?;
    let out = RunConfig::required(&cfg.out, "out")?;
    if method == SurrogateMethod::Exact {
        return Err(Error::InvalidArgument(
            "the exact surrogate is the exact LOO file itself; choose an approximate method".into(),
        ));
    }
    let (ids, sv) = compute_surrogate(&model_a(cfg), method, cfg.draws_used)?;
    io::write_surrogate_csv(out, &ids, &sv)?;
    CommandOutput::ok(&json!({
        "surrogate": method.name(),
        "n": sv.len(),
        "draws_used": sv.draws_used(),
        "pareto_k_summary": pareto_json(&sv),
    }))
}

pub fn cmd_simulate(cfg: &RunConfig) -> Result<CommandOutput> {
    let seed = cfg.seed()?;
    let dir = RunConfig::required(&cfg.out, "out")?;
    let spec = BlrFixtureSpec {
        n: *RunConfig::required(&cfg.n, "n")?,
        p: cfg.p.unwrap_or(5),
        target_r2: cfg.r2.unwrap_or(0.5),
        sparse: cfg.sparse.unwrap_or(false),
        draws: cfg.posterior_draws.unwrap_or(4000),
        seed,
    };
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let a = BlrFixture::simulate(&spec)?;
    let mut files = write_fixture(dir, &a, "")?;
    if cfg.nested.unwrap_or(false) {
        files.extend(write_fixture(dir, &a.nested(seed)?, "_b")?);
    }
    CommandOutput::ok(&json!({
        "n": spec.n,
        "p": spec.p,
        "target_r2": spec.target_r2,
        "sparse": spec.sparse,
        "posterior_draws": spec.draws,
        "seed": seed,
        "noise_sd": a.data.noise_sd,
        "elpd_loo": crate::numerics::pairwise_sum(&a.exact),
        "files": files,
    }))
}

fn write_fixture(dir: &Path, f: &BlrFixture, suffix: &str) -> Result<Vec<String>> {
    let ids = io::default_obs_ids(f.data.n());
    let names: Vec<String> = ["dataset", "draws", "loglik", "exact_loo"]
        .iter()
        .map(|s| format!("{s}{suffix}.csv"))
        .collect();
    io::write_dataset_csv(&dir.join(&names[0]), &f.data)?;
    io::write_draws_csv(&dir.join(&names[1]), &f.draws)?;
    io::export_loglik_csv(&dir.join(&names[2]), &ids, &f.loglik)?;
    io::write_exact_csv(&dir.join(&names[3]), &ids, &f.exact)?;
    Ok(names)
}

/// Writes `output.json` to `out` when the command's report goes to a file.
pub fn emit(command_writes_files: bool, cfg: &RunConfig, output: &CommandOutput) -> Result<Option<String>> {
    match (&cfg.out, command_writes_files) {
        (Some(path), false) => {
            io::write_atomic(path, output.json.as_bytes())?;
            Ok(None)
        }
        _ => Ok(Some(output.json.clone())),
    }
}
