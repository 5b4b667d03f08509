//! Command-line front end.
//!
//! Exit codes: 0 on success, 2 on invalid input or usage, 3 when a fit did
//! not converge (outputs are still written).

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::builder::RangedU64ValueParser;
use clap::{Args, Parser, Subcommand};
use log::{error, info, warn};
use serde::Serialize;

use crate::baselines::Linkage;
use crate::cohort::{load_cohort, save_cohort, Cohort, Schema};
use crate::hydra::EmptyClusterPolicy;
use crate::pipeline::{fit, Method, MethodConfig, ModelDocument};
use crate::validation::{
    generate_semi_simulated, permutation_test, scan_k, split_half_reproducibility, stability_at_k, Direction,
    KStability, PermutationResult, ResampleOptions, SimSpec, StabilityReport,
};
use crate::{Error, Result};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 2;
pub const EXIT_NOT_CONVERGED: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "subtype", version, about = "Semi-supervised disease subtyping from case/control cohorts")]
pub struct Cli {
    /// Worker threads for restarts and resamples (default: all cores).
    #[arg(long, global = true, value_parser = RangedU64ValueParser::<usize>::new().range(1..))]
    pub jobs: Option<usize>,
    /// Increase log detail (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a subtyping model and write the model and the assignment table.
    Fit(FitArgs),
    /// Label the samples of a cohort with a fitted model.
    Assign(AssignArgs),
    /// Generate a semi-simulated cohort with planted subtypes.
    Simulate(SimulateArgs),
    /// Choose k by resampling stability.
    ScanK(ScanArgs),
    /// Split-half reproducibility and permutation test at one k.
    Validate(ValidateArgs),
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Cohort CSV.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "id")]
    pub id_column: String,
    #[arg(long, default_value = "label")]
    pub label_column: String,
    #[arg(long, default_value = "cov_")]
    pub covariate_prefix: String,
    #[arg(long, default_value = "f_")]
    pub feature_prefix: String,
}

impl InputArgs {
    fn schema(&self) -> Schema {
        Schema {
            id_column: self.id_column.clone(),
            label_column: self.label_column.clone(),
            covariate_prefix: self.covariate_prefix.clone(),
            feature_prefix: self.feature_prefix.clone(),
        }
    }

    fn load(&self) -> Result<Cohort> {
        Ok(load_cohort(&self.input, &self.schema())?)
    }
}

/// Method choice and its tuning options; unset options keep their defaults.
#[derive(Debug, Args)]
pub struct MethodArgs {
    #[arg(long, value_enum, default_value_t = Method::Hydra)]
    pub method: Method,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// HYDRA hinge penalty.
    #[arg(long)]
    pub mu: Option<f64>,
    /// Restarts of HYDRA and of the chimera EM.
    #[arg(long)]
    pub restarts: Option<usize>,
    #[arg(long)]
    pub max_alternations: Option<usize>,
    #[arg(long, value_enum)]
    pub empty_cluster: Option<EmptyClusterPolicy>,
    #[arg(long)]
    pub svm_tol: Option<f64>,
    #[arg(long)]
    pub svm_max_iter: Option<usize>,
    /// MAGIC scales, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub scales: Option<Vec<usize>>,
    #[arg(long)]
    pub nmf_max_iter: Option<usize>,
    #[arg(long)]
    pub nmf_tol: Option<f64>,
    #[arg(long)]
    pub em_max_iter: Option<usize>,
    #[arg(long)]
    pub em_tol: Option<f64>,
    #[arg(long)]
    pub sigma2_floor: Option<f64>,
    #[arg(long)]
    pub kmeans_restarts: Option<usize>,
    #[arg(long)]
    pub kmeans_max_iter: Option<usize>,
    #[arg(long, value_enum)]
    pub linkage: Option<Linkage>,
}

impl MethodArgs {
    pub fn config(&self, k: usize) -> MethodConfig {
        let mut c = MethodConfig::new(self.method, k, self.seed);
        macro_rules! set {
            ($($field:ident <- $arg:ident),*) => {
                $(if let Some(v) = self.$arg.clone() { c.$field = v; })*
            };
        }
        set!(
            mu <- mu,
            n_restarts <- restarts,
            max_alternations <- max_alternations,
            empty_cluster_policy <- empty_cluster,
            svm_tol <- svm_tol,
            svm_max_iter <- svm_max_iter,
            nmf_max_iter <- nmf_max_iter,
            nmf_tol <- nmf_tol,
            em_max_iter <- em_max_iter,
            em_tol <- em_tol,
            sigma2_floor <- sigma2_floor,
            kmeans_restarts <- kmeans_restarts,
            kmeans_max_iter <- kmeans_max_iter,
            linkage <- linkage
        );
        if self.scales.is_some() {
            c.scales = self.scales.clone();
        }
        c
    }
}

fn positive() -> RangedU64ValueParser<usize> {
    RangedU64ValueParser::<usize>::new().range(1..)
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub method: MethodArgs,
    /// Number of subtypes.
    #[arg(long, value_parser = positive())]
    pub k: usize,
    /// Model document (JSON).
    #[arg(long)]
    pub output: PathBuf,
    /// Assignment table; defaults to `<output stem>.assignments.csv`.
    #[arg(long)]
    pub assignments: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AssignArgs {
    #[command(flatten)]
    pub input: InputArgs,
    /// Model document written by `fit`.
    #[arg(long)]
    pub model: PathBuf,
    /// Fail unless the model is of this kind.
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    /// Assignment table; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 2, value_parser = positive())]
    pub k: usize,
    /// Shift in control standard deviations.
    #[arg(long, default_value_t = 1.5)]
    pub effect: f64,
    #[arg(long, default_value_t = 0.2)]
    pub fraction: f64,
    #[arg(long, default_value_t = 0.0)]
    pub overlap: f64,
    #[arg(long, value_enum, default_value_t = Direction::Decrease)]
    pub direction: Direction,
    #[arg(long, default_value_t = 200)]
    pub controls: usize,
    #[arg(long, default_value_t = 200)]
    pub patients: usize,
    #[arg(long, default_value_t = 100)]
    pub p: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Cohort CSV; standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Planted subtype of every patient (`id,subtype`).
    #[arg(long)]
    pub truth: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ResampleArgs {
    #[arg(long, default_value_t = 10, value_parser = positive())]
    pub resamples: usize,
    /// Fraction of patients in each subsample.
    #[arg(long, default_value_t = 0.8)]
    pub subsample: f64,
}

#[derive(Debug, Args)]
pub struct ScanArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub method: MethodArgs,
    #[command(flatten)]
    pub resample: ResampleArgs,
    #[arg(long, default_value_t = 2, value_parser = positive())]
    pub kmin: usize,
    #[arg(long, default_value_t = 5, value_parser = positive())]
    pub kmax: usize,
    /// Also run a permutation test at the selected k.
    #[arg(long)]
    pub permutations: Option<usize>,
    /// Report (JSON); standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub method: MethodArgs,
    #[command(flatten)]
    pub resample: ResampleArgs,
    #[arg(long, value_parser = positive())]
    pub k: usize,
    #[arg(long, default_value_t = 10)]
    pub splits: usize,
    #[arg(long, default_value_t = 99)]
    pub permutations: usize,
    /// Report (JSON); standard output when omitted.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct ScanReport<'a> {
    command: &'static str,
    input: &'a Path,
    #[serde(flatten)]
    report: StabilityReport,
    permutation: Option<PermutationResult>,
}

#[derive(Debug, Serialize)]
struct SplitHalfSummary {
    n_splits: usize,
    aris: Vec<f64>,
    median: Option<f64>,
}

#[derive(Debug, Serialize)]
struct ValidateReport<'a> {
    command: &'static str,
    input: &'a Path,
    config: MethodConfig,
    resampling: ResampleOptions,
    k: usize,
    stability: KStability,
    split_half: SplitHalfSummary,
    permutation: PermutationResult,
}

/// Parses `args` and runs the command, returning the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INVALID } else { EXIT_OK };
        }
    };
    init_logging(cli.verbose);
    let outcome = match cli.jobs {
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| run(&cli.command)),
            Err(e) => Err(Error::Model(format!("thread pool: {e}"))),
        },
        None => run(&cli.command),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            EXIT_INVALID
        }
    }
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

pub fn run(command: &Command) -> Result<i32> {
    match command {
        Command::Fit(a) => cmd_fit(a),
        Command::Assign(a) => cmd_assign(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::ScanK(a) => cmd_scan_k(a),
        Command::Validate(a) => cmd_validate(a),
    }
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => io::stdout().lock().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

/// `id,label,subtype` rows in cohort order; controls carry `reference`.
pub fn assignment_table(cohort: &Cohort, assigned: &[Option<usize>]) -> String {
    let mut out = String::from("id,label,subtype\n");
    for ((id, label), a) in cohort.sample_ids.iter().zip(&cohort.labels).zip(assigned) {
        let subtype = a.map_or_else(|| "reference".to_string(), |l| (l + 1).to_string());
        out.push_str(&format!("{id},{},{subtype}\n", label.code()));
    }
    out
}

fn default_assignments_path(model: &Path) -> PathBuf {
    let stem = model.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into());
    model.with_file_name(format!("{stem}.assignments.csv"))
}

pub fn cmd_fit(args: &FitArgs) -> Result<i32> {
    let cohort = args.input.load()?;
    let cfg = args.method.config(args.k);
    let outcome = fit(&cohort, &cfg)?;
    fs::write(&args.output, outcome.document.to_json()?)?;
    let assigned = outcome.document.assign(&cohort)?;
    let table_path = args.assignments.clone().unwrap_or_else(|| default_assignments_path(&args.output));
    fs::write(&table_path, assignment_table(&cohort, &assigned))?;
    info!("wrote {} and {}", args.output.display(), table_path.display());
    if outcome.converged {
        Ok(EXIT_OK)
    } else {
        warn!("{} fit did not converge; model written with converged = false", cfg.method.name());
        eprintln!("warning: fit did not converge");
        Ok(EXIT_NOT_CONVERGED)
    }
}

pub fn cmd_assign(args: &AssignArgs) -> Result<i32> {
    let doc = ModelDocument::from_json(&fs::read_to_string(&args.model)?)?;
    if let Some(m) = args.method {
        if m != doc.method() {
            return Err(Error::Model(format!(
                "model kind is `{}` but `{}` was requested",
                doc.method().name(),
                m.name()
            )));
        }
    }
    let cohort = args.input.load()?;
    let assigned = doc.assign(&cohort)?;
    write_output(args.output.as_deref(), &assignment_table(&cohort, &assigned))?;
    Ok(EXIT_OK)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<i32> {
    let spec = SimSpec {
        k_planted: args.k,
        effect_size: args.effect,
        affected_fraction: args.fraction,
        overlap: args.overlap,
        direction: args.direction,
        n_controls: args.controls,
        n_patients: args.patients,
        p: args.p,
        seed: args.seed,
    };
    let (cohort, truth) = generate_semi_simulated(&spec)?;
    match &args.output {
        Some(path) => save_cohort(path, &cohort)?,
        None => crate::cohort::write_cohort(io::stdout().lock(), &cohort)?,
    }
    if let Some(path) = &args.truth {
        let mut out = String::from("id,subtype\n");
        for (id, l) in cohort.patient_ids().iter().zip(&truth.planted) {
            out.push_str(&format!("{id},{}\n", l + 1));
        }
        fs::write(path, out)?;
    }
    Ok(EXIT_OK)
}

fn resample_options(args: &ResampleArgs, seed: u64) -> ResampleOptions {
    ResampleOptions { n_resamples: args.resamples, subsample_fraction: args.subsample, seed }
}

pub fn cmd_scan_k(args: &ScanArgs) -> Result<i32> {
    let cohort = args.input.load()?;
    let cfg = args.method.config(args.kmin);
    let opts = resample_options(&args.resample, args.method.seed);
    let mut report = scan_k(&cohort, &cfg, args.kmin, args.kmax, &opts)?;
    let permutation = match (args.permutations, report.selected_k) {
        (Some(n), Some(k)) => {
            let result = permutation_test(&cohort, &cfg.with_k(k), &opts, n)?;
            report.p_value = Some(result.p_value);
            Some(result)
        }
        _ => None,
    };
    let selected = report.selected_k;
    let doc = ScanReport { command: "scan-k", input: &args.input.input, report, permutation };
    write_output(args.output.as_deref(), &to_json(&doc)?)?;
    match selected {
        Some(_) => Ok(EXIT_OK),
        None => {
            eprintln!("warning: no k produced a stability estimate");
            Ok(EXIT_NOT_CONVERGED)
        }
    }
}

pub fn cmd_validate(args: &ValidateArgs) -> Result<i32> {
    let cohort = args.input.load()?;
    let cfg = args.method.config(args.k);
    let opts = resample_options(&args.resample, args.method.seed);
    let stability = stability_at_k(&cohort, &cfg, &opts)?;
    let aris = split_half_reproducibility(&cohort, &cfg, args.splits, args.method.seed)?;
    let permutation = permutation_test(&cohort, &cfg, &opts, args.permutations)?;
    let doc = ValidateReport {
        command: "validate",
        input: &args.input.input,
        config: cfg,
        resampling: opts,
        k: args.k,
        stability,
        split_half: SplitHalfSummary { n_splits: args.splits, median: median(&aris), aris },
        permutation,
    };
    write_output(args.output.as_deref(), &to_json(&doc)?)?;
    Ok(EXIT_OK)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}
