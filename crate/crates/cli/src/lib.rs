//! The `attrib` command line: validate spaces, emit plans, execute runs,
//! analyze logs and run meta-evaluations.
//!
//! Exit codes: 0 success, 1 validation or domain error, 2 I/O error,
//! 3 run finished with failed trials.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use attrib_core::design::{self, FactorSplit};
use attrib_core::meta::Scenario;
use attrib_core::runner::{self, CommandTemplate, RunOptions};
use attrib_core::stats::{self, AverageKind, EffectEstimate, EffectOptions};
use attrib_core::{
    Aggregation, Backend, ConfigSpace, DesignPlan, Error, LogHeader, Method, RoleSet, RunLog,
    SyntheticModel,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

mod render;

use render::{Num, Table};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INVALID: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

const DEFAULT_ALPHA: f64 = 0.01;
const DEFAULT_BUDGET: u64 = 10_000_000;

#[derive(Parser, Debug)]
#[command(name = "attrib", version, about = "Attribute measured effects to one component under investigation")]
pub struct Cli {
    /// Master seed for planning and meta-evaluation.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Significance level for tests and intervals.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Output format for reports.
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
    /// Write the command's data output to this file instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Print numbers at full precision instead of 6 decimals.
    #[arg(long, global = true)]
    raw: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Text,
    Csv,
    Markdown,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Inspect a configuration space document.
    Space {
        #[command(subcommand)]
        action: SpaceAction,
    },
    /// Build a design plan.
    Plan {
        #[command(subcommand)]
        method: PlanMethod,
    },
    /// Execute a plan and append measurements to a log.
    Run(RunArgs),
    /// Analyze a measurement log.
    Analyze {
        #[command(subcommand)]
        analysis: Analysis,
    },
    /// Accuracy-versus-cost meta-evaluation of a scenario.
    Meta(MetaArgs),
}

#[derive(Subcommand, Debug)]
enum SpaceAction {
    /// Validate the document and summarize it.
    Validate { space: PathBuf },
    /// Print configuration counts per role.
    Size { space: PathBuf },
}

#[derive(Args, Debug)]
struct SpaceArg {
    /// Configuration space document.
    #[arg(long)]
    space: PathBuf,
}

#[derive(Subcommand, Debug)]
enum PlanMethod {
    /// Every valid configuration, r times.
    FullFactorial {
        #[command(flatten)]
        space: SpaceArg,
        #[arg(long, default_value_t = 1)]
        r: u32,
        /// Maximum number of trials.
        #[arg(long, default_value_t = DEFAULT_BUDGET)]
        budget: u64,
    },
    /// 2^k r design over two-interval factors.
    #[command(name = "2kr")]
    TwoKr {
        #[command(flatten)]
        space: SpaceArg,
        /// Interval split `factor=low1,low2:high1,high2`; repeatable.
        #[arg(long = "split")]
        splits: Vec<String>,
        /// Split every remaining multi-level factor at its midpoint.
        #[arg(long)]
        split_all: bool,
        /// Fixed level `factor=level` for an unsplit factor; repeatable.
        #[arg(long = "pin")]
        pins: Vec<String>,
        #[arg(long, default_value_t = 1)]
        r: u32,
        /// Repeat the design for every level of this factor.
        #[arg(long)]
        per_stratum: Option<String>,
    },
    /// Randomized controlled trial over the DC space.
    Rct {
        #[command(flatten)]
        space: SpaceArg,
        #[arg(long)]
        control: String,
        #[arg(long)]
        treatment: String,
        /// Total configurations, split evenly between the arms.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        r: u32,
    },
    /// Paired design: each sampled DC configuration with both CUI levels.
    Paired {
        #[command(flatten)]
        space: SpaceArg,
        #[arg(long)]
        cui_a: String,
        #[arg(long)]
        cui_ref: String,
        /// DC configurations to sample.
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        r: u32,
        /// Stratify the DC sample over this factor.
        #[arg(long)]
        stratum: Option<String>,
    },
}

#[derive(Args, Debug)]
struct RunArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    space: PathBuf,
    /// JSON-lines measurement log; resumed if it exists.
    #[arg(long)]
    log: PathBuf,
    /// Synthetic model document.
    #[arg(long, conflicts_with = "command", required_unless_present = "command")]
    model: Option<PathBuf>,
    /// External command template with `{factor}`, `{replicate}` and `{seed}` placeholders.
    #[arg(long)]
    command: Option<String>,
    #[arg(long)]
    parallelism: Option<usize>,
    /// Extra attempts for failed external trials.
    #[arg(long, default_value_t = 0)]
    retry: u32,
    /// Unit recorded in a new log header.
    #[arg(long, default_value = "s")]
    unit: String,
}

#[derive(Args, Debug)]
struct LogArgs {
    #[arg(long)]
    log: PathBuf,
    #[arg(long)]
    plan: PathBuf,
    #[arg(long, default_value = "median")]
    aggregation: Aggregation,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum AverageArg {
    Arithmetic,
    Geometric,
    /// Weights from the DC level weights of the space.
    Weighted,
}

#[derive(Args, Debug)]
struct EffectArgs {
    #[command(flatten)]
    log: LogArgs,
    /// Space document; required for weighted averages and factorial plans.
    #[arg(long)]
    space: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = AverageArg::Arithmetic)]
    average: AverageArg,
    /// Null-hypothesis effect.
    #[arg(long, default_value_t = 0.0, allow_hyphen_values = true)]
    mu0: f64,
    /// Attributed level for factorial plans.
    #[arg(long)]
    cui_a: Option<String>,
    /// Reference level for factorial plans.
    #[arg(long)]
    cui_ref: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Analysis {
    /// Effect estimate with interval: paired, RCT or factorial contrast.
    Effect(EffectArgs),
    /// One-sample t-test on the paired differences.
    Ttest(EffectArgs),
    /// n-way ANOVA of a replicated full-factorial log.
    Anova {
        #[command(flatten)]
        log: LogArgs,
        #[arg(long)]
        space: PathBuf,
    },
    /// Per-pair differences of a paired log.
    Diffs {
        #[command(flatten)]
        log: LogArgs,
    },
}

#[derive(Args, Debug)]
struct MetaArgs {
    scenario: PathBuf,
    /// Override the scenario's iteration count.
    #[arg(long)]
    iterations: Option<u64>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_INVALID,
            CliError::Core(e) if e.is_io() => EXIT_IO,
            CliError::Core(_) => EXIT_INVALID,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) => f.write_str(m),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage(message: impl Into<String>) -> CliError {
    CliError::Usage(message.into())
}

/// Run the CLI on `args` (including the program name) and return the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{}", e.render());
                    EXIT_OK
                }
                _ => EXIT_INVALID,
            };
        }
    };
    let mut ctx = Context {
        cli: &cli,
        stdout,
        stderr,
    };
    match ctx.dispatch() {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(ctx.stderr, "error: {e}");
            e.code()
        }
    }
}

struct Context<'a> {
    cli: &'a Cli,
    stdout: &'a mut dyn Write,
    stderr: &'a mut dyn Write,
}

impl Context<'_> {
    fn dispatch(&mut self) -> CliResult<i32> {
        let alpha = self.cli.alpha.unwrap_or(DEFAULT_ALPHA);
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(usage(format!("--alpha {alpha} is outside (0, 1)")));
        }
        match &self.cli.command {
            Command::Space { action } => self.space(action),
            Command::Plan { method } => self.plan(method),
            Command::Run(args) => self.run(args),
            Command::Analyze { analysis } => self.analyze(analysis, alpha),
            Command::Meta(args) => self.meta(args),
        }
    }

    fn num(&self, x: f64) -> Num {
        Num::new(x, self.cli.raw)
    }

    fn format_or(&self, default: Format) -> Format {
        self.cli.format.unwrap_or(default)
    }

    /// Data output: `--out` if given, otherwise stdout.
    fn emit(&mut self, text: &str) -> CliResult<()> {
        match &self.cli.out {
            Some(path) => write_file(path, text),
            None => self
                .stdout
                .write_all(text.as_bytes())
                .map_err(|e| io_error("<stdout>", e)),
        }
    }

    fn say(&mut self, line: &str) -> CliResult<()> {
        writeln!(self.stdout, "{line}").map_err(|e| io_error("<stdout>", e))
    }

    fn warn(&mut self, line: &str) {
        let _ = writeln!(self.stderr, "{line}");
    }

    fn space(&mut self, action: &SpaceAction) -> CliResult<i32> {
        match action {
            SpaceAction::Validate { space } => {
                let s = ConfigSpace::load(space)?;
                let cui = s.cui_factor();
                let text = format!(
                    "valid: {} factors, {} exclusions, CUI '{}' with {} levels, DC cardinality: {}\n",
                    s.factors().len(),
                    s.exclusions().len(),
                    cui.name,
                    cui.levels.len(),
                    s.cartesian_size(RoleSet::DC)
                );
                self.emit(&text)?;
            }
            SpaceAction::Size { space } => {
                let s = ConfigSpace::load(space)?;
                let text = format!(
                    "DC cardinality: {}\nCUI cardinality: {}\nTotal cardinality: {}\n",
                    s.cartesian_size(RoleSet::DC),
                    s.cartesian_size(RoleSet::CUI),
                    s.cartesian_size(RoleSet::ALL)
                );
                self.emit(&text)?;
            }
        }
        Ok(EXIT_OK)
    }

    fn plan(&mut self, method: &PlanMethod) -> CliResult<i32> {
        let seed = self.cli.seed.unwrap_or(0);
        let plan = match method {
            PlanMethod::FullFactorial { space, r, budget } => {
                let s = ConfigSpace::load(&space.space)?;
                let mut plan = design::full_factorial(&s, *r, *budget)?;
                plan.master_seed = seed;
                reseed(&mut plan);
                plan
            }
            PlanMethod::TwoKr {
                space,
                splits,
                split_all,
                pins,
                r,
                per_stratum,
            } => {
                let s = ConfigSpace::load(&space.space)?;
                let mut split = BTreeMap::new();
                for text in splits {
                    let (name, value) = parse_split(text)?;
                    split.insert(name, value);
                }
                let pinned = parse_assignments(pins, "--pin")?;
                if *split_all {
                    for f in s.factors() {
                        let skip = split.contains_key(&f.name)
                            || pinned.contains_key(&f.name)
                            || per_stratum.as_deref() == Some(f.name.as_str());
                        if f.levels.len() > 1 && !skip {
                            let labels: Vec<String> = f.levels.iter().map(|l| l.label.clone()).collect();
                            let mid = labels.len() / 2;
                            split.insert(
                                f.name.clone(),
                                FactorSplit::new(labels[..mid].to_vec(), labels[mid..].to_vec()),
                            );
                        }
                    }
                }
                match per_stratum {
                    Some(stratum) => {
                        if !pinned.is_empty() {
                            return Err(usage("--pin cannot be combined with --per-stratum"));
                        }
                        design::factorial_2kr_per_stratum(&s, stratum, &split, *r, seed)?
                    }
                    None => design::factorial_2kr(&s, &split, &pinned, *r, seed)?,
                }
            }
            PlanMethod::Rct {
                space,
                control,
                treatment,
                n,
                r,
            } => {
                let s = ConfigSpace::load(&space.space)?;
                design::rct_plan(&s, control, treatment, *n, *r, seed)?
            }
            PlanMethod::Paired {
                space,
                cui_a,
                cui_ref,
                n,
                r,
                stratum,
            } => {
                let s = ConfigSpace::load(&space.space)?;
                let dc = match stratum {
                    Some(f) => design::stratified_sample(&s, f, *n, seed)?,
                    None => design::simple_random_sample(&s, RoleSet::DC, *n, seed)?,
                };
                design::paired_plan(&s, cui_a, cui_ref, &dc, *r, seed)?
            }
        };
        let summary = format!(
            "configs={} trials={} cost={}",
            plan.config_count(),
            plan.trials.len(),
            plan.cost()
        );
        let mut doc = plan.to_json();
        doc.push('\n');
        match &self.cli.out {
            Some(path) => {
                write_file(path, &doc)?;
                self.say(&summary)?;
            }
            None => {
                self.emit(&doc)?;
                self.warn(&summary);
            }
        }
        Ok(EXIT_OK)
    }

    fn run(&mut self, args: &RunArgs) -> CliResult<i32> {
        let space = ConfigSpace::load(&args.space)?;
        let plan = load_plan(&args.plan)?;
        let backend = match (&args.model, &args.command) {
            (Some(path), None) => Backend::Synthetic(load_model(path)?),
            (None, Some(template)) => Backend::External(CommandTemplate::new(template.clone())),
            _ => return Err(usage("exactly one of --model or --command is required")),
        };
        let header = LogHeader::for_plan(&plan, &backend, args.unit.clone());
        let mut log = RunLog::open_or_create(&args.log, header)?;
        let options = RunOptions {
            parallelism: args.parallelism,
            retry: args.retry,
            ..RunOptions::default()
        };
        let summary = runner::run(&plan, &space, &backend, &mut log, &options)?;
        let failed = failed_trials(&log, &plan);
        self.say(&format!("{} new trials", summary.new))?;
        self.say(&format!("{failed} failed"))?;
        if failed > 0 {
            self.warn(&format!("{failed} trials failed; rerun with --retry or inspect the log"));
            return Ok(EXIT_PARTIAL);
        }
        Ok(EXIT_OK)
    }

    fn analyze(&mut self, analysis: &Analysis, alpha: f64) -> CliResult<i32> {
        match analysis {
            Analysis::Effect(args) => {
                let (est, plan) = self.effect(args, alpha, false)?;
                let text = self.effect_report(&est, plan.method, self.format_or(Format::Text), false);
                self.emit(&text)?;
            }
            Analysis::Ttest(args) => {
                let (est, plan) = self.effect(args, alpha, true)?;
                let text = self.effect_report(&est, plan.method, self.format_or(Format::Text), true);
                self.emit(&text)?;
            }
            Analysis::Anova { log, space } => {
                let s = ConfigSpace::load(space)?;
                let (plan, run_log) = load_log_for(&log.plan, &log.log)?;
                let table = stats::anova(&run_log, &plan, &s, alpha)?;
                let text = self.anova_report(&table);
                self.emit(&text)?;
            }
            Analysis::Diffs { log } => {
                let (plan, run_log) = load_log_for(&log.plan, &log.log)?;
                let sample = stats::paired_diffs(&run_log, &plan, log.aggregation)?;
                let mut table = Table::new(&["pair", "diff"]);
                for (i, d) in sample.diffs.iter().enumerate() {
                    table.push(vec![i.to_string(), self.num(*d).to_string()]);
                }
                let text = table.render(self.format_or(Format::Csv));
                self.emit(&text)?;
            }
        }
        Ok(EXIT_OK)
    }

    fn effect(&self, args: &EffectArgs, alpha: f64, ttest_only: bool) -> CliResult<(EffectEstimate, DesignPlan)> {
        let (plan, log) = load_log_for(&args.log.plan, &args.log.log)?;
        let space = args.space.as_ref().map(ConfigSpace::load).transpose()?;
        let average = match args.average {
            AverageArg::Arithmetic => AverageKind::Arithmetic,
            AverageArg::Geometric => AverageKind::Geometric,
            AverageArg::Weighted => {
                let s = space
                    .as_ref()
                    .ok_or_else(|| usage("--average weighted needs --space for the DC level weights"))?;
                let weights = design::paired_dc_sample(s, &plan)
                    .iter()
                    .map(|dc| s.weight_of(dc))
                    .collect::<attrib_core::Result<Vec<f64>>>()?;
                AverageKind::Weighted(weights)
            }
        };
        if ttest_only && plan.method != Method::Paired {
            return Err(usage(format!("ttest needs a paired plan, got {}", plan.method)));
        }
        if plan.method != Method::Paired && average != AverageKind::Arithmetic {
            return Err(usage("--average applies to paired plans only"));
        }
        let options = EffectOptions {
            alpha,
            mu0: args.mu0,
            aggregation: args.log.aggregation,
            average,
        };
        let est = match plan.method {
            Method::Paired => stats::paired_effect(&log, &plan, &options)?,
            Method::Rct => stats::ate(&log, &plan, &options)?,
            Method::Factorial2kr => {
                let s = space
                    .as_ref()
                    .ok_or_else(|| usage("factorial plans need --space"))?;
                let (a, r) = match (&args.cui_a, &args.cui_ref) {
                    (Some(a), Some(r)) => (a, r),
                    _ => return Err(usage("factorial plans need --cui-a and --cui-ref")),
                };
                stats::factorial_effect(&log, &plan, s, a, r, &options)?
            }
            Method::FullFactorial => {
                return Err(usage("full_factorial plans are analyzed with `analyze anova`"));
            }
        };
        Ok((est, plan))
    }

    fn effect_report(&self, est: &EffectEstimate, method: Method, format: Format, ttest: bool) -> String {
        let n = |x: f64| self.num(x).to_string();
        if format == Format::Text {
            let mut line = format!("delta_e={} verdict={}", n(est.delta_e), est.verdict);
            if ttest {
                line.push_str(&format!(
                    " t={} t_critical={} mu0={}",
                    n(est.t_value),
                    n(est.t_critical),
                    n(est.mu0)
                ));
            }
            line.push_str(&format!(
                " ci=[{}, {}] n={} alpha={}\n",
                n(est.ci.0),
                n(est.ci.1),
                est.n,
                n(est.alpha)
            ));
            return line;
        }
        let mut table = Table::new(&[
            "method",
            "n",
            "delta_e",
            "mean",
            "s",
            "std_error",
            "df",
            "alpha",
            "mu0",
            "t_value",
            "t_critical",
            "ci_lower",
            "ci_upper",
            "verdict",
            "average_kind",
        ]);
        table.push(vec![
            method.to_string(),
            est.n.to_string(),
            n(est.delta_e),
            n(est.mean),
            est.s.map(n).unwrap_or_default(),
            n(est.std_error),
            n(est.df),
            n(est.alpha),
            n(est.mu0),
            n(est.t_value),
            n(est.t_critical),
            n(est.ci.0),
            n(est.ci.1),
            est.verdict.to_string(),
            est.average_kind.name().to_string(),
        ]);
        table.render(format)
    }

    fn anova_report(&self, t: &stats::AnovaTable) -> String {
        let n = |x: f64| self.num(x).to_string();
        let mut table = Table::new(&["component", "ss", "df", "pct", "f_computed", "f_critical", "significant"]);
        for row in &t.rows {
            table.push(vec![
                row.label(),
                n(row.ss),
                row.df.to_string(),
                n(row.pct),
                n(row.f_computed),
                n(row.f_critical),
                row.significant.to_string(),
            ]);
        }
        table.push(vec![
            "error".into(),
            n(t.error_row.ss),
            t.error_row.df.to_string(),
            n(t.error_row.pct),
            String::new(),
            String::new(),
            String::new(),
        ]);
        table.render(self.format_or(Format::Csv))
    }

    fn meta(&mut self, args: &MetaArgs) -> CliResult<i32> {
        let mut scenario = Scenario::load(&args.scenario)?;
        if let Some(seed) = self.cli.seed {
            scenario.master_seed = seed;
        }
        if let Some(alpha) = self.cli.alpha {
            scenario.alpha = alpha;
        }
        if let Some(iterations) = args.iterations {
            scenario.iterations = iterations;
        }
        let rows = scenario.accuracy_cost()?;
        let n = |x: f64| self.num(x).to_string();
        let mut table = Table::new(&[
            "method",
            "n",
            "r",
            "cost",
            "iterations",
            "covered",
            "accuracy",
            "mean_ci_width",
            "ground_truth",
        ]);
        for row in &rows {
            table.push(vec![
                row.method.clone(),
                row.n.to_string(),
                row.r.to_string(),
                row.cost.to_string(),
                row.iterations.to_string(),
                row.covered.to_string(),
                n(row.accuracy),
                n(row.mean_ci_width),
                n(row.ground_truth),
            ]);
        }
        let text = table.render(self.format_or(Format::Csv));
        self.emit(&text)?;
        Ok(EXIT_OK)
    }
}

/// Plans built outside the seeded samplers still get seeds derived from
/// the requested master seed.
fn reseed(plan: &mut DesignPlan) {
    let master = plan.master_seed;
    for t in &mut plan.trials {
        t.seed = design::trial_seed(master, &t.config, t.replicate);
    }
}

fn io_error(path: impl Into<PathBuf>, source: std::io::Error) -> CliError {
    CliError::Core(Error::Io {
        path: path.into(),
        source,
    })
}

fn write_file(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn read_file(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|e| io_error(path, e))
}

fn load_plan(path: &Path) -> CliResult<DesignPlan> {
    Ok(DesignPlan::from_json(&read_file(path)?)?)
}

fn load_model(path: &Path) -> CliResult<SyntheticModel> {
    serde_json::from_str(&read_file(path)?).map_err(|source| {
        CliError::Core(Error::Json {
            context: format!("model document {}", path.display()),
            source,
        })
    })
}

fn load_log_for(plan_path: &Path, log_path: &Path) -> CliResult<(DesignPlan, RunLog)> {
    let plan = load_plan(plan_path)?;
    let log = RunLog::open(log_path)?;
    if log.header().plan_digest != plan.digest() {
        return Err(CliError::Core(Error::LogMismatch(format!(
            "log {} was not recorded for plan {}",
            log_path.display(),
            plan_path.display()
        ))));
    }
    Ok((plan, log))
}

fn failed_trials(log: &RunLog, plan: &DesignPlan) -> usize {
    let mut seen = std::collections::HashSet::new();
    plan.trials
        .iter()
        .filter(|t| seen.insert((t.config.id(), t.replicate)))
        .filter(|t| matches!(log.get(t.config.id(), t.replicate), Some(m) if m.ok_value().is_none()))
        .count()
}

fn parse_assignments(items: &[String], flag: &str) -> CliResult<BTreeMap<String, String>> {
    items
        .iter()
        .map(|item| {
            item.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .filter(|(k, v)| !k.is_empty() && !v.is_empty())
                .ok_or_else(|| usage(format!("{flag} expects factor=level, got '{item}'")))
        })
        .collect()
}

fn parse_split(text: &str) -> CliResult<(String, FactorSplit)> {
    let bad = || usage(format!("--split expects factor=low1,low2:high1,high2, got '{text}'"));
    let (name, blocks) = text.split_once('=').ok_or_else(bad)?;
    let (low, high) = blocks.split_once(':').ok_or_else(bad)?;
    let labels = |s: &str| -> Vec<String> {
        s.split(',')
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(String::from)
            .collect()
    };
    Ok((name.trim().to_string(), FactorSplit::new(labels(low), labels(high))))
}
