//! Execute design plans against a measurement backend, persist the
//! measurements as an append-only log, and collapse replicates.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::design::{DesignPlan, Trial};
use crate::error::{Error, Result};
use crate::hash::sha256_hex;
use crate::space::{ConfigId, ConfigSpace, Configuration, Role, RoleSet, SubSpace};

/// How replicates of one configuration are reduced to a single value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    Mean,
    #[default]
    Median,
}

impl std::str::FromStr for Aggregation {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mean" => Ok(Aggregation::Mean),
            "median" => Ok(Aggregation::Median),
            other => Err(format!("unknown aggregation '{other}' (expected mean or median)")),
        }
    }
}

pub fn aggregate(values: &[f64], method: Aggregation) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Domain("cannot aggregate an empty sample".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("cannot aggregate non-finite values".into()));
    }
    Ok(match method {
        Aggregation::Mean => crate::stats::sample_mean(values)?,
        Aggregation::Median => {
            let mut sorted = values.to_vec();
            sorted.sort_by(f64::total_cmp);
            let mid = sorted.len() / 2;
            if sorted.len() % 2 == 1 {
                sorted[mid]
            } else {
                (sorted[mid - 1] + sorted[mid]) / 2.0
            }
        }
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interaction {
    /// Partial assignment `factor → level`; the effect applies when a
    /// configuration matches every entry.
    pub levels: BTreeMap<String, String>,
    pub effect: f64,
}

/// Additive response model: baseline + main effects + interactions +
/// Gaussian noise. Unnamed levels contribute zero.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SyntheticModel {
    pub baseline: f64,
    /// `factor → level → effect`.
    #[serde(default)]
    pub main_effects: BTreeMap<String, BTreeMap<String, f64>>,
    #[serde(default)]
    pub interactions: Vec<Interaction>,
    #[serde(default)]
    pub noise_sd: f64,
}

impl SyntheticModel {
    pub fn new(baseline: f64) -> Self {
        SyntheticModel {
            baseline,
            ..Default::default()
        }
    }

    pub fn with_main(mut self, factor: &str, level: &str, effect: f64) -> Self {
        self.main_effects
            .entry(factor.to_string())
            .or_default()
            .insert(level.to_string(), effect);
        self
    }

    pub fn with_interaction(mut self, levels: &[(&str, &str)], effect: f64) -> Self {
        self.interactions.push(Interaction {
            levels: levels.iter().map(|(f, l)| (f.to_string(), l.to_string())).collect(),
            effect,
        });
        self
    }

    pub fn with_noise(mut self, noise_sd: f64) -> Self {
        self.noise_sd = noise_sd;
        self
    }

    /// Check that every referenced factor and level exists.
    pub fn validate(&self, space: &ConfigSpace) -> Result<()> {
        if !(self.noise_sd.is_finite() && self.noise_sd >= 0.0) {
            return Err(Error::invalid("model.noise_sd", "must be finite and nonnegative"));
        }
        if !self.baseline.is_finite() {
            return Err(Error::invalid("model.baseline", "must be finite"));
        }
        for (factor, levels) in &self.main_effects {
            let fi = space
                .factor_index(factor)
                .ok_or_else(|| Error::invalid(format!("model.main_effects.{factor}"), "unknown factor"))?;
            for (label, effect) in levels {
                let path = format!("model.main_effects.{factor}.{label}");
                space.factors()[fi]
                    .level_index(label)
                    .ok_or_else(|| Error::invalid(&path, "unknown level"))?;
                if !effect.is_finite() {
                    return Err(Error::invalid(path, "effect must be finite"));
                }
            }
        }
        for (i, inter) in self.interactions.iter().enumerate() {
            for (factor, label) in &inter.levels {
                let path = format!("model.interactions[{i}].{factor}");
                let fi = space
                    .factor_index(factor)
                    .ok_or_else(|| Error::invalid(&path, "unknown factor"))?;
                space.factors()[fi]
                    .level_index(label)
                    .ok_or_else(|| Error::invalid(&path, format!("unknown level '{label}'")))?;
            }
            if !inter.effect.is_finite() {
                return Err(Error::invalid(format!("model.interactions[{i}].effect"), "must be finite"));
            }
        }
        Ok(())
    }

    /// Noise-free response.
    pub fn expected(&self, config: &Configuration) -> f64 {
        let mains: f64 = config
            .assignment()
            .iter()
            .filter_map(|(f, l)| self.main_effects.get(f).and_then(|m| m.get(l)))
            .sum();
        let inters: f64 = self
            .interactions
            .iter()
            .filter(|i| i.levels.iter().all(|(f, l)| config.get(f) == Some(l.as_str())))
            .map(|i| i.effect)
            .sum();
        self.baseline + mains + inters
    }

    /// Response for one trial; the noise draw depends only on `seed`.
    pub fn respond(&self, config: &Configuration, seed: u64) -> f64 {
        let exact = self.expected(config);
        if self.noise_sd == 0.0 {
            return exact;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: f64 = StandardNormal.sample(&mut rng);
        exact + self.noise_sd * z
    }

    /// Closed-form effect of `cui_a` over `cui_ref`, averaged over the DC
    /// weight distribution: the main-effect difference plus every CUI
    /// interaction weighted by the probability that a DC configuration
    /// matches its DC terms.
    pub fn closed_form_delta(&self, space: &ConfigSpace, cui_a: &str, cui_ref: &str) -> Result<f64> {
        let cui_index = space.cui_index();
        let cui = &space.factors()[cui_index];
        space.require_level(cui_index, cui_a)?;
        space.require_level(cui_index, cui_ref)?;
        // Exclusions that span both roles would make some pairs undefined.
        for (ei, terms) in space.compiled_exclusions().iter().enumerate() {
            let spans_cui = terms.iter().any(|&(fi, _)| fi == cui_index);
            let spans_dc = terms.iter().any(|&(fi, _)| fi != cui_index);
            if spans_cui && spans_dc {
                return Err(Error::invalid(
                    format!("exclusions[{ei}]"),
                    "closed form is undefined when an exclusion spans CUI and DC factors",
                ));
            }
        }
        let main = |label: &str| {
            self.main_effects
                .get(&cui.name)
                .and_then(|m| m.get(label))
                .copied()
                .unwrap_or(0.0)
        };
        let dc = SubSpace::new(space, RoleSet::DC);
        let weight = |pos: usize, li: usize| space.factors()[dc.factors[pos]].levels[li].weight;
        let free = |pos: usize, allowed: &[usize]| -> f64 { allowed.iter().map(|&li| weight(pos, li)).sum() };
        let total: f64 = dc.mass(&[], weight, free);

        let mut delta = main(cui_a) - main(cui_ref);
        for inter in &self.interactions {
            let sign = match inter.levels.get(&cui.name).map(String::as_str) {
                Some(l) if l == cui_a && l == cui_ref => 0.0,
                Some(l) if l == cui_a => 1.0,
                Some(l) if l == cui_ref => -1.0,
                _ => 0.0,
            };
            if sign == 0.0 {
                continue;
            }
            let mut pinned = Vec::new();
            for (factor, label) in &inter.levels {
                if factor == &cui.name {
                    continue;
                }
                let fi = space.require_factor(factor)?;
                let li = space.require_level(fi, label)?;
                let pos = dc.factors.iter().position(|&f| f == fi).expect("non-CUI factors are DC");
                pinned.push((pos, li));
            }
            let p = dc.mass(&pinned, weight, free) / total;
            delta += sign * inter.effect * p;
        }
        Ok(delta)
    }
}

/// External command backend. `{factor}` placeholders are replaced by the
/// level's value; `{replicate}` and `{seed}` are also available. The
/// measurement is the last nonempty line of standard output.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CommandTemplate {
    pub template: String,
}

#[derive(Clone, Debug, PartialEq)]
enum Piece {
    Text(String),
    Hole(String),
}

impl CommandTemplate {
    pub fn new(template: impl Into<String>) -> Self {
        CommandTemplate {
            template: template.into(),
        }
    }

    fn pieces(&self) -> Result<Vec<Piece>> {
        let mut out = Vec::new();
        let mut rest = self.template.as_str();
        while let Some(open) = rest.find('{') {
            out.push(Piece::Text(rest[..open].to_string()));
            let close = rest[open..]
                .find('}')
                .ok_or_else(|| Error::invalid("template", "unterminated placeholder"))?;
            out.push(Piece::Hole(rest[open + 1..open + close].to_string()));
            rest = &rest[open + close + 1..];
        }
        out.push(Piece::Text(rest.to_string()));
        Ok(out)
    }

    /// Every placeholder must name a factor or a reserved key, and every
    /// factor must be referenced.
    pub fn validate(&self, space: &ConfigSpace) -> Result<()> {
        let pieces = self.pieces()?;
        let holes: Vec<&str> = pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Hole(h) => Some(h.as_str()),
                Piece::Text(_) => None,
            })
            .collect();
        for h in &holes {
            if *h != "replicate" && *h != "seed" && space.factor(h).is_none() {
                return Err(Error::invalid("template", format!("unknown placeholder '{{{h}}}'")));
            }
        }
        for f in space.factors() {
            if !holes.contains(&f.name.as_str()) {
                return Err(Error::invalid(
                    "template",
                    format!("factor '{}' is not rendered by the template", f.name),
                ));
            }
        }
        Ok(())
    }

    pub fn render(&self, space: &ConfigSpace, trial: &Trial) -> Result<String> {
        let mut out = String::new();
        for piece in self.pieces()? {
            match piece {
                Piece::Text(t) => out.push_str(&t),
                Piece::Hole(h) if h == "replicate" => out.push_str(&trial.replicate.to_string()),
                Piece::Hole(h) if h == "seed" => out.push_str(&trial.seed.to_string()),
                Piece::Hole(h) => {
                    let fi = space.require_factor(&h)?;
                    let label = trial
                        .config
                        .get(&h)
                        .ok_or_else(|| Error::invalid(&h, "trial does not assign this factor"))?;
                    let li = space.require_level(fi, label)?;
                    out.push_str(&space.factors()[fi].levels[li].value);
                }
            }
        }
        Ok(out)
    }

    fn execute(&self, space: &ConfigSpace, trial: &Trial) -> Status {
        let command = match self.render(space, trial) {
            Ok(c) => c,
            Err(e) => return Status::failed(e.to_string()),
        };
        let output = match Command::new("sh").arg("-c").arg(&command).output() {
            Ok(o) => o,
            Err(e) => return Status::failed(format!("spawn failed: {e}")),
        };
        if !output.status.success() {
            return Status::failed(format!("command exited with {}", output.status));
        }
        let stdout = String::from_utf8_lossy(&output.stdout);
        let last = stdout.lines().rev().map(str::trim).find(|l| !l.is_empty());
        match last.map(str::parse::<f64>) {
            Some(Ok(v)) if v.is_finite() => Status::Ok(v),
            _ => Status::failed(format!("unparseable output: {:?}", last.unwrap_or(""))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Backend {
    Synthetic(SyntheticModel),
    External(CommandTemplate),
}

impl Backend {
    /// Descriptor recorded in the log header.
    pub fn descriptor(&self) -> String {
        match self {
            Backend::Synthetic(m) => format!(
                "synthetic:{}",
                sha256_hex(&serde_json::to_vec(m).expect("models always serialize"))
            ),
            Backend::External(t) => format!("external:{}", t.template),
        }
    }

    fn tag(&self) -> &'static str {
        match self {
            Backend::Synthetic(_) => "synthetic",
            Backend::External(_) => "external",
        }
    }

    fn measure(&self, space: &ConfigSpace, trial: &Trial) -> Status {
        match self {
            Backend::Synthetic(m) => Status::Ok(m.respond(&trial.config, trial.seed)),
            Backend::External(t) => t.execute(space, trial),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeasurementStatus {
    Ok,
    Failed { reason: String },
}

enum Status {
    Ok(f64),
    Failed(String),
}

impl Status {
    fn failed(reason: impl Into<String>) -> Self {
        Status::Failed(reason.into())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub config_id: ConfigId,
    pub replicate: u32,
    /// In the unit declared by the log header; absent for failed trials.
    pub value: Option<f64>,
    pub backend: String,
    /// Seconds since the Unix epoch; synthetic measurements carry none so
    /// that their logs are byte-reproducible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time: Option<u64>,
    pub status: MeasurementStatus,
}

impl Measurement {
    pub fn ok_value(&self) -> Option<f64> {
        match self.status {
            MeasurementStatus::Ok => self.value,
            MeasurementStatus::Failed { .. } => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogHeader {
    pub space_digest: String,
    pub plan_digest: String,
    pub backend: String,
    pub unit: String,
}

impl LogHeader {
    pub fn for_plan(plan: &DesignPlan, backend: &Backend, unit: impl Into<String>) -> Self {
        LogHeader {
            space_digest: plan.space_digest.clone(),
            plan_digest: plan.digest(),
            backend: backend.descriptor(),
            unit: unit.into(),
        }
    }
}

/// Append-only record of measurements keyed by `(config id, replicate)`,
/// optionally mirrored to a JSON-lines file whose first line is the header.
#[derive(Debug)]
pub struct RunLog {
    header: LogHeader,
    records: Vec<Measurement>,
    index: HashMap<(ConfigId, u32), usize>,
    file: Option<(PathBuf, File)>,
}

impl RunLog {
    pub fn in_memory(header: LogHeader) -> Self {
        RunLog {
            header,
            records: Vec::new(),
            index: HashMap::new(),
            file: None,
        }
    }

    /// Create a new log file; fails if it already exists.
    pub fn create(path: impl AsRef<Path>, header: LogHeader) -> Result<Self> {
        let path = path.as_ref();
        let mut file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        let mut line = serde_json::to_string(&header).expect("headers always serialize");
        line.push('\n');
        file.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
        file.sync_data().map_err(|e| Error::io(path, e))?;
        let mut log = RunLog::in_memory(header);
        log.file = Some((path.to_path_buf(), file));
        Ok(log)
    }

    /// Read an existing log; it stays attached for further appends.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let reader = BufReader::new(File::open(path).map_err(|e| Error::io(path, e))?);
        let mut lines = reader.lines();
        let parse_err = |line: usize, source| Error::Json {
            context: format!("{} line {line}", path.display()),
            source,
        };
        let header_line = lines
            .next()
            .ok_or_else(|| Error::invalid(path.display().to_string(), "empty log file"))?
            .map_err(|e| Error::io(path, e))?;
        let header: LogHeader = serde_json::from_str(&header_line).map_err(|e| parse_err(1, e))?;
        let mut log = RunLog::in_memory(header);
        for (i, line) in lines.enumerate() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let m: Measurement = serde_json::from_str(&line).map_err(|e| parse_err(i + 2, e))?;
            log.insert(m)?;
        }
        let file = OpenOptions::new()
            .append(true)
            .open(path)
            .map_err(|e| Error::io(path, e))?;
        log.file = Some((path.to_path_buf(), file));
        Ok(log)
    }

    /// Open `path` if it exists, otherwise create it with `header`.
    pub fn open_or_create(path: impl AsRef<Path>, header: LogHeader) -> Result<Self> {
        let path = path.as_ref();
        if path.exists() {
            Self::open(path)
        } else {
            Self::create(path, header)
        }
    }

    pub fn header(&self) -> &LogHeader {
        &self.header
    }

    pub fn records(&self) -> &[Measurement] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, config_id: ConfigId, replicate: u32) -> Option<&Measurement> {
        self.index.get(&(config_id, replicate)).map(|&i| &self.records[i])
    }

    pub fn contains(&self, config_id: ConfigId, replicate: u32) -> bool {
        self.index.contains_key(&(config_id, replicate))
    }

    fn insert(&mut self, m: Measurement) -> Result<()> {
        let key = (m.config_id, m.replicate);
        if self.index.contains_key(&key) {
            return Err(Error::LogMismatch(format!(
                "duplicate record for {} replicate {}",
                m.config_id, m.replicate
            )));
        }
        if let (MeasurementStatus::Ok, Some(v)) = (&m.status, m.value) {
            if !v.is_finite() {
                return Err(Error::Domain("ok measurement with non-finite value".into()));
            }
        }
        self.index.insert(key, self.records.len());
        self.records.push(m);
        Ok(())
    }

    /// Append a batch, writing it through to the file (one fsync per batch).
    pub fn append(&mut self, batch: Vec<Measurement>) -> Result<()> {
        let mut text = String::new();
        for m in batch {
            if self.file.is_some() {
                text.push_str(&serde_json::to_string(&m).expect("measurements always serialize"));
                text.push('\n');
            }
            self.insert(m)?;
        }
        if let Some((path, file)) = &mut self.file {
            if !text.is_empty() {
                file.write_all(text.as_bytes()).map_err(|e| Error::io(&*path, e))?;
                file.sync_data().map_err(|e| Error::io(&*path, e))?;
            }
        }
        Ok(())
    }

    /// Failed measurements in the log.
    pub fn failure_count(&self) -> usize {
        self.records.iter().filter(|m| m.ok_value().is_none()).count()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RunOptions {
    /// Concurrent trials; `None` uses the backend default (all cores for
    /// synthetic, one for external commands).
    pub parallelism: Option<usize>,
    /// Extra attempts for a failed external trial.
    pub retry: u32,
    /// Trials per durable append.
    pub batch: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            parallelism: None,
            retry: 0,
            batch: 256,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunSummary {
    /// Measurements appended by this run.
    pub new: usize,
    /// Of those, how many failed.
    pub failed: usize,
}

/// Execute every trial not already in `log` and append the results in plan
/// order.
pub fn run(
    plan: &DesignPlan,
    space: &ConfigSpace,
    backend: &Backend,
    log: &mut RunLog,
    options: &RunOptions,
) -> Result<RunSummary> {
    let header = log.header();
    if header.space_digest != space.digest() || header.space_digest != plan.space_digest {
        return Err(Error::LogMismatch("space digest differs from the log header".into()));
    }
    if header.plan_digest != plan.digest() {
        return Err(Error::LogMismatch("plan digest differs from the log header".into()));
    }
    if header.backend != backend.descriptor() {
        return Err(Error::LogMismatch(format!(
            "backend '{}' differs from the log header '{}'",
            backend.descriptor(),
            header.backend
        )));
    }
    match backend {
        Backend::Synthetic(m) => m.validate(space)?,
        Backend::External(t) => t.validate(space)?,
    }

    // Trials sharing a key (self-paired arms) are measured once.
    let mut seen = std::collections::HashSet::new();
    let pending: Vec<&Trial> = plan
        .trials
        .iter()
        .filter(|t| !log.contains(t.config.id(), t.replicate) && seen.insert((t.config.id(), t.replicate)))
        .collect();

    let mut summary = RunSummary::default();
    for chunk in pending.chunks(options.batch.max(1)) {
        let batch = measure_chunk(chunk, space, backend, options);
        summary.new += batch.len();
        summary.failed += batch.iter().filter(|m| m.ok_value().is_none()).count();
        log.append(batch)?;
    }
    Ok(summary)
}

fn measure_one(trial: &Trial, space: &ConfigSpace, backend: &Backend, retry: u32) -> Measurement {
    let mut status = backend.measure(space, trial);
    if matches!(backend, Backend::External(_)) {
        for _ in 0..retry {
            if matches!(status, Status::Ok(_)) {
                break;
            }
            status = backend.measure(space, trial);
        }
    }
    let wall_time = match backend {
        Backend::Synthetic(_) => None,
        Backend::External(_) => SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .ok()
            .map(|d| d.as_secs()),
    };
    let (value, status) = match status {
        Status::Ok(v) => (Some(v), MeasurementStatus::Ok),
        Status::Failed(reason) => (None, MeasurementStatus::Failed { reason }),
    };
    Measurement {
        config_id: trial.config.id(),
        replicate: trial.replicate,
        value,
        backend: backend.tag().to_string(),
        wall_time,
        status,
    }
}

fn measure_chunk(chunk: &[&Trial], space: &ConfigSpace, backend: &Backend, options: &RunOptions) -> Vec<Measurement> {
    match (backend, options.parallelism) {
        (Backend::Synthetic(_), None) => chunk
            .par_iter()
            .map(|t| measure_one(t, space, backend, options.retry))
            .collect(),
        (_, parallelism) => {
            let workers = parallelism.unwrap_or(1).max(1).min(chunk.len().max(1));
            let slots: Vec<Mutex<Option<Measurement>>> = chunk.iter().map(|_| Mutex::new(None)).collect();
            let next = AtomicUsize::new(0);
            std::thread::scope(|scope| {
                for _ in 0..workers {
                    scope.spawn(|| loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        if i >= chunk.len() {
                            break;
                        }
                        let m = measure_one(chunk[i], space, backend, options.retry);
                        *slots[i].lock().expect("slot lock") = Some(m);
                    });
                }
            });
            slots
                .into_iter()
                .map(|s| s.into_inner().expect("slot lock").expect("every slot filled"))
                .collect()
        }
    }
}

/// Measure a plan on a synthetic model into a fresh in-memory log, skipping
/// digest bookkeeping. Used by the meta-evaluation loop.
pub fn simulate(plan: &DesignPlan, model: &SyntheticModel) -> RunLog {
    let header = LogHeader {
        space_digest: plan.space_digest.clone(),
        plan_digest: String::new(),
        backend: "synthetic".into(),
        unit: String::new(),
    };
    let mut log = RunLog::in_memory(header);
    for t in &plan.trials {
        if log.contains(t.config.id(), t.replicate) {
            continue;
        }
        let value = model.respond(&t.config, t.seed);
        log.insert(Measurement {
            config_id: t.config.id(),
            replicate: t.replicate,
            value: Some(value),
            backend: "synthetic".into(),
            wall_time: None,
            status: MeasurementStatus::Ok,
        })
        .expect("keys are deduplicated above");
    }
    log
}

#[derive(Clone, Debug, PartialEq)]
pub struct Collapsed {
    pub values: HashMap<ConfigId, f64>,
    /// Failed replicates that were excluded.
    pub failed: usize,
}

/// Aggregate the ok replicates of every configuration in `plan`.
pub fn collapse(log: &RunLog, plan: &DesignPlan, method: Aggregation) -> Result<Collapsed> {
    let mut groups: HashMap<ConfigId, Vec<f64>> = HashMap::new();
    let mut order = Vec::new();
    let mut failed = 0;
    let mut seen = std::collections::HashSet::new();
    for t in &plan.trials {
        let id = t.config.id();
        if !seen.insert((id, t.replicate)) {
            continue;
        }
        let entry = groups.entry(id).or_insert_with(|| {
            order.push(id);
            Vec::new()
        });
        match log.get(id, t.replicate).map(Measurement::ok_value) {
            Some(Some(v)) => entry.push(v),
            Some(None) => failed += 1,
            None => {}
        }
    }
    let missing: Vec<String> = order
        .iter()
        .filter(|id| groups[*id].is_empty())
        .map(ToString::to_string)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Incomplete { ids: missing });
    }
    let values = groups
        .into_iter()
        .map(|(id, vs)| aggregate(&vs, method).map(|v| (id, v)))
        .collect::<Result<_>>()?;
    Ok(Collapsed { values, failed })
}

/// Every ok replicate per configuration, in plan order of first appearance.
pub(crate) fn replicate_values(log: &RunLog, plan: &DesignPlan) -> Result<Vec<(Configuration, Vec<f64>)>> {
    let mut out: Vec<(Configuration, Vec<f64>)> = Vec::new();
    let mut position: HashMap<ConfigId, usize> = HashMap::new();
    let mut seen = std::collections::HashSet::new();
    for t in &plan.trials {
        let id = t.config.id();
        if !seen.insert((id, t.replicate)) {
            continue;
        }
        let at = *position.entry(id).or_insert_with(|| {
            out.push((t.config.clone(), Vec::new()));
            out.len() - 1
        });
        if let Some(v) = log.get(id, t.replicate).and_then(Measurement::ok_value) {
            out[at].1.push(v);
        }
    }
    let missing: Vec<String> = out
        .iter()
        .filter(|(_, vs)| vs.is_empty())
        .map(|(c, _)| c.id().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Incomplete { ids: missing });
    }
    Ok(out)
}

/// Noise-free model response for every complete configuration, used to
/// check zero-noise logs.
pub fn exact_responses(model: &SyntheticModel, configs: &[Configuration]) -> Vec<f64> {
    configs.iter().map(|c| model.expected(c)).collect()
}

/// Strip the CUI assignment from a complete configuration.
pub fn dc_part(space: &ConfigSpace, config: &Configuration) -> Configuration {
    config.project_out(space, Role::Cui)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::design::{full_factorial, paired_plan};
    use crate::space::Factor;

    fn space() -> ConfigSpace {
        ConfigSpace::new(
            vec![
                Factor::with_labels("cui", Role::Cui, &["ref", "b"]),
                Factor::with_labels("w", Role::Dc, &["w0", "w1"]),
            ],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn aggregate_examples() {
        assert_eq!(aggregate(&[1.0, 2.0, 100.0], Aggregation::Median).unwrap(), 2.0);
        let mean = aggregate(&[1.0, 2.0, 100.0], Aggregation::Mean).unwrap();
        assert!((mean - 103.0 / 3.0).abs() < 1e-12);
        assert_eq!(aggregate(&[4.0, 1.0, 3.0, 2.0], Aggregation::Median).unwrap(), 2.5);
        assert!(aggregate(&[], Aggregation::Mean).is_err());
        assert!(aggregate(&[f64::NAN], Aggregation::Median).is_err());
    }

    #[test]
    fn model_evaluation() {
        let model = SyntheticModel::new(10.0)
            .with_main("cui", "b", 2.0)
            .with_interaction(&[("cui", "b"), ("w", "w1")], 5.0);
        let c = |cui: &str, w: &str| Configuration::from_pairs([("cui", cui), ("w", w)]);
        assert_eq!(model.respond(&c("b", "w0"), 1), 12.0);
        assert_eq!(model.respond(&c("ref", "w0"), 1), 10.0);
        assert_eq!(model.respond(&c("b", "w1"), 1), 17.0);
        model.validate(&space()).unwrap();
        assert!(SyntheticModel::new(0.0).with_main("nope", "x", 1.0).validate(&space()).is_err());
        assert!(SyntheticModel::new(0.0).with_noise(-1.0).validate(&space()).is_err());
    }

    #[test]
    fn closed_form_delta_weights_interactions() {
        let model = SyntheticModel::new(10.0)
            .with_main("cui", "b", 2.0)
            .with_interaction(&[("cui", "b"), ("w", "w1")], 5.0);
        // Half the DC mass carries the interaction: 2 + 5/2.
        assert_eq!(model.closed_form_delta(&space(), "b", "ref").unwrap(), 4.5);
        assert_eq!(model.closed_form_delta(&space(), "ref", "b").unwrap(), -4.5);
        assert_eq!(model.closed_form_delta(&space(), "b", "b").unwrap(), 0.0);
    }

    #[test]
    fn noise_is_seeded() {
        let model = SyntheticModel::new(0.0).with_noise(1.0);
        let c = Configuration::from_pairs([("cui", "b"), ("w", "w0")]);
        assert_eq!(model.respond(&c, 5), model.respond(&c, 5));
        assert_ne!(model.respond(&c, 5), model.respond(&c, 6));
    }

    #[test]
    fn run_is_idempotent_and_checks_header() {
        let space = space();
        let plan = full_factorial(&space, 3, 100).unwrap();
        let backend = Backend::Synthetic(SyntheticModel::new(1.0).with_noise(0.5));
        let mut log = RunLog::in_memory(LogHeader::for_plan(&plan, &backend, "s"));
        let s = run(&plan, &space, &backend, &mut log, &RunOptions::default()).unwrap();
        assert_eq!(s, RunSummary { new: 12, failed: 0 });
        let again = run(&plan, &space, &backend, &mut log, &RunOptions::default()).unwrap();
        assert_eq!(again.new, 0);

        let other = full_factorial(&space, 2, 100).unwrap();
        assert!(matches!(
            run(&other, &space, &backend, &mut log, &RunOptions::default()),
            Err(Error::LogMismatch(_))
        ));
        let other_backend = Backend::Synthetic(SyntheticModel::new(2.0));
        assert!(run(&plan, &space, &other_backend, &mut log, &RunOptions::default()).is_err());
    }

    #[test]
    fn run_order_does_not_matter() {
        let space = space();
        let plan = full_factorial(&space, 4, 100).unwrap();
        let backend = Backend::Synthetic(SyntheticModel::new(1.0).with_noise(0.5));
        let header = LogHeader::for_plan(&plan, &backend, "s");
        let mut par = RunLog::in_memory(header.clone());
        run(&plan, &space, &backend, &mut par, &RunOptions::default()).unwrap();
        let mut seq = RunLog::in_memory(header);
        let opts = RunOptions {
            parallelism: Some(3),
            batch: 5,
            ..Default::default()
        };
        run(&plan, &space, &backend, &mut seq, &opts).unwrap();
        assert_eq!(par.records(), seq.records());
        assert_eq!(simulate(&plan, match &backend {
            Backend::Synthetic(m) => m,
            _ => unreachable!(),
        }).records(), par.records());
    }

    #[test]
    fn collapse_excludes_failures() {
        let space = space();
        let plan = full_factorial(&space, 3, 100).unwrap();
        let mut log = RunLog::in_memory(LogHeader::for_plan(&plan, &Backend::External(CommandTemplate::new("")), "s"));
        let mut batch = Vec::new();
        for t in &plan.trials {
            let failed = t.replicate == 2;
            batch.push(Measurement {
                config_id: t.config.id(),
                replicate: t.replicate,
                value: (!failed).then_some(t.replicate as f64 + 1.0),
                backend: "external".into(),
                wall_time: None,
                status: if failed {
                    MeasurementStatus::Failed { reason: "x".into() }
                } else {
                    MeasurementStatus::Ok
                },
            });
        }
        log.append(batch).unwrap();
        let c = collapse(&log, &plan, Aggregation::Mean).unwrap();
        assert_eq!(c.failed, 4);
        assert!(c.values.values().all(|&v| v == 1.5));

        let empty = RunLog::in_memory(log.header().clone());
        assert!(matches!(collapse(&empty, &plan, Aggregation::Mean), Err(Error::Incomplete { .. })));
    }

    #[test]
    fn zero_noise_collapse_matches_model() {
        let space = space();
        let model = SyntheticModel::new(3.0)
            .with_main("w", "w1", 0.25)
            .with_interaction(&[("cui", "b"), ("w", "w0")], -1.0);
        let plan = full_factorial(&space, 3, 100).unwrap();
        let log = simulate(&plan, &model);
        for method in [Aggregation::Mean, Aggregation::Median] {
            let c = collapse(&log, &plan, method).unwrap();
            for t in &plan.trials {
                assert_eq!(c.values[&t.config.id()], model.expected(&t.config));
            }
        }
    }

    #[test]
    fn self_paired_trials_are_measured_once() {
        let space = space();
        let dcs: Vec<_> = space.enumerate(RoleSet::DC, 10).unwrap().collect();
        let plan = paired_plan(&space, "b", "b", &dcs, 2, 1).unwrap();
        let backend = Backend::Synthetic(SyntheticModel::new(1.0).with_noise(1.0));
        let mut log = RunLog::in_memory(LogHeader::for_plan(&plan, &backend, "s"));
        let s = run(&plan, &space, &backend, &mut log, &RunOptions::default()).unwrap();
        assert_eq!(s.new, 4);
    }

    #[test]
    fn template_rendering() {
        let space = ConfigSpace::from_json(
            r#"{"factors":[{"name":"cui","role":"CUI","levels":[{"label":"on","value":"--ht=1"}]},
                           {"name":"w","role":"DC","levels":[{"label":"a","value":"/bin/a"}]}]}"#,
        )
        .unwrap();
        let plan = full_factorial(&space, 1, 10).unwrap();
        let t = CommandTemplate::new("run {w} {cui} #{replicate}");
        t.validate(&space).unwrap();
        assert_eq!(t.render(&space, &plan.trials[0]).unwrap(), "run /bin/a --ht=1 #0");
        assert!(CommandTemplate::new("run {w}").validate(&space).is_err());
        assert!(CommandTemplate::new("run {w} {cui} {bogus}").validate(&space).is_err());
        assert!(CommandTemplate::new("run {w").validate(&space).is_err());
    }
}
