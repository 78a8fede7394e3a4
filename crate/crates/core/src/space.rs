//! Configuration spaces: the component under investigation (CUI), the design
//! context (DC) factors, their level distributions and validity exclusions.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::hash::sha256_hex;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    #[serde(rename = "CUI")]
    Cui,
    #[serde(rename = "DC")]
    Dc,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Role::Cui => f.write_str("CUI"),
            Role::Dc => f.write_str("DC"),
        }
    }
}

/// A nonempty subset of {CUI, DC}.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoleSet {
    cui: bool,
    dc: bool,
}

impl RoleSet {
    pub const ALL: RoleSet = RoleSet { cui: true, dc: true };
    pub const CUI: RoleSet = RoleSet { cui: true, dc: false };
    pub const DC: RoleSet = RoleSet { cui: false, dc: true };

    pub fn of(role: Role) -> Self {
        match role {
            Role::Cui => Self::CUI,
            Role::Dc => Self::DC,
        }
    }

    pub fn contains(self, role: Role) -> bool {
        match role {
            Role::Cui => self.cui,
            Role::Dc => self.dc,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub label: String,
    /// Opaque payload handed to external runners; defaults to the label.
    #[serde(default)]
    pub value: String,
    /// Normalized to sum to one within the factor once the space is loaded.
    #[serde(default = "unit_weight")]
    pub weight: f64,
}

fn unit_weight() -> f64 {
    1.0
}

impl Level {
    pub fn new(label: impl Into<String>) -> Self {
        let label = label.into();
        Level {
            value: label.clone(),
            label,
            weight: 1.0,
        }
    }

    pub fn weighted(label: impl Into<String>, weight: f64) -> Self {
        Level {
            weight,
            ..Level::new(label)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    pub role: Role,
    /// Eligible as a stratification key.
    #[serde(default)]
    pub stratum: bool,
    pub levels: Vec<Level>,
}

impl Factor {
    pub fn new(name: impl Into<String>, role: Role, levels: Vec<Level>) -> Self {
        Factor {
            name: name.into(),
            role,
            stratum: false,
            levels,
        }
    }

    /// Factor with unit-weight levels labelled by `labels`.
    pub fn with_labels<S: AsRef<str>>(name: impl Into<String>, role: Role, labels: &[S]) -> Self {
        Factor::new(
            name,
            role,
            labels.iter().map(|l| Level::new(l.as_ref())).collect(),
        )
    }

    pub fn stratum(mut self) -> Self {
        self.stratum = true;
        self
    }

    pub fn level_index(&self, label: &str) -> Option<usize> {
        self.levels.iter().position(|l| l.label == label)
    }

    fn has_uniform_weights(&self) -> bool {
        let first = self.levels[0].weight;
        self.levels.iter().all(|l| l.weight == first)
    }
}

/// A partial assignment `factor → level label`; any configuration extending
/// it is invalid.
pub type Exclusion = BTreeMap<String, String>;

#[derive(Clone, Serialize, Deserialize)]
struct SpaceDocument {
    factors: Vec<Factor>,
    #[serde(default)]
    exclusions: Vec<Exclusion>,
}

/// A validated configuration space. Immutable once constructed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "SpaceDocument", into = "SpaceDocument")]
pub struct ConfigSpace {
    factors: Vec<Factor>,
    exclusions: Vec<Exclusion>,
    /// Exclusions as sorted `(factor index, level index)` lists.
    compiled: Vec<Vec<(usize, usize)>>,
    cui: usize,
}

impl TryFrom<SpaceDocument> for ConfigSpace {
    type Error = Error;

    fn try_from(doc: SpaceDocument) -> Result<Self> {
        ConfigSpace::new(doc.factors, doc.exclusions)
    }
}

impl From<ConfigSpace> for SpaceDocument {
    fn from(space: ConfigSpace) -> Self {
        SpaceDocument {
            factors: space.factors,
            exclusions: space.exclusions,
        }
    }
}

impl ConfigSpace {
    pub fn new(factors: Vec<Factor>, exclusions: Vec<Exclusion>) -> Result<Self> {
        let mut factors = factors;
        if factors.is_empty() {
            return Err(Error::invalid("factors", "at least one factor is required"));
        }
        let mut names = HashSet::new();
        let mut cui = None;
        for (fi, factor) in factors.iter_mut().enumerate() {
            let path = format!("factors[{fi}]");
            if factor.name.is_empty() {
                return Err(Error::invalid(format!("{path}.name"), "empty factor name"));
            }
            if !names.insert(factor.name.clone()) {
                return Err(Error::invalid(
                    format!("{path}.name"),
                    format!("duplicate factor name '{}'", factor.name),
                ));
            }
            if factor.role == Role::Cui {
                if let Some(prev) = cui {
                    return Err(Error::invalid(
                        format!("{path}.role"),
                        format!("second CUI factor (factors[{prev}] is already CUI)"),
                    ));
                }
                cui = Some(fi);
            }
            if factor.levels.is_empty() {
                return Err(Error::invalid(format!("{path}.levels"), "factor has no levels"));
            }
            let mut labels = HashSet::new();
            let mut total = 0.0;
            for (li, level) in factor.levels.iter().enumerate() {
                let lpath = format!("{path}.levels[{li}]");
                if !labels.insert(level.label.as_str()) {
                    return Err(Error::invalid(
                        format!("{lpath}.label"),
                        format!("duplicate level label '{}'", level.label),
                    ));
                }
                if !(level.weight.is_finite() && level.weight >= 0.0) {
                    return Err(Error::invalid(
                        format!("{lpath}.weight"),
                        "weight must be finite and nonnegative",
                    ));
                }
                total += level.weight;
            }
            if total <= 0.0 {
                return Err(Error::invalid(
                    format!("{path}.levels"),
                    format!("zero-weight factor '{}'", factor.name),
                ));
            }
            for level in &mut factor.levels {
                if level.value.is_empty() {
                    level.value = level.label.clone();
                }
            }
            // Already-normalized weights are kept as given so that documents
            // round-trip unchanged.
            if (total - 1.0).abs() > 1e-12 {
                for level in &mut factor.levels {
                    level.weight /= total;
                }
            }
        }
        let cui = cui.ok_or_else(|| Error::invalid("factors", "no factor has role CUI"))?;

        let mut compiled = Vec::with_capacity(exclusions.len());
        for (ei, exclusion) in exclusions.iter().enumerate() {
            let mut terms = Vec::with_capacity(exclusion.len());
            for (name, label) in exclusion {
                let path = format!("exclusions[{ei}].{name}");
                let fi = factors
                    .iter()
                    .position(|f| &f.name == name)
                    .ok_or_else(|| Error::invalid(&path, format!("unknown factor '{name}'")))?;
                let li = factors[fi]
                    .level_index(label)
                    .ok_or_else(|| Error::invalid(&path, format!("unknown level '{label}'")))?;
                terms.push((fi, li));
            }
            terms.sort_unstable();
            compiled.push(terms);
        }

        let space = ConfigSpace {
            factors,
            exclusions,
            compiled,
            cui,
        };
        if space.cartesian_size(RoleSet::ALL) == 0 {
            return Err(Error::EmptySpace);
        }
        Ok(space)
    }

    /// Parse and validate a JSON space document.
    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SpaceDocument = serde_json::from_str(text).map_err(|source| Error::Json {
            context: "space document".into(),
            source,
        })?;
        Self::new(doc.factors, doc.exclusions)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        let doc = SpaceDocument {
            factors: self.factors.clone(),
            exclusions: self.exclusions.clone(),
        };
        serde_json::to_string_pretty(&doc).expect("space documents always serialize")
    }

    /// SHA-256 of the canonical (normalized, compact) document.
    pub fn digest(&self) -> String {
        let doc = SpaceDocument {
            factors: self.factors.clone(),
            exclusions: self.exclusions.clone(),
        };
        sha256_hex(&serde_json::to_vec(&doc).expect("space documents always serialize"))
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn exclusions(&self) -> &[Exclusion] {
        &self.exclusions
    }

    pub fn cui_factor(&self) -> &Factor {
        &self.factors[self.cui]
    }

    pub(crate) fn cui_index(&self) -> usize {
        self.cui
    }

    pub fn factor_index(&self, name: &str) -> Option<usize> {
        self.factors.iter().position(|f| f.name == name)
    }

    pub fn factor(&self, name: &str) -> Option<&Factor> {
        self.factors.iter().find(|f| f.name == name)
    }

    pub(crate) fn require_factor(&self, name: &str) -> Result<usize> {
        self.factor_index(name)
            .ok_or_else(|| Error::invalid(name, "unknown factor"))
    }

    pub(crate) fn require_level(&self, fi: usize, label: &str) -> Result<usize> {
        let factor = &self.factors[fi];
        factor.level_index(label).ok_or_else(|| {
            Error::invalid(
                &factor.name,
                format!("unknown level '{label}'"),
            )
        })
    }

    pub(crate) fn compiled_exclusions(&self) -> &[Vec<(usize, usize)>] {
        &self.compiled
    }

    /// True if every factor has equal weights on all its levels.
    pub fn has_uniform_weights(&self, roles: RoleSet) -> bool {
        self.factors
            .iter()
            .filter(|f| roles.contains(f.role))
            .all(Factor::has_uniform_weights)
    }

    /// Number of valid configurations over the factors with the selected roles.
    ///
    /// An exclusion takes part only when every factor it names has a selected
    /// role; exclusions that span both roles surface when DC configurations are
    /// paired with CUI levels.
    pub fn cartesian_size(&self, roles: RoleSet) -> u64 {
        let sub = SubSpace::new(self, roles);
        let count: i128 = sub.mass(&[], |_, _| 1i128, |_, allowed| allowed.len() as i128);
        u64::try_from(count).unwrap_or(u64::MAX)
    }

    /// Stream valid configurations over the selected roles in lexicographic
    /// order (factor order, then level order). Fails if the stream would be
    /// longer than `budget`.
    pub fn enumerate(&self, roles: RoleSet, budget: u64) -> Result<Enumeration<'_>> {
        let size = self.cartesian_size(roles);
        if size > budget {
            return Err(Error::Budget {
                needed: size,
                budget,
            });
        }
        Ok(Enumeration {
            sub: SubSpace::new(self, roles),
            next: 0,
        })
    }

    /// Complete a DC configuration with two CUI levels.
    pub fn pair_with(
        &self,
        dc_config: &Configuration,
        cui_a: &str,
        cui_b: &str,
    ) -> Result<(Configuration, Configuration)> {
        let cui = self.cui_factor();
        for (fi, factor) in self.factors.iter().enumerate() {
            if fi == self.cui {
                continue;
            }
            let label = dc_config.get(&factor.name).ok_or_else(|| {
                Error::invalid(
                    &factor.name,
                    "DC configuration does not assign this factor",
                )
            })?;
            self.require_level(fi, label)?;
        }
        if dc_config.get(&cui.name).is_some() {
            return Err(Error::invalid(
                &cui.name,
                "DC configuration must not assign the CUI factor",
            ));
        }
        let complete = |label: &str, side: &str| -> Result<Configuration> {
            self.require_level(self.cui, label)?;
            let mut assignment = dc_config.assignment().clone();
            assignment.insert(cui.name.clone(), label.to_string());
            let config = Configuration::from_assignment(assignment);
            if self.is_excluded(&config) {
                return Err(Error::Pairing {
                    side: side.into(),
                    assignment: config.to_string(),
                });
            }
            Ok(config)
        };
        Ok((complete(cui_a, "first")?, complete(cui_b, "second")?))
    }

    /// Whether any exclusion is fully assigned by `config` and matches it.
    pub fn is_excluded(&self, config: &Configuration) -> bool {
        self.compiled.iter().any(|terms| {
            terms.iter().all(|&(fi, li)| {
                config.get(&self.factors[fi].name) == Some(self.factors[fi].levels[li].label.as_str())
            })
        })
    }

    /// Normalized weight of a (possibly partial) configuration: the product of
    /// its level weights.
    pub fn weight_of(&self, config: &Configuration) -> Result<f64> {
        let mut w = 1.0;
        for (name, label) in config.assignment() {
            let fi = self.require_factor(name)?;
            let li = self.require_level(fi, label)?;
            w *= self.factors[fi].levels[li].weight;
        }
        Ok(w)
    }

    /// Build a configuration from `(factor index, level index)` pairs.
    pub(crate) fn configuration_from_indices(
        &self,
        cells: impl IntoIterator<Item = (usize, usize)>,
    ) -> Configuration {
        let assignment = cells
            .into_iter()
            .map(|(fi, li)| {
                let f = &self.factors[fi];
                (f.name.clone(), f.levels[li].label.clone())
            })
            .collect();
        Configuration::from_assignment(assignment)
    }
}

/// Arithmetic used by inclusion–exclusion: exact counts (`i128`) or
/// probability masses (`f64`).
pub(crate) trait Mass: Copy + Add<Output = Self> + Sub<Output = Self> + Mul<Output = Self> {
    const ZERO: Self;
    const ONE: Self;
}

impl Mass for i128 {
    const ZERO: Self = 0;
    const ONE: Self = 1;
}

impl Mass for f64 {
    const ZERO: Self = 0.0;
    const ONE: Self = 1.0;
}

/// The factors with selected roles, each restricted to an allowed set of
/// levels, together with the exclusions that apply inside it.
#[derive(Clone, Debug)]
pub(crate) struct SubSpace<'a> {
    pub(crate) space: &'a ConfigSpace,
    /// Factor indices in space order.
    pub(crate) factors: Vec<usize>,
    /// Allowed level indices per selected factor, in level order.
    pub(crate) allowed: Vec<Vec<usize>>,
    /// Applicable exclusions as `(position in factors, level index)`.
    exclusions: Vec<Vec<(usize, usize)>>,
}

impl<'a> SubSpace<'a> {
    pub(crate) fn new(space: &'a ConfigSpace, roles: RoleSet) -> Self {
        let factors: Vec<usize> = (0..space.factors.len())
            .filter(|&fi| roles.contains(space.factors[fi].role))
            .collect();
        let allowed = factors
            .iter()
            .map(|&fi| (0..space.factors[fi].levels.len()).collect())
            .collect();
        let mut sub = SubSpace {
            space,
            factors,
            allowed,
            exclusions: Vec::new(),
        };
        sub.refresh_exclusions();
        sub
    }

    /// Restrict the factor at space index `fi` to `levels`.
    pub(crate) fn restrict(mut self, fi: usize, levels: Vec<usize>) -> Self {
        if let Some(pos) = self.factors.iter().position(|&f| f == fi) {
            self.allowed[pos] = levels;
            self.refresh_exclusions();
        }
        self
    }

    fn refresh_exclusions(&mut self) {
        let mut out = Vec::new();
        'outer: for terms in &self.space.compiled {
            let mut mapped = Vec::with_capacity(terms.len());
            for &(fi, li) in terms {
                match self.factors.iter().position(|&f| f == fi) {
                    Some(pos) if self.allowed[pos].contains(&li) => mapped.push((pos, li)),
                    // Either the factor is outside the subspace or the level
                    // can never occur: the exclusion is inert here.
                    _ => continue 'outer,
                }
            }
            out.push(mapped);
        }
        self.exclusions = out;
    }

    pub(crate) fn has_exclusions(&self) -> bool {
        !self.exclusions.is_empty()
    }

    /// Size of the unrestricted product.
    pub(crate) fn product(&self) -> u128 {
        self.allowed.iter().map(|a| a.len() as u128).product()
    }

    /// Mass of valid configurations agreeing with `pinned` (pairs of
    /// `(position, level index)`), via inclusion–exclusion over exclusions.
    /// `level_mass(pos, li)` is the mass of one pinned level and
    /// `free_mass(allowed)` the mass of an unpinned factor.
    pub(crate) fn mass<M: Mass>(
        &self,
        pinned: &[(usize, usize)],
        level_mass: impl Fn(usize, usize) -> M + Copy,
        free_mass: impl Fn(usize, &[usize]) -> M + Copy,
    ) -> M {
        let mut fixed: Vec<Option<usize>> = vec![None; self.factors.len()];
        for &(pos, li) in pinned {
            if !self.allowed[pos].contains(&li) {
                return M::ZERO;
            }
            fixed[pos] = Some(li);
        }
        let base = self.product_mass(&fixed, level_mass, free_mass);
        let excluded = self.excluded_mass(0, &mut fixed, level_mass, free_mass);
        base - excluded
    }

    fn product_mass<M: Mass>(
        &self,
        fixed: &[Option<usize>],
        level_mass: impl Fn(usize, usize) -> M,
        free_mass: impl Fn(usize, &[usize]) -> M,
    ) -> M {
        fixed
            .iter()
            .enumerate()
            .fold(M::ONE, |acc, (pos, f)| match f {
                Some(li) => acc * level_mass(pos, *li),
                None => acc * free_mass(pos, &self.allowed[pos]),
            })
    }

    /// Mass of the union of exclusions `start..` intersected with `fixed`.
    fn excluded_mass<M: Mass>(
        &self,
        start: usize,
        fixed: &mut [Option<usize>],
        level_mass: impl Fn(usize, usize) -> M + Copy,
        free_mass: impl Fn(usize, &[usize]) -> M + Copy,
    ) -> M {
        let mut total = M::ZERO;
        for i in start..self.exclusions.len() {
            let terms = &self.exclusions[i];
            if terms
                .iter()
                .any(|&(pos, li)| matches!(fixed[pos], Some(l) if l != li))
            {
                continue;
            }
            let newly: Vec<usize> = terms
                .iter()
                .filter(|&&(pos, _)| fixed[pos].is_none())
                .map(|&(pos, _)| pos)
                .collect();
            for &(pos, li) in terms {
                fixed[pos] = Some(li);
            }
            let here = self.product_mass(fixed, level_mass, free_mass);
            let nested = self.excluded_mass(i + 1, fixed, level_mass, free_mass);
            total = total + (here - nested);
            for pos in newly {
                fixed[pos] = None;
            }
        }
        total
    }

    pub(crate) fn count(&self) -> u64 {
        let c: i128 = self.mass(&[], |_, _| 1i128, |_, allowed| allowed.len() as i128);
        u64::try_from(c).unwrap_or(u64::MAX)
    }

    /// Decode a linear index (first factor most significant) into level
    /// indices, one per selected factor.
    pub(crate) fn decode(&self, mut index: u128, out: &mut [usize]) {
        for pos in (0..self.factors.len()).rev() {
            let radix = self.allowed[pos].len() as u128;
            out[pos] = self.allowed[pos][(index % radix) as usize];
            index /= radix;
        }
    }

    pub(crate) fn is_excluded(&self, levels: &[usize]) -> bool {
        self.exclusions
            .iter()
            .any(|terms| terms.iter().all(|&(pos, li)| levels[pos] == li))
    }

    pub(crate) fn configuration(&self, levels: &[usize]) -> Configuration {
        self.space
            .configuration_from_indices(self.factors.iter().copied().zip(levels.iter().copied()))
    }

    /// Weight of one configuration (product of normalized level weights).
    pub(crate) fn weight(&self, levels: &[usize]) -> f64 {
        self.factors
            .iter()
            .zip(levels)
            .map(|(&fi, &li)| self.space.factors[fi].levels[li].weight)
            .product()
    }
}

/// Iterator over valid configurations in lexicographic order.
pub struct Enumeration<'a> {
    sub: SubSpace<'a>,
    next: u128,
}

impl Iterator for Enumeration<'_> {
    type Item = Configuration;

    fn next(&mut self) -> Option<Configuration> {
        let product = self.sub.product();
        let mut levels = vec![0; self.sub.factors.len()];
        while self.next < product {
            self.sub.decode(self.next, &mut levels);
            self.next += 1;
            if !self.sub.is_excluded(&levels) {
                return Some(self.sub.configuration(&levels));
            }
        }
        None
    }
}

/// Content hash identifying a configuration.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ConfigId([u8; 32]);

impl ConfigId {
    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Display for ConfigId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl fmt::Debug for ConfigId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "ConfigId({})", &hex::encode(self.0)[..12])
    }
}

impl std::str::FromStr for ConfigId {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|e| format!("bad config id '{s}': {e}"))?;
        Ok(ConfigId(out))
    }
}

impl Serialize for ConfigId {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for ConfigId {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// An assignment of level labels to factors, identified by a canonical hash.
///
/// DC configurations assign only the DC factors; complete configurations
/// assign every factor.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawConfiguration")]
pub struct Configuration {
    id: ConfigId,
    assignment: BTreeMap<String, String>,
}

#[derive(Deserialize)]
struct RawConfiguration {
    id: ConfigId,
    assignment: BTreeMap<String, String>,
}

impl TryFrom<RawConfiguration> for Configuration {
    type Error = String;

    fn try_from(raw: RawConfiguration) -> std::result::Result<Self, String> {
        let config = Configuration::from_assignment(raw.assignment);
        if config.id != raw.id {
            return Err(format!(
                "configuration id {} does not match its assignment ({})",
                raw.id, config.id
            ));
        }
        Ok(config)
    }
}

impl Configuration {
    /// Id = SHA-256 of the `name=label` lines sorted by name, joined by `\n`.
    pub fn from_assignment(assignment: BTreeMap<String, String>) -> Self {
        let mut hasher = Sha256::new();
        for (i, (name, label)) in assignment.iter().enumerate() {
            if i > 0 {
                hasher.update(b"\n");
            }
            hasher.update(name.as_bytes());
            hasher.update(b"=");
            hasher.update(label.as_bytes());
        }
        Configuration {
            id: ConfigId(hasher.finalize().into()),
            assignment,
        }
    }

    pub fn from_pairs<K: Into<String>, V: Into<String>>(pairs: impl IntoIterator<Item = (K, V)>) -> Self {
        Self::from_assignment(pairs.into_iter().map(|(k, v)| (k.into(), v.into())).collect())
    }

    pub fn id(&self) -> ConfigId {
        self.id
    }

    pub fn assignment(&self) -> &BTreeMap<String, String> {
        &self.assignment
    }

    pub fn get(&self, factor: &str) -> Option<&str> {
        self.assignment.get(factor).map(String::as_str)
    }

    /// This configuration without the factors of `role`.
    pub fn project_out(&self, space: &ConfigSpace, role: Role) -> Configuration {
        Configuration::from_assignment(
            self.assignment
                .iter()
                .filter(|(name, _)| space.factor(name).map(|f| f.role != role).unwrap_or(true))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        )
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (name, label)) in self.assignment.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{name}={label}")?;
        }
        f.write_str("}")
    }
}

impl fmt::Debug for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Configuration{self}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn numbered(name: &str, role: Role, n: usize) -> Factor {
        let labels: Vec<String> = (0..n).map(|i| format!("{name}{i}")).collect();
        Factor::with_labels(name, role, &labels)
    }

    fn cpu_space() -> ConfigSpace {
        ConfigSpace::new(
            vec![
                Factor::with_labels("ht", Role::Cui, &["on", "off"]),
                numbered("workload", Role::Dc, 10).stratum(),
                numbered("dataset", Role::Dc, 10),
                numbered("compiler", Role::Dc, 1),
                numbered("opt", Role::Dc, 3),
                numbered("threads", Role::Dc, 60),
            ],
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn dc_cardinality_of_cpu_space() {
        let space = cpu_space();
        assert_eq!(space.cartesian_size(RoleSet::DC), 18_000);
        assert_eq!(space.cartesian_size(RoleSet::CUI), 2);
        assert_eq!(space.cartesian_size(RoleSet::ALL), 36_000);
        assert_eq!(space.enumerate(RoleSet::DC, 18_000).unwrap().count(), 18_000);
        assert!(matches!(
            space.enumerate(RoleSet::DC, 17_999),
            Err(Error::Budget { needed: 18_000, .. })
        ));
    }

    #[test]
    fn single_level_space() {
        let space = ConfigSpace::new(vec![Factor::with_labels("c", Role::Cui, &["x"])], vec![]).unwrap();
        assert_eq!(space.cartesian_size(RoleSet::ALL), 1);
    }

    #[test]
    fn excluded_thread_levels() {
        let threads = numbered("t", Role::Dc, 64);
        let exclusions = [51, 53, 59, 61]
            .iter()
            .map(|i| Exclusion::from([("t".to_string(), format!("t{}", i - 1))]))
            .collect();
        let space = ConfigSpace::new(
            vec![Factor::with_labels("c", Role::Cui, &["x"]), threads],
            exclusions,
        )
        .unwrap();
        assert_eq!(space.cartesian_size(RoleSet::DC), 60);
    }

    #[test]
    fn product_rule_and_lexicographic_order() {
        let space = ConfigSpace::new(
            vec![
                Factor::with_labels("a", Role::Cui, &["a0", "a1"]),
                Factor::with_labels("b", Role::Dc, &["b0", "b1", "b2"]),
            ],
            vec![],
        )
        .unwrap();
        assert_eq!(space.cartesian_size(RoleSet::ALL), 6);
        let seen: Vec<String> = space
            .enumerate(RoleSet::ALL, 100)
            .unwrap()
            .map(|c| format!("{}{}", c.get("a").unwrap(), c.get("b").unwrap()))
            .collect();
        assert_eq!(seen, ["a0b0", "a0b1", "a0b2", "a1b0", "a1b1", "a1b2"]);
    }

    #[test]
    fn exclusion_removes_one_cell() {
        let space = ConfigSpace::new(
            vec![
                Factor::with_labels("a", Role::Cui, &["x", "y"]),
                Factor::with_labels("b", Role::Dc, &["u", "v"]),
            ],
            vec![Exclusion::from([
                ("a".into(), "y".into()),
                ("b".into(), "v".into()),
            ])],
        )
        .unwrap();
        let all: Vec<_> = space.enumerate(RoleSet::ALL, 10).unwrap().collect();
        assert_eq!(all.len(), 3);
        assert!(all.iter().all(|c| !space.is_excluded(c)));
        // A cross-role exclusion leaves each role's own count alone.
        assert_eq!(space.cartesian_size(RoleSet::DC), 2);
    }

    #[test]
    fn empty_space_rejected() {
        let err = ConfigSpace::new(
            vec![Factor::with_labels("a", Role::Cui, &["x", "y"])],
            vec![
                Exclusion::from([("a".into(), "x".into())]),
                Exclusion::from([("a".into(), "y".into())]),
            ],
        )
        .unwrap_err();
        assert!(matches!(err, Error::EmptySpace));
    }

    #[test]
    fn load_errors_name_their_path() {
        let dup = r#"{"factors":[{"name":"a","role":"CUI","levels":[{"label":"x"},{"label":"x"}]}]}"#;
        let msg = ConfigSpace::from_json(dup).unwrap_err().to_string();
        assert!(msg.contains("factors[0].levels[1].label"), "{msg}");

        let zero = r#"{"factors":[{"name":"a","role":"CUI","levels":[{"label":"x","weight":0}]}]}"#;
        let msg = ConfigSpace::from_json(zero).unwrap_err().to_string();
        assert!(msg.contains("zero-weight"), "{msg}");

        let no_cui = r#"{"factors":[{"name":"a","role":"DC","levels":[{"label":"x"}]}]}"#;
        let msg = ConfigSpace::from_json(no_cui).unwrap_err().to_string();
        assert!(msg.contains("CUI"), "{msg}");

        let bad_excl = r#"{"factors":[{"name":"a","role":"CUI","levels":[{"label":"x"}]}],
                           "exclusions":[{"a":"nope"}]}"#;
        let msg = ConfigSpace::from_json(bad_excl).unwrap_err().to_string();
        assert!(msg.contains("exclusions[0].a"), "{msg}");

        let dup_factor = r#"{"factors":[{"name":"a","role":"CUI","levels":[{"label":"x"}]},
                                        {"name":"a","role":"DC","levels":[{"label":"x"}]}]}"#;
        let msg = ConfigSpace::from_json(dup_factor).unwrap_err().to_string();
        assert!(msg.contains("factors[1].name"), "{msg}");

        assert!(ConfigSpace::from_json("{").is_err());
    }

    #[test]
    fn weights_are_normalized() {
        let doc = r#"{"factors":[{"name":"a","role":"CUI","levels":[
            {"label":"x","weight":1},{"label":"y","weight":3}]}]}"#;
        let space = ConfigSpace::from_json(doc).unwrap();
        let w: Vec<f64> = space.factors()[0].levels.iter().map(|l| l.weight).collect();
        assert_eq!(w, [0.25, 0.75]);
        assert!(!space.has_uniform_weights(RoleSet::ALL));
        // Round trip through the document form is lossless.
        assert_eq!(ConfigSpace::from_json(&space.to_json()).unwrap(), space);
    }

    fn ht_space(exclusions: Vec<Exclusion>) -> ConfigSpace {
        ConfigSpace::new(
            vec![
                Factor::with_labels("ht", Role::Cui, &["on", "off"]),
                Factor::with_labels("w", Role::Dc, &["bwaves", "lbm"]),
                Factor::with_labels("t", Role::Dc, &["8", "16"]),
            ],
            exclusions,
        )
        .unwrap()
    }

    #[test]
    fn pairing_differs_only_in_cui() {
        let space = ht_space(vec![]);
        let dc = Configuration::from_pairs([("w", "bwaves"), ("t", "8")]);
        let (a, b) = space.pair_with(&dc, "on", "off").unwrap();
        assert_eq!(a.get("w"), b.get("w"));
        assert_eq!(a.get("t"), b.get("t"));
        assert_eq!(a.get("ht"), Some("on"));
        assert_eq!(b.get("ht"), Some("off"));
        let (x, y) = space.pair_with(&dc, "on", "on").unwrap();
        assert_eq!(x, y);
    }

    #[test]
    fn pairing_into_an_exclusion_names_the_side() {
        let space = ht_space(vec![Exclusion::from([
            ("ht".into(), "off".into()),
            ("w".into(), "lbm".into()),
        ])]);
        let dc = Configuration::from_pairs([("w", "lbm"), ("t", "8")]);
        match space.pair_with(&dc, "on", "off") {
            Err(Error::Pairing { side, .. }) => assert_eq!(side, "second"),
            other => panic!("expected pairing error, got {other:?}"),
        }
        let ok = Configuration::from_pairs([("w", "bwaves"), ("t", "8")]);
        assert!(space.pair_with(&ok, "on", "off").is_ok());
        assert!(space.pair_with(&dc, "on", "bogus").is_err());
    }

    #[test]
    fn id_is_order_independent_and_round_trips() {
        let a = Configuration::from_pairs([("x", "1"), ("y", "2")]);
        let b = Configuration::from_pairs([("y", "2"), ("x", "1")]);
        assert_eq!(a.id(), b.id());
        let json = serde_json::to_string(&a).unwrap();
        let back: Configuration = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
        let tampered = json.replace("\"2\"", "\"3\"");
        assert!(serde_json::from_str::<Configuration>(&tampered).is_err());
    }

    #[test]
    fn id_is_frozen() {
        // sha256("w=bwaves\nt=8") with keys sorted: "t=8\nw=bwaves".
        let c = Configuration::from_pairs([("w", "bwaves"), ("t", "8")]);
        assert_eq!(c.id().to_string(), sha256_hex(b"t=8\nw=bwaves"));
    }
}
