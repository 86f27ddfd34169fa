//! Domain knowledge base: property maps that generalize raw values into
//! groups, and conditional rules over (masked) discrete columns.
//!
//! Rules are intra-row. An antecedent is a conjunction of `column = value`
//! predicates and a consequent a conjunction of assignments; both name
//! columns of the masked schema (raw discrete columns or mask columns).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::{CondVector, RowEncodingLayout, SegmentSource};
use crate::error::{Error, Result};
use crate::rng;
use crate::schema::{Cell, ColumnKind, ColumnSpec, DataTable, Row, TableSchema};

/// How the values of a group are recognized.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Membership {
    /// Explicit value labels.
    Values(Vec<String>),
    /// Integer labels in `[lo, hi]`.
    Interval { lo: i64, hi: i64 },
    /// Labels starting with `prefix`. `pool` lists concrete values used when
    /// decoding, since a prefix alone does not enumerate its members.
    Prefix { prefix: String, pool: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "GroupDefRepr", into = "GroupDefRepr")]
pub struct GroupDef {
    pub label: String,
    pub membership: Membership,
}

#[derive(Serialize, Deserialize)]
struct GroupDefRepr {
    label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    values: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    interval: Option<[i64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prefix: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pool: Vec<String>,
}

impl TryFrom<GroupDefRepr> for GroupDef {
    type Error = String;

    fn try_from(r: GroupDefRepr) -> std::result::Result<Self, String> {
        let membership = match (r.values, r.interval, r.prefix) {
            (Some(v), None, None) => Membership::Values(v),
            (None, Some([lo, hi]), None) => Membership::Interval { lo, hi },
            (None, None, Some(prefix)) => Membership::Prefix { prefix, pool: r.pool },
            _ => {
                return Err(format!(
                    "group {} must define exactly one of values, interval, prefix",
                    r.label
                ))
            }
        };
        Ok(GroupDef {
            label: r.label,
            membership,
        })
    }
}

impl From<GroupDef> for GroupDefRepr {
    fn from(g: GroupDef) -> Self {
        let mut r = GroupDefRepr {
            label: g.label,
            values: None,
            interval: None,
            prefix: None,
            pool: Vec::new(),
        };
        match g.membership {
            Membership::Values(v) => r.values = Some(v),
            Membership::Interval { lo, hi } => r.interval = Some([lo, hi]),
            Membership::Prefix { prefix, pool } => {
                r.prefix = Some(prefix);
                r.pool = pool;
            }
        }
        r
    }
}

impl GroupDef {
    pub fn values(label: &str, values: &[&str]) -> Self {
        Self {
            label: label.into(),
            membership: Membership::Values(values.iter().map(|s| s.to_string()).collect()),
        }
    }

    pub fn interval(label: &str, lo: i64, hi: i64) -> Self {
        Self {
            label: label.into(),
            membership: Membership::Interval { lo, hi },
        }
    }

    pub fn contains(&self, value: &str) -> bool {
        match &self.membership {
            Membership::Values(v) => v.iter().any(|x| x == value),
            Membership::Interval { lo, hi } => parse_integer(value).is_some_and(|v| *lo <= v && v <= *hi),
            Membership::Prefix { prefix, .. } => value.starts_with(prefix.as_str()),
        }
    }
}

fn parse_integer(value: &str) -> Option<i64> {
    let t = value.trim();
    t.parse::<i64>().ok().or_else(|| {
        t.parse::<f64>()
            .ok()
            .filter(|v| v.fract() == 0.0 && v.abs() < 9.0e15)
            .map(|v| v as i64)
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PropertyMap {
    pub name: String,
    pub source_column: String,
    pub groups: Vec<GroupDef>,
    /// Group label absorbing values no other group covers.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub catch_all: Option<String>,
}

impl PropertyMap {
    /// Group labels in layout order (catch-all last).
    pub fn labels(&self) -> Vec<String> {
        self.groups
            .iter()
            .map(|g| g.label.clone())
            .chain(self.catch_all.clone())
            .collect()
    }

    /// Label of the first group containing `value`, falling back to the
    /// catch-all group.
    pub fn group_of(&self, value: &str) -> Option<&str> {
        self.groups
            .iter()
            .find(|g| g.contains(value))
            .map(|g| g.label.as_str())
            .or(self.catch_all.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Predicate {
    pub column: String,
    pub value: String,
}

impl Predicate {
    pub fn new(column: &str, value: &str) -> Self {
        Self {
            column: column.into(),
            value: value.into(),
        }
    }
}

impl fmt::Display for Predicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}={}", self.column, self.value)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub id: String,
    pub antecedent: Vec<Predicate>,
    pub consequent: Vec<Predicate>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RuleSet {
    #[serde(default)]
    pub property_maps: Vec<PropertyMap>,
    #[serde(default)]
    pub rules: Vec<Rule>,
}

impl RuleSet {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Format(e.to_string()))
    }

    /// Canonical serialized form: compact JSON in declaration order.
    pub fn canonical(&self) -> String {
        serde_json::to_string(self).expect("rule sets always serialize")
    }

    /// Hex SHA-256 of [`RuleSet::canonical`].
    pub fn canonical_hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn map(&self, name: &str) -> Option<&PropertyMap> {
        self.property_maps.iter().find(|m| m.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IssueKind {
    UnknownColumn,
    UnknownCategory,
    ContinuousColumn,
    DuplicateRuleId,
    EmptyAntecedent,
    DuplicateConsequentColumn,
    ContradictsAntecedent,
    ConflictingConsequents,
    DuplicateMapName,
    UnknownSourceColumn,
    DuplicateGroupLabel,
    EmptyGroup,
    BadInterval,
    UndecodableGroup,
    UncoveredValue,
    MaskMismatch,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Issue {
    pub kind: IssueKind,
    pub message: String,
}

/// Findings of [`validate_ruleset`]; empty means valid.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<Issue>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.issues.is_empty()
    }

    pub fn has(&self, kind: IssueKind) -> bool {
        self.issues.iter().any(|i| i.kind == kind)
    }

    fn push(&mut self, kind: IssueKind, message: String) {
        self.issues.push(Issue { kind, message });
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in &self.issues {
            writeln!(f, "- {:?}: {}", i.kind, i.message)?;
        }
        Ok(())
    }
}

/// Schema after every property map replaced its source column. Maps whose
/// source column is missing or not discrete are skipped (validation reports
/// them).
fn derive_masked_schema(schema: &TableSchema, rules: &RuleSet) -> TableSchema {
    let mut out = schema.clone();
    for map in &rules.property_maps {
        if let Some(i) = out.index_of(&map.source_column) {
            if out.columns[i].is_discrete() {
                out.columns[i] = ColumnSpec {
                    name: map.name.clone(),
                    kind: ColumnKind::Discrete,
                    categories: Some(map.labels()),
                    masked_by: Some(map.name.clone()),
                };
            }
        }
    }
    prune_references(&mut out);
    out
}

/// Drops target/sensitive names that no longer exist after masking.
fn prune_references(schema: &mut TableSchema) {
    let names: BTreeSet<String> = schema.names().into_iter().collect();
    schema.target = schema.target.take().filter(|t| names.contains(t));
    schema.sensitive.retain(|s| names.contains(s));
}

/// Checks a rule set against a raw (unmasked) schema.
pub fn validate_ruleset(rules: &RuleSet, schema: &TableSchema) -> ValidationReport {
    let mut report = ValidationReport::default();

    let mut map_names = BTreeSet::new();
    for map in &rules.property_maps {
        if !map_names.insert(map.name.as_str()) {
            report.push(IssueKind::DuplicateMapName, format!("property map {} defined twice", map.name));
        }
        let source = schema.column(&map.source_column);
        match source {
            None => report.push(
                IssueKind::UnknownSourceColumn,
                format!("property map {}: unknown column {}", map.name, map.source_column),
            ),
            Some(c) if !c.is_discrete() => report.push(
                IssueKind::ContinuousColumn,
                format!("property map {}: source column {} is continuous", map.name, c.name),
            ),
            Some(c) => {
                if c.masked_by.as_deref().is_some_and(|m| m != map.name) {
                    report.push(
                        IssueKind::MaskMismatch,
                        format!("column {} names mask {:?}, not {}", c.name, c.masked_by, map.name),
                    );
                }
            }
        }
        if map.name != map.source_column && schema.index_of(&map.name).is_some() {
            report.push(
                IssueKind::DuplicateMapName,
                format!("property map {} collides with an existing column", map.name),
            );
        }
        let mut labels = BTreeSet::new();
        for g in map.groups.iter() {
            if !labels.insert(g.label.as_str()) {
                report.push(
                    IssueKind::DuplicateGroupLabel,
                    format!("property map {}: group {} repeated", map.name, g.label),
                );
            }
            match &g.membership {
                Membership::Values(v) if v.is_empty() => report.push(
                    IssueKind::EmptyGroup,
                    format!("property map {}: group {} has no values", map.name, g.label),
                ),
                Membership::Interval { lo, hi } if lo > hi => report.push(
                    IssueKind::BadInterval,
                    format!("property map {}: group {} has lo > hi", map.name, g.label),
                ),
                Membership::Prefix { prefix, pool } => {
                    if pool.is_empty() || pool.iter().any(|p| !p.starts_with(prefix.as_str())) {
                        report.push(
                            IssueKind::UndecodableGroup,
                            format!("property map {}: prefix group {} needs a pool of matching values", map.name, g.label),
                        );
                    }
                }
                _ => {}
            }
        }
        if let Some(c) = &map.catch_all {
            if !labels.insert(c.as_str()) {
                report.push(
                    IssueKind::DuplicateGroupLabel,
                    format!("property map {}: catch-all {} repeats a group label", map.name, c),
                );
            }
        }
        if let Some(c) = source.filter(|c| c.is_discrete()) {
            for v in c.categories() {
                if map.group_of(v).is_none() {
                    report.push(
                        IssueKind::UncoveredValue,
                        format!("property map {}: value {v} of {} is not covered", map.name, c.name),
                    );
                }
            }
        }
    }

    let masked = derive_masked_schema(schema, rules);
    let check_pred = |report: &mut ValidationReport, rule: &Rule, p: &Predicate| match masked.column(&p.column) {
        None => report.push(
            IssueKind::UnknownColumn,
            format!("rule {}: unknown column {}", rule.id, p.column),
        ),
        Some(c) if !c.is_discrete() => report.push(
            IssueKind::ContinuousColumn,
            format!("rule {}: column {} is continuous", rule.id, p.column),
        ),
        Some(c) if c.categories.is_some() && c.category_index(&p.value).is_none() => report.push(
            IssueKind::UnknownCategory,
            format!("rule {}: {} is not a category of {}", rule.id, p.value, p.column),
        ),
        Some(_) => {}
    };

    let mut ids = BTreeSet::new();
    for rule in &rules.rules {
        if !ids.insert(rule.id.as_str()) {
            report.push(IssueKind::DuplicateRuleId, format!("rule id {} repeated", rule.id));
        }
        if rule.antecedent.is_empty() {
            report.push(IssueKind::EmptyAntecedent, format!("rule {} has an empty antecedent", rule.id));
        }
        for p in rule.antecedent.iter().chain(&rule.consequent) {
            check_pred(&mut report, rule, p);
        }
        let mut seen = BTreeSet::new();
        for p in &rule.consequent {
            if !seen.insert(p.column.as_str()) {
                report.push(
                    IssueKind::DuplicateConsequentColumn,
                    format!("rule {}: column {} assigned twice", rule.id, p.column),
                );
            }
            if rule.antecedent.iter().any(|a| a.column == p.column && a.value != p.value) {
                report.push(
                    IssueKind::ContradictsAntecedent,
                    format!("rule {}: consequent {p} contradicts its antecedent", rule.id),
                );
            }
        }
    }

    // Identical antecedents must not assign one column two values.
    let mut by_antecedent: BTreeMap<BTreeSet<&Predicate>, Vec<&Rule>> = BTreeMap::new();
    for rule in &rules.rules {
        by_antecedent
            .entry(rule.antecedent.iter().collect())
            .or_default()
            .push(rule);
    }
    for group in by_antecedent.values() {
        for (i, a) in group.iter().enumerate() {
            for b in &group[i + 1..] {
                for pa in &a.consequent {
                    if let Some(pb) = b.consequent.iter().find(|pb| pb.column == pa.column && pb.value != pa.value) {
                        report.push(
                            IssueKind::ConflictingConsequents,
                            format!("rules {} and {} share an antecedent but assign {pa} vs {pb}", a.id, b.id),
                        );
                    }
                }
            }
        }
    }
    report
}

#[derive(Debug, Clone, PartialEq)]
struct CompiledRule {
    antecedent: Vec<(usize, u32)>,
    consequent: Vec<(usize, u32)>,
}

/// What to do with training rows whose triggered rules are violated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationPolicy {
    #[default]
    Error,
    WarnAndKeep,
}

/// Rule flags of every row of a masked table.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleFlags {
    pub flags: Vec<Vec<bool>>,
    /// Rows kept despite violating a rule (only under `WarnAndKeep`).
    pub violating_rows: Vec<usize>,
}

/// A rule set validated and compiled against a raw schema.
#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    rules: RuleSet,
    raw_schema: TableSchema,
    masked_schema: TableSchema,
    compiled: Vec<CompiledRule>,
}

impl KnowledgeBase {
    pub fn new(rules: RuleSet, raw_schema: &TableSchema) -> Result<Self> {
        let report = validate_ruleset(&rules, raw_schema);
        if !report.is_valid() {
            return Err(Error::InvalidRules(report.to_string()));
        }
        let masked_schema = derive_masked_schema(raw_schema, &rules);
        let lookup = |p: &Predicate| -> Result<(usize, u32)> {
            let col = masked_schema
                .index_of(&p.column)
                .ok_or_else(|| Error::InvalidRules(format!("unknown column {}", p.column)))?;
            let cat = masked_schema.columns[col]
                .category_index(&p.value)
                .ok_or_else(|| Error::UnknownCategory {
                    column: p.column.clone(),
                    value: p.value.clone(),
                })?;
            Ok((col, cat as u32))
        };
        let compiled = rules
            .rules
            .iter()
            .map(|r| {
                let mut antecedent: Vec<_> = r.antecedent.iter().map(lookup).collect::<Result<_>>()?;
                antecedent.sort_unstable();
                antecedent.dedup();
                Ok(CompiledRule {
                    antecedent,
                    consequent: r.consequent.iter().map(lookup).collect::<Result<_>>()?,
                })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            rules,
            raw_schema: raw_schema.clone(),
            masked_schema,
            compiled,
        })
    }

    pub fn rules(&self) -> &RuleSet {
        &self.rules
    }

    pub fn rule_count(&self) -> usize {
        self.compiled.len()
    }

    pub fn rule_ids(&self) -> Vec<&str> {
        self.rules.rules.iter().map(|r| r.id.as_str()).collect()
    }

    pub fn raw_schema(&self) -> &TableSchema {
        &self.raw_schema
    }

    pub fn masked_schema(&self) -> &TableSchema {
        &self.masked_schema
    }

    /// Property map whose group labels fill masked column `col`, if any.
    pub fn map_for_masked_column(&self, col: usize) -> Option<&PropertyMap> {
        let spec = &self.masked_schema.columns[col];
        spec.masked_by
            .as_deref()
            .filter(|m| *m == spec.name)
            .and_then(|m| self.rules.map(m))
    }

    /// Antecedent holds on a masked row.
    fn triggers(rule: &CompiledRule, row: &Row) -> bool {
        rule.antecedent.iter().all(|&(c, v)| row[c] == Cell::Cat(v))
    }

    fn violates(rule: &CompiledRule, row: &Row) -> bool {
        Self::triggers(rule, row) && rule.consequent.iter().any(|&(c, v)| row[c] != Cell::Cat(v))
    }

    /// Flag `k` is set iff rule `k`'s antecedent holds on the masked row.
    pub fn evaluate_rules(&self, row: &Row) -> Vec<bool> {
        self.compiled.iter().map(|r| Self::triggers(r, row)).collect()
    }

    /// Replaces each masked source column by its group-label column.
    pub fn apply_property_masks(&self, table: &DataTable) -> Result<DataTable> {
        apply_property_masks(table, &self.rules)?.conform_to(&self.masked_schema)
    }

    /// Flags every row, enforcing `policy` on rows that break a triggered rule.
    pub fn annotate(&self, masked: &DataTable, policy: ViolationPolicy) -> Result<RuleFlags> {
        let mut violating = Vec::new();
        let flags = masked
            .rows()
            .iter()
            .enumerate()
            .map(|(i, row)| {
                if self.compiled.iter().any(|r| Self::violates(r, row)) {
                    violating.push(i);
                }
                self.evaluate_rules(row)
            })
            .collect();
        if !violating.is_empty() && policy == ViolationPolicy::Error {
            return Err(Error::RuleViolations { rows: violating });
        }
        Ok(RuleFlags {
            flags,
            violating_rows: violating,
        })
    }

    /// Per-rule violation counts on a masked table.
    pub fn check_compliance(&self, masked: &DataTable) -> ComplianceReport {
        let mut per_rule = vec![0usize; self.compiled.len()];
        let mut violating_rows = 0;
        for row in masked.rows() {
            let mut any = false;
            for (k, rule) in self.compiled.iter().enumerate() {
                if Self::violates(rule, row) {
                    per_rule[k] += 1;
                    any = true;
                }
            }
            violating_rows += usize::from(any);
        }
        let total_rows = masked.row_count();
        ComplianceReport {
            per_rule: self
                .rules
                .rules
                .iter()
                .zip(per_rule)
                .map(|(r, violations)| RuleCompliance {
                    id: r.id.clone(),
                    violations,
                })
                .collect(),
            violating_rows,
            total_rows,
            rate: if total_rows == 0 {
                1.0
            } else {
                1.0 - violating_rows as f64 / total_rows as f64
            },
            vacuous: total_rows == 0,
        }
    }

    /// Compliance of a table in raw vocabulary (masks applied first).
    pub fn check_raw_compliance(&self, raw: &DataTable) -> Result<ComplianceReport> {
        Ok(self.check_compliance(&self.apply_property_masks(raw)?))
    }

    /// Enforced one-hot targets for a condition; see [`kg_query`].
    pub fn kg_query(&self, cond: &CondVector, layout: &RowEncodingLayout) -> Result<EnforcedAssignment> {
        let seg = layout
            .segments()
            .get(cond.segment)
            .ok_or_else(|| Error::MalformedCondition(format!("segment {} out of range", cond.segment)))?;
        if cond.category >= seg.width || !seg.kind.is_selectable() {
            return Err(Error::MalformedCondition(format!(
                "category {} of segment {} is not selectable",
                cond.category, cond.segment
            )));
        }
        let mut targets = vec![(cond.segment, cond.category)];
        let mut extend = |pairs: &[(usize, u32)]| -> Result<()> {
            for &(col, cat) in pairs {
                let s = layout.segment_of_column(col).ok_or_else(|| {
                    Error::MalformedCondition(format!("column {col} has no categorical segment"))
                })?;
                targets.push((s, cat as usize));
            }
            Ok(())
        };
        match seg.source {
            SegmentSource::Rule(k) => {
                if cond.category == 1 {
                    extend(&self.compiled[k].antecedent)?;
                    extend(&self.compiled[k].consequent)?;
                }
            }
            SegmentSource::Column(col) => {
                let assignment = (col, cond.category as u32);
                for rule in &self.compiled {
                    if rule.antecedent == [assignment] {
                        extend(&rule.consequent)?;
                    }
                }
            }
        }
        EnforcedAssignment::new(targets)
    }
}

/// Replaces each property map's source column with a discrete column of
/// group labels named after the map. Errors on already-masked tables and on
/// values no group covers.
pub fn apply_property_masks(table: &DataTable, rules: &RuleSet) -> Result<DataTable> {
    let schema = table.schema();
    let mut out_schema = schema.clone();
    let mut replacements = Vec::new();
    for map in &rules.property_maps {
        let Some(src) = schema.index_of(&map.source_column) else {
            if schema.index_of(&map.name).is_some() {
                return Err(Error::AlreadyMasked(map.name.clone()));
            }
            return Err(Error::InvalidArgument(format!(
                "property map {}: unknown column {}",
                map.name, map.source_column
            )));
        };
        let src_spec = &schema.columns[src];
        if !src_spec.is_discrete() {
            return Err(Error::InvalidArgument(format!(
                "property map {}: column {} is continuous",
                map.name, map.source_column
            )));
        }
        let labels = map.labels();
        let mut lookup = Vec::with_capacity(src_spec.categories().len());
        for v in src_spec.categories() {
            let group = map.group_of(v);
            lookup.push(group.and_then(|g| labels.iter().position(|l| l == g)).map(|i| i as u32));
        }
        out_schema.columns[src] = ColumnSpec {
            name: map.name.clone(),
            kind: ColumnKind::Discrete,
            categories: Some(labels),
            masked_by: Some(map.name.clone()),
        };
        replacements.push((src, lookup, map));
    }
    let mut rows = table.rows().to_vec();
    for (src, lookup, map) in &replacements {
        for row in &mut rows {
            let idx = row[*src].cat().expect("discrete source");
            row[*src] = match lookup[idx] {
                Some(g) => Cell::Cat(g),
                None => {
                    return Err(Error::UncoveredValue {
                        map: map.name.clone(),
                        column: map.source_column.clone(),
                        value: schema.columns[*src].categories()[idx].clone(),
                    })
                }
            };
        }
    }
    prune_references(&mut out_schema);
    DataTable::new(out_schema, rows)
}

/// Draws a concrete member of group `label`, uniformly over the group.
/// The catch-all label decodes to itself.
pub fn decode_mask(label: &str, map: &PropertyMap, seed: u64) -> Result<String> {
    let mut r = rng::rng(seed);
    if map.catch_all.as_deref() == Some(label) {
        return Ok(label.to_string());
    }
    let group = map
        .groups
        .iter()
        .find(|g| g.label == label)
        .ok_or_else(|| Error::UnknownLabel {
            map: map.name.clone(),
            label: label.to_string(),
        })?;
    match &group.membership {
        Membership::Values(v) if !v.is_empty() => Ok(v[r.random_range(0..v.len())].clone()),
        Membership::Interval { lo, hi } if lo <= hi => Ok(r.random_range(*lo..=*hi).to_string()),
        Membership::Prefix { pool, .. } if !pool.is_empty() => Ok(pool[r.random_range(0..pool.len())].clone()),
        _ => Err(Error::UndecodableGroup {
            map: map.name.clone(),
            label: label.to_string(),
        }),
    }
}

/// One-hot targets the generator is pushed toward for a condition, as
/// `(segment index, category index)` pairs, at most one per segment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnforcedAssignment {
    pub targets: Vec<(usize, usize)>,
}

impl EnforcedAssignment {
    /// Deduplicates; two different categories for one segment is an error.
    pub fn new(pairs: Vec<(usize, usize)>) -> Result<Self> {
        let mut by_segment: BTreeMap<usize, usize> = BTreeMap::new();
        for (s, c) in pairs {
            if let Some(&prev) = by_segment.get(&s) {
                if prev != c {
                    return Err(Error::InvalidRules(format!(
                        "inconsistent targets {prev} and {c} for segment {s}"
                    )));
                }
            }
            by_segment.insert(s, c);
        }
        Ok(Self {
            targets: by_segment.into_iter().collect(),
        })
    }
}

/// Free-function form of [`KnowledgeBase::kg_query`].
pub fn kg_query(cond: &CondVector, kb: &KnowledgeBase, layout: &RowEncodingLayout) -> Result<EnforcedAssignment> {
    kb.kg_query(cond, layout)
}

/// Free-function form of [`KnowledgeBase::evaluate_rules`].
pub fn evaluate_rules(row: &Row, kb: &KnowledgeBase) -> Vec<bool> {
    kb.evaluate_rules(row)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleCompliance {
    pub id: String,
    pub violations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplianceReport {
    pub per_rule: Vec<RuleCompliance>,
    pub violating_rows: usize,
    pub total_rows: usize,
    pub rate: f64,
    /// Set for empty tables, whose rate is 1 by convention.
    pub vacuous: bool,
}

/// Free-function form of [`KnowledgeBase::check_compliance`].
pub fn check_compliance(masked: &DataTable, kb: &KnowledgeBase) -> ComplianceReport {
    kb.check_compliance(masked)
}
