//! Loader for the UCI Adult census files (`adult.data` / `adult.test`) and a
//! small rule set over them.
//!
//! The raw files have no header, separate fields with ", ", mark missing
//! values with "?", and the test file appends "." to its income labels.
//! `fnlwgt` (a sampling weight) and `education-num` (a recoding of
//! `education`) are dropped.

use std::path::Path;

use crate::error::{Error, Result};
use crate::knowledge::{GroupDef, Predicate, PropertyMap, Rule, RuleSet};
use crate::schema::{ColumnSpec, DataTable, MissingPolicy, TableSchema};

/// Raw field positions kept, with their column names.
const KEPT: [(usize, &str); 13] = [
    (0, "age"),
    (1, "workclass"),
    (3, "education"),
    (5, "marital_status"),
    (6, "occupation"),
    (7, "relationship"),
    (8, "race"),
    (9, "sex"),
    (10, "capital_gain"),
    (11, "capital_loss"),
    (12, "hours_per_week"),
    (13, "native_country"),
    (14, "income"),
];

const RAW_FIELDS: usize = 15;

pub fn adult_schema() -> TableSchema {
    let d = |n: &str| ColumnSpec::discrete(n, None);
    let c = ColumnSpec::continuous;
    TableSchema {
        columns: vec![
            c("age"),
            d("workclass"),
            d("education"),
            d("marital_status"),
            d("occupation"),
            d("relationship"),
            d("race"),
            d("sex"),
            c("capital_gain"),
            c("capital_loss"),
            c("hours_per_week"),
            d("native_country").with_mask("region"),
            ColumnSpec::discrete("income", Some(&["<=50K", ">50K"])),
        ],
        target: Some("income".into()),
        sensitive: vec!["sex".into(), "race".into()],
    }
}

pub fn adult_rules() -> RuleSet {
    let region = |label: &str, values: &[&str]| GroupDef::values(label, values);
    RuleSet {
        property_maps: vec![PropertyMap {
            name: "region".into(),
            source_column: "native_country".into(),
            groups: vec![
                region("us", &["United-States", "Outlying-US(Guam-USVI-etc)", "Puerto-Rico"]),
                region("canada", &["Canada"]),
                region(
                    "latin_america",
                    &[
                        "Mexico",
                        "El-Salvador",
                        "Cuba",
                        "Jamaica",
                        "Dominican-Republic",
                        "Guatemala",
                        "Columbia",
                        "Haiti",
                        "Nicaragua",
                        "Peru",
                        "Ecuador",
                        "Trinadad&Tobago",
                        "Honduras",
                    ],
                ),
                region(
                    "asia",
                    &[
                        "Philippines",
                        "India",
                        "China",
                        "Vietnam",
                        "Japan",
                        "Iran",
                        "Taiwan",
                        "Hong",
                        "Cambodia",
                        "Thailand",
                        "Laos",
                        "South",
                    ],
                ),
                region(
                    "europe",
                    &[
                        "Germany",
                        "England",
                        "Italy",
                        "Poland",
                        "Portugal",
                        "Greece",
                        "France",
                        "Ireland",
                        "Yugoslavia",
                        "Hungary",
                        "Scotland",
                        "Holand-Netherlands",
                    ],
                ),
            ],
            catch_all: None,
        }],
        rules: vec![
            Rule {
                id: "husband_male".into(),
                antecedent: vec![Predicate::new("relationship", "Husband")],
                consequent: vec![
                    Predicate::new("sex", "Male"),
                    Predicate::new("marital_status", "Married-civ-spouse"),
                ],
            },
            Rule {
                id: "wife_female".into(),
                antecedent: vec![Predicate::new("relationship", "Wife")],
                consequent: vec![
                    Predicate::new("sex", "Female"),
                    Predicate::new("marital_status", "Married-civ-spouse"),
                ],
            },
        ],
    }
}

/// Parses raw Adult text. Categories are inferred and frozen in sorted order.
pub fn parse_adult(text: &str, missing: MissingPolicy) -> Result<DataTable> {
    let mut table = DataTable::empty(adult_schema());
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        // Blank lines and the test file's "|1x3 Cross validator" banner.
        if line.is_empty() || line.starts_with('|') {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != RAW_FIELDS {
            return Err(Error::Format(format!(
                "line {}: expected {RAW_FIELDS} fields, found {}",
                line_no + 1,
                fields.len()
            )));
        }
        if let Some(&(_, name)) = KEPT.iter().find(|&&(i, _)| fields[i] == "?") {
            match missing {
                MissingPolicy::DropRow => continue,
                MissingPolicy::Error => {
                    return Err(Error::MissingValue {
                        row: line_no,
                        column: name.to_string(),
                    })
                }
            }
        }
        let labels: Vec<String> = KEPT
            .iter()
            .map(|&(i, _)| fields[i].trim_end_matches('.').to_string())
            .collect();
        table.push_labels(&labels, true)?;
    }
    if table.is_empty() {
        return Err(Error::EmptyTable);
    }
    let mut frozen = table.schema().clone();
    for col in &mut frozen.columns {
        if col.name != "income" {
            if let Some(cats) = col.categories.as_mut() {
                cats.sort();
            }
        }
    }
    table.conform_to(&frozen)
}

pub fn load_adult(path: &Path, missing: MissingPolicy) -> Result<DataTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_adult(&text, missing)
}
