//! Built-in rule-consistent network-event fixture. Its generator satisfies
//! every rule by construction, so it doubles as the compliance oracle.

use rand::distr::{weighted::WeightedIndex, Distribution};
use rand_distr::Normal;

use crate::error::Result;
use crate::knowledge::{GroupDef, PropertyMap, Predicate, Rule, RuleSet};
use crate::rng;
use crate::schema::{ColumnSpec, DataTable, TableSchema};

pub const PROTOCOLS: [&str; 3] = ["DNS", "NTP", "HTTP"];
pub const PROTOCOL_WEIGHTS: [f64; 3] = [0.4, 0.2, 0.4];
pub const ZONES: [&str; 3] = ["home", "gateway", "external"];

pub fn mini_network_schema() -> TableSchema {
    TableSchema {
        columns: vec![
            ColumnSpec::discrete("protocol", Some(&PROTOCOLS)),
            ColumnSpec::discrete("dst_port", None).with_mask("port_group"),
            ColumnSpec::discrete("src_zone", Some(&ZONES)),
            ColumnSpec::continuous("bytes"),
        ],
        target: Some("protocol".into()),
        sensitive: vec!["src_zone".into()],
    }
}

pub fn mini_network_rules() -> RuleSet {
    let r = |id: &str, proto: &str, cons: &[(&str, &str)]| Rule {
        id: id.into(),
        antecedent: vec![Predicate::new("protocol", proto)],
        consequent: cons.iter().map(|(c, v)| Predicate::new(c, v)).collect(),
    };
    RuleSet {
        property_maps: vec![PropertyMap {
            name: "port_group".into(),
            source_column: "dst_port".into(),
            groups: vec![
                GroupDef::values("p53", &["53"]),
                GroupDef::values("p123", &["123"]),
                GroupDef::values("web", &["80", "443", "8080"]),
                GroupDef::interval("dynamic", 49152, 65535),
            ],
            catch_all: None,
        }],
        rules: vec![
            r("r1", "DNS", &[("port_group", "p53"), ("src_zone", "home")]),
            r("r2", "NTP", &[("port_group", "p123")]),
            r("r3", "HTTP", &[("port_group", "web")]),
        ],
    }
}

/// `n` rows; columns protocol, dst_port, src_zone, bytes.
pub fn mini_network(n: usize, seed: u64) -> Result<(DataTable, RuleSet)> {
    let mut r = rng::rng(rng::substream(seed, "fixture.mini_network"));
    let proto = WeightedIndex::new(PROTOCOL_WEIGHTS).expect("valid weights");
    let ntp_zone = WeightedIndex::new([0.3, 0.5, 0.2]).expect("valid weights");
    let http_zone = WeightedIndex::new([0.3, 0.2, 0.5]).expect("valid weights");
    let web_port = WeightedIndex::new([0.5, 0.4, 0.1]).expect("valid weights");
    let small = Normal::new(120.0, 20.0).expect("valid normal");
    let large = Normal::new(5000.0, 800.0).expect("valid normal");

    let schema = mini_network_schema();
    let mut table = DataTable::empty(schema);
    for _ in 0..n {
        let p = proto.sample(&mut r);
        let (port, zone, bytes): (&str, &str, f64) = match p {
            0 => ("53", "home", small.sample(&mut r)),
            1 => ("123", ZONES[ntp_zone.sample(&mut r)], small.sample(&mut r)),
            _ => (
                ["80", "443", "8080"][web_port.sample(&mut r)],
                ZONES[http_zone.sample(&mut r)],
                large.sample(&mut r),
            ),
        };
        let bytes = (bytes.max(1.0) * 100.0).round() / 100.0;
        table.push_labels(
            &[
                PROTOCOLS[p].to_string(),
                port.to_string(),
                zone.to_string(),
                crate::schema::format_real(bytes),
            ],
            true,
        )?;
    }
    // Freeze the port vocabulary in sorted order like an inferred column.
    let mut frozen = table.schema().clone();
    if let Some(cats) = frozen.columns[1].categories.as_mut() {
        cats.sort();
    }
    let table = table.conform_to(&frozen)?;
    Ok((table, mini_network_rules()))
}
