use kgsynth_core::encoder::{CondVector, Encoder, GmmOptions};
use kgsynth_core::fixture::{mini_network, mini_network_rules};
use kgsynth_core::knowledge::*;
use kgsynth_core::schema::{read_csv, Cell, ColumnSpec, DataTable, MissingPolicy, TableSchema};
use kgsynth_core::Error;
use proptest::prelude::*;

fn port_schema() -> TableSchema {
    TableSchema::new(vec![
        ColumnSpec::discrete("protocol", Some(&["DNS", "HTTP"])),
        ColumnSpec::discrete("port", None).with_mask("port_range"),
        ColumnSpec::continuous("bytes"),
    ])
    .unwrap()
}

fn port_table() -> DataTable {
    let csv = "protocol,port,bytes\nDNS,53,10\nHTTP,60000,20\nHTTP,8080,5\n";
    read_csv(csv.as_bytes(), &port_schema(), MissingPolicy::Error).unwrap()
}

fn range_rules() -> RuleSet {
    RuleSet {
        property_maps: vec![PropertyMap {
            name: "port_range".into(),
            source_column: "port".into(),
            groups: vec![
                GroupDef::interval("well_known", 0, 1023),
                GroupDef::interval("registered", 1024, 49151),
                GroupDef::interval("dynamic", 49152, 65535),
            ],
            catch_all: None,
        }],
        rules: vec![Rule {
            id: "r1".into(),
            antecedent: vec![Predicate::new("protocol", "DNS")],
            consequent: vec![Predicate::new("port_range", "well_known")],
        }],
    }
}

#[test]
fn masks_replace_values_with_groups() {
    let t = port_table();
    let masked = apply_property_masks(&t, &range_rules()).unwrap();
    assert_eq!(masked.schema().names(), vec!["protocol", "port_range", "bytes"]);
    let labels: Vec<String> = masked.rows().iter().map(|r| masked.label(1, r[1])).collect();
    assert_eq!(labels, vec!["well_known", "dynamic", "registered"]);
    // Unmasked continuous column passes through.
    for (a, b) in t.rows().iter().zip(masked.rows()) {
        assert_eq!(a[2], b[2]);
        assert_eq!(a[0], b[0]);
    }
    // The raw port values are gone from the schema.
    assert!(masked.schema().column("port").is_none());
}

#[test]
fn masking_twice_is_an_error() {
    let masked = apply_property_masks(&port_table(), &range_rules()).unwrap();
    assert!(matches!(
        apply_property_masks(&masked, &range_rules()),
        Err(Error::AlreadyMasked(_))
    ));
}

#[test]
fn uncovered_values_without_catch_all() {
    let mut rules = range_rules();
    rules.property_maps[0].groups.pop();
    let report = validate_ruleset(&rules, port_table().schema());
    assert!(report.has(IssueKind::UncoveredValue));
    assert!(matches!(
        apply_property_masks(&port_table(), &rules),
        Err(Error::UncoveredValue { .. })
    ));
    rules.property_maps[0].catch_all = Some("other".into());
    let masked = apply_property_masks(&port_table(), &rules).unwrap();
    assert_eq!(masked.label(1, masked.row(1)[1]), "other");
}

#[test]
fn validation_reports() {
    let schema = port_table().schema().clone();
    assert!(validate_ruleset(&range_rules(), &schema).is_valid());

    let mut bad = range_rules();
    bad.rules[0].antecedent[0].column = "proto".into();
    assert!(validate_ruleset(&bad, &schema).has(IssueKind::UnknownColumn));

    let mut bad = range_rules();
    bad.rules[0].consequent[0].value = "nope".into();
    assert!(validate_ruleset(&bad, &schema).has(IssueKind::UnknownCategory));

    let mut bad = range_rules();
    let mut other = bad.rules[0].clone();
    other.id = "r2".into();
    other.consequent[0].value = "dynamic".into();
    bad.rules.push(other);
    assert!(validate_ruleset(&bad, &schema).has(IssueKind::ConflictingConsequents));

    let mut bad = range_rules();
    bad.rules.push(bad.rules[0].clone());
    assert!(validate_ruleset(&bad, &schema).has(IssueKind::DuplicateRuleId));

    let mut bad = range_rules();
    bad.rules[0].consequent.push(Predicate::new("port_range", "dynamic"));
    assert!(validate_ruleset(&bad, &schema).has(IssueKind::DuplicateConsequentColumn));

    let mut bad = range_rules();
    bad.rules[0].consequent.push(Predicate::new("bytes", "1"));
    assert!(validate_ruleset(&bad, &schema).has(IssueKind::ContinuousColumn));

    let mut bad = range_rules();
    bad.property_maps[0].groups[0] = GroupDef::interval("well_known", 10, 0);
    assert!(validate_ruleset(&bad, &schema).has(IssueKind::BadInterval));

    let mut bad = range_rules();
    bad.property_maps[0].groups[1].label = "well_known".into();
    assert!(validate_ruleset(&bad, &schema).has(IssueKind::DuplicateGroupLabel));

    assert!(KnowledgeBase::new(bad, &schema).is_err());
}

#[test]
fn fixture_ruleset_is_valid_and_round_trips_through_toml() {
    let (t, rules) = mini_network(50, 1).unwrap();
    assert!(validate_ruleset(&rules, t.schema()).is_valid());
    let text = rules.to_toml().unwrap();
    let back = RuleSet::from_toml(&text).unwrap();
    assert_eq!(back, rules);
    assert_eq!(back.canonical_hash(), rules.canonical_hash());
}

#[test]
fn rule_file_format() {
    let text = r#"
[[property_maps]]
name = "port_group"
source_column = "dst_port"
catch_all = "other"

[[property_maps.groups]]
label = "web"
values = ["80", "443"]

[[property_maps.groups]]
label = "dynamic"
interval = [49152, 65535]

[[property_maps.groups]]
label = "high"
prefix = "9"
pool = ["9000", "9090"]

[[rules]]
id = "r1"
antecedent = [{ column = "protocol", value = "HTTP" }]
consequent = [{ column = "port_group", value = "web" }]
"#;
    let rules = RuleSet::from_toml(text).unwrap();
    let map = &rules.property_maps[0];
    assert_eq!(map.labels(), vec!["web", "dynamic", "high", "other"]);
    assert_eq!(map.group_of("9090"), Some("high"));
    assert_eq!(map.group_of("22"), Some("other"));
    assert!(RuleSet::from_toml("[[property_maps]]\nname = 1").is_err());
}

fn fixture_kb() -> (DataTable, KnowledgeBase) {
    let (t, rules) = mini_network(200, 3).unwrap();
    let kb = KnowledgeBase::new(rules, t.schema()).unwrap();
    (t, kb)
}

#[test]
fn evaluate_rules_flags_antecedents_only() {
    let (t, kb) = fixture_kb();
    let masked = kb.apply_property_masks(&t).unwrap();
    for row in masked.rows() {
        let flags = evaluate_rules(row, &kb);
        let proto = row[0].cat().unwrap();
        assert_eq!(flags, vec![proto == 0, proto == 1, proto == 2]);
    }
    // A violating row is still flagged.
    let mut row = masked.row(0).clone();
    row[0] = Cell::Cat(0);
    row[1] = Cell::Cat(2);
    assert_eq!(kb.evaluate_rules(&row)[0], true);

    let empty = KnowledgeBase::new(RuleSet::default(), t.schema()).unwrap();
    assert!(empty.evaluate_rules(t.row(0)).is_empty());
}

#[test]
fn compliance_counts_violations() {
    let (t, kb) = fixture_kb();
    let masked = kb.apply_property_masks(&t).unwrap().select(&(0..10).collect::<Vec<_>>());
    assert_eq!(kb.check_compliance(&masked).rate, 1.0);
    let mut rows = masked.rows().to_vec();
    let web = kb.masked_schema().columns[1].category_index("web").unwrap() as u32;
    rows[0][0] = Cell::Cat(0);
    rows[0][1] = Cell::Cat(web);
    let broken = DataTable::new(masked.schema().clone(), rows).unwrap();
    let report = check_compliance(&broken, &kb);
    assert!((report.rate - 0.9).abs() < 1e-12);
    assert_eq!(report.violating_rows, 1);
    assert_eq!(report.per_rule[0].violations, 1);
    assert!(matches!(
        kb.annotate(&broken, ViolationPolicy::Error),
        Err(Error::RuleViolations { ref rows }) if rows == &vec![0]
    ));
    let kept = kb.annotate(&broken, ViolationPolicy::WarnAndKeep).unwrap();
    assert_eq!(kept.violating_rows, vec![0]);

    let empty = DataTable::empty(kb.masked_schema().clone());
    let r = kb.check_compliance(&empty);
    assert!(r.vacuous && r.rate == 1.0);
}

#[test]
fn kg_query_targets() {
    let (t, kb) = fixture_kb();
    let masked = kb.apply_property_masks(&t).unwrap();
    let enc = Encoder::fit(&masked, &kb, &GmmOptions::default(), 0).unwrap();
    let layout = enc.layout();
    let proto = layout.segment_of_column(0).unwrap();
    let port = layout.segment_of_column(1).unwrap();
    let zone = layout.segment_of_column(2).unwrap();
    let r1 = layout.segment_of_rule(0).unwrap();
    let ms = kb.masked_schema();
    let p53 = ms.columns[1].category_index("p53").unwrap();
    let home = ms.columns[2].category_index("home").unwrap();

    let on = kg_query(&CondVector { segment: r1, category: 1 }, &kb, layout).unwrap();
    let mut expected = vec![(r1, 1), (proto, 0), (port, p53), (zone, home)];
    expected.sort();
    assert_eq!(on.targets, expected);

    let off = kg_query(&CondVector { segment: r1, category: 0 }, &kb, layout).unwrap();
    assert_eq!(off.targets, vec![(r1, 0)]);

    // An ordinary cond implying r1's whole antecedent also gets its consequents.
    let dns = kg_query(&CondVector { segment: proto, category: 0 }, &kb, layout).unwrap();
    let mut expected = vec![(proto, 0), (port, p53), (zone, home)];
    expected.sort();
    assert_eq!(dns.targets, expected);

    // No rule mentions src_zone in an antecedent.
    let z = kg_query(&CondVector { segment: zone, category: 2 }, &kb, layout).unwrap();
    assert_eq!(z.targets, vec![(zone, 2)]);

    assert!(kg_query(&CondVector { segment: 0, category: 0 }, &kb, layout).is_err());
    assert!(kg_query(&CondVector { segment: proto, category: 9 }, &kb, layout).is_err());
}

#[test]
fn decode_mask_examples() {
    let rules = mini_network_rules();
    let map = &rules.property_maps[0];
    assert_eq!(decode_mask("p53", map, 1).unwrap(), "53");
    for seed in 0..200 {
        let v: i64 = decode_mask("dynamic", map, seed).unwrap().parse().unwrap();
        assert!((49152..=65535).contains(&v));
    }
    assert_eq!(decode_mask("web", map, 9).unwrap(), decode_mask("web", map, 9).unwrap());
    assert!(matches!(decode_mask("nope", map, 0), Err(Error::UnknownLabel { .. })));
}

#[test]
fn decode_mask_covers_small_groups() {
    // Interval of width w = 8: after 50·w draws the chance a member is
    // missing is at most 8·(7/8)^400 < 1e-22.
    let map = PropertyMap {
        name: "m".into(),
        source_column: "c".into(),
        groups: vec![GroupDef::interval("g", 10, 17), GroupDef::values("s", &["a", "b", "c"])],
        catch_all: None,
    };
    let seen: std::collections::BTreeSet<String> = (0..400).map(|s| decode_mask("g", &map, s).unwrap()).collect();
    assert_eq!(seen.len(), 8);
    let seen: std::collections::BTreeSet<String> = (0..150).map(|s| decode_mask("s", &map, s).unwrap()).collect();
    assert_eq!(seen.len(), 3);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn flags_permute_with_rules(seed in 0u64..1000, perm in Just(vec![0usize, 1, 2]).prop_shuffle()) {
        let (t, rules) = mini_network(30, seed).unwrap();
        let kb = KnowledgeBase::new(rules.clone(), t.schema()).unwrap();
        let mut shuffled = rules.clone();
        shuffled.rules = perm.iter().map(|&i| rules.rules[i].clone()).collect();
        let kb2 = KnowledgeBase::new(shuffled, t.schema()).unwrap();
        let masked = kb.apply_property_masks(&t).unwrap();
        for row in masked.rows() {
            let a = kb.evaluate_rules(row);
            let b = kb2.evaluate_rules(row);
            for (j, &i) in perm.iter().enumerate() {
                prop_assert_eq!(b[j], a[i]);
            }
        }
    }

    #[test]
    fn kg_targets_are_consistent(seed in 0u64..50) {
        let (t, kb) = {
            let (t, rules) = mini_network(100, seed).unwrap();
            let kb = KnowledgeBase::new(rules, t.schema()).unwrap();
            (t, kb)
        };
        let masked = kb.apply_property_masks(&t).unwrap();
        let enc = Encoder::fit(&masked, &kb, &GmmOptions::default(), seed).unwrap();
        let layout = enc.layout();
        for &s in layout.cond_segments() {
            for c in 0..layout.segments()[s].width {
                let a = kb.kg_query(&CondVector { segment: s, category: c }, layout).unwrap();
                let segs: std::collections::BTreeSet<_> = a.targets.iter().map(|t| t.0).collect();
                prop_assert_eq!(segs.len(), a.targets.len());
                for &(seg, cat) in &a.targets {
                    prop_assert!(cat < layout.segments()[seg].width);
                }
            }
        }
    }
}
