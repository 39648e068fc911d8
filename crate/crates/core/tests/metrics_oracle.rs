//! Page-level scoring against a brute-force scorer on random tables.

mod common;

use common::oracles::{check_metric_tables, random_table, METRIC_FIELDS};
use domex_core::dom::{Page, VerticalSchema};
use domex_core::pipeline::{page_level_f1, MetricsError, PagePrediction};

#[test]
fn matches_brute_force_on_random_tables() {
    check_metric_tables(100).unwrap();
}

#[test]
fn input_errors() {
    let schema = VerticalSchema::new("v", &METRIC_FIELDS).unwrap();
    let table = random_table(3);
    let refs: Vec<&Page> = table.pages.iter().collect();
    let base = PagePrediction {
        site_id: "s".into(),
        page_id: "0000".into(),
        field: "title".into(),
        xpath: String::new(),
        text: "a".into(),
        source: String::new(),
    };

    let unknown_field = PagePrediction { field: "isbn".into(), ..base.clone() };
    assert!(matches!(page_level_f1(&schema, &[unknown_field], &refs), Err(MetricsError::UnknownField(_))));

    let unknown_page = PagePrediction { page_id: "9999".into(), ..base.clone() };
    assert!(matches!(page_level_f1(&schema, &[unknown_page], &refs), Err(MetricsError::UnknownPage { .. })));

    assert!(matches!(
        page_level_f1(&schema, &[base.clone(), base], &refs),
        Err(MetricsError::DuplicatePrediction { .. })
    ));
}
