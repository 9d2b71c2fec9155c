//! Soundness and minimality of the balance planners.

use proptest::prelude::*;

use fairsynth::annotations::AnnotationTable;
use fairsynth::balance::{
    apply_plan, apply_plan_to_rows, check_criteria, plan_balance, plan_same_size, plan_supplement, tabulate_counts,
    CountTable, GroupCounts, PlanMode, PlanRequest, PlanStrategy,
};

prop_compose! {
    fn count_table()(t0 in 0u64..400, t1 in 0u64..400, n in 1usize..4)
        (p0 in prop::collection::vec(0..=t0, n), p1 in prop::collection::vec(0..=t1, n), t0 in Just(t0), t1 in Just(t1))
        -> CountTable
    {
        let mut ct = CountTable::new("Z", [t0, t1]);
        for (i, (a, b)) in p0.iter().zip(&p1).enumerate() {
            ct = ct.with_attribute(format!("A{i}"), GroupCounts { positive: [*a, *b], negative: [t0 - a, t1 - b] });
        }
        ct
    }
}

fn balanced(ct: &CountTable) -> bool {
    let r = check_criteria(ct);
    r.group_dp_ok && r.all_eodds()
}

fn table(attrs: &[&str], rows: &[Vec<u8>]) -> AnnotationTable {
    AnnotationTable::new(
        attrs.iter().map(|a| a.to_string()).collect(),
        (0..rows.len()).map(|i| format!("{i:06}.jpg")).collect(),
        rows.to_vec(),
    )
    .unwrap()
}

prop_compose! {
    /// Rows of (Male, A, B, C) with both groups present.
    fn annotation_rows()(rows in prop::collection::vec(prop::collection::vec(0u8..=1, 4), 4..120)) -> Vec<Vec<u8>> {
        let mut rows = rows;
        rows[0][0] = 0;
        rows[1][0] = 1;
        rows
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn supplement_is_sound_and_minimal(ct in count_table()) {
        let plan = plan_supplement(&ct);
        prop_assert!(balanced(&apply_plan(&ct, &plan)));
        prop_assert!(plan.cells.iter().all(|c| c.count > 0));
        for i in 0..plan.cells.len() {
            let mut less = plan.clone();
            less.cells[i].count -= 1;
            prop_assert!(!balanced(&apply_plan(&ct, &less)));
        }
        if balanced(&ct) {
            prop_assert!(plan.cells.is_empty());
        }
    }

    #[test]
    fn joint_supplement_balances_every_attribute(rows in annotation_rows()) {
        let ann = table(&["Male", "A", "B", "C"], &rows);
        let aoi: Vec<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
        let req = PlanRequest {
            protected: "Male".into(),
            aoi: aoi.clone(),
            mode: PlanMode::Supplement,
            strategy: PlanStrategy::Joint,
            families: Vec::new(),
            rng_seed: 0,
        };
        let plan = plan_balance(&ann, &req, None).unwrap();
        let after = apply_plan_to_rows(&ann, &aoi, &plan).unwrap();
        prop_assert!(balanced(&after));
    }

    #[test]
    fn same_size_keeps_balanced_group_size(rows in annotation_rows(), seed in any::<u64>()) {
        let ann = table(&["Male", "A", "B", "C"], &rows);
        let aoi: Vec<String> = ["A", "B"].iter().map(|s| s.to_string()).collect();
        let plan = plan_same_size(&ann, "Male", &aoi, &[], seed).unwrap();
        let counts = tabulate_counts(&ann, "Male", &aoi).unwrap();
        let m = counts.group_totals[0].min(counts.group_totals[1]);
        let after = apply_plan_to_rows(&ann, &aoi, &plan).unwrap();
        prop_assert_eq!(after.group_totals, [m, m]);
        prop_assert!(balanced(&after));
        let kept = plan.retained_original.as_ref().unwrap();
        prop_assert_eq!(kept.groups[0].len() as u64, m / 2);
        prop_assert_eq!(&plan, &plan_same_size(&ann, "Male", &aoi, &[], seed).unwrap());
    }
}

#[test]
fn blond_deficit_fixture() {
    let mut rows = Vec::new();
    rows.extend((0..100).map(|i| vec![0u8, u8::from(i < 24)]));
    rows.extend((0..100).map(|i| vec![1u8, u8::from(i < 2)]));
    let ann = table(&["Male", "Blond_Hair"], &rows);
    let ct = tabulate_counts(&ann, "Male", &["Blond_Hair".to_string()]).unwrap();
    let plan = plan_supplement(&ct);
    let counts: Vec<(u8, u8, u64)> = plan
        .cells
        .iter()
        .map(|c| (c.group, c.assignments["Blond_Hair"], c.count))
        .collect();
    assert_eq!(counts, vec![(1, 1, 22), (0, 0, 22)]);
}

#[test]
fn exclusive_families_are_skipped_in_joint_plans() {
    let rows: Vec<Vec<u8>> = (0..40)
        .map(|i| vec![u8::from(i % 2 == 0), u8::from(i % 3 == 0), u8::from(i % 5 == 0)])
        .collect();
    let ann = table(&["Male", "Black_Hair", "Blond_Hair"], &rows);
    let req = PlanRequest {
        protected: "Male".into(),
        aoi: vec!["Black_Hair".into(), "Blond_Hair".into()],
        mode: PlanMode::Supplement,
        strategy: PlanStrategy::Joint,
        families: vec![vec!["Black_Hair".into(), "Blond_Hair".into()]],
        rng_seed: 0,
    };
    let plan = plan_balance(&ann, &req, None).unwrap();
    assert!(plan
        .cells
        .iter()
        .all(|c| !(c.assignments.get("Black_Hair") == Some(&1) && c.assignments.get("Blond_Hair") == Some(&1))));
}
