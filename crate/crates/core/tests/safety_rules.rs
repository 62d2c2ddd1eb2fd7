use proptest::prelude::*;
use scrapsight_core::safety::{self, Verdict};
use scrapsight_core::{BBox, Detection};

fn det(class_id: usize, confidence: f64) -> Detection {
    Detection { bbox: BBox::new(0.5, 0.5, 0.2, 0.2), class_id, confidence, objectness: confidence }
}

fn dets() -> impl Strategy<Value = Vec<Detection>> {
    prop::collection::vec((0usize..3, 0.0f64..1.0).prop_map(|(c, p)| det(c, p)), 0..12)
}

fn rule(dets: &[Detection]) -> Verdict {
    if dets.is_empty() {
        Verdict::Indeterminate
    } else if dets.iter().any(|d| d.class_id == 0) {
        Verdict::Mppeh
    } else {
        Verdict::Mdas
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn image_verdict_follows_rule(list in dets()) {
        let names = scrapsight_core::default_class_names();
        let r = safety::classify_image("x", &list, &names).unwrap();
        prop_assert_eq!(r.verdict, rule(&list));
        prop_assert_eq!(r.detection_count, list.len());
        for (p, d) in r.pieces.iter().zip(&list) {
            let want = if d.class_id == 0 { Verdict::Mppeh } else { Verdict::Mdas };
            prop_assert_eq!(p.verdict, want);
        }
    }

    #[test]
    fn more_detections_never_make_an_image_safer(list in dets(), extra in dets(), shuffle in any::<u64>()) {
        let names = scrapsight_core::default_class_names();
        let base = safety::classify_image("x", &list, &names).unwrap().verdict;
        let mut grown = list.clone();
        grown.extend(extra);
        let n = grown.len().max(1);
        grown.rotate_left(shuffle as usize % n);
        let after = safety::classify_image("x", &grown, &names).unwrap().verdict;
        if base == Verdict::Mppeh {
            prop_assert_eq!(after, Verdict::Mppeh);
        }
        if after == Verdict::Mdas {
            prop_assert!(base != Verdict::Mppeh);
        }
        let rescored: Vec<Detection> = list.iter().map(|d| det(d.class_id, 1.0 - d.confidence)).collect();
        prop_assert_eq!(safety::classify_image("x", &rescored, &names).unwrap().verdict, base);
    }
}

#[test]
fn batch_summary_counts_every_image() {
    let names = scrapsight_core::default_class_names();
    let images: Vec<_> = (0..30)
        .map(|i| {
            let list: Vec<Detection> = (0..i % 4).map(|j| det((i + j) % 3, 0.5)).collect();
            safety::classify_image(format!("img{i}"), &list, &names).unwrap()
        })
        .collect();
    let want: Vec<Verdict> = images.iter().map(|r| r.verdict).collect();
    let report = safety::batch_report(images);
    assert_eq!(report.summary.total(), 30);
    assert_eq!(report.summary.mppeh, want.iter().filter(|v| **v == Verdict::Mppeh).count());
    assert_eq!(report.summary.indeterminate, want.iter().filter(|v| **v == Verdict::Indeterminate).count());
    assert!(!report.summary.all_safe());
    assert_eq!(report.to_csv().lines().count(), 32);
}

#[test]
fn unknown_class_is_an_error_not_a_panic() {
    let names = scrapsight_core::default_class_names();
    assert!(safety::classify_image("x", &[det(7, 0.9)], &names).is_err());
}
