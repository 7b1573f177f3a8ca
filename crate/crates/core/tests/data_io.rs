use std::sync::Arc;

use dwols_core::data::{
    analysis_rows, check_positivity, load_csv, read_csv, write_csv, write_csv_to, AnalysisRows, CsvSchema,
    LongitudinalDataset, PersonTimeRow, PositivityThresholds, Schema,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn arb_dataset() -> impl Strategy<Value = LongitudinalDataset> {
    let subject = (
        1usize..5,
        prop::collection::vec(
            (0.01f64..3.0, any::<bool>(), any::<bool>(), -1e3f64..1e3, -50.0f64..50.0),
            4,
        ),
    );
    prop::collection::vec(subject, 1..6).prop_map(|subjects| {
        let mut rows = Vec::new();
        for (s, (count, cells)) in subjects.into_iter().enumerate() {
            let mut t = 0.0;
            for &(len, event, treated, y, x) in cells.iter().take(count) {
                rows.push(PersonTimeRow {
                    subject_id: format!("p{s}"),
                    t_start: t,
                    t_stop: t + len,
                    event,
                    at_risk: true,
                    treatment: u8::from(treated),
                    outcome: event.then_some(y),
                    covariates: vec![x, x * x / 7.0],
                });
                t += len;
            }
        }
        LongitudinalDataset::new(Arc::new(Schema::new(["X", "W"]).unwrap()), rows, None).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn csv_round_trip(ds in arb_dataset()) {
        let mut buf = Vec::new();
        write_csv_to(&ds, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), &CsvSchema::default()).unwrap();
        prop_assert_eq!(back.rows(), ds.rows());
        prop_assert_eq!(back.subjects(), ds.subjects());
        prop_assert_eq!(back.schema().names(), ds.schema().names());
    }

    #[test]
    fn analysis_rows_are_the_event_rows(ds in arb_dataset()) {
        let filtered: Vec<PersonTimeRow> = ds.rows().iter().filter(|r| r.event).cloned().collect();
        let got = analysis_rows(&ds);
        prop_assert_eq!(got.rows(), filtered.as_slice());
    }
}

#[test]
fn file_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.csv");
    std::fs::write(
        &path,
        "id,tstart,tstop,event,atrisk,A,Y,K1\n\
         b,0,1,1,1,0,2.5,0.3\n\
         a,0,0.5,0,1,1,,1.0\n\
         a,0.5,2,1,1,1,-1,1.0\n\
         b,1,2,0,1,0,NA,0.3\n",
    )
    .unwrap();
    let ds = load_csv(&path, &CsvSchema::default()).unwrap();
    assert_eq!(ds.rows().len(), 4);
    assert_eq!(ds.subjects().len(), 2);
    assert_eq!(ds.censoring_time("a"), Some(2.0));
    let out = dir.path().join("e.csv");
    write_csv(&ds, &out).unwrap();
    assert_eq!(load_csv(&out, &CsvSchema::default()).unwrap(), ds);
}

#[test]
fn mixed_dataset_filter() {
    let events = [true, false, false, true, false, true, false, false, true, false];
    let rows: Vec<PersonTimeRow> = events
        .iter()
        .enumerate()
        .map(|(i, &e)| PersonTimeRow {
            subject_id: "s".into(),
            t_start: i as f64,
            t_stop: i as f64 + 1.0,
            event: e,
            at_risk: true,
            treatment: 0,
            outcome: e.then_some(i as f64),
            covariates: vec![],
        })
        .collect();
    let ds = LongitudinalDataset::new(Arc::new(Schema::new(Vec::<String>::new()).unwrap()), rows, None).unwrap();
    let got: Vec<f64> = analysis_rows(&ds).outcomes().collect();
    assert_eq!(got, vec![0.0, 3.0, 5.0, 8.0]);
}

#[test]
fn uniform_propensities_are_never_flagged() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let rows: Vec<PersonTimeRow> = (0..100)
        .map(|i| PersonTimeRow {
            subject_id: format!("s{i}"),
            t_start: 0.0,
            t_stop: 1.0,
            event: true,
            at_risk: true,
            treatment: u8::from(i % 2 == 0),
            outcome: Some(0.0),
            covariates: vec![],
        })
        .collect();
    let data = AnalysisRows::new(Arc::new(Schema::new(Vec::<String>::new()).unwrap()), rows).unwrap();
    let p: Vec<f64> = (0..100).map(|_| rng.random_range(0.2..0.8)).collect();
    let report = check_positivity(&data, &p, PositivityThresholds::default()).unwrap();
    assert_eq!(report.below_lower + report.above_upper, 0);
    assert_eq!((report.n_treated, report.n_control), (50, 50));
    assert!(report.min >= 0.2 && report.max < 0.8);
}
