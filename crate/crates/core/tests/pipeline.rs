use mitograde::grading::ModelKind;
use mitograde::ingest::{save_corpus, CorpusPaths};
use mitograde::pipeline::{
    compute_rois, evaluate_predictions, fit_runs, read_predictions, read_roi, run_roi, training_rows, write_predictions,
    write_roi, FitConfig, Prediction, RoiConfig,
};
use mitograde::synth::{gen_grading_corpus, GradingCorpusSpec};
use mitograde::Error;
use proptest::prelude::*;
use tempfile::TempDir;

#[test]
fn roi_table_round_trips() {
    let corpus = gen_grading_corpus(4, &GradingCorpusSpec::new(15)).unwrap();
    let rows = compute_rois(&corpus, &RoiConfig::default()).unwrap();
    assert_eq!(rows.len(), corpus.slides().len());
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("roi.csv");
    write_roi(&path, &rows).unwrap();
    assert_eq!(read_roi(&path).unwrap(), rows);
    let header = std::fs::read_to_string(&path).unwrap();
    assert!(header.starts_with("slide_id,mc,left,top,width,height\n"));
}

#[test]
fn roi_stage_agrees_with_in_memory_search() {
    let corpus = gen_grading_corpus(6, &GradingCorpusSpec::new(12)).unwrap();
    let dir = TempDir::new().unwrap();
    let paths = save_corpus(&corpus, dir.path().join("c")).unwrap();
    let m = run_roi(&paths, &dir.path().join("r"), &RoiConfig::default()).unwrap();
    assert_eq!(m.stage, "roi");
    let rows = read_roi(&dir.path().join("r/roi.csv")).unwrap();
    assert_eq!(rows, compute_rois(&corpus, &RoiConfig::default()).unwrap());
}

#[test]
fn missing_corpus_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let err = run_roi(&CorpusPaths::in_dir(dir.path().join("nope")), &dir.path().join("r"), &RoiConfig::default())
        .unwrap_err();
    assert!(err.is_io(), "{err}");
}

#[test]
fn training_rows_need_every_slide() {
    let corpus = gen_grading_corpus(6, &GradingCorpusSpec::new(12)).unwrap();
    let mut rows = compute_rois(&corpus, &RoiConfig::default()).unwrap();
    rows.pop();
    assert!(matches!(training_rows(&corpus, &rows), Err(Error::Integrity(_))));
}

#[test]
fn runs_use_distinct_splits() {
    let corpus = gen_grading_corpus(8, &GradingCorpusSpec::new(40)).unwrap();
    let rows = training_rows(&corpus, &compute_rois(&corpus, &RoiConfig::default()).unwrap()).unwrap();
    let mut cfg = FitConfig::new(ModelKind::McOnly, 10, 3);
    cfg.train.max_epochs = 50;
    let outs = fit_runs(&rows, &cfg).unwrap();
    assert_eq!(outs.len(), 3);
    assert_ne!(outs[0].val_ids, outs[1].val_ids);
    assert_ne!(outs[1].val_ids, outs[2].val_ids);
    assert_eq!(outs[2].model.seed, 12);
}

fn predictions() -> impl Strategy<Value = Vec<Prediction>> {
    prop::collection::vec((0usize..3, 0u32..50, -1.0f64..5.0, 1u8..=3), 1..30).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (run, mc, score, g))| Prediction {
                run,
                patient_id: format!("p{i}"),
                slide_id: format!("s{i}"),
                mc,
                score,
                who_grade: g,
            })
            .collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn predictions_table_round_trips(preds in predictions()) {
        let dir = TempDir::new().unwrap();
        let path = dir.path().join("p.csv");
        write_predictions(&path, &preds).unwrap();
        prop_assert_eq!(read_predictions(&path).unwrap(), preds);
    }

    #[test]
    fn evaluation_counts_every_case_once(preds in predictions()) {
        if let Ok(out) = evaluate_predictions(&preds) {
            let total: usize = out.runs.iter().map(|r| r.total).sum();
            prop_assert_eq!(total, preds.len());
            prop_assert_eq!(out.summary.is_some(), out.runs.len() > 1);
        }
    }
}
