use gramark::corpus::bundled_corpus;
use gramark::evalkit::{prompt_suite, Pipeline, SweepAxis, SweepPlan};
use gramark::{build_type_map, MiniLangLexer, NgramConfig, NgramLm, WatermarkKey};

fn plan() -> SweepPlan {
    let mut plan = SweepPlan::new(SweepAxis::Beta, vec![1.0, 5.0]);
    plan.trials = 6;
    plan.length = 40;
    plan.type_guidance = false;
    plan.seed = 11;
    plan
}

#[test]
fn same_plan_gives_identical_reports() {
    let docs = bundled_corpus();
    let lm = NgramLm::train(&docs, &MiniLangLexer, NgramConfig::default()).unwrap();
    let map = build_type_map(lm.vocab(), &MiniLangLexer);
    let report = || {
        let prompts = prompt_suite(&docs, &lm, &MiniLangLexer, 40);
        let mut pipe = Pipeline::<f32>::new(&lm, &MiniLangLexer, None, &map, WatermarkKey(0xabc), prompts);
        pipe.bits = 10;
        pipe.run_sweep(&plan()).unwrap()
    };
    let (a, b) = (report(), report());
    assert_eq!(a.to_json(), b.to_json());
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.rows.len(), 2);
    assert!(a.rows[1].extraction_rate >= a.rows[0].extraction_rate);

    let mut other = plan();
    other.seed = 12;
    let prompts = prompt_suite(&docs, &lm, &MiniLangLexer, 40);
    let mut pipe = Pipeline::<f32>::new(&lm, &MiniLangLexer, None, &map, WatermarkKey(0xabc), prompts);
    pipe.bits = 10;
    let c = pipe.run_sweep(&other).unwrap();
    assert_ne!(a.rows[0].records, c.rows[0].records);
}

#[test]
fn guided_sweep_without_predictor_is_rejected() {
    let docs = bundled_corpus();
    let lm = NgramLm::train(&docs, &MiniLangLexer, NgramConfig::default()).unwrap();
    let map = build_type_map(lm.vocab(), &MiniLangLexer);
    let prompts = prompt_suite(&docs, &lm, &MiniLangLexer, 40);
    let pipe = Pipeline::<f32>::new(&lm, &MiniLangLexer, None, &map, WatermarkKey(0xabc), prompts);
    let mut p = plan();
    p.type_guidance = true;
    assert!(pipe.run_sweep(&p).is_err());
}
