use std::sync::Arc;

use aact_core::counterfactual::EngineParams;
use aact_core::dataset::SamplingMode;
use aact_core::synthetic::{binary_engine, binary_instance};
use aact_core::template::{self, join_features, percent, Catalog, Slots, TemplateError};
use aact_core::workflow::{Clock, HumanState, Mode, Session, SessionOptions, Step};

const GOLDEN: &str = include_str!("golden/messages.txt");

fn rendered() -> Vec<String> {
    let flag = |id: &str, feature: &str, delta: f64| {
        template::render(id, &Slots::new().with("feature", feature).with_delta(delta)).unwrap()
    };
    let features = join_features(&["overall quality", "living area"]);
    let conflict = Slots::new()
        .with("alt", "High")
        .with("features", features)
        .with("confidence", percent(0.734).to_string());
    vec![
        flag(template::INC_REFLECT, "kitchen quality", 0.0),
        flag(template::INC_SUGGEST, "overall quality", 0.08),
        flag(template::INC_SUGGEST, "central air", -0.123),
        flag(template::UNR_REFLECT, "living area", 0.0),
        flag(template::UNR_SUGGEST, "X", 0.12),
        flag(template::UNR_SUGGEST, "age when sold", 0.125),
        template::render(template::CONF_REFLECT, &conflict).unwrap(),
        template::render(template::CONF_SUGGEST, &conflict).unwrap(),
    ]
}

#[test]
fn messages_match_the_golden_file() {
    let expected: Vec<&str> = GOLDEN.lines().collect();
    let actual = rendered();
    assert_eq!(actual.len(), expected.len());
    for (a, e) in actual.iter().zip(&expected) {
        assert_eq!(a, e);
    }
}

#[test]
fn session_suggestion_uses_the_catalog_wording() {
    let engine = binary_engine(&["A", "B"], &[vec![0.0, 4.0, 0.0], vec![0.0; 3]], &[0.0, 0.0]).unwrap();
    let options = SessionOptions {
        mode: Mode::Aact,
        params: EngineParams {
            sampling_mode: SamplingMode::Exhaustive,
            ..EngineParams::default()
        },
        clock: Clock::Logical,
        ..SessionOptions::default()
    };
    let mut session =
        Session::new("s", Arc::new(engine), binary_instance("t", &[1, 1, 0], None), options).unwrap();
    session
        .submit_initial(HumanState {
            decision: "A".into(),
            argument: vec!["x1".into()],
            confidence: 50,
        })
        .unwrap();
    session.submit_reflection(60).unwrap();
    let suggest = session.drain_prompts().into_iter().find(|m| m.step == Step::Suggest).unwrap();
    // Averaging over x2 in {0, 1}: the delta is (sigmoid(4) - 1/2) / 2.
    let sigmoid = 1.0 / (1.0 + (-4.0f64).exp());
    assert_eq!(((sigmoid - 0.5) / 2.0 * 100.0).round(), 24.0);
    assert_eq!(
        suggest.text,
        "I think x2 would strengthen your prediction, because adding the feature to your current evidence would increase my confidence in your prediction by 24 percentage points."
    );
}

#[test]
fn every_referenced_template_exists() {
    let catalog = Catalog::builtin();
    for id in [
        template::INC_REFLECT,
        template::INC_SUGGEST,
        template::INC_TRIANGULATE,
        template::UNR_REFLECT,
        template::UNR_SUGGEST,
        template::UNR_TRIANGULATE,
        template::CONF_REFLECT,
        template::CONF_SUGGEST,
        template::CONF_TRIANGULATE,
        template::AGREE,
        template::NO_ISSUES,
        template::UPDATE,
        template::RECOMMEND,
        template::ANALYZE,
        template::SKIP,
    ] {
        assert!(catalog.get(id).is_some(), "{id}");
    }
    assert_eq!(catalog.ids().count(), 15);
}

#[test]
fn missing_slot_is_an_error() {
    let err = template::render(template::INC_REFLECT, &Slots::new()).unwrap_err();
    assert!(matches!(err, TemplateError::MissingSlot { .. }), "{err:?}");
    assert!(template::render("T-NOPE", &Slots::new()).is_err());
}
