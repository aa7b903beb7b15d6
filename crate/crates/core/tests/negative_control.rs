use quantum_kalman::acceptance::{run_criterion, AcceptanceOptions};

#[test]
fn flipped_gain_fails_riccati_and_monte_carlo_checks() {
    let opts = AcceptanceOptions {
        tamper_gain_sign: true,
        ..AcceptanceOptions::default()
    };
    for id in [3, 6] {
        let r = run_criterion(id, &opts);
        assert!(
            !r.pass,
            "criterion {id} passed with a flipped gain: {}",
            r.detail
        );
    }
}

#[test]
fn unaffected_checks_still_pass_under_tampering() {
    let opts = AcceptanceOptions {
        tamper_gain_sign: true,
        ..AcceptanceOptions::default()
    };
    for id in [1, 2, 4, 5] {
        assert!(run_criterion(id, &opts).pass, "criterion {id}");
    }
}

#[test]
fn unknown_criterion_fails() {
    assert!(!run_criterion(11, &AcceptanceOptions::default()).pass);
}
