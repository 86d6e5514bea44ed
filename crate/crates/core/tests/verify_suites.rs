use vqprofile::verify::{bocpd_oracle_suite, gradient_suite, quantizer_suite, zero_imputation_suite};

#[test]
fn gradient_suite_passes_on_a_few_seeds() {
    let r = gradient_suite(0..3, 1e-4);
    assert!(r.pass, "{}", r.detail);
}

#[test]
fn bocpd_suite_passes() {
    let r = bocpd_oracle_suite(10, 8, &[10.0, 1e3], 1);
    assert!(r.pass, "{}", r.detail);
}

#[test]
fn quantizer_suite_passes() {
    let r = quantizer_suite(2000, &[64, 256], 8, 2);
    assert!(r.pass, "{}", r.detail);
}

#[test]
fn zero_imputation_suite_passes() {
    let r = zero_imputation_suite(3);
    assert!(r.pass, "{}", r.detail);
}
