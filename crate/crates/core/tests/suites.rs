use roigan::checks::{grad, metrics, sharing};

fn assert_all_pass(results: &[roigan::checks::CheckResult]) {
    for r in results {
        println!("{r}");
    }
    let failed: Vec<_> = results.iter().filter(|r| !r.passed).map(|r| r.name.as_str()).collect();
    assert!(failed.is_empty(), "failed checks: {failed:?}");
}

#[test]
fn gradient_suite_passes() {
    assert_all_pass(&grad::suite());
}

#[test]
fn metric_oracle_suite_passes() {
    assert_all_pass(&metrics::suite());
}

#[test]
fn sharing_suite_passes() {
    assert_all_pass(&sharing::suite());
}
