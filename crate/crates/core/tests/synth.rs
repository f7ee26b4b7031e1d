use jsdwatch::observations::{CohortLabel, ObservationTable};
use jsdwatch::synth::{generate_cohort, SynthConfig};

fn values(table: &ObservationTable, label: CohortLabel, feature: &str, hours: std::ops::Range<usize>) -> Vec<f64> {
    let labels = table.labels();
    table
        .rows()
        .iter()
        .filter(|r| labels[&r.patient_id] == label && r.feature_id == feature)
        .filter(|r| hours.contains(&(r.hour.floor() as usize)))
        .map(|r| r.value)
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
}

/// Two-sample z statistic for a difference in means.
fn z(a: &[f64], b: &[f64]) -> f64 {
    (mean(a) - mean(b)) / (variance(a) / a.len() as f64 + variance(b) / b.len() as f64).sqrt()
}

#[test]
fn reported_pulse_moments_are_reproduced() {
    let mut config = SynthConfig {
        n_control: 200,
        n_treatment: 200,
        seed: 7,
        ..SynthConfig::default()
    }
    .with_reported_treatment_moments();
    config.drift.shifted_features.clear();
    let table = generate_cohort(&config).unwrap();

    let control = values(&table, CohortLabel::Control, "heart_rate", 0..48);
    let se = 16.2 / (control.len() as f64).sqrt();
    assert!((mean(&control) - 86.7).abs() < 3.0 * se, "control pulse mean {}", mean(&control));

    let treated = values(&table, CohortLabel::Treatment, "heart_rate", 24..48);
    let se = 15.7 / (treated.len() as f64).sqrt();
    assert!((mean(&treated) - 95.0).abs() < 3.0 * se, "treatment pulse mean {}", mean(&treated));
}

#[test]
fn missingness_rate_is_binomial() {
    let rate = 0.3;
    let config = SynthConfig {
        n_control: 50,
        n_treatment: 0,
        seed: 11,
        ..SynthConfig::default()
    }
    .with_missingness(rate);
    let table = generate_cohort(&config).unwrap();
    let cells = (50 * 48 * config.features.len()) as f64;
    let observed = 1.0 - table.len() as f64 / cells;
    let sigma = (rate * (1.0 - rate) / cells).sqrt();
    assert!((observed - rate).abs() < 3.0 * sigma, "missing fraction {observed}");
}

#[test]
fn null_drift_leaves_cohorts_alike() {
    let mut config = SynthConfig {
        n_control: 100,
        n_treatment: 100,
        seed: 3,
        ..SynthConfig::default()
    };
    config.drift.shift_sds = 0.0;
    let table = generate_cohort(&config).unwrap();
    for f in &config.features {
        let a = values(&table, CohortLabel::Control, &f.id, 24..48);
        let b = values(&table, CohortLabel::Treatment, &f.id, 24..48);
        assert!(z(&a, &b).abs() < 4.5, "{}: z = {}", f.id, z(&a, &b));
    }
}

#[test]
fn pre_onset_hours_are_undrifted() {
    let config = SynthConfig {
        n_control: 100,
        n_treatment: 100,
        seed: 5,
        ..SynthConfig::default()
    };
    let table = generate_cohort(&config).unwrap();
    for f in &config.features {
        let a = values(&table, CohortLabel::Control, &f.id, 0..24);
        let b = values(&table, CohortLabel::Treatment, &f.id, 0..24);
        assert!(z(&a, &b).abs() < 4.5, "{}: z = {}", f.id, z(&a, &b));
    }
    // and the drift does show after onset
    let a = values(&table, CohortLabel::Control, "calcium", 24..48);
    let b = values(&table, CohortLabel::Treatment, "calcium", 24..48);
    assert!(z(&b, &a) > 20.0);
}
