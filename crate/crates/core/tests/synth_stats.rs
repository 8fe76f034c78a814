use alsed_core::synth::{rare_preset, synthesize};

#[test]
fn event_counts_look_poisson() {
    let mut spec = rare_preset(17, 400);
    spec.recording_len_s = 10.0;
    spec.sample_rate = 8000;
    spec.events_per_minute = 12.0;
    let counts: Vec<f64> = (0..spec.n_recordings)
        .map(|i| synthesize(&spec, i).unwrap().events.len() as f64)
        .collect();
    let n = counts.len() as f64;
    let mean = counts.iter().sum::<f64>() / n;
    let var = counts.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0);
    // rate 2 per recording; the mean's standard error is about 0.07
    assert!((mean - 2.0).abs() < 0.25, "mean {mean}");
    assert!((var / mean - 1.0).abs() < 0.3, "dispersion {}", var / mean);
    let zeros = counts.iter().filter(|&&c| c == 0.0).count() as f64 / n;
    assert!((zeros - (-2.0f64).exp()).abs() < 0.06, "P(0) {zeros}");
}
