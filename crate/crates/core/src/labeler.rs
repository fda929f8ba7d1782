//! Simulated instruction classifier.
//!
//! The on-device classifier is abstracted to its accuracy statistic: a
//! confusion-matrix labeler whose diagonal equals the configured accuracy
//! and whose error mass is spread uniformly over the other labels.
//! Annotation happens once, before training, and the predicted labels are
//! then frozen for the rest of the run.

use rand::Rng;

use crate::datagen::LabeledSample;
use crate::error::{Error, Result};
use crate::rng;

/// Measured classifier accuracies for the shipped presets, keyed by
/// adapter rank and training-data fraction ("odpt" = one datum per task).
pub const ACCURACY_PRESETS: &[(&str, f64)] = &[
    ("rank4_frac0.9", 0.9834),
    ("rank4_frac0.5", 0.9796),
    ("rank4_frac0.2", 0.9230),
    ("rank4_frac0.1", 0.8356),
    ("rank4_odpt", 0.7668),
    ("rank8_odpt", 0.8334),
    ("rank16_odpt", 0.8556),
    ("rank32_odpt", 0.8567),
];

/// Look up a preset accuracy by name.
pub fn accuracy_preset(name: &str) -> Option<f64> {
    ACCURACY_PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|&(_, acc)| acc)
}

/// Row-stochastic confusion model over `m` labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionModel {
    m: usize,
    accuracy: f64,
    rows: Vec<Vec<f64>>,
}

impl ConfusionModel {
    pub fn num_labels(&self) -> usize {
        self.m
    }

    pub fn accuracy(&self) -> f64 {
        self.accuracy
    }

    pub fn row(&self, label: usize) -> &[f64] {
        &self.rows[label]
    }
}

/// Build the uniform-error confusion model: diagonal = accuracy, each
/// off-diagonal = (1 - accuracy) / (M - 1). With a single label the
/// diagonal is 1 regardless of the requested accuracy.
pub fn build_confusion(m: usize, accuracy: f64) -> Result<ConfusionModel> {
    if m == 0 {
        return Err(Error::InvalidConfig("label count M must be >= 1".into()));
    }
    if !(accuracy > 0.0 && accuracy <= 1.0) {
        return Err(Error::InvalidConfig(format!(
            "labeler accuracy must lie in (0, 1], got {accuracy}"
        )));
    }
    let rows = if m == 1 {
        vec![vec![1.0]]
    } else {
        let off = (1.0 - accuracy) / (m as f64 - 1.0);
        (0..m)
            .map(|t| {
                (0..m)
                    .map(|j| if j == t { accuracy } else { off })
                    .collect()
            })
            .collect()
    };
    Ok(ConfusionModel { m, accuracy, rows })
}

/// Fill in `t_hat` for every sample by drawing from the confusion row of
/// its true task. True labels are left untouched; the draw sequence is
/// fully determined by `seed`.
pub fn annotate(samples: &mut [LabeledSample], model: &ConfusionModel, seed: u64) -> Result<()> {
    let mut rng = rng::stream(seed);
    for sample in samples.iter_mut() {
        if sample.t >= model.m {
            return Err(Error::DataIntegrity(format!(
                "sample true task {} outside label range [0, {})",
                sample.t, model.m
            )));
        }
        let u: f64 = rng.random();
        let row = &model.rows[sample.t];
        let mut acc = 0.0;
        let mut label = model.m - 1;
        for (j, p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                label = j;
                break;
            }
        }
        sample.t_hat = Some(label);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_task_set, synth_dataset};
    use proptest::prelude::*;

    #[test]
    fn confusion_table3_row() {
        let model = build_confusion(10, 0.9230).unwrap();
        let expect_off = (1.0 - 0.9230) / 9.0;
        for t in 0..10 {
            let row = model.row(t);
            assert_eq!(row[t], 0.9230);
            for (j, &p) in row.iter().enumerate() {
                if j != t {
                    assert!((p - expect_off).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn confusion_perfect_is_identity() {
        let model = build_confusion(10, 1.0).unwrap();
        for t in 0..10 {
            for (j, &p) in model.row(t).iter().enumerate() {
                assert_eq!(p, if j == t { 1.0 } else { 0.0 });
            }
        }
    }

    #[test]
    fn confusion_two_label_odpt() {
        let model = build_confusion(2, 0.7668).unwrap();
        assert!((model.row(0)[1] - 0.2332).abs() < 1e-12);
        assert!((model.row(1)[0] - 0.2332).abs() < 1e-12);
    }

    #[test]
    fn confusion_single_label_forces_identity() {
        let model = build_confusion(1, 0.3).unwrap();
        assert_eq!(model.row(0), &[1.0]);
    }

    #[test]
    fn confusion_rejects_bad_accuracy() {
        assert!(build_confusion(5, 0.0).is_err());
        assert!(build_confusion(5, 1.5).is_err());
        assert!(build_confusion(5, -0.2).is_err());
    }

    #[test]
    fn preset_lookup() {
        assert_eq!(accuracy_preset("rank4_frac0.2"), Some(0.9230));
        assert_eq!(accuracy_preset("rank16_odpt"), Some(0.8556));
        assert_eq!(accuracy_preset("nope"), None);
    }

    fn sample_with_task(t: usize) -> LabeledSample {
        LabeledSample {
            x: vec![0.0],
            a: vec![0.0],
            t,
            t_hat: None,
        }
    }

    #[test]
    fn annotate_perfect_accuracy_copies_labels() {
        let model = build_confusion(4, 1.0).unwrap();
        let mut data: Vec<_> = (0..100).map(|i| sample_with_task(i % 4)).collect();
        annotate(&mut data, &model, 3).unwrap();
        assert!(data.iter().all(|s| s.t_hat == Some(s.t)));
    }

    #[test]
    fn annotate_calibration_monte_carlo() {
        let model = build_confusion(10, 0.9230).unwrap();
        let mut data: Vec<_> = (0..10_000).map(|i| sample_with_task(i % 10)).collect();
        annotate(&mut data, &model, 17).unwrap();
        let agree = data.iter().filter(|s| s.t_hat == Some(s.t)).count();
        let rate = agree as f64 / data.len() as f64;
        assert!((rate - 0.9230).abs() < 0.01, "agreement rate {rate}");
    }

    #[test]
    fn annotate_is_deterministic() {
        let set = generate_task_set(3, 4, 2, 1).unwrap();
        let model = build_confusion(3, 0.8).unwrap();
        let mut a = synth_dataset(&set.specs[2], 64, 5).unwrap();
        let mut b = a.clone();
        annotate(&mut a, &model, 9).unwrap();
        annotate(&mut b, &model, 9).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|s| s.t_hat.is_some()));
        assert!(a.iter().all(|s| s.t == 2));
    }

    #[test]
    fn annotate_rejects_out_of_range_task() {
        let model = build_confusion(3, 0.9).unwrap();
        let mut data = vec![sample_with_task(3)];
        assert!(matches!(
            annotate(&mut data, &model, 0),
            Err(Error::DataIntegrity(_))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn rows_are_stochastic(m in 1usize..30, acc_milli in 1u32..=1000) {
            let acc = acc_milli as f64 / 1000.0;
            let model = build_confusion(m, acc).unwrap();
            for t in 0..m {
                let sum: f64 = model.row(t).iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-9);
                prop_assert!(model.row(t).iter().all(|&p| p >= 0.0));
            }
        }
    }
}
