use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::imagekit::{Class, Dataset, LabeledImage, SplitTag};
use crate::rng::{stream, stream_rng};
use crate::scalar::Scalar;

/// How untagged samples are divided.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitPolicy {
    /// Fraction of each class's untagged samples that go to training.
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for SplitPolicy {
    fn default() -> Self {
        SplitPolicy {
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

/// Samples that may drive parameter updates and GP fits.
#[derive(Debug, Clone)]
pub struct TrainSet<'a, T> {
    samples: Vec<&'a LabeledImage<T>>,
}

/// Samples used only for evaluation.
#[derive(Debug, Clone)]
pub struct TestSet<'a, T> {
    samples: Vec<&'a LabeledImage<T>>,
}

macro_rules! sample_set {
    ($name:ident) => {
        impl<'a, T: Scalar> $name<'a, T> {
            pub fn samples(&self) -> &[&'a LabeledImage<T>] {
                &self.samples
            }

            pub fn len(&self) -> usize {
                self.samples.len()
            }

            pub fn is_empty(&self) -> bool {
                self.samples.is_empty()
            }

            /// Observed labels as `0`/`1` targets.
            pub fn targets(&self) -> Vec<T> {
                self.samples
                    .iter()
                    .map(|s| T::from_count(s.label.target() as usize))
                    .collect()
            }
        }
    };
}

sample_set!(TrainSet);
sample_set!(TestSet);

#[derive(Debug, Clone)]
pub struct Split<'a, T> {
    pub train: TrainSet<'a, T>,
    pub test: TestSet<'a, T>,
}

impl<'a, T: Scalar> Split<'a, T> {
    /// A split from explicit sample lists, for callers that partition
    /// themselves. Both sides must be nonempty and training must hold both
    /// classes.
    pub fn from_parts(
        train: Vec<&'a LabeledImage<T>>,
        test: Vec<&'a LabeledImage<T>>,
    ) -> Result<Self> {
        for class in [Class::Coal, Class::Waste] {
            if !train.iter().any(|s| s.label == class) {
                return Err(Error::EmptySplit(format!(
                    "training set has no samples labeled {}",
                    class.dir_name()
                )));
            }
        }
        if test.is_empty() {
            return Err(Error::EmptySplit("test set is empty".into()));
        }
        Ok(Split {
            train: TrainSet { samples: train },
            test: TestSet { samples: test },
        })
    }
}

/// Tagged samples keep their tag. Untagged samples are split per class: a
/// seeded shuffle, then the first `round(n · train_fraction)` go to training.
/// Both sides keep dataset order.
pub fn split_dataset<'a, T: Scalar>(
    dataset: &'a Dataset<T>,
    policy: &SplitPolicy,
) -> Result<Split<'a, T>> {
    let f = policy.train_fraction;
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::InvalidArgument(format!(
            "train fraction must lie in [0, 1], got {f}"
        )));
    }
    let n = dataset.samples.len();
    let mut to_train = vec![false; n];
    for class in [Class::Coal, Class::Waste] {
        let mut untagged: Vec<usize> = Vec::new();
        for (i, s) in dataset.samples.iter().enumerate() {
            match s.split {
                SplitTag::Train => to_train[i] = true,
                SplitTag::Test => {}
                SplitTag::Unassigned if s.label == class => untagged.push(i),
                SplitTag::Unassigned => {}
            }
        }
        let mut rng = stream_rng(policy.seed, stream::SPLIT, class.target() as u64);
        untagged.shuffle(&mut rng);
        let k = ((untagged.len() as f64) * f).round() as usize;
        for &i in &untagged[..k.min(untagged.len())] {
            to_train[i] = true;
        }
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (s, t) in dataset.samples.iter().zip(to_train) {
        if t {
            train.push(s);
        } else {
            test.push(s);
        }
    }
    Split::from_parts(train, test)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagekit::ImageTensor;

    fn sample(id: usize, class: Class, split: SplitTag) -> LabeledImage<f64> {
        LabeledImage {
            id: format!("s{id}"),
            image: ImageTensor::filled(2, 2, 3, 0.5),
            true_class: class,
            label: class,
            split,
        }
    }

    fn untagged(per_class: usize) -> Dataset<f64> {
        let mut samples = Vec::new();
        for i in 0..per_class {
            samples.push(sample(2 * i, Class::Coal, SplitTag::Unassigned));
            samples.push(sample(2 * i + 1, Class::Waste, SplitTag::Unassigned));
        }
        Dataset { samples }
    }

    fn ids(v: &[&LabeledImage<f64>]) -> Vec<String> {
        v.iter().map(|s| s.id.clone()).collect()
    }

    #[test]
    fn stratified_ratio_and_seed_determinism() {
        let ds = untagged(100);
        let policy = SplitPolicy {
            train_fraction: 0.8,
            seed: 3,
        };
        let a = split_dataset(&ds, &policy).unwrap();
        for class in [Class::Coal, Class::Waste] {
            assert_eq!(
                a.train
                    .samples()
                    .iter()
                    .filter(|s| s.label == class)
                    .count(),
                80
            );
            assert_eq!(
                a.test.samples().iter().filter(|s| s.label == class).count(),
                20
            );
        }
        let b = split_dataset(&ds, &policy).unwrap();
        assert_eq!(ids(a.train.samples()), ids(b.train.samples()));
        let c = split_dataset(&ds, &SplitPolicy { seed: 4, ..policy }).unwrap();
        assert_ne!(ids(a.train.samples()), ids(c.train.samples()));
    }

    #[test]
    fn all_test_tagged_is_an_error() {
        let ds = Dataset {
            samples: (0..6)
                .map(|i| sample(i, Class::from_target((i % 2) as u8), SplitTag::Test))
                .collect(),
        };
        assert!(matches!(
            split_dataset(&ds, &SplitPolicy::default()),
            Err(Error::EmptySplit(_))
        ));
    }

    #[test]
    fn test_tags_are_never_trained_on() {
        let mut ds = untagged(10);
        for i in 0..4 {
            ds.samples.push(sample(
                100 + i,
                Class::from_target((i % 2) as u8),
                SplitTag::Test,
            ));
        }
        let split = split_dataset(
            &ds,
            &SplitPolicy {
                train_fraction: 1.0,
                seed: 0,
            },
        )
        .unwrap();
        assert_eq!(split.train.len(), 20);
        assert_eq!(
            ids(split.test.samples()),
            vec!["s100", "s101", "s102", "s103"]
        );
    }

    #[test]
    fn rejects_bad_fraction() {
        let ds = untagged(4);
        let bad = SplitPolicy {
            train_fraction: 1.5,
            seed: 0,
        };
        assert!(matches!(
            split_dataset(&ds, &bad),
            Err(Error::InvalidArgument(_))
        ));
    }
}
