use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitKind {
    Train,
    Validation,
    Repair,
    Test,
}

impl SplitKind {
    pub const ALL: [SplitKind; 4] = [
        SplitKind::Train,
        SplitKind::Validation,
        SplitKind::Repair,
        SplitKind::Test,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SplitKind::Train => "train",
            SplitKind::Validation => "validation",
            SplitKind::Repair => "repair",
            SplitKind::Test => "test",
        }
    }

    pub(crate) fn index(self) -> usize {
        self as usize
    }
}

/// Fractions are in train, validation, repair, test order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub fractions: [f64; 4],
    pub seed: u64,
    #[serde(default = "default_stratified")]
    pub stratified: bool,
}

fn default_stratified() -> bool {
    true
}

impl SplitSpec {
    pub fn new(fractions: [f64; 4], seed: u64) -> Self {
        Self {
            fractions,
            seed,
            stratified: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self
            .fractions
            .iter()
            .any(|f| !(f.is_finite() && *f > 0.0 && *f <= 1.0))
        {
            return Err(Error::InvalidConfig(format!(
                "split fractions must lie in (0, 1], got {:?}",
                self.fractions
            )));
        }
        let sum: f64 = self.fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(format!(
                "split fractions sum to {sum}, expected 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Dataset,
    pub validation: Dataset,
    pub repair: Dataset,
    pub test: Dataset,
}

impl Splits {
    pub fn get(&self, kind: SplitKind) -> &Dataset {
        match kind {
            SplitKind::Train => &self.train,
            SplitKind::Validation => &self.validation,
            SplitKind::Repair => &self.repair,
            SplitKind::Test => &self.test,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (SplitKind, &Dataset)> {
        SplitKind::ALL.into_iter().map(move |k| (k, self.get(k)))
    }

    pub(crate) fn from_assignment(dataset: &Dataset, assignment: &[SplitKind]) -> Self {
        let mut members: [Vec<usize>; 4] = Default::default();
        for (idx, kind) in assignment.iter().enumerate() {
            members[kind.index()].push(idx);
        }
        let [train, validation, repair, test] = members.map(|m| dataset.subset(&m));
        Self {
            train,
            validation,
            repair,
            test,
        }
    }
}

/// Largest-remainder apportionment of `n` items over `fractions`; leftover items go
/// to the largest remainders, ties to the earlier split.
pub(crate) fn apportion(n: usize, fractions: &[f64; 4]) -> [usize; 4] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 4];
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c = e.floor() as usize;
    }
    let assigned: usize = counts.iter().sum();
    let mut order: Vec<usize> = (0..4).collect();
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in order.iter().take(n.saturating_sub(assigned)) {
        counts[k] += 1;
    }
    counts
}

/// Assigns every sample index of `dataset` to one of the four splits.
pub(crate) fn assign(dataset: &Dataset, spec: &SplitSpec) -> Result<Vec<SplitKind>> {
    spec.validate()?;
    let n = dataset.len();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let order: Vec<usize> = if spec.stratified {
        let counts = dataset.class_counts();
        if let Some((c, _)) = counts.iter().enumerate().find(|(_, &k)| k == 0) {
            return Err(Error::InvalidDataset(format!(
                "stratified split needs at least one sample of every class; class {c} has none"
            )));
        }
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); dataset.n_classes()];
        for (idx, s) in dataset.samples().iter().enumerate() {
            by_class[s.label].push(idx);
        }
        // Spread each class evenly over [0, 1) and cut the merged sequence into
        // consecutive blocks; every block then sees each class in proportion.
        let mut keyed: Vec<(f64, usize, usize)> = Vec::with_capacity(n);
        for (class, members) in by_class.iter_mut().enumerate() {
            members.shuffle(&mut rng);
            let n_c = members.len() as f64;
            for (k, &idx) in members.iter().enumerate() {
                keyed.push(((k as f64 + 0.5) / n_c, class, idx));
            }
        }
        keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        keyed.into_iter().map(|(_, _, idx)| idx).collect()
    } else {
        let mut all: Vec<usize> = (0..n).collect();
        all.shuffle(&mut rng);
        all
    };

    let counts = apportion(n, &spec.fractions);
    let mut assignment = vec![SplitKind::Train; n];
    let mut pos = 0;
    for (kind, count) in SplitKind::ALL.into_iter().zip(counts) {
        for &idx in &order[pos..pos + count] {
            assignment[idx] = kind;
        }
        pos += count;
    }
    Ok(assignment)
}

/// Partitions `dataset` into train, validation, repair and test sets. Each split
/// keeps the dataset's original sample order.
pub fn split(dataset: &Dataset, spec: &SplitSpec) -> Result<Splits> {
    let assignment = assign(dataset, spec)?;
    Ok(Splits::from_assignment(dataset, &assignment))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;

    fn dataset(class_sizes: &[usize]) -> Dataset {
        let mut samples = Vec::new();
        let mut id = 0;
        for (label, &n) in class_sizes.iter().enumerate() {
            for _ in 0..n {
                samples.push(Sample {
                    id,
                    features: vec![id as f64],
                    label,
                });
                id += 1;
            }
        }
        Dataset::with_default_names(1, class_sizes.len(), samples).unwrap()
    }

    #[test]
    fn quarters_of_one_hundred() {
        let ds = dataset(&[50, 50]);
        for stratified in [true, false] {
            let spec = SplitSpec {
                fractions: [0.25; 4],
                seed: 3,
                stratified,
            };
            let s = split(&ds, &spec).unwrap();
            for (_, d) in s.iter() {
                assert_eq!(d.len(), 25);
            }
        }
    }

    #[test]
    fn same_seed_same_partition() {
        let ds = dataset(&[30, 17, 9]);
        let spec = SplitSpec::new([0.4, 0.2, 0.2, 0.2], 99);
        assert_eq!(split(&ds, &spec).unwrap(), split(&ds, &spec).unwrap());
        let other = SplitSpec::new([0.4, 0.2, 0.2, 0.2], 100);
        assert_ne!(split(&ds, &spec).unwrap(), split(&ds, &other).unwrap());
    }

    #[test]
    fn stratified_keeps_eighty_twenty_within_one_sample() {
        let ds = dataset(&[80, 20]);
        for seed in 0..20 {
            for fractions in [[0.25; 4], [0.5, 0.1, 0.2, 0.2], [0.7, 0.1, 0.1, 0.1]] {
                let s = split(&ds, &SplitSpec::new(fractions, seed)).unwrap();
                for (_, d) in s.iter() {
                    // brute-force class count per split
                    let minority = d.samples().iter().filter(|x| x.label == 1).count() as f64;
                    let majority = d.samples().iter().filter(|x| x.label == 0).count() as f64;
                    let size = d.len() as f64;
                    assert!((minority - 0.2 * size).abs() <= 1.0, "{minority} of {size}");
                    assert!((majority - 0.8 * size).abs() <= 1.0, "{majority} of {size}");
                }
            }
        }
    }

    #[test]
    fn rejects_bad_fractions_and_missing_classes() {
        let ds = dataset(&[10, 10]);
        assert!(split(&ds, &SplitSpec::new([0.5, 0.2, 0.2, 0.2], 0)).is_err());
        assert!(split(&ds, &SplitSpec::new([0.7, 0.3, 0.0, 0.0], 0)).is_err());
        let missing = dataset(&[10, 0]);
        assert!(matches!(
            split(&missing, &SplitSpec::new([0.25; 4], 0)),
            Err(Error::InvalidDataset(_))
        ));
        let unstratified = SplitSpec {
            stratified: false,
            ..SplitSpec::new([0.25; 4], 0)
        };
        assert!(split(&missing, &unstratified).is_ok());
    }

    #[test]
    fn apportion_is_exact() {
        assert_eq!(apportion(100, &[0.25; 4]), [25; 4]);
        assert_eq!(apportion(10, &[0.5, 0.2, 0.2, 0.1]), [5, 2, 2, 1]);
        assert_eq!(apportion(3, &[0.25; 4]), [1, 1, 1, 0]);
        assert_eq!(apportion(0, &[0.25; 4]), [0; 4]);
    }
}
