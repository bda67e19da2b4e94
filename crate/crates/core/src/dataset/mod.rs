//! Labeled feature datasets: file formats, stratified splits and minibatches.

mod format;
mod synthetic;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use format::{load_dataset, save_binary, save_csv, DataFormat, BINARY_MAGIC};
pub use synthetic::generate_blobs;

use crate::autodiff::Matrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
    ids: Option<Vec<String>>,
}

impl Dataset {
    pub fn new(
        features: Matrix,
        labels: Vec<usize>,
        num_classes: usize,
        ids: Option<Vec<String>>,
    ) -> Result<Self> {
        let (n, d) = features.shape();
        if n == 0 || d == 0 {
            return Err(Error::invalid(format!("dataset must be non-empty, got {n}x{d}")));
        }
        if num_classes < 2 {
            return Err(Error::invalid(format!("need at least 2 classes, got {num_classes}")));
        }
        if labels.len() != n {
            return Err(Error::invalid(format!("{} labels for {n} rows", labels.len())));
        }
        if let Some((i, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::invalid(format!(
                "row {i}: label {l} outside 0..{num_classes}"
            )));
        }
        if let Some(idx) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "row {}: non-finite feature",
                idx % n
            )));
        }
        if let Some(ids) = &ids {
            if ids.len() != n {
                return Err(Error::invalid(format!("{} ids for {n} rows", ids.len())));
            }
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            ids,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn ids(&self) -> Option<&[String]> {
        self.ids.as_deref()
    }

    /// Rows at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::invalid("empty subset"));
        }
        let features = self.features.select_rows(indices);
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        let ids = self
            .ids
            .as_ref()
            .map(|ids| indices.iter().map(|&i| ids[i].clone()).collect());
        Self::new(features, labels, self.num_classes, ids)
    }

    pub fn with_num_classes(mut self, c: usize) -> Result<Self> {
        if self.labels.iter().any(|&l| l >= c) || c < 2 {
            return Err(Error::invalid(format!("cannot widen to {c} classes")));
        }
        self.num_classes = c;
        Ok(self)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

/// A minibatch drawn from a [`Dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub indices: Vec<usize>,
    pub x_raw: Matrix,
    pub y: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Index partition produced by [`split_indices`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitIndices {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    pub warnings: Vec<String>,
}

// Cumulative rounding: class c gets round(F(c)) - round(F(c-1)) where F is the
// running ideal count, so the split total is exactly round(n * frac).
fn apportion(counts: &[usize], frac: f64) -> Vec<usize> {
    let mut out = Vec::with_capacity(counts.len());
    let mut cum = 0.0;
    let mut assigned = 0usize;
    for &c in counts {
        cum += c as f64 * frac;
        let target = cum.round() as usize;
        let take = target.saturating_sub(assigned).min(c);
        out.push(take);
        assigned += take;
    }
    out
}

/// Stratified train/val/test partition of `labels`.
pub fn split_indices(
    labels: &[usize],
    num_classes: usize,
    train_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<SplitIndices> {
    if !(train_frac > 0.0 && val_frac > 0.0 && train_frac + val_frac < 1.0) {
        return Err(Error::invalid(format!(
            "need train_frac > 0, val_frac > 0 and train_frac + val_frac < 1, got {train_frac}, {val_frac}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); num_classes];
    for (i, &l) in labels.iter().enumerate() {
        by_class[l].push(i);
    }
    for members in &mut by_class {
        members.shuffle(&mut rng);
    }

    let mut warnings = Vec::new();
    let eligible: Vec<usize> = by_class
        .iter()
        .map(|m| if m.len() >= 3 { m.len() } else { 0 })
        .collect();
    let n_train = apportion(&eligible, train_frac);
    let n_val = apportion(&eligible, val_frac);

    let mut out = SplitIndices {
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
        warnings: Vec::new(),
    };
    for (c, members) in by_class.iter().enumerate() {
        let total = members.len();
        if total == 0 {
            continue;
        }
        if total < 3 {
            warnings.push(format!(
                "class {c} has {total} rows, fewer than the 3 splits; assigned to train only"
            ));
            out.train.extend_from_slice(members);
            continue;
        }
        let tr_n = n_train[c].min(total);
        let va_n = n_val[c].min(total - tr_n);
        let mut sizes = [tr_n, va_n, total - tr_n - va_n];
        // every split gets at least one row of this class
        for k in 0..3 {
            if sizes[k] == 0 {
                let donor = (0..3).max_by_key(|&j| (sizes[j], usize::MAX - j)).unwrap();
                sizes[donor] -= 1;
                sizes[k] = 1;
            }
        }
        let (tr, rest) = members.split_at(sizes[0]);
        let (va, te) = rest.split_at(sizes[1]);
        out.train.extend_from_slice(tr);
        out.val.extend_from_slice(va);
        out.test.extend_from_slice(te);
    }
    out.train.sort_unstable();
    out.val.sort_unstable();
    out.test.sort_unstable();
    for w in &warnings {
        log::warn!("{w}");
    }
    out.warnings = warnings;
    Ok(out)
}

/// Stratified, seeded train/val/test split.
pub fn split(
    ds: &Dataset,
    train_frac: f64,
    val_frac: f64,
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    let idx = split_indices(ds.labels(), ds.num_classes(), train_frac, val_frac, seed)?;
    if idx.val.is_empty() || idx.test.is_empty() {
        return Err(Error::invalid(format!(
            "split of {} rows left an empty validation or test set",
            ds.len()
        )));
    }
    Ok((ds.subset(&idx.train)?, ds.subset(&idx.val)?, ds.subset(&idx.test)?))
}

/// One epoch of minibatches of size `batch_size`; the last may be short.
pub fn minibatches(ds: &Dataset, batch_size: usize, seed: u64, shuffle: bool) -> Result<Vec<Batch>> {
    let n = ds.len();
    if batch_size == 0 || batch_size > n {
        return Err(Error::invalid(format!(
            "batch size must be in 1..={n}, got {batch_size}"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    if shuffle {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    Ok(order
        .chunks(batch_size)
        .map(|chunk| Batch {
            indices: chunk.to_vec(),
            x_raw: ds.features.select_rows(chunk),
            y: chunk.iter().map(|&i| ds.labels[i]).collect(),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize, c: usize) -> Dataset {
        let features = Matrix::from_fn(n, 2, |i, j| (i * 2 + j) as f64);
        let labels = (0..n).map(|i| i % c).collect();
        Dataset::new(features, labels, c, None).unwrap()
    }

    #[test]
    fn validation_errors() {
        let f = Matrix::from_element(2, 1, 1.0);
        assert!(Dataset::new(f.clone(), vec![0, 2], 2, None).is_err());
        let mut bad = f.clone();
        bad[(1, 0)] = f64::NAN;
        assert!(Dataset::new(bad, vec![0, 1], 2, None).is_err());
        assert!(Dataset::new(f, vec![0, 1], 1, None).is_err());
    }

    #[test]
    fn split_sizes_and_determinism() {
        let ds = toy(10, 2);
        let (tr, va, te) = split(&ds, 0.6, 0.2, 7).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (6, 2, 2));
        let a = split_indices(ds.labels(), 2, 0.6, 0.2, 7).unwrap();
        let b = split_indices(ds.labels(), 2, 0.6, 0.2, 7).unwrap();
        assert_eq!(a, b);
        let mut all: Vec<usize> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn mr_like_proportions() {
        // 10662 docs split 6397 / 711 / 3554
        let labels: Vec<usize> = (0..10662).map(|i| i % 2).collect();
        let s = split_indices(&labels, 2, 0.6, 0.0667, 1).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (6397, 711, 3554));
    }

    #[test]
    fn tiny_class_goes_to_train() {
        let mut labels: Vec<usize> = (0..20).map(|_| 0).collect();
        labels.push(1);
        labels.push(1);
        let s = split_indices(&labels, 2, 0.6, 0.2, 3).unwrap();
        assert_eq!(s.warnings.len(), 1);
        assert!(s.train.contains(&20) && s.train.contains(&21));
    }

    #[test]
    fn stratified_every_split_has_every_class() {
        let labels: Vec<usize> = (0..30).map(|i| if i < 24 { 0 } else { 1 + i % 2 }).collect();
        let s = split_indices(&labels, 3, 0.6, 0.2, 11).unwrap();
        for part in [&s.train, &s.val, &s.test] {
            for c in 0..3 {
                assert!(part.iter().any(|&i| labels[i] == c), "class {c} missing");
            }
        }
    }

    #[test]
    fn bad_fractions() {
        assert!(split_indices(&[0, 1, 0], 2, 0.8, 0.2, 0).is_err());
        assert!(split_indices(&[0, 1, 0], 2, 0.0, 0.2, 0).is_err());
    }

    #[test]
    fn batch_sizes() {
        let ds = toy(10, 2);
        let b = minibatches(&ds, 4, 0, false).unwrap();
        assert_eq!(b.iter().map(Batch::len).collect::<Vec<_>>(), vec![4, 4, 2]);
        assert_eq!(b[0].indices, vec![0, 1, 2, 3]);
        assert_eq!(b[0].y, vec![0, 1, 0, 1]);
        assert_eq!(b[2].x_raw, ds.features().select_rows(&[8, 9]));
        assert!(minibatches(&ds, 11, 0, false).is_err());
    }

    #[test]
    fn shuffled_batches_deterministic() {
        let ds = toy(10, 2);
        let a = minibatches(&ds, 3, 5, true).unwrap();
        let b = minibatches(&ds, 3, 5, true).unwrap();
        assert_eq!(a, b);
        let c = minibatches(&ds, 3, 6, true).unwrap();
        assert_ne!(a, c);
    }
}
