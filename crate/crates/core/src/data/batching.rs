use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;

use crate::error::{config, Result};

/// Endless stream of class-balanced index batches.
///
/// Each batch holds `batch_size / K` samples of every class, plus one extra
/// sample for `batch_size % K` classes chosen afresh per batch. Per-class
/// pools are consumed in shuffled order and reshuffled when exhausted.
pub struct BalancedBatches {
    pools: Vec<Vec<usize>>,
    cursors: Vec<usize>,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl BalancedBatches {
    pub fn new(labels: &[usize], num_classes: usize, batch_size: usize, rng: ChaCha8Rng) -> Result<Self> {
        if batch_size == 0 {
            return config("batch size must be positive");
        }
        let mut pools = vec![Vec::new(); num_classes];
        for (i, &y) in labels.iter().enumerate() {
            if y >= num_classes {
                return config(format!("label {y} out of range for {num_classes} classes"));
            }
            pools[y].push(i);
        }
        if let Some(k) = pools.iter().position(|p| p.is_empty()) {
            return config(format!("class {k} is absent from the source set"));
        }
        let mut this = Self {
            cursors: vec![0; num_classes],
            pools,
            batch_size,
            rng,
        };
        for k in 0..num_classes {
            this.pools[k].shuffle(&mut this.rng);
        }
        Ok(this)
    }

    fn draw(&mut self, class: usize) -> usize {
        if self.cursors[class] == self.pools[class].len() {
            self.pools[class].shuffle(&mut self.rng);
            self.cursors[class] = 0;
        }
        let i = self.pools[class][self.cursors[class]];
        self.cursors[class] += 1;
        i
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        let k = self.pools.len();
        let base = self.batch_size / k;
        let extra = self.batch_size % k;
        let mut order: Vec<usize> = (0..k).collect();
        order.shuffle(&mut self.rng);
        let mut batch = Vec::with_capacity(self.batch_size);
        for (rank, &class) in order.iter().enumerate() {
            let count = base + usize::from(rank < extra);
            for _ in 0..count {
                let i = self.draw(class);
                batch.push(i);
            }
        }
        batch.shuffle(&mut self.rng);
        batch
    }
}

impl Iterator for BalancedBatches {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        Some(self.next_batch())
    }
}

/// Convenience constructor over a labelled sample list.
pub fn balanced_source_batches(
    labels: &[Option<usize>],
    num_classes: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
) -> Result<BalancedBatches> {
    let labels: Vec<usize> = labels
        .iter()
        .map(|y| y.ok_or_else(|| crate::Error::Config("source sample without label".into())))
        .collect::<Result<_>>()?;
    BalancedBatches::new(&labels, num_classes, batch_size, rng)
}

/// Endless stream of uniformly sampled batches, reshuffling at each pass.
pub struct UniformBatches {
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
    rng: ChaCha8Rng,
}

impl UniformBatches {
    pub fn new(len: usize, batch_size: usize, mut rng: ChaCha8Rng) -> Result<Self> {
        if len == 0 || batch_size == 0 {
            return config("uniform batches need a nonempty set and a positive batch size");
        }
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut rng);
        Ok(Self {
            order,
            cursor: 0,
            batch_size,
            rng,
        })
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        let mut batch = Vec::with_capacity(self.batch_size);
        while batch.len() < self.batch_size {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            batch.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        batch
    }
}

impl Iterator for UniformBatches {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        Some(self.next_batch())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_rng, Stream};

    fn labels(n: usize, k: usize) -> Vec<Option<usize>> {
        // deliberately imbalanced
        (0..n).map(|i| Some(if i % 4 == 0 { 0 } else { (i / 4) % k })).collect()
    }

    fn counts(batch: &[usize], labels: &[Option<usize>], k: usize) -> Vec<usize> {
        let mut c = vec![0; k];
        batch.iter().for_each(|&i| c[labels[i].unwrap()] += 1);
        c
    }

    #[test]
    fn ten_classes_batch_128_gives_12_or_13_per_class() {
        let ys = labels(3000, 10);
        let mut it = balanced_source_batches(&ys, 10, 128, stream_rng(0, Stream::SourceBatches)).unwrap();
        for _ in 0..50 {
            let b = it.next().unwrap();
            assert_eq!(b.len(), 128);
            let c = counts(&b, &ys, 10);
            assert!(c.iter().all(|&n| n == 12 || n == 13), "{c:?}");
            assert_eq!(c.iter().filter(|&&n| n == 13).count(), 8);
        }
    }

    #[test]
    fn two_classes_batch_500_is_even() {
        let ys: Vec<Option<usize>> = (0..900).map(|i| Some(usize::from(i % 9 == 0))).collect();
        let mut it = balanced_source_batches(&ys, 2, 500, stream_rng(1, Stream::SourceBatches)).unwrap();
        for _ in 0..5 {
            assert_eq!(counts(&it.next().unwrap(), &ys, 2), vec![250, 250]);
        }
    }

    #[test]
    fn same_seed_same_sequence() {
        let ys = labels(1000, 10);
        let a: Vec<_> = balanced_source_batches(&ys, 10, 64, stream_rng(7, Stream::SourceBatches))
            .unwrap()
            .take(20)
            .collect();
        let b: Vec<_> = balanced_source_batches(&ys, 10, 64, stream_rng(7, Stream::SourceBatches))
            .unwrap()
            .take(20)
            .collect();
        assert_eq!(a, b);
    }

    #[test]
    fn missing_class_is_config_error() {
        let ys: Vec<Option<usize>> = (0..100).map(|i| Some(i % 3)).collect();
        assert!(matches!(
            balanced_source_batches(&ys, 4, 32, stream_rng(0, Stream::SourceBatches)),
            Err(crate::Error::Config(_))
        ));
    }

    #[test]
    fn uniform_batches_cover_each_pass() {
        let mut it = UniformBatches::new(10, 5, stream_rng(0, Stream::TargetBatches)).unwrap();
        let mut seen: Vec<usize> = it.next_batch();
        seen.extend(it.next_batch());
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }
}
