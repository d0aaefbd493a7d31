//! Loss-proportional batch sampling.
//!
//! Each sample owns an integer subrange of `[0, range_total)` whose width is
//! proportional to its last loss. A batch is drawn by picking uniform
//! integers and looking up the owner, rejecting duplicates.

use std::collections::HashMap;

use rand::Rng;

use crate::error::{Error, Result};

pub const DEFAULT_RANGE_TOTAL: u64 = 10_000;

#[derive(Clone, Debug, PartialEq)]
pub struct WeightEntry {
    pub id: String,
    pub loss: f64,
    pub range_start: u64,
    pub range_end: u64,
}

impl WeightEntry {
    pub fn width(&self) -> u64 {
        self.range_end - self.range_start
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SampleWeightTable {
    entries: Vec<WeightEntry>,
    range_total: u64,
}

/// Largest-remainder apportionment of `total` units over `losses`, with
/// every width at least 1. An all-zero loss vector is treated as uniform.
pub fn apportion(losses: &[f64], total: u64) -> Result<Vec<u64>> {
    let n = losses.len();
    if n == 0 {
        return Err(Error::Empty("cannot assign ranges to zero samples".into()));
    }
    if total < n as u64 {
        return Err(Error::Infeasible(format!(
            "range_total {total} is smaller than the {n} samples that each need a width of 1"
        )));
    }
    if let Some(bad) = losses.iter().find(|l| !l.is_finite() || **l < 0.0) {
        return Err(Error::InvalidArgument(format!("loss {bad} is not a finite non-negative value")));
    }
    let sum: f64 = losses.iter().sum();
    let shares: Vec<f64> = if sum > 0.0 {
        losses.iter().map(|l| total as f64 * l / sum).collect()
    } else {
        vec![total as f64 / n as f64; n]
    };

    let mut widths: Vec<u64> = shares.iter().map(|q| (q.floor() as u64).max(1)).collect();
    let assigned: u64 = widths.iter().sum();

    if assigned <= total {
        // hand out the leftover units by descending remainder; entries that were
        // lifted to the floor of 1 already exceed their share
        let mut order: Vec<usize> = (0..n).filter(|&i| widths[i] as f64 <= shares[i]).collect();
        order.sort_by(|&a, &b| {
            let ra = shares[a] - widths[a] as f64;
            let rb = shares[b] - widths[b] as f64;
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let mut left = total - assigned;
        let mut k = 0;
        while left > 0 {
            let i = if order.is_empty() { k % n } else { order[k % order.len()] };
            widths[i] += 1;
            left -= 1;
            k += 1;
        }
    } else {
        // the width-1 floor overdrew; take units back from the entries that
        // exceed their share the most
        let mut excess = assigned - total;
        while excess > 0 {
            let i = (0..n)
                .filter(|&i| widths[i] > 1)
                .max_by(|&a, &b| {
                    let ea = widths[a] as f64 - shares[a];
                    let eb = widths[b] as f64 - shares[b];
                    ea.total_cmp(&eb).then(b.cmp(&a))
                })
                .expect("total >= n guarantees a width above 1");
            widths[i] -= 1;
            excess -= 1;
        }
    }
    debug_assert_eq!(widths.iter().sum::<u64>(), total);
    Ok(widths)
}

pub fn assign_ranges(losses: &[(String, f64)], range_total: u64) -> Result<SampleWeightTable> {
    let values: Vec<f64> = losses.iter().map(|(_, l)| *l).collect();
    let widths = apportion(&values, range_total)?;
    let mut start = 0u64;
    let entries = losses
        .iter()
        .zip(widths)
        .map(|((id, loss), w)| {
            let e = WeightEntry {
                id: id.clone(),
                loss: *loss,
                range_start: start,
                range_end: start + w,
            };
            start += w;
            e
        })
        .collect();
    let table = SampleWeightTable {
        entries,
        range_total,
    };
    debug_assert!(table.check_partition().is_ok());
    Ok(table)
}

/// Equal widths for the epoch before any loss is known.
pub fn uniform_table(ids: &[String], range_total: u64) -> Result<SampleWeightTable> {
    let losses: Vec<(String, f64)> = ids.iter().map(|id| (id.clone(), 1.0)).collect();
    assign_ranges(&losses, range_total)
}

impl SampleWeightTable {
    pub fn entries(&self) -> &[WeightEntry] {
        &self.entries
    }

    pub fn range_total(&self) -> u64 {
        self.range_total
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn widths(&self) -> Vec<u64> {
        self.entries.iter().map(WeightEntry::width).collect()
    }

    pub fn probability(&self, index: usize) -> f64 {
        self.entries[index].width() as f64 / self.range_total as f64
    }

    /// Verifies the ranges tile `[0, range_total)` in order with no empty range.
    pub fn check_partition(&self) -> Result<()> {
        let mut expect = 0u64;
        for e in &self.entries {
            if e.range_start != expect || e.range_end <= e.range_start {
                return Err(Error::InvalidArgument(format!(
                    "range [{}, {}) of {} breaks the partition",
                    e.range_start, e.range_end, e.id
                )));
            }
            expect = e.range_end;
        }
        if expect != self.range_total {
            return Err(Error::InvalidArgument(format!(
                "ranges end at {expect}, expected {}",
                self.range_total
            )));
        }
        Ok(())
    }

    /// Index of the entry whose range contains `ticket`.
    pub fn owner_of(&self, ticket: u64) -> usize {
        debug_assert!(ticket < self.range_total);
        self.entries.partition_point(|e| e.range_start <= ticket) - 1
    }

    /// Draws `batch_size` entry indices. With `dedup`, duplicates are redrawn;
    /// after `1000 * batch_size` draws the batch is completed with the
    /// highest-loss unused entries.
    pub fn draw_indices<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
        dedup: bool,
    ) -> Result<Vec<usize>> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch_size must be at least 1".into()));
        }
        if dedup && batch_size > self.entries.len() {
            return Err(Error::Infeasible(format!(
                "cannot draw {batch_size} distinct samples from {}",
                self.entries.len()
            )));
        }
        let mut batch = Vec::with_capacity(batch_size);
        if !dedup {
            for _ in 0..batch_size {
                batch.push(self.owner_of(rng.random_range(0..self.range_total)));
            }
            return Ok(batch);
        }
        let mut taken = vec![false; self.entries.len()];
        let cap = 1000 * batch_size;
        let mut draws = 0;
        while batch.len() < batch_size && draws < cap {
            let i = self.owner_of(rng.random_range(0..self.range_total));
            draws += 1;
            if !taken[i] {
                taken[i] = true;
                batch.push(i);
            }
        }
        if batch.len() < batch_size {
            let mut rest: Vec<usize> = (0..self.entries.len()).filter(|&i| !taken[i]).collect();
            rest.sort_by(|&a, &b| self.entries[b].loss.total_cmp(&self.entries[a].loss).then(a.cmp(&b)));
            batch.extend(rest.into_iter().take(batch_size - batch.len()));
        }
        Ok(batch)
    }

    pub fn draw_batch<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
        dedup: bool,
    ) -> Result<Vec<String>> {
        Ok(self
            .draw_indices(batch_size, rng, dedup)?
            .into_iter()
            .map(|i| self.entries[i].id.clone())
            .collect())
    }

    /// Rebuilds the table with new losses; ids not mentioned keep their old loss.
    pub fn update_losses(&self, new_losses: &[(String, f64)]) -> Result<SampleWeightTable> {
        let index: HashMap<&str, usize> = self
            .entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.id.as_str(), i))
            .collect();
        let mut losses: Vec<(String, f64)> = self.entries.iter().map(|e| (e.id.clone(), e.loss)).collect();
        for (id, loss) in new_losses {
            let &i = index.get(id.as_str()).ok_or_else(|| Error::UnknownId(id.clone()))?;
            losses[i].1 = *loss;
        }
        assign_ranges(&losses, self.range_total)
    }
}

pub fn draw_batch<R: Rng + ?Sized>(
    table: &SampleWeightTable,
    batch_size: usize,
    rng: &mut R,
    dedup: bool,
) -> Result<Vec<String>> {
    table.draw_batch(batch_size, rng, dedup)
}

pub fn update_losses(table: &SampleWeightTable, new_losses: &[(String, f64)]) -> Result<SampleWeightTable> {
    table.update_losses(new_losses)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn named(losses: &[f64]) -> Vec<(String, f64)> {
        losses.iter().enumerate().map(|(i, &l)| (format!("s{i}"), l)).collect()
    }

    fn ranges(t: &SampleWeightTable) -> Vec<(u64, u64)> {
        t.entries().iter().map(|e| (e.range_start, e.range_end)).collect()
    }

    #[test]
    fn proportional_examples() {
        let t = assign_ranges(&named(&[1.0, 3.0, 6.0]), 10_000).unwrap();
        assert_eq!(ranges(&t), vec![(0, 1000), (1000, 4000), (4000, 10_000)]);
        let t = assign_ranges(&named(&[2.0, 2.0]), 10_000).unwrap();
        assert_eq!(ranges(&t), vec![(0, 5000), (5000, 10_000)]);
        let t = assign_ranges(&named(&[0.0, 4.0]), 10_000).unwrap();
        assert_eq!(ranges(&t), vec![(0, 1), (1, 10_000)]);
    }

    #[test]
    fn errors() {
        assert!(matches!(assign_ranges(&[], 10), Err(Error::Empty(_))));
        assert!(matches!(assign_ranges(&named(&[1.0; 5]), 4), Err(Error::Infeasible(_))));
        assert!(assign_ranges(&named(&[-1.0]), 4).is_err());
        let t = assign_ranges(&named(&[1.0, 1.0]), 10).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(matches!(t.draw_batch(3, &mut rng, true), Err(Error::Infeasible(_))));
        assert!(t.draw_batch(0, &mut rng, false).is_err());
        assert!(matches!(t.update_losses(&[("nope".into(), 1.0)]), Err(Error::UnknownId(_))));
    }

    #[test]
    fn largest_remainder_137() {
        let mut rng = ChaCha8Rng::seed_from_u64(137);
        let losses: Vec<f64> = (0..137).map(|_| rng.random_range(0.0..5.0)).collect();
        let t = assign_ranges(&named(&losses), 10_000).unwrap();
        t.check_partition().unwrap();
        let sum: f64 = losses.iter().sum();
        // independent recomputation: floor + ranked remainders
        let shares: Vec<f64> = losses.iter().map(|l| 10_000.0 * l / sum).collect();
        let mut floors: Vec<u64> = shares.iter().map(|q| q.floor() as u64).collect();
        let lifted: Vec<bool> = floors.iter().map(|&f| f == 0).collect();
        let mut rem: Vec<(f64, usize)> = shares.iter().enumerate().map(|(i, q)| (q - q.floor(), i)).collect();
        rem.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        for f in floors.iter_mut() {
            *f = (*f).max(1);
        }
        let mut left = 10_000 - floors.iter().sum::<u64>();
        for &(_, i) in &rem {
            if left == 0 {
                break;
            }
            if !lifted[i] {
                floors[i] += 1;
                left -= 1;
            }
        }
        assert_eq!(t.widths(), floors);
        for (w, q) in t.widths().iter().zip(&shares) {
            assert!((*w as f64 - q).abs() < 1.0 || *w == 1);
        }
    }

    #[test]
    fn dominant_loss_floor_rule() {
        let mut losses = vec![1.0; 10];
        losses[3] = 1e6;
        let t = assign_ranges(&named(&losses), 10_000).unwrap();
        assert_eq!(t.widths()[3], 10_000 - 9);
        assert!(t.widths().iter().enumerate().all(|(i, &w)| i == 3 || w == 1));
    }

    #[test]
    fn equal_losses_equal_widths() {
        let t = assign_ranges(&named(&[0.7; 7]), 10_000).unwrap();
        let w = t.widths();
        assert!(w.iter().max().unwrap() - w.iter().min().unwrap() <= 1);
        assert_eq!(uniform_table(&["a".into(), "b".into()], 10).unwrap().widths(), vec![5, 5]);
    }

    #[test]
    fn small_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let t = assign_ranges(&named(&[3.0]), 10_000).unwrap();
        assert_eq!(t.draw_batch(1, &mut rng, true).unwrap(), vec!["s0".to_string()]);
        let t = assign_ranges(&named(&[1.0, 1e9]), 10_000).unwrap();
        let mut b = t.draw_batch(2, &mut rng, true).unwrap();
        b.sort();
        assert_eq!(b, vec!["s0".to_string(), "s1".to_string()]);
    }

    #[test]
    fn retry_cap_falls_back_to_highest_loss() {
        // one entry owns all but one ticket of a huge range; a batch of 3
        // distinct samples can essentially never be completed by drawing
        let mut losses = vec![0.0; 4];
        losses[0] = 1.0;
        let t = assign_ranges(&named(&losses), 1_000_000_000_000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let b = t.draw_indices(3, &mut rng, true).unwrap();
        assert_eq!(b.len(), 3);
        assert_eq!(b[0], 0);
        // ties among zero losses resolve by index
        assert_eq!(&b[1..], &[1, 2]);
    }

    #[test]
    fn determinism() {
        let t = assign_ranges(&named(&[1.0, 2.0, 3.0, 4.0, 5.0]), 10_000).unwrap();
        let a = t.draw_batch(3, &mut ChaCha8Rng::seed_from_u64(5), true).unwrap();
        let b = t.draw_batch(3, &mut ChaCha8Rng::seed_from_u64(5), true).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn update_is_value_semantic() {
        let t = assign_ranges(&named(&[1.0, 3.0, 6.0]), 10_000).unwrap();
        let u = t.update_losses(&[("s0".into(), 6.0), ("s2".into(), 1.0)]).unwrap();
        assert_eq!(ranges(&t), vec![(0, 1000), (1000, 4000), (4000, 10_000)]);
        assert_eq!(ranges(&u), vec![(0, 6000), (6000, 9000), (9000, 10_000)]);
    }

    proptest! {
        #[test]
        fn partition_and_lookup(losses in proptest::collection::vec(0.0f64..100.0, 1..60), total in 60u64..20_000) {
            let t = assign_ranges(&named(&losses), total).unwrap();
            prop_assert!(t.check_partition().is_ok());
            for e in t.entries() {
                prop_assert_eq!(t.owner_of(e.range_start), t.entries().iter().position(|x| x.id == e.id).unwrap());
                prop_assert_eq!(t.owner_of(e.range_end - 1), t.owner_of(e.range_start));
            }
        }

        #[test]
        fn monotone_in_own_loss(losses in proptest::collection::vec(0.0f64..100.0, 2..40), which in 0usize..40, bump in 0.0f64..500.0) {
            let i = which % losses.len();
            let before = assign_ranges(&named(&losses), 10_000).unwrap().widths()[i];
            let mut up = losses.clone();
            up[i] += bump;
            let after = assign_ranges(&named(&up), 10_000).unwrap().widths()[i];
            prop_assert!(after >= before, "width fell from {} to {}", before, after);
        }

        #[test]
        fn update_idempotent(losses in proptest::collection::vec(0.0f64..100.0, 1..40)) {
            let named = named(&losses);
            let t = assign_ranges(&named, 10_000).unwrap();
            let once = t.update_losses(&named).unwrap();
            let twice = once.update_losses(&named).unwrap();
            prop_assert_eq!(&once, &t);
            prop_assert_eq!(once, twice);
        }
    }
}
