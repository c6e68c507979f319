use crate::error::{Error, Result};

/// Time-major packing of a batch of variable-length sequences.
///
/// Sequences are ranked by length (longest first, ties by batch position). At step
/// `t` the active sequences form a prefix of the ranking, so step `t` occupies rows
/// `offsets[t] .. offsets[t] + batch_sizes[t]` of every packed `[total x dim]` array.
/// Padding never enters the computation.
#[derive(Debug, Clone, PartialEq)]
pub struct PackedLayout {
    lengths: Vec<usize>,
    order: Vec<usize>,
    batch_sizes: Vec<usize>,
    offsets: Vec<usize>,
    reverse: Vec<usize>,
}

impl PackedLayout {
    pub fn new(lengths: &[usize]) -> Result<Self> {
        if lengths.is_empty() {
            return Err(Error::validation("empty batch"));
        }
        if let Some(i) = lengths.iter().position(|&l| l == 0) {
            return Err(Error::validation(format!("sequence {i} has no positions")));
        }
        let mut order: Vec<usize> = (0..lengths.len()).collect();
        order.sort_by(|&a, &b| lengths[b].cmp(&lengths[a]));
        let sorted: Vec<usize> = order.iter().map(|&i| lengths[i]).collect();
        let max_len = sorted[0];
        let batch_sizes: Vec<usize> = (0..max_len)
            .map(|t| sorted.iter().take_while(|&&l| l > t).count())
            .collect();
        let mut offsets = Vec::with_capacity(max_len + 1);
        let mut acc = 0;
        for &n in &batch_sizes {
            offsets.push(acc);
            acc += n;
        }
        offsets.push(acc);
        let mut reverse = vec![0; acc];
        for (r, &len) in sorted.iter().enumerate() {
            for t in 0..len {
                reverse[offsets[t] + r] = offsets[len - 1 - t] + r;
            }
        }
        Ok(Self {
            lengths: sorted,
            order,
            batch_sizes,
            offsets,
            reverse,
        })
    }

    /// Number of packed rows (sum of lengths).
    pub fn total(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn max_len(&self) -> usize {
        self.batch_sizes.len()
    }

    pub fn num_seqs(&self) -> usize {
        self.lengths.len()
    }

    /// Length of the sequence at rank `r`.
    pub fn len_of(&self, r: usize) -> usize {
        self.lengths[r]
    }

    /// Batch position of the sequence at rank `r`.
    pub fn original_index(&self, r: usize) -> usize {
        self.order[r]
    }

    pub fn batch_size(&self, t: usize) -> usize {
        self.batch_sizes[t]
    }

    pub fn offset(&self, t: usize) -> usize {
        self.offsets[t]
    }

    pub fn row(&self, t: usize, r: usize) -> usize {
        self.offsets[t] + r
    }

    /// Row holding position `len - 1 - t` of the same sequence as row `i`.
    pub fn reversed_row(&self, i: usize) -> usize {
        self.reverse[i]
    }

    /// Gathers rows so each sequence is reversed within its own length.
    pub(crate) fn reverse_rows(&self, x: &[f64], dim: usize) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        for (i, &src) in self.reverse.iter().enumerate() {
            out[i * dim..(i + 1) * dim].copy_from_slice(&x[src * dim..(src + 1) * dim]);
        }
        out
    }

    /// Packs per-sequence values (indexed by batch position) into time-major rows.
    pub(crate) fn pack<S: AsRef<[f64]>>(&self, seqs: &[S]) -> Vec<f64> {
        let mut out = vec![0.0; self.total()];
        for (r, &orig) in self.order.iter().enumerate() {
            for (t, &v) in seqs[orig].as_ref()[..self.lengths[r]].iter().enumerate() {
                out[self.offsets[t] + r] = v;
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout_of_ragged_batch() {
        let l = PackedLayout::new(&[2, 3, 1]).unwrap();
        assert_eq!(l.total(), 6);
        assert_eq!(l.original_index(0), 1);
        assert_eq!(l.original_index(1), 0);
        assert_eq!(l.original_index(2), 2);
        assert_eq!((l.batch_size(0), l.batch_size(1), l.batch_size(2)), (3, 2, 1));
        let packed = l.pack(&[vec![10.0, 11.0], vec![20.0, 21.0, 22.0], vec![30.0]]);
        assert_eq!(packed, vec![20.0, 10.0, 30.0, 21.0, 11.0, 22.0]);
        let rev = l.reverse_rows(&packed, 1);
        assert_eq!(rev, vec![22.0, 11.0, 30.0, 21.0, 10.0, 20.0]);
        for i in 0..l.total() {
            assert_eq!(l.reversed_row(l.reversed_row(i)), i);
        }
    }

    #[test]
    fn rejects_empty() {
        assert!(PackedLayout::new(&[]).is_err());
        assert!(PackedLayout::new(&[3, 0]).is_err());
    }
}
