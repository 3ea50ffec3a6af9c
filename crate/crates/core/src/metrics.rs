//! Word error rate over gloss sequences.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Edit-script breakdown against a reference of length `n`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EditOps {
    pub s: usize,
    pub i: usize,
    pub d: usize,
    pub n: usize,
}

impl EditOps {
    pub fn errors(&self) -> usize {
        self.s + self.i + self.d
    }

    /// `(S + I + D) / N`; may exceed 1.
    pub fn rate(&self) -> Result<f64> {
        if self.n == 0 {
            return Err(Error::EmptyReference);
        }
        Ok(self.errors() as f64 / self.n as f64)
    }
}

impl std::ops::AddAssign for EditOps {
    fn add_assign(&mut self, o: Self) {
        self.s += o.s;
        self.i += o.i;
        self.d += o.d;
        self.n += o.n;
    }
}

impl std::iter::Sum for EditOps {
    fn sum<I: Iterator<Item = Self>>(iter: I) -> Self {
        iter.fold(Self::default(), |mut a, b| {
            a += b;
            a
        })
    }
}

/// DP cell: `(cost, indels)` orders alignments; `ops` is the breakdown of
/// the winning one.
#[derive(Clone, Copy)]
struct Cell {
    cost: u32,
    indels: u32,
    s: u32,
    i: u32,
    d: u32,
}

impl Cell {
    const START: Cell = Cell {
        cost: 0,
        indels: 0,
        s: 0,
        i: 0,
        d: 0,
    };

    fn sub(self, differs: bool) -> Cell {
        let k = u32::from(differs);
        Cell {
            cost: self.cost + k,
            s: self.s + k,
            ..self
        }
    }

    fn ins(self) -> Cell {
        Cell {
            cost: self.cost + 1,
            indels: self.indels + 1,
            i: self.i + 1,
            ..self
        }
    }

    fn del(self) -> Cell {
        Cell {
            cost: self.cost + 1,
            indels: self.indels + 1,
            d: self.d + 1,
            ..self
        }
    }

    fn better(self, other: Cell) -> Cell {
        if (other.cost, other.indels) < (self.cost, self.indels) {
            other
        } else {
            self
        }
    }
}

/// Minimal unit-cost alignment. Among minimal scripts the one with the
/// fewest insertions plus deletions wins, so a substitution is preferred over
/// an insert/delete pair. Defined for an empty reference too.
pub fn edit_ops<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> EditOps {
    let m = hypothesis.len();
    let mut prev = Vec::with_capacity(m + 1);
    prev.push(Cell::START);
    for j in 0..m {
        prev.push(prev[j].ins());
    }
    let mut row = prev.clone();
    for r in reference {
        row[0] = prev[0].del();
        for (j, h) in hypothesis.iter().enumerate() {
            // Ties keep the earlier candidate: diagonal, then deletion.
            row[j + 1] = prev[j].sub(r != h).better(prev[j + 1].del()).better(row[j].ins());
        }
        std::mem::swap(&mut prev, &mut row);
    }
    let c = prev[m];
    EditOps {
        s: c.s as usize,
        i: c.i as usize,
        d: c.d as usize,
        n: reference.len(),
    }
}

/// `(S + I + D) / N` with its breakdown; errors on an empty reference.
pub fn wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<(f64, EditOps)> {
    let ops = edit_ops(reference, hypothesis);
    Ok((ops.rate()?, ops))
}

/// Corpus WER: total errors over total reference length.
pub fn pooled_wer(ops: impl IntoIterator<Item = EditOps>) -> Result<(f64, EditOps)> {
    let total: EditOps = ops.into_iter().sum();
    Ok((total.rate()?, total))
}
