use crate::error::{dim_err, Result};
use crate::tape::{Op, Tape, Var};
use crate::tensor::Tensor;

fn require_2d(tape: &Tape, op: &'static str, x: Var) -> Result<(usize, usize)> {
    let s = tape.shape(x);
    if s.len() != 2 {
        return Err(dim_err(op, format!("expects a 2-D buffer, got {s:?}")));
    }
    Ok((s[0], s[1]))
}

impl Tape {
    /// Columns `[start, start + len)` of a 2-D buffer.
    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = require_2d(self, "slice_cols", x)?;
        if len == 0 || start + len > c {
            return Err(dim_err("slice_cols", format!("[{start}, {}) of {c}", start + len)));
        }
        let data = self
            .data(x)
            .chunks(c)
            .flat_map(|row| row[start..start + len].iter().copied())
            .collect();
        let out = Tensor::from_parts(vec![r, len], data);
        self.push("slice_cols", out, Op::SliceCols { x, start })
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(dim_err("concat_cols", "nothing to concatenate"));
        };
        let (r, _) = require_2d(self, "concat_cols", first)?;
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = require_2d(self, "concat_cols", p)?;
            if pr != r {
                return Err(dim_err("concat_cols", format!("row counts {r} vs {pr}")));
            }
            widths.push(pc);
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.data(p)[i * w..(i + 1) * w]);
            }
        }
        let out = Tensor::from_parts(vec![r, total], data);
        self.push("concat_cols", out, Op::ConcatCols { parts: parts.to_vec() })
    }

    /// Rows `[start, start + len)` of a 2-D buffer.
    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let (r, c) = require_2d(self, "slice_rows", x)?;
        if len == 0 || start + len > r {
            return Err(dim_err("slice_rows", format!("[{start}, {}) of {r}", start + len)));
        }
        let data = self.data(x)[start * c..(start + len) * c].to_vec();
        let out = Tensor::from_parts(vec![len, c], data);
        self.push("slice_rows", out, Op::SliceRows { x, start })
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(&first) = parts.first() else {
            return Err(dim_err("concat_rows", "nothing to concatenate"));
        };
        let (_, c) = require_2d(self, "concat_rows", first)?;
        let mut data = Vec::new();
        for &p in parts {
            let (_, pc) = require_2d(self, "concat_rows", p)?;
            if pc != c {
                return Err(dim_err("concat_rows", format!("column counts {c} vs {pc}")));
            }
            data.extend_from_slice(self.data(p));
        }
        let out = Tensor::from_parts(vec![data.len() / c, c], data);
        self.push("concat_rows", out, Op::ConcatRows { parts: parts.to_vec() })
    }

    /// Output row `i` copies input row `index[i]`.
    pub fn gather_rows(&mut self, x: Var, index: Vec<usize>) -> Result<Var> {
        let (r, c) = require_2d(self, "gather_rows", x)?;
        if index.is_empty() || index.iter().any(|&i| i >= r) {
            return Err(dim_err("gather_rows", format!("index out of range for {r} rows")));
        }
        let src = self.data(x);
        let data = index
            .iter()
            .flat_map(|&i| src[i * c..(i + 1) * c].iter().copied())
            .collect();
        let out = Tensor::from_parts(vec![index.len(), c], data);
        self.push("gather_rows", out, Op::GatherRows { x, index })
    }
}

pub(crate) fn slice_cols_backward(
    tape: &Tape,
    x: Var,
    start: usize,
    out: &Tensor,
    grad: &[f64],
) -> Vec<(Var, Vec<f64>)> {
    let c = tape.value(x).cols();
    let len = out.cols();
    let mut gx = vec![0.0; tape.value(x).len()];
    for (i, g) in grad.chunks(len).enumerate() {
        gx[i * c + start..i * c + start + len].copy_from_slice(g);
    }
    vec![(x, gx)]
}

pub(crate) fn concat_cols_backward(tape: &Tape, parts: &[Var], grad: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let widths: Vec<usize> = parts.iter().map(|p| tape.value(*p).cols()).collect();
    let total: usize = widths.iter().sum();
    let mut out: Vec<(Var, Vec<f64>)> = parts
        .iter()
        .map(|p| (*p, Vec::with_capacity(tape.value(*p).len())))
        .collect();
    for row in grad.chunks(total) {
        let mut offset = 0;
        for ((_, g), w) in out.iter_mut().zip(&widths) {
            g.extend_from_slice(&row[offset..offset + w]);
            offset += w;
        }
    }
    out
}

pub(crate) fn slice_rows_backward(tape: &Tape, x: Var, start: usize, grad: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let c = tape.value(x).cols();
    let mut gx = vec![0.0; tape.value(x).len()];
    gx[start * c..start * c + grad.len()].copy_from_slice(grad);
    vec![(x, gx)]
}

pub(crate) fn concat_rows_backward(tape: &Tape, parts: &[Var], grad: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let mut offset = 0;
    parts
        .iter()
        .map(|&p| {
            let n = tape.value(p).len();
            let g = grad[offset..offset + n].to_vec();
            offset += n;
            (p, g)
        })
        .collect()
}

pub(crate) fn gather_rows_backward(tape: &Tape, x: Var, index: &[usize], grad: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let c = tape.value(x).cols();
    let mut gx = vec![0.0; tape.value(x).len()];
    for (g, &src) in grad.chunks(c).zip(index) {
        for (acc, v) in gx[src * c..(src + 1) * c].iter_mut().zip(g) {
            *acc += v;
        }
    }
    vec![(x, gx)]
}
