use crate::error::{dim_err, Result};
use crate::tape::{Op, Tape, Var};
use crate::tensor::{matmul_into, Tensor};

fn same_shape(tape: &Tape, op: &'static str, a: Var, b: Var) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(dim_err(
            op,
            format!("{:?} vs {:?}", tape.shape(a), tape.shape(b)),
        ));
    }
    Ok(())
}

impl Tape {
    /// `a[M×K] · b[K×N]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", out, Op::MatMul { a, b })
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        if self.shape(x).len() != 2 {
            return Err(dim_err("transpose", "expects a 2-D buffer"));
        }
        let out = self.value(x).transpose();
        self.push("transpose", out, Op::Transpose { x })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "add", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x + y).collect();
        let out = Tensor::from_parts(self.shape(a).to_vec(), data);
        self.push("add", out, Op::Add { a, b })
    }

    /// Adds `row` (length = last axis of `x`) to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Result<Var> {
        let c = self.value(x).cols();
        if self.value(row).len() != c {
            return Err(dim_err(
                "add_row",
                format!("row of {} values for {c} columns", self.value(row).len()),
            ));
        }
        let r = self.data(row);
        let data = self
            .data(x)
            .chunks(c)
            .flat_map(|xr| xr.iter().zip(r).map(|(a, b)| a + b))
            .collect();
        let out = Tensor::from_parts(self.shape(x).to_vec(), data);
        self.push("add_row", out, Op::AddRow { x, row })
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape(self, "mul", a, b)?;
        let data = self.data(a).iter().zip(self.data(b)).map(|(x, y)| x * y).collect();
        let out = Tensor::from_parts(self.shape(a).to_vec(), data);
        self.push("mul", out, Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Result<Var> {
        let out = self.value(x).map(|v| v * factor);
        self.push("scale", out, Op::Scale { x, factor })
    }

    /// Elementwise product with a fixed mask (dropout).
    pub fn mul_const(&mut self, x: Var, mask: Vec<f64>) -> Result<Var> {
        if mask.len() != self.value(x).len() {
            return Err(dim_err("mul_const", "mask length differs from input"));
        }
        let data = self.data(x).iter().zip(&mask).map(|(a, m)| a * m).collect();
        let out = Tensor::from_parts(self.shape(x).to_vec(), data);
        self.push("mul_const", out, Op::MulConst { x, mask })
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let out = Tensor::scalar(self.value(x).sum());
        self.push("sum", out, Op::Sum { x })
    }

    pub fn mean(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x);
        let out = Tensor::scalar(v.sum() / v.len() as f64);
        self.push("mean", out, Op::Mean { x })
    }

    /// Records a scalar computed outside the tape from `x`, together with its
    /// exact gradient d(value)/d(x).
    pub fn external_scalar(&mut self, x: Var, value: f64, grad: Tensor) -> Result<Var> {
        if grad.shape() != self.shape(x) {
            return Err(dim_err("external_scalar", "gradient shape differs from input"));
        }
        self.push(
            "external_scalar",
            Tensor::scalar(value),
            Op::External {
                x,
                grad: grad.into_data(),
            },
        )
    }
}

pub(crate) fn matmul_backward(tape: &Tape, a: Var, b: Var, grad: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let (av, bv) = (tape.value(a), tape.value(b));
    let (m, k, n) = (av.shape()[0], av.shape()[1], bv.shape()[1]);
    let mut out = Vec::with_capacity(2);
    if tape.requires_grad(a) {
        // dA = dC · Bᵀ
        let mut ga = vec![0.0; m * k];
        for i in 0..m {
            let g_row = &grad[i * n..(i + 1) * n];
            for p in 0..k {
                let b_row = &bv.data()[p * n..(p + 1) * n];
                ga[i * k + p] = g_row.iter().zip(b_row).map(|(x, y)| x * y).sum();
            }
        }
        out.push((a, ga));
    }
    if tape.requires_grad(b) {
        // dB = Aᵀ · dC
        let mut gb = vec![0.0; k * n];
        let at = av.transpose();
        matmul_into(at.data(), grad, &mut gb, k, m, n);
        out.push((b, gb));
    }
    out
}

pub(crate) fn transpose_backward(tape: &Tape, x: Var, grad: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let (r, c) = (tape.value(x).rows(), tape.value(x).cols());
    let g = Tensor::from_parts(vec![c, r], grad.to_vec()).transpose();
    vec![(x, g.into_data())]
}

pub(crate) fn add_row_backward(tape: &Tape, x: Var, row: Var, grad: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let c = tape.value(x).cols();
    let mut grow = vec![0.0; c];
    for g in grad.chunks(c) {
        for (acc, v) in grow.iter_mut().zip(g) {
            *acc += v;
        }
    }
    vec![(x, grad.to_vec()), (row, grow)]
}

pub(crate) fn mul_backward(tape: &Tape, a: Var, b: Var, grad: &[f64]) -> Vec<(Var, Vec<f64>)> {
    let ga = grad.iter().zip(tape.data(b)).map(|(g, y)| g * y).collect();
    let gb = grad.iter().zip(tape.data(a)).map(|(g, y)| g * y).collect();
    vec![(a, ga), (b, gb)]
}
