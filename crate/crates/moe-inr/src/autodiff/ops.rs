//! Op definitions, forward kernels, and backward rules.

use super::{Node, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Input floor applied by `Op::Log` for numerical stability.
pub(crate) const LOG_FLOOR: f64 = 1e-12;

/// Every op the graph can record.
#[derive(Debug, Clone, PartialEq)]
pub enum Op<S> {
    Param,
    Const,
    /// `[m,k] x [k,n] -> [m,n]`.
    MatMul,
    /// Fused affine layer `x w + b` with inputs `[x, w, b]`, `b` a `[1,n]` row.
    Linear,
    /// Elementwise add; second operand may be `[1,n]` broadcast over rows.
    Add,
    Sub,
    Mul,
    MulScalar(S),
    AddScalar(S),
    Square,
    /// `sin(scale * x)`.
    Sin { scale: S },
    /// `sin((|x|+1) * x)`.
    Finer,
    Softplus,
    Exp,
    /// `ln(max(x, 1e-12))`.
    Log,
    /// `|x|`, subgradient 0 at the origin.
    Abs,
    /// Concatenate rank-2 inputs along the last axis.
    ConcatLast,
    /// Row-wise softmax with max subtraction.
    SoftmaxLast,
    /// Sum over one axis (kept as size 1) or all (`None`, shape `[1]`).
    Sum { axis: Option<usize> },
    Mean { axis: Option<usize> },
    /// Column-wise max over the batch axis: `[m,n] -> [1,n]`.
    BatchMax,
}

impl<S> Op<S> {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Param => "param",
            Op::Const => "const",
            Op::MatMul => "matmul",
            Op::Linear => "linear",
            Op::Add => "add",
            Op::Sub => "subtract",
            Op::Mul => "multiply",
            Op::MulScalar(_) => "mul_scalar",
            Op::AddScalar(_) => "add_scalar",
            Op::Square => "square",
            Op::Sin { .. } => "sin",
            Op::Finer => "finer",
            Op::Softplus => "softplus",
            Op::Exp => "exp",
            Op::Log => "log",
            Op::Abs => "abs",
            Op::ConcatLast => "concat",
            Op::SoftmaxLast => "softmax",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::BatchMax => "batch_max",
        }
    }
}

fn shape_err(op: &'static str, detail: String) -> Error {
    Error::Shape { op, detail }
}

fn want_inputs<S: Scalar>(op: &'static str, inputs: &[&Tensor<S>], n: usize) -> Result<()> {
    if inputs.len() != n {
        return Err(shape_err(op, format!("expected {} inputs, got {}", n, inputs.len())));
    }
    Ok(())
}

fn want_rank2<S: Scalar>(op: &'static str, t: &Tensor<S>) -> Result<()> {
    if t.rank() != 2 {
        return Err(shape_err(op, format!("expected rank-2 tensor, got shape {:?}", t.shape())));
    }
    Ok(())
}

pub(crate) fn forward<S: Scalar>(op: &Op<S>, inputs: &[&Tensor<S>]) -> Result<Tensor<S>> {
    match op {
        Op::Param | Op::Const => Err(shape_err(op.name(), "leaf ops are inserted directly".into())),
        Op::MatMul => {
            want_inputs("matmul", inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            want_rank2("matmul", a)?;
            want_rank2("matmul", b)?;
            let (m, k, k2, n) = (a.rows(), a.cols(), b.rows(), b.cols());
            if k != k2 {
                return Err(shape_err("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
            }
            let data = kernels::matmul_nn(a.data(), b.data(), m, k, n);
            Tensor::new(vec![m, n], data)
        }
        Op::Linear => {
            want_inputs("linear", inputs, 3)?;
            let (x, w, b) = (inputs[0], inputs[1], inputs[2]);
            want_rank2("linear", x)?;
            want_rank2("linear", w)?;
            let (m, k, k2, n) = (x.rows(), x.cols(), w.rows(), w.cols());
            if k != k2 || b.len() != n {
                return Err(shape_err(
                    "linear",
                    format!("{:?} x {:?} + {:?}", x.shape(), w.shape(), b.shape()),
                ));
            }
            let mut data = kernels::matmul_nn(x.data(), w.data(), m, k, n);
            let bias = b.data();
            for row in data.chunks_mut(n) {
                for (v, bv) in row.iter_mut().zip(bias) {
                    *v = *v + *bv;
                }
            }
            Tensor::new(vec![m, n], data)
        }
        Op::Add => {
            want_inputs("add", inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() == b.shape() {
                Ok(binary(a, b, |x, y| x + y))
            } else if a.rank() == 2 && b.rank() == 2 && b.rows() == 1 && b.cols() == a.cols() {
                let n = a.cols();
                let brow = b.data();
                let data = kernels::map_rows(a.data(), n, |row, out| {
                    for j in 0..n {
                        out[j] = row[j] + brow[j];
                    }
                });
                Tensor::new(a.shape().to_vec(), data)
            } else {
                Err(shape_err("add", format!("{:?} + {:?}", a.shape(), b.shape())))
            }
        }
        Op::Sub => {
            want_inputs("subtract", inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() != b.shape() {
                return Err(shape_err("subtract", format!("{:?} - {:?}", a.shape(), b.shape())));
            }
            Ok(binary(a, b, |x, y| x - y))
        }
        Op::Mul => {
            want_inputs("multiply", inputs, 2)?;
            let (a, b) = (inputs[0], inputs[1]);
            if a.shape() != b.shape() {
                return Err(shape_err("multiply", format!("{:?} * {:?}", a.shape(), b.shape())));
            }
            Ok(binary(a, b, |x, y| x * y))
        }
        Op::MulScalar(c) => {
            want_inputs("mul_scalar", inputs, 1)?;
            let c = *c;
            Ok(unary(inputs[0], move |x| x * c))
        }
        Op::AddScalar(c) => {
            want_inputs("add_scalar", inputs, 1)?;
            let c = *c;
            Ok(unary(inputs[0], move |x| x + c))
        }
        Op::Square => {
            want_inputs("square", inputs, 1)?;
            Ok(unary(inputs[0], |x| x * x))
        }
        Op::Sin { scale } => {
            want_inputs("sin", inputs, 1)?;
            let s = *scale;
            Ok(unary(inputs[0], move |x| kernels::fsin(s * x)))
        }
        Op::Finer => {
            want_inputs("finer", inputs, 1)?;
            Ok(unary(inputs[0], |x| kernels::fsin((x.abs() + S::one()) * x)))
        }
        Op::Softplus => {
            want_inputs("softplus", inputs, 1)?;
            Ok(unary(inputs[0], softplus))
        }
        Op::Exp => {
            want_inputs("exp", inputs, 1)?;
            Ok(unary(inputs[0], |x| x.exp()))
        }
        Op::Log => {
            want_inputs("log", inputs, 1)?;
            let floor = S::from_f64(LOG_FLOOR);
            Ok(unary(inputs[0], move |x| x.max(floor).ln()))
        }
        Op::Abs => {
            want_inputs("abs", inputs, 1)?;
            Ok(unary(inputs[0], |x| x.abs()))
        }
        Op::ConcatLast => {
            if inputs.is_empty() {
                return Err(shape_err("concat", "no inputs".into()));
            }
            let rows = inputs[0].rows();
            for t in inputs {
                want_rank2("concat", t)?;
                if t.rows() != rows {
                    return Err(shape_err("concat", format!("row mismatch: {} vs {}", t.rows(), rows)));
                }
            }
            let total: usize = inputs.iter().map(|t| t.cols()).sum();
            let mut data = vec![S::zero(); rows * total];
            let mut base = 0;
            for t in inputs {
                let c = t.cols();
                for r in 0..rows {
                    data[r * total + base..r * total + base + c]
                        .copy_from_slice(&t.data()[r * c..(r + 1) * c]);
                }
                base += c;
            }
            Tensor::new(vec![rows, total], data)
        }
        Op::SoftmaxLast => {
            want_inputs("softmax", inputs, 1)?;
            let a = inputs[0];
            want_rank2("softmax", a)?;
            let n = a.cols();
            let data = kernels::map_rows(a.data(), n, |row, out| kernels::softmax_row(row, out));
            Tensor::new(a.shape().to_vec(), data)
        }
        Op::Sum { axis } => reduce(inputs, *axis, false),
        Op::Mean { axis } => reduce(inputs, *axis, true),
        Op::BatchMax => {
            want_inputs("batch_max", inputs, 1)?;
            let a = inputs[0];
            want_rank2("batch_max", a)?;
            let (m, n) = (a.rows(), a.cols());
            let mut out = a.data()[..n].to_vec();
            for r in 1..m {
                for j in 0..n {
                    let v = a.data()[r * n + j];
                    if v > out[j] {
                        out[j] = v;
                    }
                }
            }
            Tensor::new(vec![1, n], out)
        }
    }
}

fn reduce<S: Scalar>(inputs: &[&Tensor<S>], axis: Option<usize>, mean: bool) -> Result<Tensor<S>> {
    let name: &'static str = if mean { "mean" } else { "sum" };
    want_inputs(name, inputs, 1)?;
    let a = inputs[0];
    match axis {
        None => {
            let mut s = S::zero();
            for &v in a.data() {
                s = s + v;
            }
            if mean {
                s = s / S::from_f64(a.len() as f64);
            }
            Ok(Tensor::scalar(s))
        }
        Some(ax) => {
            want_rank2(name, a)?;
            if ax > 1 {
                return Err(shape_err(name, format!("axis {} out of range for rank 2", ax)));
            }
            let (m, n) = (a.rows(), a.cols());
            if ax == 0 {
                let mut out = vec![S::zero(); n];
                for r in 0..m {
                    for j in 0..n {
                        out[j] = out[j] + a.data()[r * n + j];
                    }
                }
                if mean {
                    let c = S::from_f64(m as f64);
                    for v in &mut out {
                        *v = *v / c;
                    }
                }
                Tensor::new(vec![1, n], out)
            } else {
                let mut out = vec![S::zero(); m];
                for r in 0..m {
                    let mut s = S::zero();
                    for &v in &a.data()[r * n..(r + 1) * n] {
                        s = s + v;
                    }
                    out[r] = s;
                }
                if mean {
                    let c = S::from_f64(n as f64);
                    for v in &mut out {
                        *v = *v / c;
                    }
                }
                Tensor::new(vec![m, 1], out)
            }
        }
    }
}

fn softplus<S: Scalar>(x: S) -> S {
    // ln(1 + e^x) = max(x, 0) + ln(1 + e^-|x|), stable for large |x|.
    x.max(S::zero()) + (-x.abs()).exp().ln_1p()
}

fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        S::one() / (S::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}

fn unary<S: Scalar>(a: &Tensor<S>, f: impl Fn(S) -> S + Sync) -> Tensor<S> {
    Tensor {
        shape: a.shape().to_vec(),
        data: kernels::unary_map(a.data(), f),
    }
}

fn binary<S: Scalar>(a: &Tensor<S>, b: &Tensor<S>, f: impl Fn(S, S) -> S + Sync) -> Tensor<S> {
    Tensor {
        shape: a.shape().to_vec(),
        data: kernels::binary_map(a.data(), b.data(), f),
    }
}

/// Accumulate the adjoint contributions of node `id` into its inputs.
pub(crate) fn backward_into<S: Scalar>(
    nodes: &[Node<S>],
    id: usize,
    g: &[S],
    adj: &mut [Option<Vec<S>>],
) {
    let node = &nodes[id];
    let input = |k: usize| -> &Tensor<S> { &nodes[node.inputs[k]].value };
    let grad_wanted = |k: usize| nodes[node.inputs[k]].needs_grad;
    macro_rules! slot {
        ($k:expr) => {{
            let iid = node.inputs[$k];
            adj[iid].get_or_insert_with(|| vec![S::zero(); nodes[iid].value.len()])
        }};
    }

    match &node.op {
        Op::Param | Op::Const => {}
        Op::MatMul => {
            let (a, b) = (input(0), input(1));
            let (m, k, n) = (a.rows(), a.cols(), b.cols());
            if grad_wanted(0) {
                let da = kernels::matmul_nt(g, b.data(), m, n, k);
                kernels::add_assign(slot!(0), &da);
            }
            if grad_wanted(1) {
                let db = kernels::matmul_tn(a.data(), g, m, k, n);
                kernels::add_assign(slot!(1), &db);
            }
        }
        Op::Linear => {
            let (x, w) = (input(0), input(1));
            let (m, k, n) = (x.rows(), x.cols(), w.cols());
            if grad_wanted(0) {
                let dx = kernels::matmul_nt(g, w.data(), m, n, k);
                kernels::add_assign(slot!(0), &dx);
            }
            if grad_wanted(1) {
                let dw = kernels::matmul_tn(x.data(), g, m, k, n);
                kernels::add_assign(slot!(1), &dw);
            }
            if grad_wanted(2) {
                let s = slot!(2);
                for row in g.chunks_exact(n) {
                    for j in 0..n {
                        s[j] = s[j] + row[j];
                    }
                }
            }
        }
        Op::Add => {
            let (a, b) = (input(0), input(1));
            if grad_wanted(0) {
                kernels::add_assign(slot!(0), g);
            }
            if grad_wanted(1) {
                if a.shape() == b.shape() {
                    kernels::add_assign(slot!(1), g);
                } else {
                    // Bias broadcast: accumulate column sums.
                    let n = b.cols();
                    let s = slot!(1);
                    for row in g.chunks_exact(n) {
                        for j in 0..n {
                            s[j] = s[j] + row[j];
                        }
                    }
                }
            }
        }
        Op::Sub => {
            if grad_wanted(0) {
                kernels::add_assign(slot!(0), g);
            }
            if grad_wanted(1) {
                let s = slot!(1);
                for (sv, gv) in s.iter_mut().zip(g) {
                    *sv = *sv - *gv;
                }
            }
        }
        Op::Mul => {
            let (a, b) = (input(0), input(1));
            if grad_wanted(0) {
                kernels::accum2(slot!(0), g, b.data(), |gv, bv| gv * bv);
            }
            if grad_wanted(1) {
                kernels::accum2(slot!(1), g, a.data(), |gv, av| gv * av);
            }
        }
        Op::MulScalar(c) => {
            if grad_wanted(0) {
                let c = *c;
                kernels::accum1(slot!(0), g, move |gv| gv * c);
            }
        }
        Op::AddScalar(_) => {
            if grad_wanted(0) {
                kernels::add_assign(slot!(0), g);
            }
        }
        Op::Square => {
            if grad_wanted(0) {
                let two = S::from_f64(2.0);
                kernels::accum2(slot!(0), g, input(0).data(), move |gv, x| two * x * gv);
            }
        }
        Op::Sin { scale } => {
            if grad_wanted(0) {
                let sc = *scale;
                kernels::accum2(slot!(0), g, input(0).data(), move |gv, x| {
                    sc * kernels::fcos(sc * x) * gv
                });
            }
        }
        Op::Finer => {
            if grad_wanted(0) {
                // d/dx sin((|x|+1)x) = (2|x|+1) cos((|x|+1)x), with |.|' = 0 at 0.
                let two = S::from_f64(2.0);
                kernels::accum2(slot!(0), g, input(0).data(), move |gv, x| {
                    (two * x.abs() + S::one()) * kernels::fcos((x.abs() + S::one()) * x) * gv
                });
            }
        }
        Op::Softplus => {
            if grad_wanted(0) {
                kernels::accum2(slot!(0), g, input(0).data(), |gv, x| sigmoid(x) * gv);
            }
        }
        Op::Exp => {
            if grad_wanted(0) {
                kernels::accum2(slot!(0), g, node.value.data(), |gv, y| y * gv);
            }
        }
        Op::Log => {
            if grad_wanted(0) {
                let floor = S::from_f64(LOG_FLOOR);
                kernels::accum2(slot!(0), g, input(0).data(), move |gv, x| gv / x.max(floor));
            }
        }
        Op::Abs => {
            if grad_wanted(0) {
                kernels::accum2(slot!(0), g, input(0).data(), |gv, x| {
                    if x > S::zero() {
                        gv
                    } else if x < S::zero() {
                        -gv
                    } else {
                        S::zero()
                    }
                });
            }
        }
        Op::ConcatLast => {
            let total: usize = (0..node.inputs.len()).map(|k| input(k).cols()).sum();
            let rows = input(0).rows();
            let mut base = 0;
            for k in 0..node.inputs.len() {
                let c = input(k).cols();
                if grad_wanted(k) {
                    let s = slot!(k);
                    for r in 0..rows {
                        let src = &g[r * total + base..r * total + base + c];
                        let dst = &mut s[r * c..(r + 1) * c];
                        for j in 0..c {
                            dst[j] = dst[j] + src[j];
                        }
                    }
                }
                base += c;
            }
        }
        Op::SoftmaxLast => {
            if grad_wanted(0) {
                let y = node.value.data();
                let n = node.value.cols();
                let mut d = vec![S::zero(); y.len()];
                for ((drow, yrow), grow) in
                    d.chunks_mut(n).zip(y.chunks_exact(n)).zip(g.chunks_exact(n))
                {
                    let mut dot = S::zero();
                    for j in 0..n {
                        dot = dot + grow[j] * yrow[j];
                    }
                    for j in 0..n {
                        drow[j] = yrow[j] * (grow[j] - dot);
                    }
                }
                kernels::add_assign(slot!(0), &d);
            }
        }
        Op::Sum { axis } | Op::Mean { axis } => {
            if grad_wanted(0) {
                let x = input(0);
                let scale = match &node.op {
                    Op::Mean { axis: None } => S::from_f64(1.0 / x.len() as f64),
                    Op::Mean { axis: Some(0) } => S::from_f64(1.0 / x.rows() as f64),
                    Op::Mean { axis: Some(_) } => S::from_f64(1.0 / x.cols() as f64),
                    _ => S::one(),
                };
                let s = slot!(0);
                match axis {
                    None => {
                        let gv = g[0] * scale;
                        for v in s.iter_mut() {
                            *v = *v + gv;
                        }
                    }
                    Some(0) => {
                        let n = x.cols();
                        for row in s.chunks_mut(n) {
                            for j in 0..n {
                                row[j] = row[j] + g[j] * scale;
                            }
                        }
                    }
                    Some(_) => {
                        let n = x.cols();
                        for (r, row) in s.chunks_mut(n).enumerate() {
                            let gv = g[r] * scale;
                            for v in row.iter_mut() {
                                *v = *v + gv;
                            }
                        }
                    }
                }
            }
        }
        Op::BatchMax => {
            if grad_wanted(0) {
                let x = input(0);
                let (m, n) = (x.rows(), x.cols());
                let s = slot!(0);
                for j in 0..n {
                    // First-maximum tie break, recomputed from the stored input.
                    let mut best = 0;
                    let mut bv = x.data()[j];
                    for r in 1..m {
                        let v = x.data()[r * n + j];
                        if v > bv {
                            bv = v;
                            best = r;
                        }
                    }
                    s[best * n + j] = s[best * n + j] + g[j];
                }
            }
        }
    }
}

/// Dense kernels shared by the graph and the no-graph inference paths.
///
/// All loops have a fixed per-element evaluation order, so results are
/// bit-identical across thread counts.
pub(crate) mod kernels {
    use crate::scalar::Scalar;
    use rayon::prelude::*;

    /// Branch-free sine: reduce to `r = x - round(x/pi) * pi` in
    /// `[-pi/2, pi/2]`, apply an odd Taylor polynomial through r^19
    /// (max error ~2e-14 on the reduced range), and restore the half-period
    /// sign. Straight-line float math, so the autovectorizer can batch it;
    /// libm's sine costs several times more once arguments leave `[-pi/4, pi/4]`,
    /// which sine-activation pre-activations almost always do.
    #[inline]
    pub fn fast_sin(x: f64) -> f64 {
        use std::f64::consts::PI;
        let k = (x * (1.0 / PI)).round();
        let r = x - k * PI;
        let r2 = r * r;
        // Odd Taylor coefficients 1/3! .. 1/19!, alternating, Horner form.
        let poly = r * (1.0
            + r2 * (-1.666_666_666_666_666_6e-1
                + r2 * (8.333_333_333_333_333e-3
                    + r2 * (-1.984_126_984_126_984_1e-4
                        + r2 * (2.755_731_922_398_589_4e-6
                            + r2 * (-2.505_210_838_544_172e-8
                                + r2 * (1.605_904_383_682_161_3e-10
                                    + r2 * (-7.647_163_731_819_816e-13
                                        + r2 * 2.811_457_254_345_521e-15))))))));
        let half = k * 0.5;
        let sign = 1.0 - 4.0 * (half - half.floor());
        poly * sign
    }

    #[inline]
    pub fn fast_cos(x: f64) -> f64 {
        fast_sin(x + std::f64::consts::FRAC_PI_2)
    }

    #[inline]
    pub fn fsin<S: Scalar>(x: S) -> S {
        S::from_f64(fast_sin(x.as_f64()))
    }

    #[inline]
    pub fn fcos<S: Scalar>(x: S) -> S {
        S::from_f64(fast_cos(x.as_f64()))
    }

    /// Below this many multiply-adds a kernel stays single-threaded.
    const PAR_WORK: usize = 1 << 18;

    /// `[m,k] x [k,n]`, row-parallel i-k-j loop.
    pub fn matmul_nn<S: Scalar>(a: &[S], b: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
        let mut out = vec![S::zero(); m * n];
        let row = |orow: &mut [S], arow: &[S]| {
            for (kk, &av) in arow.iter().enumerate() {
                let brow = &b[kk * n..(kk + 1) * n];
                for j in 0..n {
                    orow[j] = orow[j] + av * brow[j];
                }
            }
        };
        if m * k * n >= PAR_WORK && m > 1 {
            out.par_chunks_mut(n).zip(a.par_chunks(k)).for_each(|(o, ar)| row(o, ar));
        } else {
            for (o, ar) in out.chunks_mut(n).zip(a.chunks(k)) {
                row(o, ar);
            }
        }
        out
    }

    /// `g [m,n] x b^T` where `b` is `[k,n]`: returns `[m,k]` of row dots.
    pub fn matmul_nt<S: Scalar>(g: &[S], b: &[S], m: usize, n: usize, k: usize) -> Vec<S> {
        let mut out = vec![S::zero(); m * k];
        let row = |orow: &mut [S], grow: &[S]| {
            for (l, ov) in orow.iter_mut().enumerate() {
                *ov = dot(grow, &b[l * n..(l + 1) * n]);
            }
        };
        if m * k * n >= PAR_WORK && m > 1 {
            out.par_chunks_mut(k).zip(g.par_chunks(n)).for_each(|(o, gr)| row(o, gr));
        } else {
            for (o, gr) in out.chunks_mut(k).zip(g.chunks(n)) {
                row(o, gr);
            }
        }
        out
    }

    /// `a^T [k,m] x g [m,n]`: returns `[k,n]`, parallel over output rows.
    pub fn matmul_tn<S: Scalar>(a: &[S], g: &[S], m: usize, k: usize, n: usize) -> Vec<S> {
        let mut out = vec![S::zero(); k * n];
        let row = |l: usize, orow: &mut [S]| {
            for i in 0..m {
                let av = a[i * k + l];
                let grow = &g[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] = orow[j] + av * grow[j];
                }
            }
        };
        if m * k * n >= PAR_WORK && k > 1 {
            out.par_chunks_mut(n).enumerate().for_each(|(l, o)| row(l, o));
        } else {
            for (l, o) in out.chunks_mut(n).enumerate() {
                row(l, o);
            }
        }
        out
    }

    /// Fixed-order 8-lane dot product; deterministic and SIMD-friendly.
    #[inline]
    pub fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
        let mut acc = [S::zero(); 8];
        let chunks = a.len() / 8;
        for c in 0..chunks {
            let ao = &a[c * 8..c * 8 + 8];
            let bo = &b[c * 8..c * 8 + 8];
            for l in 0..8 {
                acc[l] = acc[l] + ao[l] * bo[l];
            }
        }
        let mut s = ((acc[0] + acc[4]) + (acc[2] + acc[6])) + ((acc[1] + acc[5]) + (acc[3] + acc[7]));
        for i in chunks * 8..a.len() {
            s = s + a[i] * b[i];
        }
        s
    }

    pub fn add_assign<S: Scalar>(dst: &mut [S], src: &[S]) {
        for (d, s) in dst.iter_mut().zip(src) {
            *d = *d + *s;
        }
    }

    /// `dst[i] += f(a[i])`, single pass.
    pub fn accum1<S: Scalar>(dst: &mut [S], a: &[S], f: impl Fn(S) -> S) {
        for (d, &x) in dst.iter_mut().zip(a) {
            *d = *d + f(x);
        }
    }

    /// `dst[i] += f(a[i], b[i])`, single pass.
    pub fn accum2<S: Scalar>(dst: &mut [S], a: &[S], b: &[S], f: impl Fn(S, S) -> S) {
        for ((d, &x), &y) in dst.iter_mut().zip(a).zip(b) {
            *d = *d + f(x, y);
        }
    }

    pub fn unary_map<S: Scalar>(x: &[S], f: impl Fn(S) -> S + Sync) -> Vec<S> {
        if x.len() >= PAR_WORK / 4 {
            x.par_iter().map(|&v| f(v)).collect()
        } else {
            x.iter().map(|&v| f(v)).collect()
        }
    }

    pub fn binary_map<S: Scalar>(a: &[S], b: &[S], f: impl Fn(S, S) -> S + Sync) -> Vec<S> {
        debug_assert_eq!(a.len(), b.len());
        if a.len() >= PAR_WORK / 4 {
            a.par_iter().zip(b.par_iter()).map(|(&x, &y)| f(x, y)).collect()
        } else {
            a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
        }
    }

    /// Apply `f(row, out_row)` over the rows of a `[m,n]` matrix.
    pub fn map_rows<S: Scalar>(x: &[S], n: usize, f: impl Fn(&[S], &mut [S]) + Sync) -> Vec<S> {
        let mut out = vec![S::zero(); x.len()];
        if x.len() >= PAR_WORK / 4 {
            out.par_chunks_mut(n).zip(x.par_chunks(n)).for_each(|(o, r)| f(r, o));
        } else {
            for (o, r) in out.chunks_mut(n).zip(x.chunks(n)) {
                f(r, o);
            }
        }
        out
    }

    /// Numerically stable softmax of one row (max subtraction).
    pub fn softmax_row<S: Scalar>(row: &[S], out: &mut [S]) {
        let mut mx = row[0];
        for &v in &row[1..] {
            if v > mx {
                mx = v;
            }
        }
        let mut sum = S::zero();
        for (o, &v) in out.iter_mut().zip(row) {
            let e = (v - mx).exp();
            *o = e;
            sum = sum + e;
        }
        for o in out.iter_mut() {
            *o = *o / sum;
        }
    }
}
