//! Recorded-computation reverse-mode gradient engine.
//!
//! Ops are recorded in execution order onto a [`Tape`]; [`Tape::backward`]
//! sweeps the records in reverse, accumulating gradients into every
//! [`Parameter`] reachable from the loss. The tape is consumed by the sweep.
//!
//! Covers exactly the operations the models need: 2D and Hough-domain 1D
//! convolutions, ReLU, sigmoid, elementwise multiply, channel concatenation,
//! HT/IHT, L2 and BCE losses, and a plain sum.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::hough::VoteMask;
use crate::kernels::{self, Conv1dMode};
use crate::tensor::{Parameter, Tensor};

/// Handle to a value recorded on a tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vid(usize);

enum Op {
    Constant,
    Param {
        slot: usize,
    },
    Relu {
        x: Vid,
    },
    Sigmoid {
        x: Vid,
    },
    Mul {
        a: Vid,
        b: Vid,
    },
    ConcatChannels {
        a: Vid,
        b: Vid,
        ca: usize,
        cb: usize,
    },
    Conv2d {
        input: Vid,
        weight: Vid,
        bias: Option<Vid>,
    },
    Conv1dRho {
        input: Vid,
        weight: Vid,
        bias: Option<Vid>,
        mode: Conv1dMode,
    },
    Ht {
        input: Vid,
        mask: Arc<VoteMask>,
    },
    Iht {
        input: Vid,
        mask: Arc<VoteMask>,
    },
    L2Loss {
        pred: Vid,
        target: Vid,
    },
    BceLoss {
        pred: Vid,
        target: Vid,
    },
    Sum {
        x: Vid,
    },
}

struct Node {
    op: Op,
    out: Tensor,
}

/// Execution-order op recorder.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    fn push(&mut self, op: Op, out: Tensor) -> Vid {
        debug_assert!(
            out.is_finite(),
            "non-finite values produced by a forward op"
        );
        self.nodes.push(Node { op, out });
        Vid(self.nodes.len() - 1)
    }

    fn tensor(&self, v: Vid) -> &Tensor {
        &self.nodes[v.0].out
    }

    /// Forward value held at `v`.
    pub fn value(&self, v: Vid) -> &Tensor {
        self.tensor(v)
    }

    fn check(&self, v: Vid) -> Result<()> {
        if self.consumed {
            return Err(Error::Usage("tape already consumed by backward".into()));
        }
        if v.0 >= self.nodes.len() {
            return Err(Error::Usage(format!(
                "value id {} not produced by this tape",
                v.0
            )));
        }
        Ok(())
    }

    /// Records an input that needs no gradient.
    pub fn constant(&mut self, t: Tensor) -> Vid {
        self.push(Op::Constant, t)
    }

    /// Records the current value of `params[slot]`; gradients accumulate
    /// back into that slot on backward.
    pub fn param(&mut self, slot: usize, p: &Parameter) -> Vid {
        let mut t = p.value.clone();
        t.grad = None;
        self.push(Op::Param { slot }, t)
    }

    pub fn relu(&mut self, x: Vid) -> Result<Vid> {
        self.check(x)?;
        let xt = self.tensor(x);
        let mut out = Tensor::zeros(xt.shape());
        kernels::relu(xt.data(), out.data_mut());
        Ok(self.push(Op::Relu { x }, out))
    }

    pub fn sigmoid(&mut self, x: Vid) -> Result<Vid> {
        self.check(x)?;
        let xt = self.tensor(x);
        let mut out = Tensor::zeros(xt.shape());
        kernels::sigmoid(xt.data(), out.data_mut());
        Ok(self.push(Op::Sigmoid { x }, out))
    }

    pub fn mul(&mut self, a: Vid, b: Vid) -> Result<Vid> {
        self.check(a)?;
        self.check(b)?;
        let (at, bt) = (self.tensor(a), self.tensor(b));
        if at.shape() != bt.shape() {
            return Err(Error::Config(format!(
                "mul shape mismatch: {:?} vs {:?}",
                at.shape(),
                bt.shape()
            )));
        }
        let mut out = Tensor::zeros(at.shape());
        kernels::mul(at.data(), bt.data(), out.data_mut());
        Ok(self.push(Op::Mul { a, b }, out))
    }

    /// Concatenates two `[H, W, C]` tensors along the channel axis, `a` first.
    pub fn concat_channels(&mut self, a: Vid, b: Vid) -> Result<Vid> {
        self.check(a)?;
        self.check(b)?;
        let (at, bt) = (self.tensor(a), self.tensor(b));
        if at.rank() != 3 || bt.rank() != 3 || at.shape()[..2] != bt.shape()[..2] {
            return Err(Error::Config(format!(
                "concat_channels spatial mismatch: {:?} vs {:?}",
                at.shape(),
                bt.shape()
            )));
        }
        let (ca, cb) = (at.shape()[2], bt.shape()[2]);
        let mut out = Tensor::zeros(&[at.shape()[0], at.shape()[1], ca + cb]);
        kernels::concat_channels(at.data(), ca, bt.data(), cb, out.data_mut());
        Ok(self.push(Op::ConcatChannels { a, b, ca, cb }, out))
    }

    /// Same-padded 2D cross-correlation: input `[H, W, Cin]`, weight
    /// `[kh, kw, Cin, Cout]`, optional bias `[Cout]`.
    pub fn conv2d(&mut self, input: Vid, weight: Vid, bias: Option<Vid>) -> Result<Vid> {
        self.check(input)?;
        self.check(weight)?;
        if let Some(b) = bias {
            self.check(b)?;
        }
        let it = self.tensor(input);
        let wt = self.tensor(weight);
        if it.rank() != 3 || wt.rank() != 4 {
            return Err(Error::Config(format!(
                "conv2d expects [H,W,Cin] input and [kh,kw,Cin,Cout] kernel, got {:?} and {:?}",
                it.shape(),
                wt.shape()
            )));
        }
        let (h, w, cin) = (it.shape()[0], it.shape()[1], it.shape()[2]);
        let (kh, kw, kcin, cout) = (wt.shape()[0], wt.shape()[1], wt.shape()[2], wt.shape()[3]);
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::Config(format!("conv2d kernel {kh}x{kw} must be odd")));
        }
        if kcin != cin {
            return Err(Error::Config(format!(
                "conv2d kernel expects {kcin} input channels, featuremap has {cin}"
            )));
        }
        if let Some(b) = bias {
            let bt = self.tensor(b);
            if bt.shape() != [cout] {
                return Err(Error::Config(format!(
                    "conv2d bias shape {:?}, want [{cout}]",
                    bt.shape()
                )));
            }
        }
        let mut out = Tensor::zeros(&[h, w, cout]);
        kernels::conv2d(
            it.data(),
            h,
            w,
            cin,
            wt.data(),
            kh,
            kw,
            cout,
            bias.map(|b| self.tensor(b).data()),
            out.data_mut(),
        );
        Ok(self.push(Op::Conv2d { input, weight, bias }, out))
    }

    /// 1D convolution along ρ of a `[Nρ, Nθ, C]` map. Channelwise weight is
    /// `[k, C]`, dense weight `[k, Cin, Cout]`; optional bias `[Cout]`.
    pub fn conv1d_rho(
        &mut self,
        input: Vid,
        weight: Vid,
        bias: Option<Vid>,
        mode: Conv1dMode,
    ) -> Result<Vid> {
        self.check(input)?;
        self.check(weight)?;
        if let Some(b) = bias {
            self.check(b)?;
        }
        let it = self.tensor(input);
        let wt = self.tensor(weight);
        if it.rank() != 3 {
            return Err(Error::Config(format!(
                "conv1d_rho expects [Nρ,Nθ,C] input, got {:?}",
                it.shape()
            )));
        }
        let (n_rho, n_theta, cin) = (it.shape()[0], it.shape()[1], it.shape()[2]);
        let (k, cout) = match mode {
            Conv1dMode::Channelwise => {
                if wt.rank() != 2 || wt.shape()[1] != cin {
                    return Err(Error::Config(format!(
                        "channelwise conv1d weight {:?}, want [k, {cin}]",
                        wt.shape()
                    )));
                }
                (wt.shape()[0], cin)
            }
            Conv1dMode::Dense => {
                if wt.rank() != 3 || wt.shape()[1] != cin {
                    return Err(Error::Config(format!(
                        "dense conv1d weight {:?}, want [k, {cin}, Cout]",
                        wt.shape()
                    )));
                }
                (wt.shape()[0], wt.shape()[2])
            }
        };
        if k % 2 == 0 {
            return Err(Error::Config(format!("conv1d support {k} must be odd")));
        }
        if let Some(b) = bias {
            let bt = self.tensor(b);
            if bt.shape() != [cout] {
                return Err(Error::Config(format!(
                    "conv1d bias shape {:?}, want [{cout}]",
                    bt.shape()
                )));
            }
        }
        let mut out = Tensor::zeros(&[n_rho, n_theta, cout]);
        kernels::conv1d_rho(
            it.data(),
            n_rho,
            n_theta,
            cin,
            wt.data(),
            k,
            cout,
            mode,
            bias.map(|b| self.tensor(b).data()),
            out.data_mut(),
        );
        Ok(self.push(
            Op::Conv1dRho {
                input,
                weight,
                bias,
                mode,
            },
            out,
        ))
    }

    pub fn ht(&mut self, input: Vid, mask: &Arc<VoteMask>) -> Result<Vid> {
        self.check(input)?;
        let out = crate::hough::ht_forward(self.tensor(input), mask)?;
        Ok(self.push(
            Op::Ht {
                input,
                mask: Arc::clone(mask),
            },
            out,
        ))
    }

    pub fn iht(&mut self, input: Vid, mask: &Arc<VoteMask>) -> Result<Vid> {
        self.check(input)?;
        let out = crate::hough::iht_forward(self.tensor(input), mask)?;
        Ok(self.push(
            Op::Iht {
                input,
                mask: Arc::clone(mask),
            },
            out,
        ))
    }

    pub fn l2_loss(&mut self, pred: Vid, target: Vid) -> Result<Vid> {
        self.check(pred)?;
        self.check(target)?;
        let (pt, tt) = (self.tensor(pred), self.tensor(target));
        if pt.shape() != tt.shape() {
            return Err(Error::Config(format!(
                "l2_loss shape mismatch: {:?} vs {:?}",
                pt.shape(),
                tt.shape()
            )));
        }
        let v = kernels::l2_loss(pt.data(), tt.data());
        Ok(self.push(Op::L2Loss { pred, target }, Tensor::scalar(v)))
    }

    pub fn bce_loss(&mut self, pred: Vid, target: Vid) -> Result<Vid> {
        self.check(pred)?;
        self.check(target)?;
        let (pt, tt) = (self.tensor(pred), self.tensor(target));
        if pt.shape() != tt.shape() {
            return Err(Error::Config(format!(
                "bce_loss shape mismatch: {:?} vs {:?}",
                pt.shape(),
                tt.shape()
            )));
        }
        let v = kernels::bce_loss(pt.data(), tt.data());
        Ok(self.push(Op::BceLoss { pred, target }, Tensor::scalar(v)))
    }

    pub fn sum(&mut self, x: Vid) -> Result<Vid> {
        self.check(x)?;
        let v = kernels::sum(self.tensor(x).data());
        Ok(self.push(Op::Sum { x }, Tensor::scalar(v)))
    }

    /// Reverse sweep from a scalar loss. Gradients of every reachable
    /// parameter accumulate into `params`; the tape is cleared afterwards.
    pub fn backward(&mut self, loss: Vid, params: &mut [Parameter]) -> Result<()> {
        self.check(loss)?;
        if self.tensor(loss).numel() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.tensor(loss).shape()
            )));
        }
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f32>>> = vec![None; n];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..n).rev() {
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            // Split so the node is readable while upstream grads mutate.
            let (done, rest) = self.nodes.split_at(i);
            let node = &rest[0];
            let val = |v: Vid| -> &Tensor { &done[v.0].out };
            let mut add = |grads: &mut Vec<Option<Vec<f32>>>, v: Vid, delta: Vec<f32>| {
                match &mut grads[v.0] {
                    Some(buf) => {
                        for (b, d) in buf.iter_mut().zip(&delta) {
                            *b += d;
                        }
                    }
                    slot @ None => *slot = Some(delta),
                }
            };
            match &node.op {
                Op::Constant => {}
                Op::Param { slot } => {
                    if *slot >= params.len() {
                        return Err(Error::Usage(format!(
                            "parameter slot {slot} outside the {}-parameter model",
                            params.len()
                        )));
                    }
                    params[*slot].accumulate_grad(&g);
                }
                Op::Relu { x } => {
                    let xt = val(*x);
                    let gx = xt
                        .data()
                        .iter()
                        .zip(&g)
                        .map(|(&v, &gg)| if v > 0.0 { gg } else { 0.0 })
                        .collect();
                    add(&mut grads, *x, gx);
                }
                Op::Sigmoid { x } => {
                    let s = &node.out;
                    let gx = s
                        .data()
                        .iter()
                        .zip(&g)
                        .map(|(&sv, &gg)| gg * sv * (1.0 - sv))
                        .collect();
                    add(&mut grads, *x, gx);
                }
                Op::Mul { a, b } => {
                    let (at, bt) = (val(*a), val(*b));
                    let ga = bt.data().iter().zip(&g).map(|(&bv, &gg)| bv * gg).collect();
                    let gb = at.data().iter().zip(&g).map(|(&av, &gg)| av * gg).collect();
                    add(&mut grads, *a, ga);
                    add(&mut grads, *b, gb);
                }
                Op::ConcatChannels { a, b, ca, cb } => {
                    let (ca, cb) = (*ca, *cb);
                    let pixels = g.len() / (ca + cb);
                    let mut ga = vec![0.0f32; pixels * ca];
                    let mut gb = vec![0.0f32; pixels * cb];
                    for (p, gpx) in g.chunks_exact(ca + cb).enumerate() {
                        ga[p * ca..(p + 1) * ca].copy_from_slice(&gpx[..ca]);
                        gb[p * cb..(p + 1) * cb].copy_from_slice(&gpx[ca..]);
                    }
                    add(&mut grads, *a, ga);
                    add(&mut grads, *b, gb);
                }
                Op::Conv2d { input, weight, bias } => {
                    let it = val(*input);
                    let wt = val(*weight);
                    let (h, w, cin) = (it.shape()[0], it.shape()[1], it.shape()[2]);
                    let (kh, kw, cout) = (wt.shape()[0], wt.shape()[1], wt.shape()[3]);
                    let (oy, ox) = (kh / 2, kw / 2);
                    let mut gi = vec![0.0f32; it.numel()];
                    let mut gw = vec![0.0f32; wt.numel()];
                    for y in 0..h {
                        for x in 0..w {
                            let go = &g[(y * w + x) * cout..(y * w + x + 1) * cout];
                            for ky in 0..kh {
                                let iy = y + ky;
                                if iy < oy || iy - oy >= h {
                                    continue;
                                }
                                let iy = iy - oy;
                                for kx in 0..kw {
                                    let ix = x + kx;
                                    if ix < ox || ix - ox >= w {
                                        continue;
                                    }
                                    let ix = ix - ox;
                                    let i_base = (iy * w + ix) * cin;
                                    let k_base = (ky * kw + kx) * cin * cout;
                                    for ci in 0..cin {
                                        let iv = it.data()[i_base + ci];
                                        let ks = k_base + ci * cout;
                                        let mut acc = 0.0f32;
                                        for co in 0..cout {
                                            let gg = go[co];
                                            acc += wt.data()[ks + co] * gg;
                                            gw[ks + co] += iv * gg;
                                        }
                                        gi[i_base + ci] += acc;
                                    }
                                }
                            }
                        }
                    }
                    if let Some(bv) = bias {
                        let mut gb = vec![0.0f32; cout];
                        for gpx in g.chunks_exact(cout) {
                            for (b, &gg) in gb.iter_mut().zip(gpx) {
                                *b += gg;
                            }
                        }
                        add(&mut grads, *bv, gb);
                    }
                    add(&mut grads, *input, gi);
                    add(&mut grads, *weight, gw);
                }
                Op::Conv1dRho {
                    input,
                    weight,
                    bias,
                    mode,
                } => {
                    let it = val(*input);
                    let wt = val(*weight);
                    let (n_rho, n_theta, cin) = (it.shape()[0], it.shape()[1], it.shape()[2]);
                    let mut gi = vec![0.0f32; it.numel()];
                    let mut gw = vec![0.0f32; wt.numel()];
                    if let Some(bv) = bias {
                        let cout = node.out.shape()[2];
                        let mut gb = vec![0.0f32; cout];
                        for gpx in g.chunks_exact(cout) {
                            for (b, &gg) in gb.iter_mut().zip(gpx) {
                                *b += gg;
                            }
                        }
                        add(&mut grads, *bv, gb);
                    }
                    match mode {
                        Conv1dMode::Channelwise => {
                            let k = wt.shape()[0];
                            let off = k / 2;
                            for r in 0..n_rho {
                                let go = &g[r * n_theta * cin..(r + 1) * n_theta * cin];
                                for tap in 0..k {
                                    let ir = r + tap;
                                    if ir < off || ir - off >= n_rho {
                                        continue;
                                    }
                                    let ir = ir - off;
                                    let iv = &it.data()
                                        [ir * n_theta * cin..(ir + 1) * n_theta * cin];
                                    let gin =
                                        &mut gi[ir * n_theta * cin..(ir + 1) * n_theta * cin];
                                    let taps = &wt.data()[tap * cin..(tap + 1) * cin];
                                    let gtaps = &mut gw[tap * cin..(tap + 1) * cin];
                                    for ((gpx, ipx), gipx) in go
                                        .chunks_exact(cin)
                                        .zip(iv.chunks_exact(cin))
                                        .zip(gin.chunks_exact_mut(cin))
                                    {
                                        for c in 0..cin {
                                            gipx[c] += taps[c] * gpx[c];
                                            gtaps[c] += ipx[c] * gpx[c];
                                        }
                                    }
                                }
                            }
                        }
                        Conv1dMode::Dense => {
                            let (k, cout) = (wt.shape()[0], wt.shape()[2]);
                            let off = k / 2;
                            for r in 0..n_rho {
                                for tap in 0..k {
                                    let ir = r + tap;
                                    if ir < off || ir - off >= n_rho {
                                        continue;
                                    }
                                    let ir = ir - off;
                                    let k_base = tap * cin * cout;
                                    for t in 0..n_theta {
                                        let go = &g[(r * n_theta + t) * cout
                                            ..(r * n_theta + t + 1) * cout];
                                        let i_base = (ir * n_theta + t) * cin;
                                        for ci in 0..cin {
                                            let iv = it.data()[i_base + ci];
                                            let ks = k_base + ci * cout;
                                            let mut acc = 0.0f32;
                                            for co in 0..cout {
                                                acc += wt.data()[ks + co] * go[co];
                                                gw[ks + co] += iv * go[co];
                                            }
                                            gi[i_base + ci] += acc;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    add(&mut grads, *input, gi);
                    add(&mut grads, *weight, gw);
                }
                Op::Ht { input, mask } => {
                    let c = node.out.shape()[2];
                    let grid = mask.grid();
                    let mut gi = vec![0.0f32; grid.width * grid.height * c];
                    mask.backproject(&g, c, 1.0 / grid.width as f32, &mut gi);
                    add(&mut grads, *input, gi);
                }
                Op::Iht { input, mask } => {
                    let c = node.out.shape()[2];
                    let grid = mask.grid();
                    let mut gi = vec![0.0f32; grid.n_rho * grid.n_theta * c];
                    mask.project(&g, c, 1.0 / grid.n_theta as f32, &mut gi);
                    add(&mut grads, *input, gi);
                }
                Op::L2Loss { pred, target } => {
                    let (pt, tt) = (val(*pred), val(*target));
                    let n = pt.numel() as f32;
                    let gl = g[0];
                    let gp: Vec<f32> = pt
                        .data()
                        .iter()
                        .zip(tt.data())
                        .map(|(&p, &t)| gl * 2.0 * (p - t) / n)
                        .collect();
                    let gt: Vec<f32> = gp.iter().map(|&v| -v).collect();
                    add(&mut grads, *pred, gp);
                    add(&mut grads, *target, gt);
                }
                Op::BceLoss { pred, target } => {
                    let (pt, tt) = (val(*pred), val(*target));
                    let n = pt.numel() as f32;
                    let gl = g[0];
                    let eps = kernels::BCE_EPS as f32;
                    // Zero slope where the clamp is active.
                    let gp: Vec<f32> = pt
                        .data()
                        .iter()
                        .zip(tt.data())
                        .map(|(&p, &t)| {
                            if p < eps || p > 1.0 - eps {
                                0.0
                            } else {
                                gl * (-t / p + (1.0 - t) / (1.0 - p)) / n
                            }
                        })
                        .collect();
                    add(&mut grads, *pred, gp);
                }
                Op::Sum { x } => {
                    let xt = val(*x);
                    add(&mut grads, *x, vec![g[0]; xt.numel()]);
                }
            }
        }
        self.nodes.clear();
        self.consumed = true;
        Ok(())
    }
}
