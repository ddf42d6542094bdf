//! Layer-stack networks: every differentiable model (MLR, SVC, MLP, CNN) is a
//! `Network` with a flat parameter buffer and a loss head.

use rand::Rng;

use super::linalg::{gemm, Mat};
use super::loss::LossKind;
use super::params::ParamSpec;

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Layer {
    Dense {
        inputs: usize,
        outputs: usize,
        offset: usize,
    },
    /// Valid, stride-1 convolution over `in_ch x in_h x in_w` inputs.
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        in_h: usize,
        in_w: usize,
        offset: usize,
    },
    /// 2x2 max pooling, stride 2.
    MaxPool {
        channels: usize,
        in_h: usize,
        in_w: usize,
    },
    Relu {
        size: usize,
    },
}

impl Layer {
    fn in_size(&self) -> usize {
        match *self {
            Layer::Dense { inputs, .. } => inputs,
            Layer::Conv { in_ch, in_h, in_w, .. } => in_ch * in_h * in_w,
            Layer::MaxPool { channels, in_h, in_w } => channels * in_h * in_w,
            Layer::Relu { size } => size,
        }
    }

    fn out_size(&self) -> usize {
        match *self {
            Layer::Dense { outputs, .. } => outputs,
            Layer::Conv {
                out_ch,
                kernel,
                in_h,
                in_w,
                ..
            } => out_ch * (in_h - kernel + 1) * (in_w - kernel + 1),
            Layer::MaxPool { channels, in_h, in_w } => channels * (in_h / 2) * (in_w / 2),
            Layer::Relu { size } => size,
        }
    }

    pub(crate) fn describe(&self) -> String {
        match *self {
            Layer::Dense { outputs, .. } => format!("fc {outputs}"),
            Layer::Conv { out_ch, kernel, .. } => format!("conv {out_ch}@{kernel}x{kernel}"),
            Layer::MaxPool { .. } => "pool".to_string(),
            Layer::Relu { .. } => "relu".to_string(),
        }
    }
}

/// Convolution stack description: `(out_channels, kernel)` per conv block
/// (each followed by ReLU and 2x2 max pooling), then hidden dense widths.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnArch {
    pub side: usize,
    pub convs: Vec<(usize, usize)>,
    pub dense: Vec<usize>,
}

impl CnnArch {
    /// Two 5x5 conv blocks with 6 and 16 filters, then 120 and 84 units.
    pub fn lenet(side: usize) -> Self {
        Self {
            side,
            convs: vec![(6, 5), (16, 5)],
            dense: vec![120, 84],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub(crate) layers: Vec<Layer>,
    pub(crate) layout: Vec<ParamSpec>,
    pub(crate) params: Vec<f64>,
    pub(crate) loss: LossKind,
    /// `(offset, len, fan_in)` of every weight tensor; biases are excluded.
    weights: Vec<(usize, usize, usize)>,
    input_dim: usize,
    classes: usize,
}

struct Builder {
    layers: Vec<Layer>,
    layout: Vec<ParamSpec>,
    weights: Vec<(usize, usize, usize)>,
    offset: usize,
}

impl Builder {
    fn new() -> Self {
        Self {
            layers: Vec::new(),
            layout: Vec::new(),
            weights: Vec::new(),
            offset: 0,
        }
    }

    fn dense(&mut self, name: &str, inputs: usize, outputs: usize) {
        self.layers.push(Layer::Dense {
            inputs,
            outputs,
            offset: self.offset,
        });
        self.weights.push((self.offset, inputs * outputs, inputs));
        self.layout
            .push(ParamSpec::new(format!("{name}.weight"), &[outputs, inputs]));
        self.layout.push(ParamSpec::new(format!("{name}.bias"), &[outputs]));
        self.offset += inputs * outputs + outputs;
    }

    fn conv(&mut self, name: &str, in_ch: usize, out_ch: usize, kernel: usize, side: (usize, usize)) {
        self.layers.push(Layer::Conv {
            in_ch,
            out_ch,
            kernel,
            in_h: side.0,
            in_w: side.1,
            offset: self.offset,
        });
        let fan_in = in_ch * kernel * kernel;
        self.weights.push((self.offset, out_ch * fan_in, fan_in));
        self.layout.push(ParamSpec::new(
            format!("{name}.weight"),
            &[out_ch, in_ch, kernel, kernel],
        ));
        self.layout.push(ParamSpec::new(format!("{name}.bias"), &[out_ch]));
        self.offset += out_ch * fan_in + out_ch;
    }

    fn finish(self, input_dim: usize, classes: usize, loss: LossKind) -> Network {
        Network {
            params: vec![0.0; self.offset],
            layers: self.layers,
            layout: self.layout,
            loss,
            weights: self.weights,
            input_dim,
            classes,
        }
    }
}

/// Per-batch activations kept for the backward pass.
struct Trace {
    acts: Vec<Vec<f64>>,
    argmax: Vec<Vec<u32>>,
}

impl Network {
    /// Single affine layer (multinomial logistic regression or linear SVC).
    pub fn linear(input_dim: usize, classes: usize, loss: LossKind) -> Self {
        let mut b = Builder::new();
        b.dense("linear", input_dim, classes);
        b.finish(input_dim, classes, loss)
    }

    /// Fully connected ReLU network.
    pub fn mlp(input_dim: usize, hidden: &[usize], classes: usize) -> Self {
        let mut b = Builder::new();
        let mut width = input_dim;
        for (i, &h) in hidden.iter().enumerate() {
            b.dense(&format!("fc{}", i + 1), width, h);
            b.layers.push(Layer::Relu { size: h });
            width = h;
        }
        b.dense(&format!("fc{}", hidden.len() + 1), width, classes);
        b.finish(input_dim, classes, LossKind::CrossEntropy)
    }

    pub fn cnn(arch: &CnnArch, classes: usize) -> Self {
        let mut b = Builder::new();
        let (mut ch, mut h, mut w) = (1, arch.side, arch.side);
        for (i, &(out_ch, kernel)) in arch.convs.iter().enumerate() {
            b.conv(&format!("conv{}", i + 1), ch, out_ch, kernel, (h, w));
            h = h + 1 - kernel;
            w = w + 1 - kernel;
            ch = out_ch;
            b.layers.push(Layer::Relu { size: ch * h * w });
            b.layers.push(Layer::MaxPool {
                channels: ch,
                in_h: h,
                in_w: w,
            });
            h /= 2;
            w /= 2;
        }
        let mut width = ch * h * w;
        for (i, &units) in arch.dense.iter().enumerate() {
            b.dense(&format!("fc{}", i + 1), width, units);
            b.layers.push(Layer::Relu { size: units });
            width = units;
        }
        b.dense(&format!("fc{}", arch.dense.len() + 1), width, classes);
        b.finish(arch.side * arch.side, classes, LossKind::CrossEntropy)
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.classes
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn describe(&self) -> Vec<String> {
        self.layers.iter().map(Layer::describe).collect()
    }

    /// He-style uniform draw `U(-sqrt(6/fan_in), sqrt(6/fan_in))` for every
    /// weight, zeros for biases.
    pub fn init_he_uniform(&mut self, rng: &mut impl Rng) {
        self.params.iter_mut().for_each(|v| *v = 0.0);
        for &(offset, len, fan_in) in &self.weights {
            let bound = (6.0 / fan_in as f64).sqrt();
            for v in &mut self.params[offset..offset + len] {
                *v = rng.gen_range(-bound..bound);
            }
        }
    }

    /// Half the squared norm of the weights (biases excluded).
    pub fn weight_sq_norm(&self) -> f64 {
        self.weights
            .iter()
            .flat_map(|&(o, l, _)| &self.params[o..o + l])
            .map(|v| v * v)
            .sum::<f64>()
            / 2.0
    }

    /// Raw output scores, row-major `batch x classes`.
    pub fn scores(&self, x: &[f64], batch: usize) -> Vec<f64> {
        self.run(x, batch, None)
    }

    /// Mean loss over the batch plus `l2 * weight_sq_norm()`. `grad` is
    /// overwritten with the full gradient.
    pub fn loss_and_grad(&self, x: &[f64], labels: &[usize], l2: f64, grad: &mut [f64]) -> f64 {
        let batch = labels.len();
        let mut trace = Trace {
            acts: Vec::with_capacity(self.layers.len() + 1),
            argmax: vec![Vec::new(); self.layers.len()],
        };
        let scores = self.run(x, batch, Some(&mut trace));
        let mut dout = vec![0.0; scores.len()];
        let loss = self.loss.mean_with_grad(&scores, labels, self.classes, &mut dout);
        grad.iter_mut().for_each(|g| *g = 0.0);
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let need_input_grad = i > 0;
            dout = self.backward(
                layer,
                &trace.acts[i],
                &trace.acts[i + 1],
                &trace.argmax[i],
                &dout,
                batch,
                grad,
                need_input_grad,
            );
        }
        if l2 > 0.0 {
            for &(o, l, _) in &self.weights {
                for (g, w) in grad[o..o + l].iter_mut().zip(&self.params[o..o + l]) {
                    *g += l2 * w;
                }
            }
            loss + l2 * self.weight_sq_norm()
        } else {
            loss
        }
    }

    /// Gradient of `sum_i scores[i, class]` with respect to the inputs.
    pub fn input_grad_of_score(&self, x: &[f64], batch: usize, class: usize) -> Vec<f64> {
        let mut trace = Trace {
            acts: Vec::with_capacity(self.layers.len() + 1),
            argmax: vec![Vec::new(); self.layers.len()],
        };
        self.run(x, batch, Some(&mut trace));
        let mut dout = vec![0.0; batch * self.classes];
        for row in dout.chunks_exact_mut(self.classes) {
            row[class] = 1.0;
        }
        let mut scratch = vec![0.0; self.params.len()];
        for (i, layer) in self.layers.iter().enumerate().rev() {
            dout = self.backward(
                layer,
                &trace.acts[i],
                &trace.acts[i + 1],
                &trace.argmax[i],
                &dout,
                batch,
                &mut scratch,
                true,
            );
        }
        dout
    }

    fn run(&self, x: &[f64], batch: usize, mut trace: Option<&mut Trace>) -> Vec<f64> {
        assert_eq!(x.len(), batch * self.input_dim, "input is not batch x input_dim");
        let mut cur = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut argmax = Vec::new();
            let next = self.forward(layer, &cur, batch, &mut argmax);
            if let Some(t) = trace.as_deref_mut() {
                t.acts.push(cur);
                t.argmax[i] = argmax;
            }
            cur = next;
        }
        if let Some(t) = trace {
            t.acts.push(cur.clone());
        }
        cur
    }

    fn forward(&self, layer: &Layer, x: &[f64], batch: usize, argmax: &mut Vec<u32>) -> Vec<f64> {
        let p = &self.params;
        match *layer {
            Layer::Dense {
                inputs,
                outputs,
                offset,
            } => {
                let w = &p[offset..offset + inputs * outputs];
                let bias = &p[offset + inputs * outputs..offset + inputs * outputs + outputs];
                let mut out = Vec::with_capacity(batch * outputs);
                for _ in 0..batch {
                    out.extend_from_slice(bias);
                }
                gemm(Mat::new(x, batch, inputs), Mat::t(w, outputs, inputs), 1.0, &mut out);
                out
            }
            Layer::Conv {
                in_ch,
                out_ch,
                kernel,
                in_h,
                in_w,
                offset,
            } => {
                let (oh, ow) = (in_h + 1 - kernel, in_w + 1 - kernel);
                let positions = oh * ow;
                let patch = in_ch * kernel * kernel;
                let w = &p[offset..offset + out_ch * patch];
                let bias = &p[offset + out_ch * patch..offset + out_ch * patch + out_ch];
                let mut out = vec![0.0; batch * out_ch * positions];
                let mut cols = vec![0.0; patch * positions];
                for (xs, os) in x
                    .chunks_exact(layer.in_size())
                    .zip(out.chunks_exact_mut(out_ch * positions))
                {
                    im2col(xs, in_ch, in_h, in_w, kernel, &mut cols);
                    for (o, chunk) in os.chunks_exact_mut(positions).enumerate() {
                        chunk.iter_mut().for_each(|v| *v = bias[o]);
                    }
                    gemm(Mat::new(w, out_ch, patch), Mat::new(&cols, patch, positions), 1.0, os);
                }
                out
            }
            Layer::MaxPool { channels, in_h, in_w } => {
                let (oh, ow) = (in_h / 2, in_w / 2);
                let in_size = channels * in_h * in_w;
                let mut out = Vec::with_capacity(batch * channels * oh * ow);
                argmax.reserve(batch * channels * oh * ow);
                for xs in x.chunks_exact(in_size) {
                    for c in 0..channels {
                        for i in 0..oh {
                            for j in 0..ow {
                                let mut best = c * in_h * in_w + 2 * i * in_w + 2 * j;
                                for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                                    let idx = c * in_h * in_w + (2 * i + di) * in_w + 2 * j + dj;
                                    if xs[idx] > xs[best] {
                                        best = idx;
                                    }
                                }
                                out.push(xs[best]);
                                argmax.push(best as u32);
                            }
                        }
                    }
                }
                out
            }
            Layer::Relu { .. } => x.iter().map(|&v| v.max(0.0)).collect(),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        layer: &Layer,
        input: &[f64],
        output: &[f64],
        argmax: &[u32],
        dout: &[f64],
        batch: usize,
        grad: &mut [f64],
        need_input_grad: bool,
    ) -> Vec<f64> {
        let p = &self.params;
        match *layer {
            Layer::Dense {
                inputs,
                outputs,
                offset,
            } => {
                let wlen = inputs * outputs;
                gemm(
                    Mat::t(dout, batch, outputs),
                    Mat::new(input, batch, inputs),
                    1.0,
                    &mut grad[offset..offset + wlen],
                );
                let gb = &mut grad[offset + wlen..offset + wlen + outputs];
                for row in dout.chunks_exact(outputs) {
                    for (g, d) in gb.iter_mut().zip(row) {
                        *g += d;
                    }
                }
                if !need_input_grad {
                    return Vec::new();
                }
                let mut din = vec![0.0; batch * inputs];
                gemm(
                    Mat::new(dout, batch, outputs),
                    Mat::new(&p[offset..offset + wlen], outputs, inputs),
                    0.0,
                    &mut din,
                );
                din
            }
            Layer::Conv {
                in_ch,
                out_ch,
                kernel,
                in_h,
                in_w,
                offset,
            } => {
                let (oh, ow) = (in_h + 1 - kernel, in_w + 1 - kernel);
                let positions = oh * ow;
                let patch = in_ch * kernel * kernel;
                let wlen = out_ch * patch;
                let in_size = layer.in_size();
                let mut cols = vec![0.0; patch * positions];
                let mut dcols = vec![0.0; patch * positions];
                let mut din = if need_input_grad {
                    vec![0.0; batch * in_size]
                } else {
                    Vec::new()
                };
                for (s, ds) in dout.chunks_exact(out_ch * positions).enumerate() {
                    im2col(
                        &input[s * in_size..(s + 1) * in_size],
                        in_ch,
                        in_h,
                        in_w,
                        kernel,
                        &mut cols,
                    );
                    gemm(
                        Mat::new(ds, out_ch, positions),
                        Mat::t(&cols, patch, positions),
                        1.0,
                        &mut grad[offset..offset + wlen],
                    );
                    for (o, chunk) in ds.chunks_exact(positions).enumerate() {
                        grad[offset + wlen + o] += chunk.iter().sum::<f64>();
                    }
                    if need_input_grad {
                        gemm(
                            Mat::t(&p[offset..offset + wlen], out_ch, patch),
                            Mat::new(ds, out_ch, positions),
                            0.0,
                            &mut dcols,
                        );
                        col2im_add(
                            &dcols,
                            in_ch,
                            in_h,
                            in_w,
                            kernel,
                            &mut din[s * in_size..(s + 1) * in_size],
                        );
                    }
                }
                din
            }
            Layer::MaxPool { channels, in_h, in_w } => {
                let in_size = channels * in_h * in_w;
                let out_size = layer.out_size();
                let mut din = vec![0.0; batch * in_size];
                for (s, (ds, idx)) in dout
                    .chunks_exact(out_size)
                    .zip(argmax.chunks_exact(out_size))
                    .enumerate()
                {
                    let base = s * in_size;
                    for (&d, &i) in ds.iter().zip(idx) {
                        din[base + i as usize] += d;
                    }
                }
                din
            }
            Layer::Relu { .. } => dout
                .iter()
                .zip(output)
                .map(|(&d, &o)| if o > 0.0 { d } else { 0.0 })
                .collect(),
        }
    }
}

fn im2col(x: &[f64], ch: usize, h: usize, w: usize, k: usize, cols: &mut [f64]) {
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let positions = oh * ow;
    for c in 0..ch {
        for ki in 0..k {
            for kj in 0..k {
                let row = &mut cols[((c * k + ki) * k + kj) * positions..][..positions];
                for i in 0..oh {
                    let src = &x[c * h * w + (i + ki) * w + kj..][..ow];
                    row[i * ow..(i + 1) * ow].copy_from_slice(src);
                }
            }
        }
    }
}

fn col2im_add(cols: &[f64], ch: usize, h: usize, w: usize, k: usize, dx: &mut [f64]) {
    let (oh, ow) = (h + 1 - k, w + 1 - k);
    let positions = oh * ow;
    for c in 0..ch {
        for ki in 0..k {
            for kj in 0..k {
                let row = &cols[((c * k + ki) * k + kj) * positions..][..positions];
                for i in 0..oh {
                    let dst = &mut dx[c * h * w + (i + ki) * w + kj..][..ow];
                    for (d, s) in dst.iter_mut().zip(&row[i * ow..(i + 1) * ow]) {
                        *d += s;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn random_inputs(n: usize, seed: u64) -> Vec<f64> {
        let mut r = rng::stream(seed, "test-inputs", &[]);
        (0..n).map(|_| r.gen_range(-1.0..1.0)).collect()
    }

    /// Central differences with h = 1e-4 against the analytic gradient.
    fn gradient_check(mut net: Network, batch: usize, l2: f64, seed: u64) {
        net.init_he_uniform(&mut rng::stream(seed, "init", &[]));
        // Nonzero biases so ReLU kinks are not sitting exactly at zero.
        let jitter = random_inputs(net.params.len(), seed + 1);
        for (p, j) in net.params.iter_mut().zip(&jitter) {
            *p += 0.05 * j;
        }
        let x = random_inputs(batch * net.input_dim, seed + 2);
        let labels: Vec<usize> = (0..batch).map(|i| i % net.classes).collect();
        let mut grad = vec![0.0; net.params.len()];
        net.loss_and_grad(&x, &labels, l2, &mut grad);

        let h = 1e-4;
        let mut worst: f64 = 0.0;
        let stride = (net.params.len() / 300).max(1);
        for i in (0..net.params.len()).step_by(stride) {
            let orig = net.params[i];
            net.params[i] = orig + h;
            let up = net.loss_and_grad(&x, &labels, l2, &mut vec![0.0; grad.len()]);
            net.params[i] = orig - h;
            let down = net.loss_and_grad(&x, &labels, l2, &mut vec![0.0; grad.len()]);
            net.params[i] = orig;
            let numeric = (up - down) / (2.0 * h);
            let rel = (numeric - grad[i]).abs() / (numeric.abs() + grad[i].abs()).max(1e-6);
            worst = worst.max(rel);
        }
        assert!(worst < 1e-3, "worst relative gradient error {worst}");
    }

    #[test]
    fn gradient_check_mlr() {
        gradient_check(Network::linear(12, 4, LossKind::CrossEntropy), 5, 1e-3, 1);
    }

    #[test]
    fn gradient_check_svc_smoothed() {
        gradient_check(Network::linear(12, 4, LossKind::Hinge { smoothing: 0.5 }), 6, 1e-3, 2);
    }

    #[test]
    fn gradient_check_mlp() {
        gradient_check(Network::mlp(10, &[8, 6], 3), 4, 0.0, 3);
    }

    #[test]
    fn gradient_check_cnn() {
        let arch = CnnArch {
            side: 12,
            convs: vec![(3, 3), (4, 2)],
            dense: vec![7],
        };
        gradient_check(Network::cnn(&arch, 3), 3, 1e-4, 4);
    }

    #[test]
    fn lenet_shapes() {
        let net = Network::cnn(&CnnArch::lenet(28), 10);
        let kept: Vec<String> = net.describe().into_iter().filter(|l| l != "relu").collect();
        assert_eq!(
            kept,
            ["conv 6@5x5", "pool", "conv 16@5x5", "pool", "fc 120", "fc 84", "fc 10"]
        );
        let fc1 = net.layout.iter().find(|s| s.name == "fc1.weight").unwrap();
        assert_eq!(fc1.shape, vec![120, 256]);
    }

    #[test]
    fn conv_matches_direct_sum() {
        let arch = CnnArch {
            side: 5,
            convs: vec![(2, 3)],
            dense: vec![],
        };
        let mut net = Network::cnn(&arch, 2);
        net.init_he_uniform(&mut rng::stream(9, "init", &[]));
        let x = random_inputs(25, 10);
        let Layer::Conv { offset, .. } = net.layers[0] else {
            panic!()
        };
        let out = net.forward(&net.layers[0], &x, 1, &mut Vec::new());
        for o in 0..2 {
            for i in 0..3 {
                for j in 0..3 {
                    let mut direct = net.params[offset + 2 * 9 + o];
                    for ki in 0..3 {
                        for kj in 0..3 {
                            direct += net.params[offset + o * 9 + ki * 3 + kj] * x[(i + ki) * 5 + j + kj];
                        }
                    }
                    assert!((out[o * 9 + i * 3 + j] - direct).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn input_gradient_matches_finite_difference() {
        let mut net = Network::mlp(6, &[5], 3);
        net.init_he_uniform(&mut rng::stream(5, "init", &[]));
        let x = random_inputs(6, 11);
        let g = net.input_grad_of_score(&x, 1, 2);
        for i in 0..6 {
            let mut up = x.clone();
            up[i] += 1e-5;
            let mut down = x.clone();
            down[i] -= 1e-5;
            let numeric = (net.scores(&up, 1)[2] - net.scores(&down, 1)[2]) / 2e-5;
            assert!((numeric - g[i]).abs() < 1e-6);
        }
    }
}
