use super::{DiffError, Real, Rng, Tensor};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Architecture description used to build a [`Network`].
#[derive(Debug, Clone, PartialEq)]
pub enum LayerSpec {
    Linear { inputs: usize, outputs: usize },
    Tanh,
    Relu,
    LayerNorm { dim: usize },
    /// `x + f(x)` where `f` is the inner stack; must preserve width.
    Residual(Vec<LayerSpec>),
}

#[derive(Debug, Clone, PartialEq)]
enum Layer {
    Linear {
        weight: usize,
        bias: usize,
        inputs: usize,
        outputs: usize,
    },
    Tanh,
    Relu,
    LayerNorm {
        gain: usize,
        bias: usize,
        dim: usize,
    },
    Residual(Vec<Layer>),
}

#[derive(Debug, Clone)]
enum Cache<T> {
    Linear { input: Tensor<T> },
    Tanh { output: Tensor<T> },
    Relu { input: Tensor<T> },
    LayerNorm { normalized: Tensor<T>, inv_std: Vec<T> },
    Residual(Vec<Cache<T>>),
}

/// Activations retained by a traced forward pass, consumed by [`Network::backward`].
#[derive(Debug, Clone, Default)]
pub struct Trace<T> {
    caches: Vec<Cache<T>>,
    batch: usize,
}

/// Which gradients a backward pass produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradMode {
    /// Accumulate parameter gradients into the network's slots.
    Params,
    /// Only propagate to the input; parameter slots are left untouched.
    InputOnly,
}

/// Feed-forward stack of affine, activation, normalization and residual layers.
///
/// Parameters live in a flat list (in construction order) with one gradient
/// slot each, so optimizers, target averaging and serialization all walk the
/// same ordering.
#[derive(Debug, Clone)]
pub struct Network<T> {
    layers: Vec<Layer>,
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    grads: Vec<Tensor<T>>,
    in_dim: usize,
    out_dim: usize,
}

/// Equality is architecture and parameters; gradient buffers are scratch.
impl<T: PartialEq> PartialEq for Network<T> {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers && self.names == other.names && self.params == other.params
    }
}

struct Builder<'a, T> {
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    rng: &'a mut Rng,
}

impl<T: Real> Builder<'_, T> {
    fn add(&mut self, name: String, tensor: Tensor<T>) -> usize {
        self.names.push(name);
        self.params.push(tensor);
        self.params.len() - 1
    }

    fn build(&mut self, specs: &[LayerSpec], prefix: &str, width: &mut usize) -> Result<Vec<Layer>, DiffError> {
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let path = format!("{prefix}{i}");
            let layer = match spec {
                LayerSpec::Linear { inputs, outputs } => {
                    if *inputs != *width {
                        return Err(DiffError::Shape(format!(
                            "layer {path}: expects {inputs} inputs but receives {width}"
                        )));
                    }
                    let bound = 1.0 / (*inputs as f64).sqrt();
                    let w: Vec<f64> = (0..inputs * outputs)
                        .map(|_| self.rng.uniform(-bound, bound))
                        .collect();
                    let b: Vec<f64> = (0..*outputs).map(|_| self.rng.uniform(-bound, bound)).collect();
                    let weight = self.add(format!("{path}.weight"), Tensor::from_f64(&[*inputs, *outputs], &w)?);
                    let bias = self.add(format!("{path}.bias"), Tensor::from_f64(&[*outputs], &b)?);
                    *width = *outputs;
                    Layer::Linear {
                        weight,
                        bias,
                        inputs: *inputs,
                        outputs: *outputs,
                    }
                }
                LayerSpec::Tanh => Layer::Tanh,
                LayerSpec::Relu => Layer::Relu,
                LayerSpec::LayerNorm { dim } => {
                    if *dim != *width {
                        return Err(DiffError::Shape(format!(
                            "layer {path}: norm over {dim} but width is {width}"
                        )));
                    }
                    let mut g = Tensor::zeros(&[*dim]);
                    g.fill(T::one());
                    let gain = self.add(format!("{path}.gain"), g);
                    let bias = self.add(format!("{path}.bias"), Tensor::zeros(&[*dim]));
                    Layer::LayerNorm { gain, bias, dim: *dim }
                }
                LayerSpec::Residual(inner) => {
                    let before = *width;
                    let layers = self.build(inner, &format!("{path}."), width)?;
                    if *width != before {
                        return Err(DiffError::Shape(format!(
                            "residual {path} maps width {before} to {width}"
                        )));
                    }
                    Layer::Residual(layers)
                }
            };
            layers.push(layer);
        }
        Ok(layers)
    }
}

impl<T: Real> Network<T> {
    pub fn new(in_dim: usize, specs: &[LayerSpec], rng: &mut Rng) -> Result<Self, DiffError> {
        let mut builder = Builder {
            names: Vec::new(),
            params: Vec::new(),
            rng,
        };
        let mut width = in_dim;
        let layers = builder.build(specs, "", &mut width)?;
        let grads = builder.params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Ok(Self {
            layers,
            names: builder.names,
            params: builder.params,
            grads,
            in_dim,
            out_dim: width,
        })
    }

    /// Two tanh hidden layers followed by a linear head.
    pub fn tanh_mlp(inputs: usize, hidden: usize, outputs: usize, rng: &mut Rng) -> Result<Self, DiffError> {
        Self::new(
            inputs,
            &[
                LayerSpec::Linear { inputs, outputs: hidden },
                LayerSpec::Tanh,
                LayerSpec::Linear { inputs: hidden, outputs: hidden },
                LayerSpec::Tanh,
                LayerSpec::Linear { inputs: hidden, outputs },
            ],
            rng,
        )
    }

    /// Input projection, `blocks` pre-activation residual blocks, scalar head.
    pub fn residual_critic(inputs: usize, hidden: usize, blocks: usize, rng: &mut Rng) -> Result<Self, DiffError> {
        let mut specs = vec![LayerSpec::Linear { inputs, outputs: hidden }];
        for _ in 0..blocks {
            specs.push(LayerSpec::Residual(vec![
                LayerSpec::LayerNorm { dim: hidden },
                LayerSpec::Relu,
                LayerSpec::Linear { inputs: hidden, outputs: hidden },
                LayerSpec::LayerNorm { dim: hidden },
                LayerSpec::Relu,
                LayerSpec::Linear { inputs: hidden, outputs: hidden },
            ]));
        }
        specs.push(LayerSpec::LayerNorm { dim: hidden });
        specs.push(LayerSpec::Relu);
        specs.push(LayerSpec::Linear { inputs: hidden, outputs: 1 });
        Self::new(inputs, &specs, rng)
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn param_names(&self) -> &[String] {
        &self.names
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.params
    }

    pub fn grads(&self) -> &[Tensor<T>] {
        &self.grads
    }

    /// Parameters and gradient slots, paired.
    pub fn params_and_grads(&mut self) -> (&mut [Tensor<T>], &[Tensor<T>]) {
        (&mut self.params, &self.grads)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.fill(T::zero());
        }
    }

    /// Replaces all parameter values, checking shapes.
    pub fn load_params(&mut self, values: Vec<Tensor<T>>) -> Result<(), DiffError> {
        if values.len() != self.params.len() {
            return Err(DiffError::Shape(format!(
                "expected {} parameter tensors, got {}",
                self.params.len(),
                values.len()
            )));
        }
        for (i, (cur, new)) in self.params.iter().zip(&values).enumerate() {
            if cur.shape() != new.shape() {
                return Err(DiffError::Shape(format!(
                    "parameter {}: expected {:?}, got {:?}",
                    self.names[i],
                    cur.shape(),
                    new.shape()
                )));
            }
        }
        self.params = values;
        Ok(())
    }

    /// `self <- (1 - tau) * self + tau * source`, elementwise.
    pub fn polyak_from(&mut self, source: &Network<T>, tau: T) -> Result<(), DiffError> {
        if source.params.len() != self.params.len() {
            return Err(DiffError::Shape("polyak between different architectures".into()));
        }
        let keep = T::one() - tau;
        for (dst, src) in self.params.iter_mut().zip(&source.params) {
            if dst.shape() != src.shape() {
                return Err(DiffError::Shape("polyak between different architectures".into()));
            }
            for (d, s) in dst.data_mut().iter_mut().zip(src.data()) {
                *d = keep * *d + tau * *s;
            }
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(), DiffError> {
        if x.shape().len() != 2 || x.cols() != self.in_dim {
            return Err(DiffError::Shape(format!(
                "network expects [batch, {}] input, got {:?}",
                self.in_dim,
                x.shape()
            )));
        }
        Ok(())
    }

    /// Inference pass without retaining activations.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>, DiffError> {
        self.check_input(x)?;
        let out = forward_layers(&self.layers, &self.params, x.clone(), None);
        out.ensure_finite("network output")?;
        Ok(out)
    }

    /// Forward pass retaining the activations needed by [`Network::backward`].
    pub fn forward_traced(&self, x: &Tensor<T>) -> Result<(Tensor<T>, Trace<T>), DiffError> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.layers.len());
        let out = forward_layers(&self.layers, &self.params, x.clone(), Some(&mut caches));
        out.ensure_finite("network output")?;
        Ok((
            out,
            Trace {
                caches,
                batch: x.rows(),
            },
        ))
    }

    /// Reverse pass: given `d loss / d output`, returns `d loss / d input` and,
    /// in [`GradMode::Params`], accumulates parameter gradients into the slots.
    pub fn backward(&mut self, trace: &Trace<T>, d_out: &Tensor<T>, mode: GradMode) -> Result<Tensor<T>, DiffError> {
        self.check_trace(trace, d_out)?;
        let mut grads = std::mem::take(&mut self.grads);
        let sink = match mode {
            GradMode::Params => Some(grads.as_mut_slice()),
            GradMode::InputOnly => None,
        };
        let d_in = backward_layers(&self.layers, &self.params, &trace.caches, d_out.clone(), sink);
        self.grads = grads;
        d_in.ensure_finite("input gradient")?;
        if mode == GradMode::Params {
            for (g, name) in self.grads.iter().zip(&self.names) {
                g.ensure_finite(name)?;
            }
        }
        Ok(d_in)
    }

    /// Input gradient only; usable on a shared reference.
    pub fn input_gradient(&self, trace: &Trace<T>, d_out: &Tensor<T>) -> Result<Tensor<T>, DiffError> {
        self.check_trace(trace, d_out)?;
        let d_in = backward_layers(&self.layers, &self.params, &trace.caches, d_out.clone(), None);
        d_in.ensure_finite("input gradient")?;
        Ok(d_in)
    }

    fn check_trace(&self, trace: &Trace<T>, d_out: &Tensor<T>) -> Result<(), DiffError> {
        if trace.caches.len() != self.layers.len() {
            return Err(DiffError::MissingTrace);
        }
        if d_out.rows() != trace.batch || d_out.cols() != self.out_dim {
            return Err(DiffError::Shape(format!(
                "output gradient {:?} does not match traced batch {} x {}",
                d_out.shape(),
                trace.batch,
                self.out_dim
            )));
        }
        Ok(())
    }
}

fn forward_layers<T: Real>(
    layers: &[Layer],
    params: &[Tensor<T>],
    mut x: Tensor<T>,
    mut caches: Option<&mut Vec<Cache<T>>>,
) -> Tensor<T> {
    for layer in layers {
        let rows = x.rows();
        x = match layer {
            Layer::Linear {
                weight,
                bias,
                inputs,
                outputs,
            } => {
                let b = params[*bias].data();
                let mut y = Vec::with_capacity(rows * outputs);
                for _ in 0..rows {
                    y.extend_from_slice(b);
                }
                T::gemm(
                    rows,
                    *inputs,
                    *outputs,
                    T::one(),
                    x.data(),
                    (*inputs as isize, 1),
                    params[*weight].data(),
                    (*outputs as isize, 1),
                    T::one(),
                    &mut y,
                );
                let y = Tensor::from_vec(&[rows, *outputs], y).expect("linear output shape");
                if let Some(c) = caches.as_deref_mut() {
                    c.push(Cache::Linear { input: x });
                }
                y
            }
            Layer::Tanh => {
                let mut y = x;
                y.data_mut().iter_mut().for_each(|v| *v = v.activation_tanh());
                if let Some(c) = caches.as_deref_mut() {
                    c.push(Cache::Tanh { output: y.clone() });
                }
                y
            }
            Layer::Relu => {
                let mut y = x.clone();
                y.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
                if let Some(c) = caches.as_deref_mut() {
                    c.push(Cache::Relu { input: x });
                }
                y
            }
            Layer::LayerNorm { gain, bias, dim } => {
                let (g, b) = (params[*gain].data(), params[*bias].data());
                let n = T::from_f64(*dim as f64);
                let eps = T::from_f64(LAYER_NORM_EPS);
                let mut normalized = x;
                let mut inv_std = Vec::with_capacity(rows);
                for row in normalized.data_mut().chunks_mut(*dim) {
                    let mean = row.iter().fold(T::zero(), |a, &v| a + v) / n;
                    let var = row.iter().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
                    let inv = T::one() / (var + eps).sqrt();
                    row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
                    inv_std.push(inv);
                }
                let mut y = normalized.clone();
                for row in y.data_mut().chunks_mut(*dim) {
                    for ((v, &gi), &bi) in row.iter_mut().zip(g).zip(b) {
                        *v = *v * gi + bi;
                    }
                }
                if let Some(c) = caches.as_deref_mut() {
                    c.push(Cache::LayerNorm { normalized, inv_std });
                }
                y
            }
            Layer::Residual(inner) => {
                let mut inner_caches = caches.as_ref().map(|_| Vec::with_capacity(inner.len()));
                let fx = forward_layers(inner, params, x.clone(), inner_caches.as_mut());
                let mut y = x;
                for (v, &f) in y.data_mut().iter_mut().zip(fx.data()) {
                    *v = *v + f;
                }
                if let (Some(c), Some(ic)) = (caches.as_deref_mut(), inner_caches) {
                    c.push(Cache::Residual(ic));
                }
                y
            }
        };
    }
    x
}

fn backward_layers<T: Real>(
    layers: &[Layer],
    params: &[Tensor<T>],
    caches: &[Cache<T>],
    mut d: Tensor<T>,
    mut grads: Option<&mut [Tensor<T>]>,
) -> Tensor<T> {
    for (layer, cache) in layers.iter().zip(caches).rev() {
        let rows = d.rows();
        d = match (layer, cache) {
            (
                Layer::Linear {
                    weight,
                    bias,
                    inputs,
                    outputs,
                },
                Cache::Linear { input },
            ) => {
                if let Some(g) = grads.as_deref_mut() {
                    // dW += X^T dY
                    T::gemm(
                        *inputs,
                        rows,
                        *outputs,
                        T::one(),
                        input.data(),
                        (1, *inputs as isize),
                        d.data(),
                        (*outputs as isize, 1),
                        T::one(),
                        g[*weight].data_mut(),
                    );
                    let gb = g[*bias].data_mut();
                    for row in d.data().chunks(*outputs) {
                        for (acc, &v) in gb.iter_mut().zip(row) {
                            *acc = *acc + v;
                        }
                    }
                }
                // dX = dY W^T
                let mut dx = vec![T::zero(); rows * inputs];
                T::gemm(
                    rows,
                    *outputs,
                    *inputs,
                    T::one(),
                    d.data(),
                    (*outputs as isize, 1),
                    params[*weight].data(),
                    (1, *outputs as isize),
                    T::zero(),
                    &mut dx,
                );
                Tensor::from_vec(&[rows, *inputs], dx).expect("linear input grad shape")
            }
            (Layer::Tanh, Cache::Tanh { output }) => {
                for (dv, &y) in d.data_mut().iter_mut().zip(output.data()) {
                    *dv = *dv * (T::one() - y * y);
                }
                d
            }
            (Layer::Relu, Cache::Relu { input }) => {
                for (dv, &x) in d.data_mut().iter_mut().zip(input.data()) {
                    if x <= T::zero() {
                        *dv = T::zero();
                    }
                }
                d
            }
            (Layer::LayerNorm { gain, bias, dim }, Cache::LayerNorm { normalized, inv_std }) => {
                if let Some(g) = grads.as_deref_mut() {
                    for (drow, xrow) in d.data().chunks(*dim).zip(normalized.data().chunks(*dim)) {
                        for (j, (&dv, &xh)) in drow.iter().zip(xrow).enumerate() {
                            g[*gain].data_mut()[j] = g[*gain].data()[j] + dv * xh;
                            g[*bias].data_mut()[j] = g[*bias].data()[j] + dv;
                        }
                    }
                }
                let gvals = params[*gain].data();
                let n = T::from_f64(*dim as f64);
                let mut dx = d;
                for ((drow, xrow), &inv) in dx
                    .data_mut()
                    .chunks_mut(*dim)
                    .zip(normalized.data().chunks(*dim))
                    .zip(inv_std)
                {
                    let mut sum = T::zero();
                    let mut sum_x = T::zero();
                    for ((dv, &gj), &xh) in drow.iter_mut().zip(gvals).zip(xrow) {
                        *dv = *dv * gj;
                        sum = sum + *dv;
                        sum_x = sum_x + *dv * xh;
                    }
                    let (mean, mean_x) = (sum / n, sum_x / n);
                    for (dv, &xh) in drow.iter_mut().zip(xrow) {
                        *dv = inv * (*dv - mean - xh * mean_x);
                    }
                }
                dx
            }
            (Layer::Residual(inner), Cache::Residual(inner_caches)) => {
                let d_inner = backward_layers(inner, params, inner_caches, d.clone(), grads.as_deref_mut());
                let mut dx = d;
                for (v, &di) in dx.data_mut().iter_mut().zip(d_inner.data()) {
                    *v = *v + di;
                }
                dx
            }
            _ => unreachable!("trace built by forward_layers on the same layers"),
        };
    }
    d
}
