//! The five-layer VGG-style classifier: architecture description, parameter
//! initialization, full and partial forward passes, and backpropagation.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use thiserror::Error;

use crate::tensor::{
    conv2d_backward_input, conv2d_backward_params, conv2d_forward, dense_backward, dense_forward,
    maxpool2d_backward, maxpool2d_forward, pool_out_extent, relu, relu_backward, ArgmaxMap,
    Tensor, TensorError,
};

pub const DEFAULT_FILTERS: [usize; 5] = [8, 16, 32, 64, 64];
pub const DEFAULT_POOL_AFTER: [usize; 3] = [1, 2, 5];
pub const DEFAULT_POOL_KERNELS: [usize; 3] = [3, 3, 4];
pub const DEFAULT_POOL_STRIDES: [usize; 3] = [1, 2, 2];
pub const CONV_KERNEL: usize = 3;
pub const CONV_PADDING: usize = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model spec at {layer}: {detail}")]
    InvalidSpec { layer: String, detail: String },
    #[error("layer {layer} out of range (valid: 1..={layers})")]
    InvalidLayer { layer: usize, layers: usize },
    #[error("channel {channel} out of range for layer {layer} (valid: 0..={max})")]
    InvalidChannel {
        layer: usize,
        channel: usize,
        max: usize,
    },
    #[error("image shape {actual:?} does not match model input {expected:?}")]
    InputShape {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Architecture of the classifier. Single-channel input; every conv layer is
/// 3×3 with padding 1 followed by ReLU; max-pools follow the listed layers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelSpec {
    pub input_height: usize,
    pub input_width: usize,
    pub conv_filters: Vec<usize>,
    /// 1-indexed conv layers followed by a pool, ascending.
    pub pool_after: Vec<usize>,
    pub pool_kernels: Vec<usize>,
    pub pool_strides: Vec<usize>,
}

/// Output extent of one stage of the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StageShape {
    pub stage: Stage,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Conv(usize),
    Pool(usize),
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Stage::Conv(i) => write!(f, "conv{i}"),
            Stage::Pool(i) => write!(f, "pool{i}"),
        }
    }
}

impl ModelSpec {
    pub fn new(input_height: usize, input_width: usize) -> Self {
        Self {
            input_height,
            input_width,
            conv_filters: DEFAULT_FILTERS.to_vec(),
            pool_after: DEFAULT_POOL_AFTER.to_vec(),
            pool_kernels: DEFAULT_POOL_KERNELS.to_vec(),
            pool_strides: DEFAULT_POOL_STRIDES.to_vec(),
        }
    }

    pub fn with_input(&self, height: usize, width: usize) -> Self {
        Self {
            input_height: height,
            input_width: width,
            ..self.clone()
        }
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [1, self.input_height, self.input_width]
    }

    pub fn num_layers(&self) -> usize {
        self.conv_filters.len()
    }

    /// Index into the pool lists for the pool following conv `layer`, if any.
    fn pool_for(&self, layer: usize) -> Option<usize> {
        self.pool_after.iter().position(|&p| p == layer)
    }

    fn invalid(layer: impl Into<String>, detail: impl Into<String>) -> ModelError {
        ModelError::InvalidSpec {
            layer: layer.into(),
            detail: detail.into(),
        }
    }

    /// Validates the spec and returns the output shape of every stage.
    pub fn shape_chain(&self) -> Result<Vec<StageShape>, ModelError> {
        if self.conv_filters.len() != DEFAULT_FILTERS.len() {
            return Err(Self::invalid(
                "conv_filters",
                format!("expected 5 conv layers, got {}", self.conv_filters.len()),
            ));
        }
        if let Some(i) = self.conv_filters.iter().position(|&f| f == 0) {
            return Err(Self::invalid(format!("conv{}", i + 1), "zero filters"));
        }
        let n_pools = self.pool_after.len();
        if self.pool_kernels.len() != n_pools || self.pool_strides.len() != n_pools {
            return Err(Self::invalid(
                "pooling",
                "pool_after, pool_kernels and pool_strides must have equal length",
            ));
        }
        if self
            .pool_after
            .windows(2)
            .any(|w| w[0] >= w[1])
            || self.pool_after.iter().any(|&p| p == 0 || p > self.num_layers())
        {
            return Err(Self::invalid(
                "pooling",
                format!("pool_after {:?} must be ascending within 1..=5", self.pool_after),
            ));
        }
        if self.input_height == 0 || self.input_width == 0 {
            return Err(Self::invalid("input", "empty input extent"));
        }

        let mut chain = Vec::new();
        let (mut h, mut w) = (self.input_height, self.input_width);
        for (i, &filters) in self.conv_filters.iter().enumerate() {
            let layer = i + 1;
            // 3x3 with padding 1 preserves extent
            chain.push(StageShape {
                stage: Stage::Conv(layer),
                channels: filters,
                height: h,
                width: w,
            });
            if let Some(p) = self.pool_for(layer) {
                let (k, s) = (self.pool_kernels[p], self.pool_strides[p]);
                match (pool_out_extent(h, k, s), pool_out_extent(w, k, s)) {
                    (Some(oh), Some(ow)) => {
                        h = oh;
                        w = ow;
                    }
                    _ => {
                        return Err(Self::invalid(
                            Stage::Pool(layer).to_string(),
                            format!(
                                "pooling chain exhausts spatial extent: kernel {k} stride {s} on {h}x{w}"
                            ),
                        ))
                    }
                }
                chain.push(StageShape {
                    stage: Stage::Pool(layer),
                    channels: filters,
                    height: h,
                    width: w,
                });
            }
        }
        Ok(chain)
    }

    /// Number of features entering the classifier head.
    pub fn head_inputs(&self) -> Result<usize, ModelError> {
        let last = *self.shape_chain()?.last().expect("chain is non-empty");
        Ok(last.channels * last.height * last.width)
    }

    /// Spatial extent of conv layer `layer`'s activation map.
    pub fn layer_extent(&self, layer: usize) -> Result<(usize, usize), ModelError> {
        self.check_layer(layer)?;
        let chain = self.shape_chain()?;
        let s = chain
            .iter()
            .find(|s| s.stage == Stage::Conv(layer))
            .expect("every conv layer is in the chain");
        Ok((s.height, s.width))
    }

    pub fn check_layer(&self, layer: usize) -> Result<(), ModelError> {
        if layer == 0 || layer > self.num_layers() {
            return Err(ModelError::InvalidLayer {
                layer,
                layers: self.num_layers(),
            });
        }
        Ok(())
    }

    pub fn check_target(&self, layer: usize, channel: usize) -> Result<(), ModelError> {
        self.check_layer(layer)?;
        let n = self.conv_filters[layer - 1];
        if channel >= n {
            return Err(ModelError::InvalidChannel {
                layer,
                channel,
                max: n - 1,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub weights: Tensor,
    pub bias: Tensor,
}

/// Learned weights. Also used as the container for parameter gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub conv: Vec<ConvParams>,
    pub head_weights: Tensor,
    pub head_bias: Tensor,
}

impl ModelParams {
    /// Tensors in declaration order: conv1.weight, conv1.bias, ..., head.weight, head.bias.
    pub fn tensors(&self) -> Vec<&Tensor> {
        let mut out: Vec<&Tensor> = Vec::with_capacity(2 * self.conv.len() + 2);
        for c in &self.conv {
            out.push(&c.weights);
            out.push(&c.bias);
        }
        out.push(&self.head_weights);
        out.push(&self.head_bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = Vec::with_capacity(2 * self.conv.len() + 2);
        for c in &mut self.conv {
            out.push(&mut c.weights);
            out.push(&mut c.bias);
        }
        out.push(&mut self.head_weights);
        out.push(&mut self.head_bias);
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for i in 1..=self.conv.len() {
            out.push(format!("conv{i}.weight"));
            out.push(format!("conv{i}.bias"));
        }
        out.push("head.weight".into());
        out.push("head.bias".into());
        out
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            conv: self
                .conv
                .iter()
                .map(|c| ConvParams {
                    weights: Tensor::zeros(c.weights.shape()),
                    bias: Tensor::zeros(c.bias.shape()),
                })
                .collect(),
            head_weights: Tensor::zeros(self.head_weights.shape()),
            head_bias: Tensor::zeros(self.head_bias.shape()),
        }
    }

    /// Expected shape of every tensor for `spec`, in declaration order.
    pub fn expected_shapes(spec: &ModelSpec) -> Result<Vec<Vec<usize>>, ModelError> {
        let mut shapes = Vec::new();
        let mut c_in = 1;
        for &f in &spec.conv_filters {
            shapes.push(vec![f, c_in, CONV_KERNEL, CONV_KERNEL]);
            shapes.push(vec![f]);
            c_in = f;
        }
        shapes.push(vec![1, spec.head_inputs()?]);
        shapes.push(vec![1]);
        Ok(shapes)
    }

    /// Reassembles parameters from tensors in declaration order.
    pub fn from_tensors(spec: &ModelSpec, tensors: Vec<Tensor>) -> Result<Self, ModelError> {
        let expected = Self::expected_shapes(spec)?;
        if tensors.len() != expected.len() {
            return Err(ModelSpec::invalid(
                "params",
                format!("expected {} tensors, got {}", expected.len(), tensors.len()),
            ));
        }
        for (i, (t, e)) in tensors.iter().zip(&expected).enumerate() {
            if t.shape() != e.as_slice() {
                return Err(ModelSpec::invalid(
                    format!("tensor {i}"),
                    format!("shape {:?} does not match spec shape {e:?}", t.shape()),
                ));
            }
        }
        let mut it = tensors.into_iter();
        let mut conv = Vec::new();
        for _ in 0..spec.num_layers() {
            let weights = it.next().unwrap();
            let bias = it.next().unwrap();
            conv.push(ConvParams { weights, bias });
        }
        Ok(Self {
            conv,
            head_weights: it.next().unwrap(),
            head_bias: it.next().unwrap(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }
}

/// Intermediate values of one conv stage, kept for backpropagation.
#[derive(Debug, Clone)]
struct StageCache {
    input: Tensor,
    pre_activation: Tensor,
    pool: Option<(Tensor, ArgmaxMap)>,
}

/// Everything the backward pass needs from [`Model::forward_logit`].
#[derive(Debug, Clone)]
pub struct ActivationCache {
    stages: Vec<StageCache>,
    head_input: Tensor,
}

impl ActivationCache {
    /// Post-ReLU activation of conv layer `layer` (1-indexed).
    pub fn activation(&self, layer: usize) -> Option<Tensor> {
        self.stages
            .get(layer.checked_sub(1)?)
            .map(|s| relu(&s.pre_activation))
    }

    /// The flattened features fed to the classifier head.
    pub fn head_input(&self) -> &Tensor {
        &self.head_input
    }
}

/// Which ReLUs are active and which inputs win each pooling window.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ActivationPattern {
    pub active: Vec<bool>,
    pub winners: Vec<usize>,
}

/// A network with its weights. Immutable once built or loaded; forward passes
/// take `&self` and may run concurrently.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ModelParams,
}

impl Model {
    /// Scaled-normal (He) initialization with std `sqrt(2 / fan_in)` and zero biases.
    pub fn build(spec: ModelSpec, seed: u64) -> Result<Self, ModelError> {
        let shapes = ModelParams::expected_shapes(&spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = shapes
            .into_iter()
            .map(|shape| {
                if shape.len() == 1 {
                    return Tensor::zeros(&shape);
                }
                let fan_in: usize = shape[1..].iter().product();
                let std = (2.0 / fan_in as f64).sqrt();
                Tensor::from_fn(&shape, |_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    std * z
                })
            })
            .collect();
        let params = ModelParams::from_tensors(&spec, tensors)?;
        Ok(Self { spec, params })
    }

    pub fn from_parts(spec: ModelSpec, params: ModelParams) -> Result<Self, ModelError> {
        let tensors = params.tensors().into_iter().cloned().collect();
        ModelParams::from_tensors(&spec, tensors)?;
        Ok(Self { spec, params })
    }

    fn check_image(&self, spec: &ModelSpec, image: &Tensor) -> Result<(), ModelError> {
        if image.shape() != spec.input_shape() {
            return Err(ModelError::InputShape {
                expected: spec.input_shape().to_vec(),
                actual: image.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Runs conv stages `1..=upto`. When `target_channel` is given, the last
    /// stage computes only that channel and skips its pool.
    fn run_stages(
        &self,
        image: &Tensor,
        upto: usize,
        target_channel: Option<usize>,
    ) -> Result<Vec<StageCache>, ModelError> {
        let mut stages = Vec::with_capacity(upto);
        let mut x = image.clone();
        for layer in 1..=upto {
            let p = &self.params.conv[layer - 1];
            let partial = layer == upto && target_channel.is_some();
            let pre = if let (true, Some(c)) = (partial, target_channel) {
                let (w, b) = single_channel(p, c)?;
                conv2d_forward(&x, &w, &b, CONV_PADDING)?
            } else {
                conv2d_forward(&x, &p.weights, &p.bias, CONV_PADDING)?
            };
            let act = relu(&pre);
            let pool = match self.spec.pool_for(layer) {
                Some(i) if !partial => Some(maxpool2d_forward(
                    &act,
                    self.spec.pool_kernels[i],
                    self.spec.pool_strides[i],
                )?),
                _ => None,
            };
            let next = match &pool {
                Some((pooled, _)) => pooled.clone(),
                None => act,
            };
            stages.push(StageCache {
                input: std::mem::replace(&mut x, next),
                pre_activation: pre,
                pool,
            });
        }
        Ok(stages)
    }

    /// Full forward pass returning the pre-sigmoid logit.
    pub fn forward_logit(&self, image: &Tensor) -> Result<(f64, ActivationCache), ModelError> {
        self.check_image(&self.spec, image)?;
        let stages = self.run_stages(image, self.spec.num_layers(), None)?;
        let last = stages.last().expect("five stages");
        let features = match &last.pool {
            Some((pooled, _)) => pooled.clone(),
            None => relu(&last.pre_activation),
        };
        let n = features.len();
        let head_input = features.reshape(&[n])?;
        let out = dense_forward(&head_input, &self.params.head_weights, &self.params.head_bias)?;
        Ok((
            out.data()[0],
            ActivationCache {
                stages,
                head_input,
            },
        ))
    }

    /// Gradients of `dlogit · logit` with respect to every parameter.
    pub fn backward_logit(
        &self,
        cache: &ActivationCache,
        dlogit: f64,
    ) -> Result<ModelParams, ModelError> {
        let gout = Tensor::new(vec![1], vec![dlogit])?;
        let head = dense_backward(&cache.head_input, &self.params.head_weights, &gout)?;
        let last = cache.stages.last().expect("five stages");
        let last_shape = match &last.pool {
            Some((pooled, _)) => pooled.shape().to_vec(),
            None => last.pre_activation.shape().to_vec(),
        };
        let mut grad = head.grad_input.reshape(&last_shape)?;
        let mut conv_grads = Vec::with_capacity(cache.stages.len());
        for (i, stage) in cache.stages.iter().enumerate().rev() {
            if let Some((_, map)) = &stage.pool {
                grad = maxpool2d_backward(map, &grad, stage.pre_activation.shape())?;
            }
            grad = relu_backward(&stage.pre_activation, &grad)?;
            let p = &self.params.conv[i];
            let (weights, bias) =
                conv2d_backward_params(&stage.input, &p.weights, &grad, CONV_PADDING)?;
            conv_grads.push(ConvParams { weights, bias });
            // the image gradient is not needed for training
            if i > 0 {
                grad = conv2d_backward_input(stage.input.shape(), &p.weights, &grad, CONV_PADDING)?;
            }
        }
        conv_grads.reverse();
        Ok(ModelParams {
            conv: conv_grads,
            head_weights: head.grad_weights.expect("head weight grad"),
            head_bias: head.grad_bias.expect("head bias grad"),
        })
    }

    /// Post-ReLU activation map of `channel` at conv `layer` and its spatial
    /// mean, the objective maximized during visualization.
    pub fn forward_to_channel(
        &self,
        image: &Tensor,
        layer: usize,
        channel: usize,
    ) -> Result<(Tensor, f64), ModelError> {
        let spec = self.spec_for_image(image)?;
        spec.check_target(layer, channel)?;
        let stages = self.run_stages(image, layer, Some(channel))?;
        let act = relu(&stages.last().expect("at least one stage").pre_activation);
        let (_, h, w) = (act.shape()[0], act.shape()[1], act.shape()[2]);
        let map = act.reshape(&[h, w])?;
        let objective = map.mean();
        Ok((map, objective))
    }

    /// Channel objective of every channel at conv `layer` in one pass.
    pub fn layer_channel_means(&self, image: &Tensor, layer: usize) -> Result<Vec<f64>, ModelError> {
        let spec = self.spec_for_image(image)?;
        spec.check_layer(layer)?;
        let stages = self.run_stages(image, layer, None)?;
        let act = relu(&stages.last().expect("at least one stage").pre_activation);
        let plane = act.shape()[1] * act.shape()[2];
        Ok(act
            .data()
            .chunks(plane)
            .map(|c| c.iter().sum::<f64>() / plane as f64)
            .collect())
    }

    /// Channel objective and its gradient with respect to the image.
    pub fn channel_objective_grad(
        &self,
        image: &Tensor,
        layer: usize,
        channel: usize,
    ) -> Result<(f64, Tensor), ModelError> {
        let spec = self.spec_for_image(image)?;
        spec.check_target(layer, channel)?;
        let stages = self.run_stages(image, layer, Some(channel))?;
        let last = stages.last().expect("at least one stage");
        let n = last.pre_activation.len() as f64;
        let objective = relu(&last.pre_activation).sum() / n;
        let seed = Tensor::full(last.pre_activation.shape(), 1.0 / n);
        let grad = self.backward_to_image(&stages, seed, Some(channel))?;
        Ok((objective, grad))
    }

    /// Mean post-ReLU activation over every channel of conv `layer`, with its
    /// image gradient.
    pub fn layer_objective_grad(
        &self,
        image: &Tensor,
        layer: usize,
    ) -> Result<(f64, Tensor), ModelError> {
        let spec = self.spec_for_image(image)?;
        spec.check_layer(layer)?;
        let stages = self.run_stages(image, layer, None)?;
        let last = stages.last().expect("at least one stage");
        let n = last.pre_activation.len() as f64;
        let objective = relu(&last.pre_activation).sum() / n;
        // the last stage's pool is not part of the objective
        let seed = Tensor::full(last.pre_activation.shape(), 1.0 / n);
        let grad = self.backward_to_image(&stages, seed, None)?;
        Ok((objective, grad))
    }

    /// Backpropagates a gradient on the last stage's post-ReLU output to the image.
    fn backward_to_image(
        &self,
        stages: &[StageCache],
        seed: Tensor,
        target_channel: Option<usize>,
    ) -> Result<Tensor, ModelError> {
        let mut grad = seed;
        let top = stages.len() - 1;
        for (i, stage) in stages.iter().enumerate().rev() {
            if i != top {
                if let Some((_, map)) = &stage.pool {
                    grad = maxpool2d_backward(map, &grad, stage.pre_activation.shape())?;
                }
            }
            grad = relu_backward(&stage.pre_activation, &grad)?;
            let p = &self.params.conv[i];
            grad = match (i == top, target_channel) {
                (true, Some(c)) => {
                    let (w, _) = single_channel(p, c)?;
                    conv2d_backward_input(stage.input.shape(), &w, &grad, CONV_PADDING)?
                }
                _ => conv2d_backward_input(stage.input.shape(), &p.weights, &grad, CONV_PADDING)?,
            };
        }
        Ok(grad)
    }

    /// ReLU signs and pool winners along the path to conv `layer` (only
    /// `target_channel` at that layer when given). Two inputs with equal
    /// patterns lie on the same linear piece of the network.
    pub fn activation_pattern(
        &self,
        image: &Tensor,
        layer: usize,
        target_channel: Option<usize>,
    ) -> Result<ActivationPattern, ModelError> {
        let spec = self.spec_for_image(image)?;
        spec.check_layer(layer)?;
        if let Some(c) = target_channel {
            spec.check_target(layer, c)?;
        }
        let stages = self.run_stages(image, layer, target_channel)?;
        let mut pattern = ActivationPattern::default();
        for s in &stages {
            pattern
                .active
                .extend(s.pre_activation.data().iter().map(|&z| z > 0.0));
            if let Some((_, map)) = &s.pool {
                pattern.winners.extend_from_slice(&map.indices);
            }
        }
        Ok(pattern)
    }

    /// The model's spec resized to `image`'s extent. The channel objective
    /// never touches the head, so any extent the pooling chain accepts works.
    pub fn spec_for_image(&self, image: &Tensor) -> Result<ModelSpec, ModelError> {
        let spec = match *image.shape() {
            [1, h, w] => self.spec.with_input(h, w),
            _ => {
                return Err(ModelError::InputShape {
                    expected: self.spec.input_shape().to_vec(),
                    actual: image.shape().to_vec(),
                })
            }
        };
        spec.shape_chain()?;
        Ok(spec)
    }
}

fn single_channel(p: &ConvParams, c: usize) -> Result<(Tensor, Tensor), TensorError> {
    let per = p.weights.len() / p.weights.shape()[0];
    let mut shape = p.weights.shape().to_vec();
    shape[0] = 1;
    let w = Tensor::new(shape, p.weights.data()[c * per..(c + 1) * per].to_vec())?;
    let b = Tensor::new(vec![1], vec![p.bias.data()[c]])?;
    Ok((w, b))
}
