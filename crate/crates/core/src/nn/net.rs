use rand::Rng;

use super::layer::LayerSpec;
use super::params::{LayoutEntry, ParamVector};
use super::{NnError, Result};

/// Intermediate activations recorded by a forward pass.
/// `activations[0]` is the input, `activations[i + 1]` the output of layer `i`.
#[derive(Debug, Clone, Default)]
pub struct Tape {
    activations: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.activations.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: ParamVector,
    pub input: Vec<f64>,
}

/// A sequential net with its parameters.
///
/// `forward`/`backward` keep the tape inside the net; `forward_tape` and
/// `backward_tape` let callers hold several tapes against one parameter set
/// (e.g. one per graph node or per minibatch sample).
#[derive(Debug, Clone)]
pub struct Net {
    specs: Vec<LayerSpec>,
    params: ParamVector,
    offsets: Vec<usize>,
    tape: Option<Tape>,
}

impl Net {
    /// Builds a net and draws each weight and bias uniformly from
    /// `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new<R: Rng + ?Sized>(specs: Vec<LayerSpec>, rng: &mut R) -> Result<Self> {
        let layout = Self::layout_for(&specs)?;
        let mut params = ParamVector::zeros(layout);
        let mut offset = 0;
        for spec in &specs {
            let n = spec.param_count();
            if n > 0 {
                let bound = 1.0 / (spec.fan_in() as f64).sqrt();
                for v in &mut params.values_mut()[offset..offset + n] {
                    *v = rng.gen_range(-bound..=bound);
                }
            }
            offset += n;
        }
        Self::from_params(specs, params)
    }

    pub fn from_params(specs: Vec<LayerSpec>, params: ParamVector) -> Result<Self> {
        let layout = Self::layout_for(&specs)?;
        if params.layout() != layout.as_slice() {
            return Err(NnError::LayoutMismatch);
        }
        let mut offsets = Vec::with_capacity(specs.len() + 1);
        let mut acc = 0;
        for spec in &specs {
            offsets.push(acc);
            acc += spec.param_count();
        }
        offsets.push(acc);
        Ok(Net {
            specs,
            params,
            offsets,
            tape: None,
        })
    }

    /// Validates the layer chain and returns its parameter layout.
    pub fn layout_for(specs: &[LayerSpec]) -> Result<Vec<LayoutEntry>> {
        if specs.is_empty() {
            return Err(NnError::InvalidSpec {
                layer: 0,
                reason: "net has no layers".into(),
            });
        }
        let mut layout = Vec::new();
        for (i, spec) in specs.iter().enumerate() {
            spec.validate(i)?;
            if i > 0 && specs[i - 1].out_dim() != spec.in_dim() {
                return Err(NnError::InvalidSpec {
                    layer: i,
                    reason: format!(
                        "input {} does not match previous output {}",
                        spec.in_dim(),
                        specs[i - 1].out_dim()
                    ),
                });
            }
            for shape in spec.param_shapes() {
                layout.push(LayoutEntry { layer: i, shape });
            }
        }
        Ok(layout)
    }

    pub fn specs(&self) -> &[LayerSpec] {
        &self.specs
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamVector {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        self.params.ensure_same_layout(&params)?;
        self.params = params;
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.specs[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.specs[self.specs.len() - 1].out_dim()
    }

    fn layer_params(&self, i: usize) -> &[f64] {
        &self.params.values()[self.offsets[i]..self.offsets[i + 1]]
    }

    /// Forward pass that records a tape for a later [`Net::backward`].
    pub fn forward(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        let tape = self.forward_tape(x)?;
        let out = tape.output().to_vec();
        self.tape = Some(tape);
        Ok(out)
    }

    pub fn backward(&mut self, upstream: &[f64]) -> Result<Gradients> {
        let tape = self.tape.as_ref().ok_or(NnError::BackwardBeforeForward)?;
        self.backward_tape(tape, upstream)
    }

    /// Forward pass without touching the stored tape.
    pub fn infer(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for (i, spec) in self.specs.iter().enumerate() {
            spec.forward(self.layer_params(i), &cur, &mut next);
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    pub fn forward_tape(&self, x: &[f64]) -> Result<Tape> {
        self.check_input(x)?;
        let mut activations = Vec::with_capacity(self.specs.len() + 1);
        activations.push(x.to_vec());
        for (i, spec) in self.specs.iter().enumerate() {
            let mut y = Vec::with_capacity(spec.out_dim());
            spec.forward(self.layer_params(i), &activations[i], &mut y);
            activations.push(y);
        }
        Ok(Tape { activations })
    }

    pub fn backward_tape(&self, tape: &Tape, upstream: &[f64]) -> Result<Gradients> {
        let mut grad = self.params.zeros_like();
        let input = self.backward_tape_into(tape, upstream, &mut grad)?;
        Ok(Gradients {
            params: grad,
            input,
        })
    }

    /// Accumulates parameter gradients into `grad` and returns the input
    /// gradient.
    pub fn backward_tape_into(
        &self,
        tape: &Tape,
        upstream: &[f64],
        grad: &mut ParamVector,
    ) -> Result<Vec<f64>> {
        if tape.activations.len() != self.specs.len() + 1 {
            return Err(NnError::BackwardBeforeForward);
        }
        if upstream.len() != self.out_dim() {
            return Err(NnError::UpstreamMismatch {
                expected: self.out_dim(),
                got: upstream.len(),
            });
        }
        self.params.ensure_same_layout(grad)?;
        let mut g = upstream.to_vec();
        for i in (0..self.specs.len()).rev() {
            let (lo, hi) = (self.offsets[i], self.offsets[i + 1]);
            g = self.specs[i].backward(
                &self.params.values()[lo..hi],
                &tape.activations[i],
                &tape.activations[i + 1],
                &g,
                &mut grad.values_mut()[lo..hi],
            );
        }
        Ok(g)
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.in_dim() {
            return Err(NnError::ShapeMismatch {
                layer: 0,
                expected: self.in_dim(),
                got: x.len(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::params::LayoutEntry;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn net_with(specs: Vec<LayerSpec>, values: Vec<f64>) -> Net {
        let layout = Net::layout_for(&specs).unwrap();
        Net::from_params(specs, ParamVector::new(values, layout).unwrap()).unwrap()
    }

    #[test]
    fn identity_dense_passes_input_through() {
        let mut net = net_with(vec![LayerSpec::dense(2, 2)], vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        assert_eq!(net.forward(&[3.0, 4.0]).unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut net = net_with(vec![LayerSpec::relu(2)], vec![]);
        assert_eq!(net.forward(&[-1.0, 2.0]).unwrap(), vec![0.0, 2.0]);
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let mut net = net_with(vec![LayerSpec::softmax(2)], vec![]);
        assert_eq!(net.forward(&[0.0, 0.0]).unwrap(), vec![0.5, 0.5]);
    }

    #[test]
    fn linear_scalar_derivative() {
        // f(w) = w * x with x = 2
        let mut net = net_with(vec![LayerSpec::dense(1, 1)], vec![0.7, 0.0]);
        net.forward(&[2.0]).unwrap();
        let g = net.backward(&[1.0]).unwrap();
        assert_eq!(g.params.values()[0], 2.0);
        assert_eq!(g.params.values()[1], 1.0);
    }

    #[test]
    fn tanh_derivative_at_zero_is_one() {
        // f(w) = tanh(w * 1), w = 0
        let mut net = net_with(
            vec![LayerSpec::dense(1, 1), LayerSpec::tanh(1)],
            vec![0.0, 0.0],
        );
        net.forward(&[1.0]).unwrap();
        let g = net.backward(&[1.0]).unwrap();
        assert_abs_diff_eq!(g.params.values()[0], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn backward_before_forward_errors() {
        let mut net = net_with(vec![LayerSpec::relu(2)], vec![]);
        assert_eq!(
            net.backward(&[1.0, 1.0]).unwrap_err(),
            NnError::BackwardBeforeForward
        );
    }

    #[test]
    fn shape_mismatch_names_layer() {
        let mut net = net_with(vec![LayerSpec::dense(2, 1)], vec![0.0; 3]);
        let err = net.forward(&[1.0]).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
        net.forward(&[1.0, 2.0]).unwrap();
        assert!(matches!(
            net.backward(&[1.0, 1.0]),
            Err(NnError::UpstreamMismatch { .. })
        ));
    }

    #[test]
    fn mismatched_chain_is_rejected() {
        let specs = vec![LayerSpec::dense(2, 3), LayerSpec::relu(4)];
        assert!(matches!(
            Net::layout_for(&specs),
            Err(NnError::InvalidSpec { layer: 1, .. })
        ));
    }

    #[test]
    fn layout_lists_weights_then_bias_per_layer() {
        let specs = vec![LayerSpec::conv1d(5, 2, 3, 3), LayerSpec::relu(15), LayerSpec::dense(15, 1)];
        let layout = Net::layout_for(&specs).unwrap();
        assert_eq!(
            layout,
            vec![
                LayoutEntry { layer: 0, shape: vec![3, 2, 3] },
                LayoutEntry { layer: 0, shape: vec![3] },
                LayoutEntry { layer: 2, shape: vec![1, 15] },
                LayoutEntry { layer: 2, shape: vec![1] },
            ]
        );
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let net = Net::new(vec![LayerSpec::dense(16, 8)], &mut rng).unwrap();
        assert!(net.params().values().iter().all(|v| v.abs() <= 0.25));
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = Net::new(
            vec![LayerSpec::dense(3, 5), LayerSpec::tanh(5), LayerSpec::dense(5, 2), LayerSpec::softmax(2)],
            &mut rng,
        )
        .unwrap();
        let x = [0.3, -1.2, 2.5];
        let a = net.infer(&x).unwrap();
        let b = net.clone().forward(&x).unwrap();
        assert_eq!(
            a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            b.iter().map(|v| v.to_bits()).collect::<Vec<_>>()
        );
    }
}
