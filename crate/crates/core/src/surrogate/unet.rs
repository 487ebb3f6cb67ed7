//! Encoder-decoder with skip connections.
//!
//! Each encoder level is `conv-relu, conv-relu, maxpool2`; the bottleneck is
//! two `conv-relu` at `base * 2^depth` channels; each decoder level is
//! `upsample2, concat(skip), conv-relu, conv-relu`; a final 1x1 convolution
//! maps to the output channel. Channel width doubles per level.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use urbanwind_autodiff::{Float, Parameter, Tape, Tensor, Var};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetSpec {
    pub depth: usize,
    pub base_channels: usize,
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Default for UNetSpec {
    fn default() -> Self {
        UNetSpec {
            depth: 3,
            base_channels: 16,
            kernel: 5,
            in_channels: 1,
            out_channels: 1,
        }
    }
}

/// One convolution's shape: `(in, out, kernel)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvShape {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl ConvShape {
    pub fn weight_count(&self) -> usize {
        self.cin * self.cout * self.k * self.k
    }
}

impl UNetSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 || self.base_channels == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::Validation(format!("invalid network spec {self:?}")));
        }
        if self.kernel % 2 == 0 {
            return Err(Error::Validation(format!("kernel size must be odd, got {}", self.kernel)));
        }
        Ok(())
    }

    pub fn check_resolution(&self, resolution: usize) -> Result<()> {
        let factor = 1usize << self.depth;
        if resolution == 0 || resolution % factor != 0 {
            return Err(Error::Validation(format!(
                "resolution {resolution} is not divisible by 2^{} = {factor}",
                self.depth
            )));
        }
        Ok(())
    }

    pub fn level_channels(&self, level: usize) -> usize {
        self.base_channels << level
    }

    /// Convolutions in build (and weight-file) order.
    pub fn layers(&self) -> Vec<ConvShape> {
        let k = self.kernel;
        let mut layers = Vec::new();
        let mut cin = self.in_channels;
        for l in 0..self.depth {
            let c = self.level_channels(l);
            layers.push(ConvShape { cin, cout: c, k });
            layers.push(ConvShape { cin: c, cout: c, k });
            cin = c;
        }
        let cb = self.level_channels(self.depth);
        layers.push(ConvShape { cin, cout: cb, k });
        layers.push(ConvShape { cin: cb, cout: cb, k });
        let mut below = cb;
        for l in (0..self.depth).rev() {
            let c = self.level_channels(l);
            layers.push(ConvShape { cin: below + c, cout: c, k });
            layers.push(ConvShape { cin: c, cout: c, k });
            below = c;
        }
        layers.push(ConvShape {
            cin: below,
            cout: self.out_channels,
            k: 1,
        });
        layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().iter().map(|l| l.weight_count() + l.cout).sum()
    }
}

/// Network weights: a `(weight, bias)` parameter pair per convolution, in build order.
#[derive(Debug, Clone)]
pub struct UNet<F> {
    pub spec: UNetSpec,
    pub params: Vec<Parameter<F>>,
}

impl<F: Float> UNet<F> {
    /// Fan-in scaled uniform initialization, `U(-sqrt(6 / fan_in), sqrt(6 / fan_in))`,
    /// zero biases.
    pub fn build(spec: UNetSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::new();
        for layer in spec.layers() {
            let fan_in = (layer.cin * layer.k * layer.k) as f64;
            let bound = (6.0 / fan_in).sqrt();
            let w: Vec<F> = (0..layer.weight_count())
                .map(|_| F::from_f64(rng.random_range(-bound..bound)))
                .collect();
            let wt = Tensor::new(&[layer.cout, layer.cin, layer.k, layer.k], w)?;
            params.push(Parameter::new(wt, true));
            params.push(Parameter::new(Tensor::zeros(&[layer.cout]), false));
        }
        Ok(UNet { spec, params })
    }

    /// Rebuilds a network from flattened weights in build order.
    pub fn from_flat(spec: UNetSpec, flat: &[F]) -> Result<Self> {
        spec.validate()?;
        let expected = spec.parameter_count();
        if flat.len() != expected {
            return Err(Error::Integrity(format!(
                "weight count mismatch: spec implies {expected}, got {}",
                flat.len()
            )));
        }
        let mut params = Vec::new();
        let mut at = 0;
        for layer in spec.layers() {
            let n = layer.weight_count();
            let w = Tensor::new(&[layer.cout, layer.cin, layer.k, layer.k], flat[at..at + n].to_vec())?;
            at += n;
            let b = Tensor::new(&[layer.cout], flat[at..at + layer.cout].to_vec())?;
            at += layer.cout;
            params.push(Parameter::new(w, true));
            params.push(Parameter::new(b, false));
        }
        Ok(UNet { spec, params })
    }

    pub fn flat_weights(&self) -> Vec<F> {
        self.params.iter().flat_map(|p| p.value.data().iter().copied()).collect()
    }

    pub fn cast<G: Float>(&self) -> UNet<G> {
        UNet {
            spec: self.spec,
            params: self
                .params
                .iter()
                .map(|p| Parameter::new(p.value.cast(), p.penalized))
                .collect(),
        }
    }

    /// Records all parameters as gradient-carrying leaves.
    pub fn bind(&self, tape: &mut Tape<F>) -> Vec<Var> {
        self.params.iter().map(|p| tape.leaf(p.value.clone(), true)).collect()
    }
}

/// Forward pass over bound parameter vars; `x` is `(batch, in_channels, h, w)`.
pub fn forward<F: Float>(
    spec: &UNetSpec,
    tape: &mut Tape<F>,
    params: &[Var],
    x: Var,
) -> urbanwind_autodiff::Result<Var> {
    let mut next = params.chunks_exact(2);
    let mut conv_relu = |tape: &mut Tape<F>, input: Var| -> urbanwind_autodiff::Result<Var> {
        let pair = next.next().expect("parameter list matches spec");
        let y = tape.conv2d(input, pair[0], pair[1])?;
        Ok(tape.relu(y))
    };
    let mut skips = Vec::with_capacity(spec.depth);
    let mut h = x;
    for _ in 0..spec.depth {
        h = conv_relu(tape, h)?;
        h = conv_relu(tape, h)?;
        skips.push(h);
        h = tape.maxpool2(h)?;
    }
    h = conv_relu(tape, h)?;
    h = conv_relu(tape, h)?;
    for skip in skips.into_iter().rev() {
        let up = tape.upsample2(h)?;
        h = tape.concat_channels(up, skip)?;
        h = conv_relu(tape, h)?;
        h = conv_relu(tape, h)?;
    }
    let last = params.len() - 2;
    tape.conv2d(h, params[last], params[last + 1])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bottleneck_shape_at_64() {
        let spec = UNetSpec::default();
        let net = UNet::<f32>::build(spec, 1).unwrap();
        let mut tape = Tape::new();
        let vars = net.bind(&mut tape);
        let x = tape.leaf(Tensor::zeros(&[1, 1, 64, 64]), false);
        let out = forward(&spec, &mut tape, &vars, x).unwrap();
        assert_eq!(tape.value(out).shape(), &[1, 1, 64, 64]);
        let layers = spec.layers();
        let bott = layers[2 * spec.depth];
        assert_eq!(bott.cout, 128);
        // the bottleneck runs at 64 / 2^3
        assert_eq!(64 >> spec.depth, 8);
    }

    #[test]
    fn parameter_count_closed_form() {
        // layer-by-layer count for depth 3, base 16, kernel 5
        let k2 = 25;
        let convs = [
            (1, 16),
            (16, 16),
            (16, 32),
            (32, 32),
            (32, 64),
            (64, 64),
            (64, 128),
            (128, 128),
            (192, 64),
            (64, 64),
            (96, 32),
            (32, 32),
            (48, 16),
            (16, 16),
        ];
        let expected: usize = convs.iter().map(|(i, o)| i * o * k2 + o).sum::<usize>() + 16 + 1;
        let spec = UNetSpec::default();
        assert_eq!(spec.parameter_count(), expected);
        let net = UNet::<f32>::build(spec, 0).unwrap();
        assert_eq!(net.flat_weights().len(), expected);
    }

    #[test]
    fn build_is_deterministic() {
        let a = UNet::<f32>::build(UNetSpec::default(), 42).unwrap().flat_weights();
        let b = UNet::<f32>::build(UNetSpec::default(), 42).unwrap().flat_weights();
        let c = UNet::<f32>::build(UNetSpec::default(), 43).unwrap().flat_weights();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn resolution_divisibility() {
        let spec = UNetSpec::default();
        assert!(spec.check_resolution(64).is_ok());
        assert!(spec.check_resolution(36).is_err());
        assert!(UNetSpec { kernel: 4, ..spec }.validate().is_err());
    }

    #[test]
    fn flat_round_trip() {
        let spec = UNetSpec {
            base_channels: 4,
            ..Default::default()
        };
        let net = UNet::<f32>::build(spec, 3).unwrap();
        let flat = net.flat_weights();
        assert_eq!(UNet::from_flat(spec, &flat).unwrap().flat_weights(), flat);
        assert!(matches!(UNet::<f32>::from_flat(spec, &flat[1..]), Err(Error::Integrity(_))));
    }
}
