use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::PooledState;
use crate::backbone::nn::{Grads, Linear, ParamGroup, ParamStore};
use crate::error::{Error, Result};

pub const HEAD_HIDDEN: usize = 2048;
pub const DEFAULT_DROPOUT: f64 = 0.1;

/// `dropout → FC(dim → 2048) → ReLU → FC(2048 → 1)`.
#[derive(Debug, Clone)]
pub struct MlpHead {
    pub dim: usize,
    pub dropout_rate: f64,
    store: ParamStore,
    fc1: Linear,
    fc2: Linear,
}

pub struct HeadCache {
    input: Array2<f64>,
    pre_act: Array2<f64>,
    act: Array2<f64>,
    mask_scale: Array1<f64>,
}

impl MlpHead {
    pub fn new(dim: usize, dropout_rate: f64, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Argument("head input dim must be > 0".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::Argument(format!("dropout rate {dropout_rate} outside [0, 1)")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let fc1 = Linear::new(&mut store, "head.fc1", ParamGroup::Head, dim, HEAD_HIDDEN, 2f64.sqrt(), &mut rng);
        let fc2 = Linear::new(&mut store, "head.fc2", ParamGroup::Head, HEAD_HIDDEN, 1, 0.1, &mut rng);
        store.get_mut(fc2.b).fill(0.5);
        Ok(MlpHead {
            dim,
            dropout_rate,
            store,
            fc1,
            fc2,
        })
    }

    /// Head whose weights are all zero and whose output bias is `bias`.
    pub fn constant(dim: usize, bias: f64) -> Result<Self> {
        let mut head = MlpHead::new(dim, 0.0, 0)?;
        for p in head.store.params_mut() {
            p.value.fill(0.0);
        }
        head.store.get_mut(head.fc2.b).fill(bias);
        Ok(head)
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn fc1_weight_mut(&mut self) -> &mut Array2<f64> {
        self.store.get_mut(self.fc1.w)
    }

    pub fn fc1_bias_mut(&mut self) -> &mut Array2<f64> {
        self.store.get_mut(self.fc1.b)
    }

    pub fn fc2_weight_mut(&mut self) -> &mut Array2<f64> {
        self.store.get_mut(self.fc2.w)
    }

    pub fn fc2_bias_mut(&mut self) -> &mut Array2<f64> {
        self.store.get_mut(self.fc2.b)
    }

    fn check(&self, s: &PooledState) -> Result<()> {
        if s.vector.len() != self.dim {
            return Err(Error::Shape(format!(
                "pooled state has dim {}, head expects {}",
                s.vector.len(),
                self.dim
            )));
        }
        Ok(())
    }

    /// Eval-mode forward; no dropout.
    pub fn forward(&self, s: &PooledState) -> Result<f64> {
        self.check(s)?;
        let x = s.vector.view().insert_axis(Axis(0));
        let h = self.fc1.forward(&self.store, x).mapv(|v| v.max(0.0));
        Ok(self.fc2.forward(&self.store, h.view())[[0, 0]])
    }

    /// Training forward with inverted dropout drawn from `rng`.
    pub fn forward_train<R: Rng + ?Sized>(&self, s: &PooledState, rng: &mut R) -> Result<(f64, HeadCache)> {
        self.check(s)?;
        let keep = 1.0 - self.dropout_rate;
        let mask: Array1<f64> = (0..self.dim)
            .map(|_| {
                if self.dropout_rate == 0.0 || rng.random::<f64>() < keep {
                    1.0 / keep
                } else {
                    0.0
                }
            })
            .collect();
        Ok(self.forward_masked(s, mask))
    }

    /// Eval-mode forward that also returns the backward cache.
    pub fn forward_cached(&self, s: &PooledState) -> Result<(f64, HeadCache)> {
        self.check(s)?;
        Ok(self.forward_masked(s, Array1::ones(self.dim)))
    }

    fn forward_masked(&self, s: &PooledState, mask_scale: Array1<f64>) -> (f64, HeadCache) {
        let input = (&s.vector * &mask_scale).insert_axis(Axis(0));
        let pre_act = self.fc1.forward(&self.store, input.view());
        let act = pre_act.mapv(|v| v.max(0.0));
        let y = self.fc2.forward(&self.store, act.view())[[0, 0]];
        (
            y,
            HeadCache {
                input,
                pre_act,
                act,
                mask_scale,
            },
        )
    }

    /// Accumulates head gradients; returns d(loss)/d(pooled state).
    pub fn backward(&self, cache: &HeadCache, dy: f64, grads: &mut Grads) -> Array1<f64> {
        let dout = Array2::from_elem((1, 1), dy);
        let dact = self.fc2.backward(&self.store, grads, cache.act.view(), dout.view());
        let dpre = &dact * &cache.pre_act.mapv(|v| if v > 0.0 { 1.0 } else { 0.0 });
        let din = self.fc1.backward(&self.store, grads, cache.input.view(), dpre.view());
        &din.row(0) * &cache.mask_scale
    }
}

/// `training` selects dropout; `rng` is required only then.
pub fn mlp_forward(head: &MlpHead, s: &PooledState, training: bool, rng: Option<&mut ChaCha8Rng>) -> Result<f64> {
    match (training, rng) {
        (true, Some(rng)) => head.forward_train(s, rng).map(|(y, _)| y),
        (true, None) => Err(Error::Argument("training forward needs an RNG for dropout".into())),
        (false, _) => head.forward(s),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pooled(v: Vec<f64>) -> PooledState {
        PooledState { vector: Array1::from(v) }
    }

    #[test]
    fn zero_weights_output_bias() {
        let head = MlpHead::constant(4, 0.37).unwrap();
        assert_eq!(head.forward(&pooled(vec![1.0, -2.0, 3.0, 9.0])).unwrap(), 0.37);
    }

    #[test]
    fn eval_is_deterministic() {
        let head = MlpHead::new(4, 0.5, 1).unwrap();
        let s = pooled(vec![0.1, 0.2, -0.3, 0.4]);
        assert_eq!(head.forward(&s).unwrap(), head.forward(&s).unwrap());
        assert_eq!(mlp_forward(&head, &s, false, None).unwrap(), head.forward(&s).unwrap());
    }

    #[test]
    fn hand_computed_one_dim_head() {
        // two active hidden units: relu(2x + 1) and relu(-x + 0.5)
        let mut head = MlpHead::constant(1, 0.25).unwrap();
        head.fc1_weight_mut()[[0, 0]] = 2.0;
        head.fc1_bias_mut()[[0, 0]] = 1.0;
        head.fc1_weight_mut()[[0, 1]] = -1.0;
        head.fc1_bias_mut()[[0, 1]] = 0.5;
        head.fc2_weight_mut()[[0, 0]] = 0.5;
        head.fc2_weight_mut()[[1, 0]] = 3.0;
        // x = 0.2: 0.5 * 1.4 + 3 * 0.3 + 0.25 = 1.85
        assert!((head.forward(&pooled(vec![0.2])).unwrap() - 1.85).abs() < 1e-12);
        // x = 1.0: 0.5 * 3 + 3 * relu(-0.5) + 0.25 = 1.75
        assert!((head.forward(&pooled(vec![1.0])).unwrap() - 1.75).abs() < 1e-12);
    }

    #[test]
    fn dim_mismatch_is_shape_error() {
        let head = MlpHead::new(4, 0.1, 1).unwrap();
        assert!(matches!(head.forward(&pooled(vec![1.0])), Err(Error::Shape(_))));
        assert!(MlpHead::new(4, 1.0, 1).is_err());
    }

    #[test]
    fn training_dropout_varies_with_rng() {
        let head = MlpHead::new(16, 0.5, 3).unwrap();
        let s = pooled((0..16).map(|i| i as f64 * 0.1).collect());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let outs: Vec<f64> = (0..5).map(|_| mlp_forward(&head, &s, true, Some(&mut rng)).unwrap()).collect();
        assert!(outs.windows(2).any(|w| w[0] != w[1]));
        assert!(mlp_forward(&head, &s, true, None).is_err());
    }
}
