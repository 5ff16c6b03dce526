use crate::error::Result;
use crate::store::Ctx;
use crate::tensor::Tensor;

/// Inverted dropout: active only in train mode, identity in eval, so no
/// rescaling is needed at inference.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub p: f64,
}

#[derive(Debug)]
pub struct DropoutCache {
    mask: Option<Tensor>,
}

impl Dropout {
    pub fn new(p: f64) -> Self {
        debug_assert!((0.0..1.0).contains(&p), "dropout rate must be in [0, 1)");
        Dropout { p }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: &Tensor) -> Result<(Tensor, DropoutCache)> {
        match ctx {
            Ctx::Train { rng, .. } if self.p > 0.0 => {
                let keep = 1.0 - self.p;
                let mask = Tensor::from_fn(x.shape(), |_| {
                    if rng.bernoulli(keep) {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                let y = x.mul_elem(&mask)?;
                Ok((y, DropoutCache { mask: Some(mask) }))
            }
            _ => Ok((x.clone(), DropoutCache { mask: None })),
        }
    }

    pub fn backward(&self, cache: &DropoutCache, dy: &Tensor) -> Result<Tensor> {
        match &cache.mask {
            Some(mask) => dy.mul_elem(mask),
            None => Ok(dy.clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use crate::store::ParamStore;

    #[test]
    fn eval_mode_is_identity() {
        let ps = ParamStore::new();
        let drop = Dropout::new(0.5);
        let x = Tensor::from_fn(&[4, 4], |i| i as f64);
        let mut ctx = Ctx::Eval { ps: &ps };
        let (y, _) = drop.forward(&mut ctx, &x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn train_mode_zeroes_and_rescales() {
        let mut ps = ParamStore::new();
        let mut rng = Rng::seed_from_u64(9);
        let drop = Dropout::new(0.5);
        let x = Tensor::filled(&[100, 10], 1.0);
        let mut ctx = Ctx::Train {
            ps: &mut ps,
            rng: &mut rng,
        };
        let (y, _) = drop.forward(&mut ctx, &x).unwrap();
        let zeros = y.data().iter().filter(|&&v| v == 0.0).count();
        let kept = y.data().iter().filter(|&&v| (v - 2.0).abs() < 1e-12).count();
        assert_eq!(zeros + kept, 1000);
        assert!(zeros > 400 && zeros < 600, "zeros = {zeros}");
    }
}
