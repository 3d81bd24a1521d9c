use super::params::{Gradients, NetParams, ParamGroup};

/// Scales the gradients of `group` so their joint L2 norm is at most
/// `max_norm`. Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut Gradients, group: ParamGroup, max_norm: f64) -> f64 {
    let norm = grads
        .tensors()
        .iter()
        .filter(|(_, g, _)| *g == group)
        .flat_map(|(_, _, t)| t.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for (g, mut t) in grads.tensors_mut() {
            if g == group {
                t.mapv_inplace(|v| v * s);
            }
        }
    }
    norm
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

/// SGD with momentum and L2 weight decay:
/// `v = momentum * v + g + weight_decay * p; p -= lr * v`.
#[derive(Debug, Clone)]
pub struct Sgd {
    velocity: NetParams,
}

impl Sgd {
    pub fn new(params: &NetParams) -> Self {
        Sgd {
            velocity: params.zeros_like(),
        }
    }

    pub fn reset(&mut self, params: &NetParams) {
        self.velocity = params.zeros_like();
    }

    /// Updates only tensors whose group is in `groups`.
    pub fn step(
        &mut self,
        params: &mut NetParams,
        grads: &Gradients,
        groups: &[ParamGroup],
        cfg: &SgdConfig,
    ) {
        let g = grads.tensors();
        let v = self.velocity.tensors_mut();
        let p = params.tensors_mut();
        assert_eq!(g.len(), p.len(), "gradient layout mismatch");
        assert_eq!(v.len(), p.len(), "velocity layout mismatch");
        for (((_, group, g), (_, mut v)), (_, mut p)) in g.into_iter().zip(v).zip(p) {
            if !groups.contains(&group) {
                continue;
            }
            ndarray::Zip::from(&mut p)
                .and(&mut v)
                .and(&g)
                .for_each(|p, v, &g| {
                    *v = cfg.momentum * *v + g + cfg.weight_decay * *p;
                    *p -= cfg.lr * *v;
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::params::NetConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny() -> NetParams {
        let cfg = NetConfig {
            input_dim: 3,
            hidden: 2,
            n_fc: 1,
            ..NetConfig::default()
        };
        NetParams::init(&cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
    }

    #[test]
    fn clipping_touches_only_group() {
        let p = tiny();
        let mut g = p.zeros_like();
        g.lstm[0].bias.fill(1.0);
        g.out.bias.fill(5.0);
        let before = clip_grad_norm(&mut g, ParamGroup::Lstm, 0.1);
        assert!((before - 8f64.sqrt()).abs() < 1e-12);
        let after: f64 = g.lstm[0].bias.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((after - 0.1).abs() < 1e-12);
        assert!(g.out.bias.iter().all(|&v| v == 5.0));
    }

    #[test]
    fn momentum_step() {
        let mut p = tiny();
        p.out.bias.fill(1.0);
        let mut g = p.zeros_like();
        g.out.bias.fill(2.0);
        let cfg = SgdConfig {
            lr: 0.1,
            momentum: 0.5,
            weight_decay: 0.0,
        };
        let mut opt = Sgd::new(&p);
        let fc_before = p.fc[0].weight.clone();
        opt.step(&mut p, &g, &[ParamGroup::Out], &cfg);
        assert!((p.out.bias[0] - 0.8).abs() < 1e-12);
        opt.step(&mut p, &g, &[ParamGroup::Out], &cfg);
        // v = 0.5 * 2 + 2 = 3
        assert!((p.out.bias[0] - 0.5).abs() < 1e-12);
        assert_eq!(p.fc[0].weight, fc_before);
    }
}
