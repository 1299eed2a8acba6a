use super::{Grads, Sequential};

/// Plain gradient descent with a constant step size.
#[derive(Clone, Copy, Debug)]
pub struct Sgd {
    pub learning_rate: f64,
}

impl Sgd {
    pub fn step(&self, net: &mut Sequential, grads: &Grads) {
        let lr = self.learning_rate;
        net.update_with(grads, |_, _, p, g| *p -= lr * g);
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(net: &Sequential, learning_rate: f64, beta1: f64, beta2: f64) -> Self {
        let zeros: Vec<Vec<f64>> = net.layers.iter().map(|l| vec![0.0; l.param_count()]).collect();
        Adam {
            learning_rate,
            beta1,
            beta2,
            eps: 1e-8,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, net: &mut Sequential, grads: &Grads) {
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let lr = self.learning_rate;
        let (m, v) = (&mut self.m, &mut self.v);
        net.update_with(grads, |li, j, p, g| {
            let mj = &mut m[li][j];
            let vj = &mut v[li][j];
            *mj = b1 * *mj + (1.0 - b1) * g;
            *vj = b2 * *vj + (1.0 - b2) * g * g;
            *p -= lr * (*mj / c1) / ((*vj / c2).sqrt() + eps);
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Init, Layer, Tensor};
    use rand::SeedableRng;

    fn quadratic_step(opt: &mut dyn FnMut(&mut Sequential, &Grads), net: &mut Sequential) -> f64 {
        // loss = 0.5 * ||W x - 1||^2 for x = [1, 1]
        let x = Tensor::new(vec![1, 2], vec![1.0, 1.0]);
        let tape = net.forward_tape(&x);
        let y = tape.output().clone();
        let resid: Vec<f64> = y.data().iter().map(|v| v - 1.0).collect();
        let loss = 0.5 * resid.iter().map(|r| r * r).sum::<f64>();
        let (_, g) = net.backward(&tape, &Tensor::new(vec![1, 1], resid), true);
        opt(net, &g.unwrap());
        loss
    }

    #[test]
    fn both_optimizers_descend() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let base = Sequential::new(vec![Layer::dense(2, 1, Init::He, &mut rng)]);
        let mut net = base.clone();
        let sgd = Sgd { learning_rate: 0.1 };
        let first = quadratic_step(&mut |n, g| sgd.step(n, g), &mut net);
        let mut last = first;
        for _ in 0..50 {
            last = quadratic_step(&mut |n, g| sgd.step(n, g), &mut net);
        }
        assert!(last < first * 1e-3);

        let mut net = base.clone();
        let mut adam = Adam::new(&net, 0.05, 0.9, 0.999);
        let first = quadratic_step(&mut |n, g| adam.step(n, g), &mut net);
        for _ in 0..300 {
            last = quadratic_step(&mut |n, g| adam.step(n, g), &mut net);
        }
        assert!(last < first * 1e-2, "{first} -> {last}");
    }

    #[test]
    fn zero_gradient_leaves_params_fixed() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2);
        let mut net = Sequential::new(vec![Layer::dense(3, 2, Init::He, &mut rng)]);
        let before = net.params_flat();
        let mut adam = Adam::new(&net, 0.1, 0.5, 0.999);
        let zero = Grads::zeros_like(&net);
        adam.step(&mut net, &zero);
        Sgd { learning_rate: 0.1 }.step(&mut net, &zero);
        assert_eq!(net.params_flat(), before);
    }
}
