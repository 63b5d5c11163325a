use super::tensor::Scalar;

/// AdamW with decoupled weight decay applied to every parameter tensor.
/// Moment buffers are kept in f64 regardless of the training dtype so the
/// update math is identical between f32 and f64 models.
pub struct AdamW {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(lr: f64, betas: (f64, f64), eps: f64, weight_decay: f64) -> Self {
        AdamW {
            lr,
            beta1: betas.0,
            beta2: betas.1,
            eps,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update over (value, grad) pairs; pair order must be stable
    /// across calls since moments are matched by position.
    pub fn step<S: Scalar>(&mut self, params: &mut [(&mut Vec<S>, &mut Vec<S>)]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|(p, _)| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        assert_eq!(self.m.len(), params.len(), "parameter group count changed");
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (idx, (p, g)) in params.iter_mut().enumerate() {
            let m = &mut self.m[idx];
            let v = &mut self.v[idx];
            for i in 0..p.len() {
                let gi = g[i].to_f64();
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * gi;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                let pi = p[i].to_f64();
                let updated = pi - self.lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * pi);
                p[i] = S::from_f64(updated);
            }
        }
    }
}

/// Halves the learning rate when the monitored metric (mode max) stops
/// improving for `patience` consecutive epochs.
pub struct PlateauScheduler {
    pub factor: f64,
    pub patience: usize,
    best: f64,
    bad_epochs: usize,
}

impl PlateauScheduler {
    pub fn new(factor: f64, patience: usize) -> Self {
        PlateauScheduler {
            factor,
            patience,
            best: f64::NEG_INFINITY,
            bad_epochs: 0,
        }
    }

    /// Feeds one epoch's metric; returns the new learning rate.
    pub fn step(&mut self, metric: f64, lr: f64) -> f64 {
        if metric > self.best {
            self.best = metric;
            self.bad_epochs = 0;
            lr
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs > self.patience {
                self.bad_epochs = 0;
                lr * self.factor
            } else {
                lr
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adamw_first_step_matches_hand_formula() {
        let mut opt = AdamW::new(0.1, (0.9, 0.999), 1e-8, 0.0);
        let mut p = vec![1.0f64];
        let mut g = vec![0.5f64];
        opt.step(&mut [(&mut p, &mut g)]);
        // bias-corrected m_hat = g, v_hat = g^2 -> step = lr * g/|g| = lr
        assert!((p[0] - (1.0 - 0.1 * (0.5 / (0.5 + 1e-8)))).abs() < 1e-12);
    }

    #[test]
    fn weight_decay_is_decoupled_from_gradient() {
        let mut opt = AdamW::new(0.1, (0.9, 0.999), 1e-8, 0.01);
        let mut p = vec![2.0f64];
        let mut g = vec![0.0f64];
        opt.step(&mut [(&mut p, &mut g)]);
        // zero gradient: only the decay term moves the parameter
        assert!((p[0] - (2.0 - 0.1 * 0.01 * 2.0)).abs() < 1e-12);
    }

    #[test]
    fn zero_lr_freezes_parameters() {
        let mut opt = AdamW::new(0.0, (0.9, 0.999), 1e-8, 0.01);
        let mut p = vec![1.5f32, -0.25];
        let mut g = vec![1.0f32, -2.0];
        let before = p.clone();
        opt.step(&mut [(&mut p, &mut g)]);
        assert_eq!(p, before);
    }

    #[test]
    fn plateau_halves_after_patience_bad_epochs() {
        let mut sched = PlateauScheduler::new(0.5, 2);
        let mut lr = 1.0;
        lr = sched.step(0.8, lr);
        assert_eq!(lr, 1.0);
        lr = sched.step(0.7, lr); // bad 1
        lr = sched.step(0.7, lr); // bad 2
        assert_eq!(lr, 1.0);
        lr = sched.step(0.7, lr); // bad 3 > patience
        assert_eq!(lr, 0.5);
        lr = sched.step(0.9, lr); // improvement resets
        assert_eq!(lr, 0.5);
    }
}
