use serde::{Deserialize, Serialize};

/// Adam moments for one primitive's 11 parameters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: [f64; 11],
    pub v: [f64; 11],
    pub t: u64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamHyper {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamState {
    /// One update of `params` in place. `lr` is per parameter.
    pub fn update(&mut self, params: &mut [f64; 11], grad: &[f64; 11], lr: &[f64; 11], hyper: &AdamHyper) {
        self.t += 1;
        let AdamHyper { beta1, beta2, eps } = *hyper;
        let c1 = 1.0 - beta1.powf(self.t as f64);
        let c2 = 1.0 - beta2.powf(self.t as f64);
        for k in 0..11 {
            self.m[k] = beta1 * self.m[k] + (1.0 - beta1) * grad[k];
            self.v[k] = beta2 * self.v[k] + (1.0 - beta2) * grad[k] * grad[k];
            let m_hat = self.m[k] / c1;
            let v_hat = self.v[k] / c2;
            params[k] -= lr[k] * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
