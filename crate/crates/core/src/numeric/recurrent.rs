//! Gated recurrent cells with explicit backward passes.

use rand::Rng;

use super::dense::sigmoid;
use super::tensor::{matvec, matvec_t_acc, outer_acc};
use super::{NumericError, ParamId, ParamRegistry, Tensor};

/// GRU without gate biases:
///
/// ```text
/// z  = σ(W_z a + U_z h)
/// r  = σ(W_r a + U_r h)
/// h~ = tanh(W a + U (r ⊙ h))
/// h' = (1 - z) ⊙ h + z ⊙ h~
/// ```
///
/// `W_*` are `hidden × input`, `U_*` are `hidden × hidden`.
#[derive(Clone, Copy, Debug)]
pub struct GruCell {
    pub w_update: ParamId,
    pub u_update: ParamId,
    pub w_reset: ParamId,
    pub u_reset: ParamId,
    pub w_candidate: ParamId,
    pub u_candidate: ParamId,
    pub hidden: usize,
    pub input: usize,
}

#[derive(Clone, Debug)]
pub struct GruCache {
    h_prev: Vec<f64>,
    input: Vec<f64>,
    update: Vec<f64>,
    reset: Vec<f64>,
    candidate: Vec<f64>,
    reset_hidden: Vec<f64>,
}

impl GruCell {
    pub fn register<R: Rng>(
        registry: &mut ParamRegistry,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, NumericError> {
        let mut w = |name: &str, cols: usize, rng: &mut R| {
            registry.register_uniform(&format!("{prefix}.{name}"), &[hidden, cols], hidden, rng)
        };
        Ok(Self {
            w_update: w("w_update", input, rng)?,
            u_update: w("u_update", hidden, rng)?,
            w_reset: w("w_reset", input, rng)?,
            u_reset: w("u_reset", hidden, rng)?,
            w_candidate: w("w_candidate", input, rng)?,
            u_candidate: w("u_candidate", hidden, rng)?,
            hidden,
            input,
        })
    }

    pub fn forward(&self, values: &[Tensor], h_prev: &[f64], a: &[f64]) -> (Vec<f64>, GruCache) {
        assert_eq!(h_prev.len(), self.hidden, "gru hidden width");
        assert_eq!(a.len(), self.input, "gru input width");
        let gate = |w: ParamId, u: ParamId, h: &[f64]| -> Vec<f64> {
            matvec(&values[w.0], a)
                .into_iter()
                .zip(matvec(&values[u.0], h))
                .map(|(x, y)| x + y)
                .collect()
        };
        let update: Vec<f64> = gate(self.w_update, self.u_update, h_prev).into_iter().map(sigmoid).collect();
        let reset: Vec<f64> = gate(self.w_reset, self.u_reset, h_prev).into_iter().map(sigmoid).collect();
        let reset_hidden: Vec<f64> = reset.iter().zip(h_prev).map(|(r, h)| r * h).collect();
        let candidate: Vec<f64> = gate(self.w_candidate, self.u_candidate, &reset_hidden)
            .into_iter()
            .map(f64::tanh)
            .collect();
        let h_next = (0..self.hidden)
            .map(|i| (1.0 - update[i]) * h_prev[i] + update[i] * candidate[i])
            .collect();
        let cache = GruCache {
            h_prev: h_prev.to_vec(),
            input: a.to_vec(),
            update,
            reset,
            candidate,
            reset_hidden,
        };
        (h_next, cache)
    }

    /// Returns `(∂L/∂h_prev, ∂L/∂a)` and accumulates weight gradients.
    pub fn backward(
        &self,
        values: &[Tensor],
        grads: &mut [Tensor],
        cache: &GruCache,
        d_next: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let n = self.hidden;
        let mut d_prev: Vec<f64> = (0..n).map(|i| d_next[i] * (1.0 - cache.update[i])).collect();
        let mut d_input = vec![0.0; self.input];

        let d_cand_pre: Vec<f64> = (0..n)
            .map(|i| d_next[i] * cache.update[i] * (1.0 - cache.candidate[i] * cache.candidate[i]))
            .collect();
        let d_update_pre: Vec<f64> = (0..n)
            .map(|i| {
                let z = cache.update[i];
                d_next[i] * (cache.candidate[i] - cache.h_prev[i]) * z * (1.0 - z)
            })
            .collect();

        outer_acc(&mut grads[self.w_candidate.0], &d_cand_pre, &cache.input);
        outer_acc(&mut grads[self.u_candidate.0], &d_cand_pre, &cache.reset_hidden);
        matvec_t_acc(&values[self.w_candidate.0], &d_cand_pre, &mut d_input);
        let mut d_reset_hidden = vec![0.0; n];
        matvec_t_acc(&values[self.u_candidate.0], &d_cand_pre, &mut d_reset_hidden);

        let d_reset_pre: Vec<f64> = (0..n)
            .map(|i| {
                let r = cache.reset[i];
                d_reset_hidden[i] * cache.h_prev[i] * r * (1.0 - r)
            })
            .collect();
        for i in 0..n {
            d_prev[i] += d_reset_hidden[i] * cache.reset[i];
        }

        for (w, u, delta) in [
            (self.w_update, self.u_update, &d_update_pre),
            (self.w_reset, self.u_reset, &d_reset_pre),
        ] {
            outer_acc(&mut grads[w.0], delta, &cache.input);
            outer_acc(&mut grads[u.0], delta, &cache.h_prev);
            matvec_t_acc(&values[w.0], delta, &mut d_input);
            matvec_t_acc(&values[u.0], delta, &mut d_prev);
        }
        (d_prev, d_input)
    }
}

/// Standard LSTM cell with stacked gate weights in order input, forget,
/// output, candidate: `W` is `4H × input`, `U` is `4H × H`, `b` is `4H`.
#[derive(Clone, Copy, Debug)]
pub struct LstmCell {
    pub w: ParamId,
    pub u: ParamId,
    pub b: ParamId,
    pub hidden: usize,
    pub input: usize,
}

#[derive(Clone, Debug)]
pub struct LstmCache {
    input: Vec<f64>,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    gates: Vec<f64>,
    c_tanh: Vec<f64>,
}

impl LstmCell {
    pub fn register<R: Rng>(
        registry: &mut ParamRegistry,
        prefix: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, NumericError> {
        Ok(Self {
            w: registry.register_uniform(&format!("{prefix}.w"), &[4 * hidden, input], hidden, rng)?,
            u: registry.register_uniform(&format!("{prefix}.u"), &[4 * hidden, hidden], hidden, rng)?,
            b: registry.register_zeros(&format!("{prefix}.b"), &[4 * hidden])?,
            hidden,
            input,
        })
    }

    /// Returns `(h', c')`.
    pub fn forward(&self, values: &[Tensor], h_prev: &[f64], c_prev: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>, LstmCache) {
        let n = self.hidden;
        assert_eq!(x.len(), self.input, "lstm input width");
        let mut pre = matvec(&values[self.w.0], x);
        for ((p, v), b) in pre.iter_mut().zip(matvec(&values[self.u.0], h_prev)).zip(values[self.b.0].data()) {
            *p += v + b;
        }
        let gates: Vec<f64> = pre
            .iter()
            .enumerate()
            .map(|(i, &z)| if i < 3 * n { sigmoid(z) } else { z.tanh() })
            .collect();
        let (i_g, rest) = gates.split_at(n);
        let (f_g, rest) = rest.split_at(n);
        let (o_g, g_g) = rest.split_at(n);
        let c: Vec<f64> = (0..n).map(|k| f_g[k] * c_prev[k] + i_g[k] * g_g[k]).collect();
        let c_tanh: Vec<f64> = c.iter().map(|v| v.tanh()).collect();
        let h: Vec<f64> = (0..n).map(|k| o_g[k] * c_tanh[k]).collect();
        let cache = LstmCache {
            input: x.to_vec(),
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            gates,
            c_tanh,
        };
        (h, c, cache)
    }

    /// Returns `(∂L/∂h_prev, ∂L/∂c_prev, ∂L/∂x)`.
    pub fn backward(
        &self,
        values: &[Tensor],
        grads: &mut [Tensor],
        cache: &LstmCache,
        dh: &[f64],
        dc_next: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let n = self.hidden;
        let g = &cache.gates;
        let mut d_pre = vec![0.0; 4 * n];
        let mut dc_prev = vec![0.0; n];
        for k in 0..n {
            let (i_g, f_g, o_g, c_g) = (g[k], g[n + k], g[2 * n + k], g[3 * n + k]);
            let dc = dc_next[k] + dh[k] * o_g * (1.0 - cache.c_tanh[k] * cache.c_tanh[k]);
            d_pre[k] = dc * c_g * i_g * (1.0 - i_g);
            d_pre[n + k] = dc * cache.c_prev[k] * f_g * (1.0 - f_g);
            d_pre[2 * n + k] = dh[k] * cache.c_tanh[k] * o_g * (1.0 - o_g);
            d_pre[3 * n + k] = dc * i_g * (1.0 - c_g * c_g);
            dc_prev[k] = dc * f_g;
        }
        outer_acc(&mut grads[self.w.0], &d_pre, &cache.input);
        outer_acc(&mut grads[self.u.0], &d_pre, &cache.h_prev);
        for (gb, d) in grads[self.b.0].data_mut().iter_mut().zip(&d_pre) {
            *gb += d;
        }
        let mut dx = vec![0.0; self.input];
        matvec_t_acc(&values[self.w.0], &d_pre, &mut dx);
        let mut dh_prev = vec![0.0; n];
        matvec_t_acc(&values[self.u.0], &d_pre, &mut dh_prev);
        (dh_prev, dc_prev, dx)
    }
}
