//! Recurrent summaries that read a modality's nodes in retrieval order.
//! Used only as order-dependent baselines for the graph summary.

use crate::numeric::{GruCache, GruCell, LstmCache, LstmCell, Tensor};

#[derive(Clone, Debug)]
pub enum SequenceTape {
    Gru(Vec<GruCache>),
    Lstm(Vec<LstmCache>),
}

#[derive(Clone, Copy, Debug)]
pub enum SequenceSummary {
    Gru(GruCell),
    Lstm(LstmCell),
}

impl SequenceSummary {
    fn hidden(&self) -> usize {
        match self {
            SequenceSummary::Gru(c) => c.hidden,
            SequenceSummary::Lstm(c) => c.hidden,
        }
    }

    /// Final hidden state after reading `inputs` in order; zero for no inputs.
    pub fn forward(&self, values: &[Tensor], inputs: &[&[f64]]) -> (Vec<f64>, SequenceTape) {
        let width = self.hidden();
        match self {
            SequenceSummary::Gru(cell) => {
                let mut h = vec![0.0; width];
                let mut tape = Vec::with_capacity(inputs.len());
                for x in inputs {
                    let (next, cache) = cell.forward(values, &h, x);
                    h = next;
                    tape.push(cache);
                }
                (h, SequenceTape::Gru(tape))
            }
            SequenceSummary::Lstm(cell) => {
                let mut h = vec![0.0; width];
                let mut c = vec![0.0; width];
                let mut tape = Vec::with_capacity(inputs.len());
                for x in inputs {
                    let (nh, nc, cache) = cell.forward(values, &h, &c, x);
                    h = nh;
                    c = nc;
                    tape.push(cache);
                }
                (h, SequenceTape::Lstm(tape))
            }
        }
    }

    /// Returns input gradients in input order.
    pub fn backward(&self, values: &[Tensor], grads: &mut [Tensor], tape: &SequenceTape, d_summary: &[f64]) -> Vec<Vec<f64>> {
        match (self, tape) {
            (SequenceSummary::Gru(cell), SequenceTape::Gru(caches)) => {
                let mut dh = d_summary.to_vec();
                let mut dx = vec![Vec::new(); caches.len()];
                for (t, cache) in caches.iter().enumerate().rev() {
                    let (d_prev, d_in) = cell.backward(values, grads, cache, &dh);
                    dh = d_prev;
                    dx[t] = d_in;
                }
                dx
            }
            (SequenceSummary::Lstm(cell), SequenceTape::Lstm(caches)) => {
                let mut dh = d_summary.to_vec();
                let mut dc = vec![0.0; cell.hidden];
                let mut dx = vec![Vec::new(); caches.len()];
                for (t, cache) in caches.iter().enumerate().rev() {
                    let (d_prev_h, d_prev_c, d_in) = cell.backward(values, grads, cache, &dh, &dc);
                    dh = d_prev_h;
                    dc = d_prev_c;
                    dx[t] = d_in;
                }
                dx
            }
            _ => unreachable!("sequence tape does not match its cell"),
        }
    }
}
