use crate::diffcore::Tensor;
use crate::equivariance::{Record, SetFunction};

use super::model::LearnedModel;

/// Views a learned model as a set function over advertiser records
/// `[state (ds) ‖ action ‖ rep score]`. The record with the largest score is
/// the representative. Each output record is
/// `[next-state mean (ds) ‖ next-state variance (ds) ‖ reward mean ‖ reward variance]`,
/// so the reward part is expected to be identical across records.
pub struct ModelSetFunction<'a>(pub &'a LearnedModel);

impl SetFunction for ModelSetFunction<'_> {
    fn record_dim(&self) -> usize {
        self.0.spec().ds + 2
    }

    fn eval(&self, x: &[Record]) -> Vec<Record> {
        let ds = self.0.spec().ds;
        let n = x.len();
        let rep = (0..n)
            .max_by(|&i, &j| x[i][ds + 1].total_cmp(&x[j][ds + 1]))
            .expect("non-empty set");
        let states: Vec<f64> = x.iter().flat_map(|r| r[..ds].iter().copied()).collect();
        let actions: Vec<f64> = x.iter().map(|r| r[ds]).collect();
        let p = self
            .0
            .predict_batch_rep(&Tensor::row_vector(&states), &Tensor::row_vector(&actions), rep)
            .expect("model prediction");
        let (mean, var) = (p.mean.row(0), p.variance.row(0));
        (0..n)
            .map(|i| {
                let mut out = mean[i * ds..(i + 1) * ds].to_vec();
                out.extend_from_slice(&var[i * ds..(i + 1) * ds]);
                out.push(mean[n * ds]);
                out.push(var[n * ds]);
                out
            })
            .collect()
    }
}
