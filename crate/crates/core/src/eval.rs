//! Test-set accuracy and loss of a global model.

use serde::{Deserialize, Serialize};

use crate::config::ModelKind;
use crate::model::ModelParams;
use crate::trainer::net::{self, Batch, TrainError, TrainerModel};
use crate::trainer::Dataset;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Percent of samples whose argmax prediction equals the label.
    pub accuracy: f64,
    /// Cross-entropy divided by the number of samples.
    pub loss: f64,
}

/// Model kind implied by the number of layers in `params`.
pub fn infer_kind(params: &ModelParams) -> ModelKind {
    if params.shape().0.len() >= 2 {
        ModelKind::Mlp1Hidden
    } else {
        ModelKind::SoftmaxRegression
    }
}

/// Accuracy (percent, argmax ties to the lowest class) and per-sample loss.
pub fn evaluate(global: &ModelParams, test: &Dataset) -> Result<Evaluation, TrainError> {
    let model = TrainerModel::from_params(infer_kind(global), global.clone())?;
    if test.dim() != model.input_dim() {
        return Err(TrainError::DimensionMismatch {
            expected: model.input_dim(),
            actual: test.dim(),
        });
    }
    if test.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let probs = net::probabilities(&model, Batch::all(test));
    let predictions = net::argmax_rows(probs.view());
    let correct = predictions.iter().zip(test.labels()).filter(|(p, y)| p == y).count();
    Ok(Evaluation {
        accuracy: accuracy_pct(correct, test.len()),
        loss: net::loss_from_probs(probs.view(), test.labels()).per_sample,
    })
}

pub fn accuracy_pct(correct: usize, total: usize) -> f64 {
    100.0 * correct as f64 / total as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ShapeTag;
    use crate::trainer::Split;
    use ndarray::array;

    #[test]
    fn ratio_examples() {
        assert_eq!(accuracy_pct(9500, 10000), 95.0);
        assert!((accuracy_pct(2, 3) - 66.667).abs() < 1e-3);
    }

    #[test]
    fn hand_built_three_sample_set() {
        // identity weights: prediction is the index of the largest feature
        let params = ModelParams::new(
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0],
            ShapeTag::dense(&[3, 3]),
        )
        .unwrap();
        let x = array![[0.9, 0.1, 0.0], [0.0, 0.2, 0.8], [0.3, 0.6, 0.1]];
        // predictions 0, 2, 1; labels 0, 2, 0
        let test = Dataset::new(x, vec![0, 2, 0], 3, Split::Test).unwrap();
        let eval = evaluate(&params, &test).unwrap();
        assert!((eval.accuracy - 200.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn uniform_predictor_scores_class_zero_frequency() {
        let params = ModelParams::zeros(ShapeTag::dense(&[2, 4]));
        let x = array![[0.1, 0.2], [0.3, 0.4], [0.5, 0.6], [0.7, 0.8], [0.9, 1.0]];
        let test = Dataset::new(x, vec![0, 1, 0, 3, 2], 4, Split::Test).unwrap();
        let eval = evaluate(&params, &test).unwrap();
        assert_eq!(eval.accuracy, 40.0);
        assert!((eval.loss - 4f64.ln()).abs() < 1e-12);
    }
}
