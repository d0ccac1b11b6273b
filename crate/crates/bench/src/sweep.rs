//! Parameter sweeps over the loss-mixing weight and the prediction-time
//! bias scalar, ranked on validation holdouts with test accuracy reported
//! alongside for reference.

use incrlearn_core::{beta_grid, BiasCorrection, Error, Result};

use crate::dataset::DatasetSpec;
use crate::protocol::{evaluate_accuracy, run_protocol, BetaMode, FinalState, ProtocolConfig};

/// The canonical sweep grid for the loss-mixing weight: endpoints plus the
/// odd tenths.
pub fn lambda_grid() -> Vec<f64> {
    vec![0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0]
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LambdaRow {
    pub lambda: f64,
    /// Final-increment accuracy on the validation holdout.
    pub validation_top1: f64,
    /// Final-increment accuracy on the cumulative test set.
    pub test_top1: f64,
}

/// Reruns the full protocol once per grid point, varying only the mixing
/// weight. Requires a replay-memory method so every run ends with a
/// validation holdout to rank by.
pub fn sweep_lambda(base: &ProtocolConfig, data: &DatasetSpec) -> Result<Vec<LambdaRow>> {
    if !base.method.uses_memory() {
        return Err(Error::contract(format!(
            "lambda sweep needs a validation holdout, which method {} never draws",
            base.method
        )));
    }
    let mut rows = Vec::new();
    for lambda in lambda_grid() {
        let mut cfg = base.clone();
        cfg.lambda = lambda;
        cfg.beta = BetaMode::Auto;
        let outcome = run_protocol(&cfg, data)?;
        let last = outcome
            .report
            .increments
            .last()
            .ok_or_else(|| Error::contract("sweep run produced no increments"))?;
        let validation_top1 = last.validation_top1.ok_or_else(|| {
            Error::contract(format!("lambda {lambda}: run recorded no validation accuracy"))
        })?;
        rows.push(LambdaRow {
            lambda,
            validation_top1,
            test_top1: last.top1,
        });
    }
    Ok(rows)
}

/// The grid point with the best validation accuracy; ties go to the larger
/// weight.
pub fn best_lambda(rows: &[LambdaRow]) -> Option<f64> {
    rows.iter()
        .fold(None::<&LambdaRow>, |best, row| match best {
            Some(b) if row.validation_top1 < b.validation_top1 => Some(b),
            Some(b) if row.validation_top1 == b.validation_top1 && row.lambda < b.lambda => Some(b),
            _ => Some(row),
        })
        .map(|r| r.lambda)
}

pub fn lambda_rows_to_csv(rows: &[LambdaRow]) -> String {
    let mut out = String::from("lambda,validation_top1,test_top1\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.lambda, r.validation_top1, r.test_top1));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BetaRow {
    pub beta: f64,
    pub validation_top1: f64,
    pub test_top1: f64,
    /// Marks the row the validation ranking selects.
    pub is_best: bool,
}

/// Scores every grid value of the bias scalar on the final model, against
/// both the validation holdout the protocol kept and the full test set.
pub fn sweep_beta(state: &FinalState) -> Result<Vec<BetaRow>> {
    let validation = state.validation.as_ref().ok_or_else(|| {
        Error::contract("beta sweep needs the run to have kept a validation holdout")
    })?;
    if state.old_classes == 0 || state.new_classes == 0 {
        return Err(Error::contract(
            "beta sweep needs both old and new classes in the final model",
        ));
    }
    let mut rows: Vec<BetaRow> = beta_grid()
        .into_iter()
        .map(|beta| {
            let bc = BiasCorrection::new(beta, state.old_classes, state.new_classes)?;
            Ok(BetaRow {
                beta,
                validation_top1: evaluate_accuracy(&state.net, &bc, validation),
                test_top1: evaluate_accuracy(&state.net, &bc, &state.test),
                is_best: false,
            })
        })
        .collect::<Result<_>>()?;
    if let Some(best) = argmax_beta(&rows, |r| r.validation_top1) {
        for r in rows.iter_mut() {
            r.is_best = r.beta == best;
        }
    }
    Ok(rows)
}

/// The grid value maximizing `score`; ties go to the larger beta, matching
/// the protocol's own estimator.
pub fn argmax_beta(rows: &[BetaRow], score: impl Fn(&BetaRow) -> f64) -> Option<f64> {
    rows.iter()
        .fold(None::<(f64, f64)>, |best, row| {
            let s = score(row);
            match best {
                Some((bs, bb)) if s < bs || (s == bs && row.beta < bb) => Some((bs, bb)),
                _ => Some((s, row.beta)),
            }
        })
        .map(|(_, beta)| beta)
}

pub fn beta_rows_to_csv(rows: &[BetaRow]) -> String {
    let mut out = String::from("beta,validation_top1,test_top1,is_best\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.beta, r.validation_top1, r.test_top1, r.is_best
        ));
    }
    out
}
