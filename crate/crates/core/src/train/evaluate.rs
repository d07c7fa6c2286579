use std::thread;

use crate::data::{MaskStack, StackPair};
use crate::error::{Error, Result};
use crate::metrics::{evaluate_stack, summarize, MetricsReport, SliceMetrics};
use crate::tensor::Element;

use super::steps::Networks;
use super::trainer::predict;

/// Thresholded predictions and their metrics against the ground truth.
#[derive(Clone, Debug)]
pub struct Evaluation {
    pub report: MetricsReport,
    /// One predicted mask per evaluated stack, in input order.
    pub predictions: Vec<MaskStack>,
}

/// A predicted stack with its per-slice metrics.
type Scored = (MaskStack, Vec<SliceMetrics>);

fn evaluate_one<T: Element>(nets: &Networks<T>, pair: &StackPair) -> Result<Scored> {
    let (stack, truth) = pair;
    let expected = nets.global.spec().input_size;
    if (stack.height(), stack.width()) != expected {
        return Err(Error::Config(format!(
            "stack `{}` is {}x{} but the checkpoint expects {}x{}",
            stack.id,
            stack.height(),
            stack.width(),
            expected.0,
            expected.1
        )));
    }
    let pred = MaskStack::from_probabilities(&stack.id, &predict(nets, stack)?)?;
    let spacing = (f64::from(stack.spacing.0), f64::from(stack.spacing.1));
    let rows = evaluate_stack(&pred, truth, spacing)?;
    Ok((pred, rows))
}

/// Segments every stack with the global generator (eval mode, threshold
/// 0.5) and scores it. Stacks are spread over up to `threads` workers in
/// contiguous chunks; results are gathered in input order, so the report does
/// not depend on the thread count.
pub fn evaluate<T: Element>(nets: &Networks<T>, stacks: &[&StackPair], threads: usize) -> Result<Evaluation>
where
    Networks<T>: Sync,
{
    if stacks.is_empty() {
        return Err(Error::Config("no stacks to evaluate".into()));
    }
    let threads = threads.clamp(1, stacks.len());
    let chunk = stacks.len().div_ceil(threads);
    let parts: Vec<Result<Vec<Scored>>> = if threads == 1 {
        vec![stacks.iter().map(|p| evaluate_one(nets, p)).collect()]
    } else {
        thread::scope(|s| {
            let handles: Vec<_> = stacks
                .chunks(chunk)
                .map(|c| s.spawn(move || c.iter().map(|p| evaluate_one(nets, p)).collect()))
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(Error::Config("evaluation worker panicked".into())))
                })
                .collect()
        })
    };
    let mut predictions = Vec::with_capacity(stacks.len());
    let mut rows = Vec::new();
    for part in parts {
        for (pred, r) in part? {
            predictions.push(pred);
            rows.extend(r);
        }
    }
    Ok(Evaluation {
        report: summarize(rows),
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{gen_phantom_dataset, PhantomConfig};
    use crate::train::TrainConfig;
    use rand::SeedableRng;

    #[test]
    fn thread_count_does_not_change_the_report() {
        let data = gen_phantom_dataset(&PhantomConfig {
            n_stacks: 3,
            slices: 8,
            ..PhantomConfig::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            widths: [2, 2, 2, 2, 2, 2],
            ..TrainConfig::default()
        };
        let nets = Networks::<f32>::build(&cfg, &mut rand_chacha::ChaCha8Rng::seed_from_u64(0)).unwrap();
        let refs: Vec<&StackPair> = data.iter().collect();
        let one = evaluate(&nets, &refs, 1).unwrap();
        let three = evaluate(&nets, &refs, 3).unwrap();
        assert_eq!(one.report, three.report);
        assert_eq!(one.predictions, three.predictions);
        assert_eq!(one.report.slices.len(), 24);
    }
}
