//! Multi-model drivers shared by the command line and the acceptance suite.

use htcl_core::data::Split;
use htcl_core::metrics::{bias_report, BiasReport, MetricsReport};
use htcl_core::train::{evaluate_model, run_variants, Classifier, TrainStatus, Variant, VariantRun};

use crate::checkpoint::Checkpoint;
use crate::error::Result;

/// A trained (and possibly fine-tuned) variant as a checkpoint.
#[derive(Debug, Clone)]
pub struct TrainedVariant {
    pub variant: Variant,
    pub checkpoint: Checkpoint,
    pub status: TrainStatus,
}

impl TrainedVariant {
    fn from_run(r: VariantRun) -> Self {
        let mut config = r.config;
        config.use_tpc_ft = r.variant.finetuned() == Some(Classifier::Tpc);
        let counts = r.run.stats.counts.clone();
        TrainedVariant { variant: r.variant, checkpoint: Checkpoint::new(r.run.model, r.store, config, counts), status: r.run.status }
    }

    pub fn evaluate(&self, split: &Split, ks: &[usize], graph_constraint: bool) -> Result<MetricsReport> {
        let c = &self.checkpoint;
        Ok(evaluate_model(&c.model, &c.store, split, &c.config, ks, graph_constraint)?)
    }
}

pub fn train_variants(base: &htcl_core::train::TrainConfig, train: &Split, variants: &[Variant]) -> Result<Vec<TrainedVariant>> {
    Ok(run_variants(base, train, variants)?.into_iter().map(TrainedVariant::from_run).collect())
}

#[derive(Debug, Clone)]
pub struct Evaluated {
    pub name: &'static str,
    pub checkpoint: Checkpoint,
    pub report: MetricsReport,
}

#[derive(Debug, Clone)]
pub struct BiasExperiment {
    pub baseline: Evaluated,
    pub finetuned: Evaluated,
    pub htcl: Evaluated,
    pub report: BiasReport,
}

/// Evaluates the head-biased baseline, its fine-tuned counterpart and the
/// cooperative model on one split. Class order and gates come from the
/// cooperative model.
pub fn compare(
    baseline: Checkpoint,
    finetuned: Checkpoint,
    htcl: Checkpoint,
    split: &Split,
    ks: &[usize],
    graph_constraint: bool,
) -> Result<BiasExperiment> {
    let eval = |name, c: Checkpoint| -> Result<Evaluated> {
        let report = evaluate_model(&c.model, &c.store, split, &c.config, ks, graph_constraint)?;
        Ok(Evaluated { name, checkpoint: c, report })
    };
    let (b, f, h) = (eval("baseline", baseline)?, eval("finetuned", finetuned)?, eval("htcl", htcl)?);
    let stats = h.checkpoint.stats()?;
    let gate = h.checkpoint.model.head.gate_values(&h.checkpoint.store);
    let report = bias_report(&b.report, &f.report, &h.report, &stats, &gate)?;
    Ok(BiasExperiment { baseline: b, finetuned: f, htcl: h, report })
}

/// Trains the three models of the bias comparison. The baseline and its
/// fine-tuned version share one training run.
pub fn train_bias_models(base: &htcl_core::train::TrainConfig, train: &Split) -> Result<[TrainedVariant; 3]> {
    let mut v = train_variants(base, train, &[Variant::HpBranch, Variant::HpcFt, Variant::Htcl])?.into_iter();
    let (b, f, h) = (v.next().unwrap(), v.next().unwrap(), v.next().unwrap());
    Ok([b, f, h])
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    fn ranks(x: &[f64]) -> Vec<f64> {
        let mut idx: Vec<usize> = (0..x.len()).collect();
        idx.sort_by(|&i, &j| x[i].total_cmp(&x[j]));
        let mut r = vec![0.0; x.len()];
        let mut i = 0;
        while i < idx.len() {
            let mut j = i;
            while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0;
            for &k in &idx[i..=j] {
                r[k] = avg;
            }
            i = j + 1;
        }
        r
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let cov: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = ra.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = rb.iter().map(|y| (y - mb).powi(2)).sum();
    if va == 0.0 || vb == 0.0 {
        0.0
    } else {
        cov / (va * vb).sqrt()
    }
}
