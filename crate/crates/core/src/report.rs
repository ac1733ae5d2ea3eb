//! Evaluation reports: metric, exit distribution, FLOPs with and without
//! early exit, and δ sweeps. Derived percentages are never trusted from
//! disk; [`RunReport::from_json`] recomputes them from the ledgers.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::accounting::{
    count_flops, params_saved, reduction_percent, Depth, FlopsLedger, FLOPS_CONVENTION,
};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::exit::{entropy, exit_index, infer_full_depth, infer_with_exit};
use crate::metrics::Metric;
use crate::model::{Encoder, ModelConfig, ParamCounts, WeightSource};

/// One evaluated sample, as written to the JSON-lines trace log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleTrace {
    pub index: usize,
    pub label: usize,
    pub prediction: usize,
    /// Real (non-padding) tokens.
    pub tokens: usize,
    /// 1-based exit block.
    pub exit_index: usize,
    pub entropies: Vec<f64>,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub dataset: String,
    pub samples: usize,
    /// `None` when early exit was disabled.
    pub delta: Option<f64>,
    pub metric_name: Metric,
    pub metric: f64,
    pub mean_exit_depth: f64,
    /// Entry `c − 1` counts samples that exited after block `c`.
    pub exit_histogram: Vec<usize>,
    /// Σ over samples of the parameters in blocks they skipped.
    pub params_saved: u64,
    pub flops_convention: String,
    /// Summed over all samples.
    pub ledger_ee: FlopsLedger,
    pub ledger_wee: FlopsLedger,
    #[serde(skip_deserializing)]
    pub gflops_ee: f64,
    #[serde(skip_deserializing)]
    pub gflops_wee: f64,
    #[serde(skip_deserializing)]
    pub adjusted_gflops_ee: f64,
    #[serde(skip_deserializing)]
    pub adjusted_gflops_wee: f64,
    #[serde(skip_deserializing)]
    pub reduction_percent: f64,
    #[serde(skip_deserializing)]
    pub adjusted_reduction_percent: f64,
}

impl RunReport {
    pub fn from_traces(
        dataset: &str,
        config: &ModelConfig,
        traces: &[SampleTrace],
        delta: Option<f64>,
        metric: Metric,
    ) -> Result<Self> {
        let counts = ParamCounts::of(config)?;
        let mut histogram = vec![0; config.blocks];
        let mut saved = 0;
        let mut ee = FlopsLedger::default();
        let mut wee = FlopsLedger::default();
        for t in traces {
            if t.exit_index == 0 || t.exit_index > config.blocks {
                return Err(Error::Contract(format!(
                    "exit index {} out of range",
                    t.exit_index
                )));
            }
            histogram[t.exit_index - 1] += 1;
            saved += params_saved(&counts, t.exit_index);
            let depth = if delta.is_some() {
                Depth::Exit(t.exit_index)
            } else {
                Depth::Full
            };
            ee += count_flops(config, t.tokens, depth);
            wee += count_flops(config, t.tokens, Depth::Full);
        }
        let preds: Vec<usize> = traces.iter().map(|t| t.prediction).collect();
        let labels: Vec<usize> = traces.iter().map(|t| t.label).collect();
        let n = traces.len().max(1) as f64;
        let mut report = RunReport {
            dataset: dataset.to_string(),
            samples: traces.len(),
            delta,
            metric_name: metric,
            metric: metric.compute(&preds, &labels, config.num_classes),
            mean_exit_depth: traces.iter().map(|t| t.exit_index as f64).sum::<f64>() / n,
            exit_histogram: histogram,
            params_saved: saved,
            flops_convention: FLOPS_CONVENTION.to_string(),
            ledger_ee: ee,
            ledger_wee: wee,
            gflops_ee: 0.0,
            gflops_wee: 0.0,
            adjusted_gflops_ee: 0.0,
            adjusted_gflops_wee: 0.0,
            reduction_percent: 0.0,
            adjusted_reduction_percent: 0.0,
        };
        report.refresh();
        Ok(report)
    }

    /// Recomputes every derived field from the ledgers.
    pub fn refresh(&mut self) {
        let n = self.samples.max(1) as f64;
        self.gflops_ee = self.ledger_ee.nominal() as f64 / n / 1e9;
        self.gflops_wee = self.ledger_wee.nominal() as f64 / n / 1e9;
        self.adjusted_gflops_ee = self.ledger_ee.adjusted() / n / 1e9;
        self.adjusted_gflops_wee = self.ledger_wee.adjusted() / n / 1e9;
        self.reduction_percent =
            reduction_percent(self.ledger_ee.nominal(), self.ledger_wee.nominal());
        let (a, b) = (self.ledger_ee.adjusted(), self.ledger_wee.adjusted());
        self.adjusted_reduction_percent = if b == 0.0 { 0.0 } else { 100.0 * (b - a) / b };
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let mut r: RunReport =
            serde_json::from_str(s).map_err(|e| Error::Format(format!("bad report: {e}")))?;
        r.refresh();
        Ok(r)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Two-column `field,value` summary.
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["field", "value"])?;
        let delta = self.delta.map_or("none".to_string(), |d| d.to_string());
        let rows: Vec<(&str, String)> = vec![
            ("dataset", self.dataset.clone()),
            ("samples", self.samples.to_string()),
            ("delta", delta),
            ("metric_name", self.metric_name.to_string()),
            ("metric", self.metric.to_string()),
            ("mean_exit_depth", self.mean_exit_depth.to_string()),
            ("params_saved", self.params_saved.to_string()),
            ("gflops_ee", self.gflops_ee.to_string()),
            ("gflops_wee", self.gflops_wee.to_string()),
            ("adjusted_gflops_ee", self.adjusted_gflops_ee.to_string()),
            ("adjusted_gflops_wee", self.adjusted_gflops_wee.to_string()),
            ("reduction_percent", self.reduction_percent.to_string()),
            (
                "adjusted_reduction_percent",
                self.adjusted_reduction_percent.to_string(),
            ),
        ];
        for (k, v) in rows {
            out.write_record([k, v.as_str()])?;
        }
        out.flush()?;
        Ok(())
    }

    /// `exit_block,count,fraction` rows, one per block.
    pub fn write_histogram_csv(&self, w: impl Write) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["exit_block", "count", "fraction"])?;
        let n = self.samples.max(1) as f64;
        for (c, &k) in self.exit_histogram.iter().enumerate() {
            out.write_record([
                (c + 1).to_string(),
                k.to_string(),
                (k as f64 / n).to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub report: RunReport,
    pub traces: Vec<SampleTrace>,
}

impl Evaluation {
    pub fn write_traces(&self, mut w: impl Write) -> Result<()> {
        for t in &self.traces {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Evaluates every sample in parallel. With `delta = None` all blocks run
/// and only the final head is evaluated.
pub fn run_eval<W: WeightSource + ?Sized>(
    weights: &W,
    data: &Dataset,
    delta: Option<f64>,
    metric: Metric,
) -> Result<Evaluation> {
    let cfg = weights.config();
    if data.num_classes > cfg.num_classes {
        return Err(Error::Data(format!(
            "dataset has {} classes, model has {}",
            data.num_classes, cfg.num_classes
        )));
    }
    let enc = Encoder::new(weights);
    let traces = data
        .examples
        .par_iter()
        .enumerate()
        .map(|(index, ex)| {
            let seq = ex.seq.trimmed();
            let t = match delta {
                Some(d) => {
                    let (prediction, tr) = infer_with_exit(&enc, &seq, d)?;
                    SampleTrace {
                        index,
                        label: ex.label,
                        prediction,
                        tokens: seq.len,
                        exit_index: tr.exit_index,
                        entropies: tr.entropies,
                        flops: tr.flops,
                    }
                }
                None => {
                    let (prediction, logits) = infer_full_depth(&enc, &seq)?;
                    SampleTrace {
                        index,
                        label: ex.label,
                        prediction,
                        tokens: seq.len,
                        exit_index: cfg.blocks,
                        entropies: vec![entropy(&logits)],
                        flops: count_flops(cfg, seq.len, Depth::Full).nominal(),
                    }
                }
            };
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    let report = RunReport::from_traces(&data.name, cfg, &traces, delta, metric)?;
    Ok(Evaluation { report, traces })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub delta: f64,
    pub metric: f64,
    pub mean_exit_depth: f64,
    pub gflops_ee: f64,
    pub gflops_wee: f64,
    pub reduction_percent: f64,
}

/// Exit traces for every threshold in `deltas`, from a single full-depth
/// pass per sample (the exit rule only depends on the entropy profile).
pub fn sweep_traces<W: WeightSource + ?Sized>(
    weights: &W,
    data: &Dataset,
    deltas: &[f64],
) -> Result<Vec<Vec<SampleTrace>>> {
    let cfg = weights.config();
    let enc = Encoder::new(weights);
    let profiles = data
        .examples
        .par_iter()
        .map(|ex| {
            let seq = ex.seq.trimmed();
            let logits = enc.exit_logits(&seq)?;
            Ok((seq.len, logits))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(deltas
        .iter()
        .map(|&d| {
            profiles
                .iter()
                .zip(&data.examples)
                .enumerate()
                .map(|(index, ((tokens, logits), ex))| {
                    let ent: Vec<f64> = logits.iter().map(|z| entropy(z.data())).collect();
                    let c = exit_index(&ent, cfg.num_classes, d);
                    SampleTrace {
                        index,
                        label: ex.label,
                        prediction: logits[c - 1].argmax(),
                        tokens: *tokens,
                        exit_index: c,
                        entropies: ent[..c].to_vec(),
                        flops: count_flops(cfg, *tokens, Depth::Exit(c)).nominal(),
                    }
                })
                .collect()
        })
        .collect())
}

pub fn sweep_delta<W: WeightSource + ?Sized>(
    weights: &W,
    data: &Dataset,
    deltas: &[f64],
    metric: Metric,
) -> Result<Vec<SweepRow>> {
    let per_delta = sweep_traces(weights, data, deltas)?;
    deltas
        .iter()
        .zip(per_delta)
        .map(|(&d, traces)| {
            let r = RunReport::from_traces(&data.name, weights.config(), &traces, Some(d), metric)?;
            Ok(SweepRow {
                delta: d,
                metric: r.metric,
                mean_exit_depth: r.mean_exit_depth,
                gflops_ee: r.gflops_ee,
                gflops_wee: r.gflops_wee,
                reduction_percent: r.reduction_percent,
            })
        })
        .collect()
}

pub fn write_sweep_csv(rows: &[SweepRow], w: impl Write) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Example;
    use crate::embedding::TokenSequence;
    use crate::model::{BeexModel, LatentWeights};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> ModelConfig {
        ModelConfig {
            vocab_size: 30,
            max_len: 10,
            embed_dim: 8,
            heads: 2,
            hidden_dim: 12,
            blocks: 3,
            dropout: 0.0,
            ..ModelConfig::default()
        }
    }

    fn data(n: usize) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let examples = (0..n)
            .map(|_| {
                let len = rng.gen_range(1..=10);
                let mut ids: Vec<usize> = (0..len).map(|_| rng.gen_range(1..=31)).collect();
                ids.resize(10, 0);
                Example {
                    seq: TokenSequence { ids, len },
                    label: rng.gen_range(0..2),
                }
            })
            .collect();
        Dataset {
            name: "rand".into(),
            num_classes: 2,
            examples,
        }
    }

    #[test]
    fn sweep_matches_stepwise_eval() {
        let model = BeexModel::new(cfg(), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let w = LatentWeights::new(&model);
        let d = data(30);
        let deltas = [0.0, 1e-3, 0.05, 0.3];
        let swept = sweep_traces(&w, &d, &deltas).unwrap();
        for (&delta, traces) in deltas.iter().zip(&swept) {
            let ev = run_eval(&w, &d, Some(delta), Metric::Accuracy).unwrap();
            assert_eq!(&ev.traces, traces);
        }
    }

    #[test]
    fn histogram_and_json_round_trip() {
        let model = BeexModel::new(cfg(), &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let w = LatentWeights::new(&model);
        let ev = run_eval(&w, &data(25), Some(0.05), Metric::Accuracy).unwrap();
        assert_eq!(ev.report.exit_histogram.iter().sum::<usize>(), 25);
        let mut tampered: serde_json::Value =
            serde_json::from_str(&ev.report.to_json().unwrap()).unwrap();
        tampered["reduction_percent"] = serde_json::json!(99.0);
        let back = RunReport::from_json(&tampered.to_string()).unwrap();
        assert_eq!(back, ev.report);
        let again = run_eval(&w, &data(25), Some(0.05), Metric::Accuracy).unwrap();
        assert_eq!(again, ev);
    }

    #[test]
    fn no_ee_report_has_zero_reduction() {
        let model = BeexModel::new(cfg(), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let w = LatentWeights::new(&model);
        let ev = run_eval(&w, &data(10), None, Metric::Accuracy).unwrap();
        assert_eq!(ev.report.exit_histogram, vec![0, 0, 10]);
        assert_eq!(ev.report.reduction_percent, 0.0);
        assert_eq!(ev.report.params_saved, 0);
        assert_eq!(ev.report.ledger_ee, ev.report.ledger_wee);
    }

    #[test]
    fn csv_outputs() {
        let model = BeexModel::new(cfg(), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let w = LatentWeights::new(&model);
        let ev = run_eval(&w, &data(8), Some(1e-4), Metric::Accuracy).unwrap();
        let mut hist = Vec::new();
        ev.report.write_histogram_csv(&mut hist).unwrap();
        let hist = String::from_utf8(hist).unwrap();
        assert_eq!(hist.lines().count(), 4);
        assert!(hist.starts_with("exit_block,count,fraction\n"));
        let mut traces = Vec::new();
        ev.write_traces(&mut traces).unwrap();
        let first: SampleTrace =
            serde_json::from_str(String::from_utf8(traces).unwrap().lines().next().unwrap())
                .unwrap();
        assert_eq!(first, ev.traces[0]);
        let rows = sweep_delta(&w, &data(8), &[1e-4, 1e-2], Metric::Accuracy).unwrap();
        let mut csv = Vec::new();
        write_sweep_csv(&rows, &mut csv).unwrap();
        assert!(String::from_utf8(csv)
            .unwrap()
            .starts_with("delta,metric,mean_exit_depth"));
    }
}
