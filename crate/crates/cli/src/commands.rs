use std::fs;
use std::path::Path;

use serde::Serialize;
use shed_core::baselines::{
    cluster_responses, discrete_semantic_entropy, fit_threshold, probe_macro_f1, summary_features, train_linear_probe,
    ClusterPartition, EquivalenceOracle, ExactMatch, NormalizedMatch, ProcessOracle, ResponseSet,
};
use shed_core::data::{
    extract_entropies, generate_synthetic, parse_records, write_records, FeatureRecord, LabeledRecord, LogitDumpRecord,
    ScoreRecord, Settings, Split,
};
use shed_core::metrics::{attention_profile, attention_profile_csv, evaluate, metrics_csv_row, EVAL_CHUNK, METRICS_CSV_HEADER};
use shed_core::model::{build_model, load_model, save_model};
use shed_core::nn::RngStream;
use shed_core::train::{train, TrainConfig};
use shed_core::{Error, Result};

use crate::{Cli, Command};

#[derive(Serialize)]
struct PredictionRecord<'a> {
    id: &'a str,
    probs: Vec<f64>,
    predicted: usize,
    attention: Vec<f64>,
}

fn settings(cli: &Cli) -> Result<Settings> {
    let s = match &cli.config {
        Some(path) => Settings::from_file(path)?,
        None => Settings::default(),
    };
    Ok(match cli.seed {
        Some(seed) => s.with_seed(seed),
        None => s,
    })
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text)?;
    Ok(())
}

/// Records tagged `test`, or every record when nothing is tagged.
fn held_out(records: Vec<LabeledRecord>) -> Vec<LabeledRecord> {
    if records.iter().any(|r| r.split == Split::Test) {
        records.into_iter().filter(|r| r.split == Split::Test).collect()
    } else {
        records
    }
}

fn training_part(records: Vec<LabeledRecord>) -> Vec<LabeledRecord> {
    records.into_iter().filter(|r| r.split != Split::Test).collect()
}

fn dataset_name(records: &[LabeledRecord]) -> &str {
    records.first().map_or("", |r| r.dataset.as_str())
}

fn oracle_from(spec: &str) -> Result<Box<dyn EquivalenceOracle>> {
    Ok(match spec {
        "exact" => Box::new(ExactMatch),
        "normalized" => Box::new(NormalizedMatch),
        cmd => {
            let mut parts = cmd.split_whitespace().map(str::to_string);
            let program = parts.next().ok_or_else(|| Error::Validation("empty oracle command".into()))?;
            Box::new(ProcessOracle::spawn(&program, &parts.collect::<Vec<_>>())?)
        }
    })
}

pub fn run(cli: Cli) -> Result<()> {
    let settings = settings(&cli)?;
    match cli.command {
        Command::ExtractEntropy { io, max_len } => {
            let dumps: Vec<LogitDumpRecord> = parse_records(&io.input)?;
            let records = extract_entropies(&dumps, max_len)?;
            write_records(&io.out, &records)?;
            println!("extracted {} records", records.len());
        }
        Command::GenSynth { out } => {
            let records = generate_synthetic(&settings.synth)?;
            write_records(&out, &records)?;
            println!("generated {} records", records.len());
        }
        Command::Train { input, model, out } => {
            let records = training_part(parse_records(&input)?);
            let fresh = build_model(&settings.model, &RngStream::new(settings.train.seed))?;
            let (best, report) = train(fresh, &records, &settings.train)?;
            save_model(&best, &model)?;
            if let Some(out) = out {
                write_text(&out, &report.to_csv())?;
            }
            println!(
                "best_epoch {} best_val_macro_f1 {} epochs_run {}",
                report.best_epoch,
                report.best_val_f1,
                report.epochs.len()
            );
        }
        Command::Eval { input, model, out } => {
            let model = load_model(&model)?;
            let records = held_out(parse_records(&input)?);
            let report = evaluate(&model, &records)?;
            if let Some(out) = out {
                let row = metrics_csv_row("shed", dataset_name(&records), &report);
                write_text(&out, &format!("{METRICS_CSV_HEADER}\n{row}\n"))?;
            }
            println!("macro_f1 {}", report.macro_f1);
        }
        Command::Predict { io, model } => {
            let model = load_model(&model)?;
            let records: Vec<LabeledRecord> = parse_records(&io.input)?;
            let seqs: Vec<&[f64]> = records.iter().map(|r| r.entropies.as_slice()).collect();
            let preds = model.predict_all(&seqs, EVAL_CHUNK)?;
            let lines: Vec<PredictionRecord> = records
                .iter()
                .zip(preds)
                .map(|(r, p)| PredictionRecord {
                    id: &r.id,
                    probs: p.probs,
                    predicted: p.predicted_class,
                    attention: p.attention,
                })
                .collect();
            write_records(&io.out, &lines)?;
        }
        Command::BaselineSe { io, oracle, threshold } => {
            let sets: Vec<ResponseSet> = parse_records(&io.input)?;
            let mut oracle = oracle_from(&oracle)?;
            let scores = sets
                .iter()
                .map(|rs| {
                    let n = rs.responses.len();
                    let partition = match &rs.clusters {
                        Some(c) => ClusterPartition::new(c.clone(), n)?,
                        None => cluster_responses(rs, oracle.as_mut())?,
                    };
                    let score = discrete_semantic_entropy(&partition, n)?;
                    Ok(ScoreRecord {
                        id: rs.question_id.clone(),
                        score,
                        label: rs.label,
                        predicted: threshold.map(|g| u8::from(score > g)),
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            write_records(&io.out, &scores)?;
        }
        Command::FitThreshold { input, out } => {
            let records: Vec<ScoreRecord> = parse_records(&input)?;
            let scores: Vec<f64> = records.iter().map(|r| r.score).collect();
            let labels = records
                .iter()
                .map(|r| {
                    r.label
                        .map(usize::from)
                        .ok_or_else(|| Error::Validation(format!("score record `{}` is unlabeled", r.id)))
                })
                .collect::<Result<Vec<_>>>()?;
            let fit = fit_threshold(&scores, &labels)?;
            let text = format!("threshold = {}\nmacro_f1 = {}\n", fit.threshold, fit.macro_f1);
            if let Some(out) = out {
                write_text(&out, &text)?;
            }
            print!("{text}");
        }
        Command::TrainProbe { io, summary_features: summary, lr } => {
            let (train_set, test_set) = if summary {
                let records: Vec<LabeledRecord> = parse_records(&io.input)?;
                let to_features = |rs: Vec<LabeledRecord>| -> Result<Vec<FeatureRecord>> {
                    rs.into_iter()
                        .map(|r| {
                            let label = r
                                .label
                                .ok_or_else(|| Error::Validation(format!("record `{}` is unlabeled", r.id)))?;
                            Ok(FeatureRecord {
                                features: summary_features(&r.entropies)?,
                                id: r.id,
                                label,
                            })
                        })
                        .collect()
                };
                let has_test = records.iter().any(|r| r.split == Split::Test);
                let test = if has_test { to_features(held_out(records.clone()))? } else { Vec::new() };
                (to_features(training_part(records))?, test)
            } else {
                (parse_records::<FeatureRecord>(&io.input)?, Vec::new())
            };
            let config = TrainConfig {
                lr: lr.unwrap_or(TrainConfig::probe_defaults().lr),
                seed: settings.train.seed,
                ..TrainConfig::probe_defaults()
            };
            let (probe, report) = train_linear_probe(&train_set, &config)?;
            let json = serde_json::to_string_pretty(&probe).map_err(|e| Error::Validation(e.to_string()))?;
            write_text(&io.out, &(json + "\n"))?;
            println!("best_val_macro_f1 {}", report.best_val_f1);
            if !test_set.is_empty() {
                println!("test_macro_f1 {}", probe_macro_f1(&probe, &test_set)?);
            }
        }
        Command::AttentionExport { io, model } => {
            let model = load_model(&model)?;
            let records: Vec<LabeledRecord> = parse_records(&io.input)?;
            write_text(&io.out, &attention_profile_csv(&attention_profile(&model, &records)?))?;
        }
    }
    Ok(())
}
