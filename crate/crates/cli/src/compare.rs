use std::io::Write;
use std::path::Path;
use std::time::Instant;

use serde::Serialize;
use umamba_core::io::{load_dataset, synth_generate, RunConfig};
use umamba_core::metrics::{evaluate_cohort, foreground_dice, render_aligned, CohortMetrics, LABELS};
use umamba_core::network::{save_checkpoint, Variant};
use umamba_core::train::{ensemble_predict, fit_threshold, kfold_split, threshold_mask, FoldTrainer};
use umamba_core::volume::Volume;

use crate::commands::{log_text, say, write_file, write_predictions};
use crate::error::CliError;

#[derive(Clone, Debug, Serialize)]
pub struct LabelSummary {
    pub label: String,
    pub dsc_agg: f64,
    pub mean_hd95: Option<f64>,
    pub mean_msd: Option<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct VariantResult {
    pub variant: Variant,
    pub name: String,
    pub labels: Vec<LabelSummary>,
    pub stable_epoch_seconds: f64,
    /// Mean over held-out cases of the Dice of the union of both labels.
    pub foreground_dice: f64,
    pub train_seconds: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct Baseline {
    pub threshold: f64,
    pub foreground_dice: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct CompareReport {
    pub fold: usize,
    pub held_out: Vec<String>,
    pub variants: Vec<VariantResult>,
    pub baseline: Baseline,
    pub total_seconds: f64,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |v| format!("{v:.2}"))
}

impl CompareReport {
    /// One row per variant: dsc_agg / hd95 / msd for each label, then the
    /// stable epoch time; the baseline follows as a separate block.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("variant");
        for (_, name) in LABELS {
            s += &format!("\t{name} dsc_agg\t{name} hd95\t{name} msd");
        }
        s += "\tepoch_s\n";
        for v in &self.variants {
            s += &v.name;
            for l in &v.labels {
                s += &format!("\t{:.4}\t{}\t{}", l.dsc_agg, opt(l.mean_hd95), opt(l.mean_msd));
            }
            s += &format!("\t{:.3}\n", v.stable_epoch_seconds);
        }
        s += "\nmethod\tforeground_dice\n";
        for v in &self.variants {
            s += &format!("{}\t{:.4}\n", v.name, v.foreground_dice);
        }
        s += &format!("threshold baseline (t = {:.2})\t{:.4}\n", self.baseline.threshold, self.baseline.foreground_dice);
        s
    }

    pub fn to_text(&self) -> String {
        render_aligned(&self.to_tsv())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

fn summarize(m: &CohortMetrics) -> Vec<LabelSummary> {
    m.labels
        .iter()
        .map(|l| LabelSummary { label: l.name.to_string(), dsc_agg: l.dsc_agg, mean_hd95: l.mean_hd95, mean_msd: l.mean_msd })
        .collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Trains every configured variant on the same fold and scores the
/// held-out cases. Without a manifest a synthetic dataset is generated
/// under `dir/data`.
pub fn compare(cfg: &RunConfig, manifest: Option<&Path>, dir: &Path, out: &mut dyn Write) -> Result<CompareReport, CliError> {
    let start = Instant::now();
    let manifest = match manifest {
        Some(p) => p.to_path_buf(),
        None => {
            let data = dir.join("data");
            synth_generate(&cfg.synth, &data)?;
            say(out, &format!("generated {} synthetic cases in {}", cfg.synth.n_cases, data.display()))?;
            data.join("manifest.json")
        }
    };
    let (m, cases) = load_dataset(&manifest)?;
    let plan = kfold_split(&m.case_ids(), cfg.train.folds, cfg.train.seed)?;
    let fold_index = cfg.compare.fold;
    let fold = plan.fold(fold_index)?;
    let pick = |ids: &[String]| -> Vec<&Volume> { ids.iter().filter_map(|id| cases.iter().find(|c| &c.case_id == id)).collect() };
    let train_cases = pick(&fold.train);
    let held_out = pick(&fold.val);
    if held_out.is_empty() {
        return Err(CliError::Invalid(format!("fold {fold_index} has no held-out cases")));
    }
    let ids: Vec<String> = held_out.iter().map(|c| c.case_id.clone()).collect();
    let gts: Vec<_> = held_out.iter().map(|c| c.mask.clone()).collect();

    let threshold = fit_threshold(&train_cases);
    let base: Vec<f64> = held_out.iter().map(|c| foreground_dice(&threshold_mask(&c.image, threshold), &c.mask)).collect();
    let baseline = Baseline { threshold, foreground_dice: mean(&base) };
    say(out, &format!("threshold baseline: t = {threshold:.2}, held-out foreground Dice {:.4}", baseline.foreground_dice))?;

    // Variants advance one epoch at a time in turn, so drift in machine
    // speed over the run affects every variant's epoch times alike.
    let mut trainers = Vec::with_capacity(cfg.compare.variants.len());
    for &variant in &cfg.compare.variants {
        let t0 = Instant::now();
        let net_config = cfg.network.clone().with_variant(variant);
        let trainer = FoldTrainer::<f32>::new(&cases, fold, fold_index, &net_config, &cfg.train)?;
        trainers.push((variant, trainer, t0.elapsed().as_secs_f64()));
    }
    let names: Vec<&str> = cfg.compare.variants.iter().map(|v| v.display_name()).collect();
    say(out, &format!("training fold {fold_index}: {}", names.join(", ")))?;
    for _ in 0..cfg.train.max_epochs {
        for (variant, trainer, seconds) in trainers.iter_mut() {
            let t0 = Instant::now();
            let line = trainer.step_epoch()?.to_line();
            *seconds += t0.elapsed().as_secs_f64();
            say(out, &format!("{variant}\t{line}"))?;
        }
    }

    let mut variants = Vec::new();
    for (variant, trainer, train_seconds) in trainers {
        let report = trainer.finish();
        let vdir = dir.join(variant.as_str());
        write_file(&vdir.join("train_log.tsv"), &log_text(&report.log))?;
        save_checkpoint(&report.network, &vdir.join("checkpoint.umck"))?;
        let nets = std::slice::from_ref(&report.network);
        let mut preds = Vec::with_capacity(held_out.len());
        for c in &held_out {
            preds.push(ensemble_predict(nets, &c.image, cfg.train.patch_size)?);
        }
        let fg: Vec<f64> = preds.iter().zip(&gts).map(|(p, g)| foreground_dice(p, g)).collect();
        let metrics = evaluate_cohort(&ids, &preds, &gts)?;
        write_predictions(&vdir.join("pred"), m.spacing, &ids.iter().cloned().zip(preds).collect::<Vec<_>>())?;
        let result = VariantResult {
            variant,
            name: variant.display_name().to_string(),
            labels: summarize(&metrics),
            stable_epoch_seconds: report.stable_epoch_seconds,
            foreground_dice: mean(&fg),
            train_seconds,
        };
        say(
            out,
            &format!(
                "{}: foreground Dice {:.4}, stable epoch {:.3} s, {:.1} s total",
                result.name, result.foreground_dice, result.stable_epoch_seconds, train_seconds
            ),
        )?;
        variants.push(result);
    }
    let report = CompareReport { fold: fold_index, held_out: ids, variants, baseline, total_seconds: start.elapsed().as_secs_f64() };
    write_file(&dir.join("compare.tsv"), &report.to_tsv())?;
    write_file(&dir.join("compare.json"), &report.to_json())?;
    write_file(&dir.join("compare.txt"), &report.to_text())?;
    out.write_all(report.to_text().as_bytes()).map_err(|e| CliError::Invalid(format!("stdout: {e}")))?;
    Ok(report)
}
