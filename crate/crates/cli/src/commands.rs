use std::io::Write;
use std::path::{Path, PathBuf};

use umamba_core::io::{load_dataset, load_images, load_masks, synth_generate, write_mask, CaseEntry, DatasetManifest, RunConfig};
use umamba_core::metrics::{cohort_json, cohort_text, cohort_tsv, evaluate_cohort};
use umamba_core::network::{load_checkpoint, save_checkpoint, SegNetwork};
use umamba_core::train::{ensemble_predict, kfold_split, train_fold, EpochLog};

use crate::error::{io_err, CliError};

pub(crate) fn say(out: &mut dyn Write, line: &str) -> Result<(), CliError> {
    writeln!(out, "{line}").map_err(|e| CliError::Invalid(format!("stdout: {e}")))
}

pub(crate) fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    std::fs::write(path, text).map_err(io_err(path))
}

pub(crate) fn log_text(log: &[EpochLog]) -> String {
    let mut s = format!("{}\n", EpochLog::HEADER);
    for e in log {
        s += &e.to_line();
        s.push('\n');
    }
    s
}

pub fn synth(cfg: &RunConfig, dir: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let m = synth_generate(&cfg.synth, dir)?;
    say(out, &format!("wrote {} cases to {}", m.cases.len(), dir.join("manifest.json").display()))
}

/// Trains the listed folds; each gets `fold_K/` with the log, the fold's
/// case split and the final checkpoint.
pub fn train(cfg: &RunConfig, manifest: &Path, folds: &[usize], dir: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let (m, cases) = load_dataset(manifest)?;
    let plan = kfold_split(&m.case_ids(), cfg.train.folds, cfg.train.seed)?;
    for &k in folds {
        let fold = plan.fold(k)?;
        let fold_dir = dir.join(format!("fold_{k}"));
        std::fs::create_dir_all(&fold_dir).map_err(io_err(&fold_dir))?;
        write_file(&fold_dir.join("split.json"), &(serde_json::to_string_pretty(fold).expect("split serializes") + "\n"))?;
        say(out, &format!("fold {k}: {} train / {} val ({})", fold.train.len(), fold.val.len(), cfg.network.variant))?;
        say(out, EpochLog::HEADER)?;
        let mut printed = Ok(());
        let report = train_fold::<f32>(&cases, fold, k, &cfg.network, &cfg.train, &mut |e| {
            if printed.is_ok() {
                printed = say(out, &e.to_line());
            }
        })?;
        printed?;
        write_file(&fold_dir.join("train_log.tsv"), &log_text(&report.log))?;
        save_checkpoint(&report.network, &fold_dir.join("checkpoint.umck"))?;
        say(out, &format!("fold {k}: stable epoch time {:.3} s", report.stable_epoch_seconds))?;
    }
    Ok(())
}

/// Every `fold_*/checkpoint.umck` below `dir`, in name order.
pub fn find_checkpoints(dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut found: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_name().to_string_lossy().starts_with("fold_"))
        .map(|e| e.path().join("checkpoint.umck"))
        .filter(|p| p.is_file())
        .collect();
    found.sort();
    if found.is_empty() {
        return Err(CliError::Invalid(format!("no fold_*/checkpoint.umck under {}", dir.display())));
    }
    Ok(found)
}

/// Writes `masks/<id>.svl` and a mask-only `manifest.json` under `dir`.
pub(crate) fn write_predictions(
    dir: &Path,
    spacing: [f64; 3],
    preds: &[(String, umamba_core::volume::LabelMask)],
) -> Result<PathBuf, CliError> {
    let mask_dir = dir.join("masks");
    std::fs::create_dir_all(&mask_dir).map_err(io_err(&mask_dir))?;
    let mut entries = Vec::with_capacity(preds.len());
    for (id, mask) in preds {
        let rel = format!("masks/{id}.svl");
        write_mask(mask, id, &dir.join(&rel))?;
        entries.push(CaseEntry { case_id: id.clone(), image: None, mask: Some(rel) });
    }
    let path = dir.join("manifest.json");
    DatasetManifest { spacing, seed: None, cases: entries }.write(&path)?;
    Ok(path)
}

pub fn predict(cfg: &RunConfig, manifest: &Path, checkpoints: &[PathBuf], dir: &Path, out: &mut dyn Write) -> Result<(), CliError> {
    let nets = checkpoints.iter().map(|p| load_checkpoint::<f32>(p)).collect::<Result<Vec<SegNetwork<f32>>, _>>()?;
    let spacing = DatasetManifest::read(manifest)?.spacing;
    let mut preds = Vec::new();
    for (id, image) in load_images(manifest)? {
        let mask = ensemble_predict(&nets, &image, cfg.train.patch_size)?;
        say(out, &format!("{id}: {} GTVp / {} GTVn voxels", mask.count(1), mask.count(2)))?;
        preds.push((id, mask));
    }
    let path = write_predictions(dir, spacing, &preds)?;
    say(out, &format!("wrote {} predictions ({}-model ensemble) to {}", preds.len(), nets.len(), path.display()))
}

pub fn evaluate(manifest: &Path, pred: &Path, dir: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    // every prediction needs a ground truth; extra ground-truth cases are ignored
    let mut gts = load_masks(manifest)?;
    let preds = load_masks(pred)?;
    let mut ids = Vec::with_capacity(preds.len());
    let mut p = Vec::with_capacity(preds.len());
    let mut g = Vec::with_capacity(preds.len());
    for (id, mask) in preds {
        let k = gts
            .iter()
            .position(|(gid, _)| gid == &id)
            .ok_or_else(|| CliError::Invalid(format!("no ground truth for case {id}")))?;
        g.push(gts.swap_remove(k).1);
        p.push(mask);
        ids.push(id);
    }
    let metrics = evaluate_cohort(&ids, &p, &g)?;
    if let Some(d) = dir {
        write_file(&d.join("metrics.tsv"), &cohort_tsv(&metrics))?;
        write_file(&d.join("metrics.json"), &cohort_json(&metrics))?;
        write_file(&d.join("metrics.txt"), &cohort_text(&metrics))?;
    }
    out.write_all(cohort_text(&metrics).as_bytes()).map_err(|e| CliError::Invalid(format!("stdout: {e}")))
}
