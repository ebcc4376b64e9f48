//! The `generate`, `train`, `patch`, `eval` and `report` subcommands.

use std::fs;
use std::path::{Path, PathBuf};

use hiprenet_core::feynman::{format_f64, read_csv};
use hiprenet_core::{
    generate_dataset, train_hiprenet, train_patch, Dataset, Domain, Metrics, PatchOutcome, Rng, StageReport,
    TrainingRun,
};

use crate::config::ExperimentConfig;
use crate::error::{CliError, Result};
use crate::model_file::{load_model, save_model, ModelProvenance};

pub const STAGE_COLUMNS: [&str; 11] = [
    "stage",
    "e",
    "train_rmse",
    "train_linf",
    "val_rmse",
    "val_linf",
    "iterations",
    "seconds",
    "epsilon_hat",
    "termination",
    "accepted",
];

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed-{seed}"))
}

/// Training and validation sets for one seed, plus the generator positioned
/// just after sampling them (training continues from it).
pub fn datasets(cfg: &ExperimentConfig, seed: u64) -> Result<(Dataset, Dataset, Rng)> {
    let mut rng = Rng::new(seed);
    if let Some(data) = &cfg.data {
        let train = read_csv(&data.train)?;
        let val = read_csv(&data.val)?;
        return Ok((train, val, rng));
    }
    let id = cfg.function_id()?;
    let mut train = generate_dataset(id, cfg.train_count, &cfg.train_domain()?, &mut rng)?;
    let mut val = generate_dataset(id, cfg.val_count, &cfg.eval_domain()?, &mut rng)?;
    train.seed = Some(seed);
    val.seed = Some(seed);
    Ok((train, val, rng))
}

#[derive(Debug, Clone)]
pub struct GenerateOutput {
    pub train_path: PathBuf,
    pub val_path: PathBuf,
    pub manifest_path: PathBuf,
}

/// Writes `train.csv`, `val.csv` and `manifest.toml` into `out`.
pub fn cmd_generate(cfg: &ExperimentConfig, seed: u64, out: &Path) -> Result<GenerateOutput> {
    create_dir(out)?;
    let (train, val, _) = datasets(cfg, seed)?;
    let o = GenerateOutput {
        train_path: out.join("train.csv"),
        val_path: out.join("val.csv"),
        manifest_path: out.join("manifest.toml"),
    };
    train.write_csv(&o.train_path)?;
    val.write_csv(&o.val_path)?;
    write_text(&o.manifest_path, &cfg.manifest(seed).to_toml())?;
    Ok(o)
}

pub fn stages_csv(reports: &[StageReport]) -> String {
    let mut s = STAGE_COLUMNS.join(",");
    s.push('\n');
    for r in reports {
        let row = [
            r.stage_index.to_string(),
            format_f64(r.e),
            format_f64(r.train_rmse),
            format_f64(r.train_linf),
            format_f64(r.val_rmse),
            format_f64(r.val_linf),
            r.optimizer.iterations_used.to_string(),
            format!("{:.3}", r.seconds),
            format_f64(r.epsilon_hat),
            r.optimizer.termination.name().to_string(),
            r.accepted.to_string(),
        ];
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// One finished seed.
#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub run: TrainingRun,
    pub dir: PathBuf,
}

impl SeedResult {
    pub fn initial(&self) -> &StageReport {
        &self.run.reports[0]
    }

    /// Last accepted report: the metrics of the returned model.
    pub fn last(&self) -> &StageReport {
        self.run.reports.iter().rev().find(|r| r.accepted).expect("initial report is accepted")
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub seeds: Vec<SeedResult>,
    pub summary_path: PathBuf,
}

impl TrainOutput {
    /// Seed with the lowest final validation RMSE.
    pub fn best(&self) -> &SeedResult {
        self.seeds
            .iter()
            .min_by(|a, b| a.last().val_rmse.total_cmp(&b.last().val_rmse))
            .expect("at least one seed")
    }
}

/// Trains one model per seed. Each seed gets `seed-<n>/` holding
/// `model.hpn`, `stages.csv` and `manifest.toml`; `summary.csv` lists every
/// seed plus best-of and mean rows.
pub fn cmd_train(cfg: &ExperimentConfig, seeds: &[u64], out: &Path) -> Result<TrainOutput> {
    create_dir(out)?;
    let plan = cfg.plan()?;
    let mut results = Vec::new();
    for &seed in seeds {
        log::info!("{}: training seed {seed}", cfg.function);
        let dir = seed_dir(out, seed);
        create_dir(&dir)?;
        write_text(&dir.join("manifest.toml"), &cfg.manifest(seed).to_toml())?;
        let (train, val, mut rng) = datasets(cfg, seed)?;
        let run = train_hiprenet(&train, &val, &plan, &mut rng).map_err(|e| CliError::Training(e.to_string()))?;
        write_text(&dir.join("stages.csv"), &stages_csv(&run.reports))?;
        let prov = ModelProvenance {
            config_hash: Some(cfg.hash()),
            seed: Some(seed),
        };
        save_model(&run.model, &prov, &dir.join("model.hpn"))?;
        results.push(SeedResult { seed, run, dir });
    }
    let summary_path = out.join("summary.csv");
    write_text(&summary_path, &summary_csv(&results))?;
    Ok(TrainOutput {
        seeds: results,
        summary_path,
    })
}

fn summary_csv(results: &[SeedResult]) -> String {
    let mut s = String::from("seed,stages,initial_val_rmse,final_train_rmse,final_train_linf,final_val_rmse,final_val_linf,stop\n");
    let row = |label: String, stages: String, r0: f64, r: &[f64; 4], stop: &str| {
        format!(
            "{label},{stages},{},{},{},{},{},{stop}\n",
            format_f64(r0),
            format_f64(r[0]),
            format_f64(r[1]),
            format_f64(r[2]),
            format_f64(r[3])
        )
    };
    let finals = |res: &SeedResult| {
        let l = res.last();
        [l.train_rmse, l.train_linf, l.val_rmse, l.val_linf]
    };
    for res in results {
        s.push_str(&row(
            res.seed.to_string(),
            res.run.model.stages.len().to_string(),
            res.initial().val_rmse,
            &finals(res),
            res.run.stop.name(),
        ));
    }
    if let Some(best) = results.iter().min_by(|a, b| a.last().val_rmse.total_cmp(&b.last().val_rmse)) {
        s.push_str(&row(
            format!("best({})", best.seed),
            best.run.model.stages.len().to_string(),
            best.initial().val_rmse,
            &finals(best),
            best.run.stop.name(),
        ));
        let n = results.len() as f64;
        let mut mean = [0.0; 4];
        let mut mean0 = 0.0;
        for res in results {
            mean0 += res.initial().val_rmse / n;
            for (m, v) in mean.iter_mut().zip(finals(res)) {
                *m += v / n;
            }
        }
        s.push_str(&row("mean".into(), "-".into(), mean0, &mean, "-"));
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub enum PatchResult {
    Patched {
        before: Metrics,
        after: Metrics,
        model_path: PathBuf,
        csv_path: PathBuf,
    },
    NotNeeded,
}

/// Appends one patch to the model at `model_path` using the config's
/// `[patch]` section, writing `model_patched.hpn` and `patch.csv` to `out`.
/// Training data are regenerated from the config and the model's seed
/// unless `train`/`val` CSVs are given.
pub fn cmd_patch(
    cfg: &ExperimentConfig,
    model_path: &Path,
    train_path: Option<&Path>,
    val_path: Option<&Path>,
    out: &Path,
) -> Result<PatchResult> {
    let (radius, arch, opts) = cfg
        .patch_architecture()?
        .ok_or_else(|| CliError::Config("config has no [patch] section".into()))?;
    let (mut model, prov) = load_model(model_path)?;
    let seed = prov.seed.unwrap_or(cfg.seeds[0]);
    let (generated, mut rng) = if train_path.is_some() && val_path.is_some() {
        (None, Rng::new(seed))
    } else {
        let (t, v, rng) = datasets(cfg, seed)?;
        (Some((t, v)), rng)
    };
    let (gen_train, gen_val) = generated.unzip();
    let train = match train_path {
        Some(p) => read_csv(p)?,
        None => gen_train.expect("generated"),
    };
    let val = match val_path {
        Some(p) => read_csv(p)?,
        None => gen_val.expect("generated"),
    };
    // patch initialization draws from its own stream
    let mut patch_rng = rng.fork();
    match train_patch(&mut model, &train, &val, radius, &arch, &opts, &mut patch_rng)? {
        PatchOutcome::NotNeeded { .. } => Ok(PatchResult::NotNeeded),
        PatchOutcome::Appended(rep) => {
            create_dir(out)?;
            let model_out = out.join("model_patched.hpn");
            save_model(&model, &prov, &model_out)?;
            let csv_path = out.join("patch.csv");
            let text = format!(
                "rmse_before,linf_before,rmse_after,linf_after,radius,neighborhood_size\n{},{},{},{},{},{}\n",
                format_f64(rep.before.rmse),
                format_f64(rep.before.linf),
                format_f64(rep.after.rmse),
                format_f64(rep.after.linf),
                format_f64(radius),
                rep.neighborhood_size
            );
            write_text(&csv_path, &text)?;
            Ok(PatchResult::Patched {
                before: rep.before,
                after: rep.after,
                model_path: model_out,
                csv_path,
            })
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub rows: usize,
    pub metrics: Metrics,
}

/// RMSE and L∞ of a saved model on a dataset, optionally only over rows
/// inside `domain`.
pub fn cmd_eval(model_path: &Path, data_path: &Path, domain: Option<&Domain>) -> Result<EvalResult> {
    let (model, _) = load_model(model_path)?;
    let mut ds = read_csv(data_path)?;
    if let Some(d) = domain {
        if d.dim() != ds.dim() {
            return Err(hiprenet_core::Error::DimensionMismatch {
                context: "evaluation domain",
                expected: ds.dim(),
                got: d.dim(),
            }
            .into());
        }
        ds = ds.restrict_to(d);
    }
    if ds.is_empty() {
        return Err(hiprenet_core::Error::Empty("no rows to evaluate").into());
    }
    Ok(EvalResult {
        rows: ds.len(),
        metrics: model.metrics(&ds)?,
    })
}

pub fn eval_csv(r: &EvalResult) -> String {
    format!("rows,rmse,linf\n{},{},{}\n", r.rows, format_f64(r.metrics.rmse), format_f64(r.metrics.linf))
}

/// Concatenates `stages.csv` of every seed under each run directory into
/// one table, prefixed with `run` and `seed` columns.
pub fn cmd_report(run_dirs: &[PathBuf]) -> Result<String> {
    let mut out = format!("run,seed,{}\n", STAGE_COLUMNS.join(","));
    for run in run_dirs {
        let mut seeds: Vec<(u64, PathBuf)> = fs::read_dir(run)
            .map_err(|e| CliError::io(run, e))?
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().into_string().ok()?;
                let seed = name.strip_prefix("seed-")?.parse().ok()?;
                Some((seed, e.path()))
            })
            .collect();
        seeds.sort();
        if seeds.is_empty() {
            return Err(CliError::Config(format!("{}: no seed-* directories", run.display())));
        }
        for (seed, dir) in seeds {
            let path = dir.join("stages.csv");
            let text = fs::read_to_string(&path).map_err(|e| CliError::io(&path, e))?;
            for line in text.lines().skip(1) {
                out.push_str(&format!("{},{seed},{line}\n", run.display()));
            }
        }
    }
    Ok(out)
}
