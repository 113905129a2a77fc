//! Command implementations behind the CLI front end: model emission,
//! training orchestration, evaluation, ablation and baseline reports.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::agent::{train, Checkpoint, TrainOptions, TrainResult};
use crate::config::RunConfig;
use crate::env::{build_levels, split_train_eval, write_level_manifest, EnvLevel};
use crate::eval::{
    effective_independence, evaluate, exhaustive_best, EvalOptions, EvalReport,
};
use crate::modal::ModalModel;
use crate::report::{
    ablation_csv, baseline_csv, eval_csv, frequency_csv, mac_svg, solved_rate_svg,
    AblationTable, BaselineRow, SplitLabel,
};
use crate::reward::FimContext;
use crate::{Error, Result};

/// Exit-code classification: 2 for configuration problems, 3 for runtime
/// failures.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::InvalidConfig(_)
        | Error::InvalidMaterial(_)
        | Error::InvalidGeometry(_)
        | Error::InvalidArgument(_) => 2,
        _ => 3,
    }
}

/// Which part of the level split a command operates on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LevelSelector {
    Train,
    Holdout,
    All,
}

impl LevelSelector {
    pub fn as_str(self) -> &'static str {
        match self {
            LevelSelector::Train => "train",
            LevelSelector::Holdout => "holdout",
            LevelSelector::All => "all",
        }
    }
}

fn model_path(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("model.modal")
}

fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("train").join("checkpoint.json")
}

/// Build (or canonically re-emit) the modal model artifact together with a
/// frequency summary table. Nothing is written until the model is valid.
pub fn cmd_model(cfg: &RunConfig) -> Result<ModalModel> {
    cfg.validate()?;
    let model = cfg.build_model()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    model.save(&model_path(cfg))?;
    std::fs::write(cfg.out_dir.join("frequencies.csv"), frequency_csv(&model))?;
    Ok(model)
}

fn load_or_build_model(cfg: &RunConfig) -> Result<Arc<ModalModel>> {
    let path = model_path(cfg);
    if path.exists() {
        Ok(Arc::new(ModalModel::load(&path)?))
    } else {
        Ok(Arc::new(cmd_model(cfg)?))
    }
}

fn split_levels(
    cfg: &RunConfig,
    model: &ModalModel,
) -> Result<(Vec<EnvLevel>, Vec<EnvLevel>)> {
    let levels = build_levels(model, cfg.n_modes, cfg.n_sensors)?;
    split_train_eval(&levels, cfg.split_fraction, cfg.split_seed)
}

/// Worker cap from the environment, applied on top of the config.
pub fn capped_workers(configured: usize) -> usize {
    match std::env::var("MODALCUR_THREADS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => configured.min(n),
            _ => configured,
        },
        Err(_) => configured,
    }
}

/// Train under the run config; resumable from the run directory's latest
/// checkpoint.
pub fn cmd_train(cfg: &RunConfig, seed: u64, resume: bool) -> Result<TrainResult> {
    cfg.validate()?;
    let model = load_or_build_model(cfg)?;
    let (train_levels, holdout) = split_levels(cfg, &model)?;

    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("config.toml"), cfg.canonical_toml()?)?;
    write_level_manifest(&train_levels, &cfg.out_dir.join("levels_train.txt"))?;
    write_level_manifest(&holdout, &cfg.out_dir.join("levels_holdout.txt"))?;

    let mut agent_cfg = cfg.agent;
    agent_cfg.n_workers = capped_workers(agent_cfg.n_workers);
    let train_dir = cfg.out_dir.join("train");
    let resume_from = if resume {
        let ck = train_dir.join("checkpoint.json");
        if !ck.exists() {
            return Err(Error::Checkpoint(format!(
                "no checkpoint to resume at {}",
                ck.display()
            )));
        }
        Some(ck)
    } else {
        None
    };
    let opts = TrainOptions {
        out_dir: Some(train_dir.clone()),
        resume_from,
        config_hash: Some(cfg.hash()?),
    };
    let result = train(
        model,
        &train_levels,
        &cfg.curriculum,
        &agent_cfg,
        cfg.budget,
        seed,
        &opts,
    )?;
    result
        .checkpoint
        .buffer
        .write_snapshot(&train_dir.join("buffer.txt"))?;
    Ok(result)
}

/// Evaluate the run's checkpoint on the selected level subset and emit the
/// CSV/SVG reports.
pub fn cmd_eval(
    cfg: &RunConfig,
    selector: LevelSelector,
    seed: u64,
    opts: EvalOptions,
) -> Result<EvalReport> {
    cfg.validate()?;
    let ck_path = checkpoint_path(cfg);
    if !ck_path.exists() {
        return Err(Error::Checkpoint(format!(
            "missing checkpoint {}",
            ck_path.display()
        )));
    }
    let ck = Checkpoint::load(&ck_path)?;
    let model = load_or_build_model(cfg)?;
    let (train_levels, holdout) = split_levels(cfg, &model)?;
    let selected: Vec<EnvLevel> = match selector {
        LevelSelector::Train => train_levels.clone(),
        LevelSelector::Holdout => holdout.clone(),
        LevelSelector::All => {
            let mut all = train_levels.clone();
            all.extend(holdout.iter().cloned());
            all.sort_by_key(|l| l.level_index);
            all
        }
    };
    if selected.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "selector {:?} matches no levels",
            selector.as_str()
        )));
    }

    let report = evaluate(&ck.net, &model, &selected, cfg.eval_episodes, seed, opts)?;

    let train_idx: Vec<usize> = train_levels.iter().map(|l| l.level_index).collect();
    let eval_dir = cfg.out_dir.join("eval");
    std::fs::create_dir_all(&eval_dir)?;
    let tag = selector.as_str();
    std::fs::write(
        eval_dir.join(format!("eval_{tag}.csv")),
        eval_csv(&report, |i| {
            if train_idx.contains(&i) {
                SplitLabel::Train
            } else {
                SplitLabel::Holdout
            }
        }),
    )?;
    let json = serde_json::to_string_pretty(&report)
        .map_err(|e| Error::Checkpoint(format!("report serialisation: {e}")))?;
    std::fs::write(eval_dir.join(format!("report_{tag}.json")), json)?;
    let labels: Vec<String> = report
        .rows
        .iter()
        .map(|r| format!("{}-{}", r.theta_first, r.theta_last))
        .collect();
    let rates: Vec<f64> = report.rows.iter().map(|r| r.solved_rate).collect();
    std::fs::write(
        eval_dir.join(format!("solved_rate_{tag}.svg")),
        solved_rate_svg(&labels, &rates, &format!("Solved rate ({tag})")),
    )?;
    for row in &report.rows {
        if let Some(mac) = &row.mac {
            std::fs::write(
                eval_dir.join(format!("mac_level_{}_{tag}.svg", row.level_index)),
                mac_svg(
                    mac,
                    &format!("MAC, modes {}-{}", row.theta_first, row.theta_last),
                ),
            )?;
        }
    }
    Ok(report)
}

/// EfI and (budget permitting) exhaustive-oracle baselines per level.
pub fn cmd_baseline(cfg: &RunConfig) -> Result<Vec<BaselineRow>> {
    cfg.validate()?;
    let model = load_or_build_model(cfg)?;
    let levels = build_levels(&model, cfg.n_modes, cfg.n_sensors)?;
    let mut rows = Vec::with_capacity(levels.len());
    for level in &levels {
        let efi = effective_independence(&model, level.theta, cfg.n_sensors)?;
        let ctx = FimContext::new(model.clone(), level.theta, cfg.n_sensors)?;
        let efi_det = ctx.det_fim(&efi)?;
        let exhaustive_det = match exhaustive_best(&model, level.theta, cfg.n_sensors) {
            Ok((_, det)) => Some(det),
            Err(Error::BudgetExceeded(_, _)) => None,
            Err(e) => return Err(e),
        };
        rows.push(BaselineRow {
            level_index: level.level_index,
            theta_first: level.theta.first,
            theta_last: level.theta.last,
            efi_det,
            efi_cells: efi.cells().to_vec(),
            exhaustive_det,
        });
    }
    std::fs::create_dir_all(&cfg.out_dir)?;
    std::fs::write(cfg.out_dir.join("baseline.csv"), baseline_csv(&rows))?;
    Ok(rows)
}

/// One training run per edit count (otherwise identical seeds/config),
/// compared on all levels.
pub fn cmd_ablate(cfg: &RunConfig, edit_counts: &[usize], seed: u64) -> Result<AblationTable> {
    cfg.validate()?;
    if edit_counts.is_empty() {
        return Err(Error::InvalidConfig("no edit counts given".into()));
    }
    for &k in edit_counts {
        if k == 0 || k > cfg.n_sensors {
            return Err(Error::InvalidConfig(format!(
                "edit count {k} outside 1..={}",
                cfg.n_sensors
            )));
        }
    }
    let model = load_or_build_model(cfg)?;
    let levels = build_levels(&model, cfg.n_modes, cfg.n_sensors)?;

    let mut per_count_reports: Vec<EvalReport> = Vec::with_capacity(edit_counts.len());
    for &k in edit_counts {
        let mut sub = cfg.clone();
        sub.curriculum.n_edits = k;
        sub.out_dir = cfg.out_dir.join("ablate").join(format!("edit_{k}"));
        std::fs::create_dir_all(&sub.out_dir)?;
        model.save(&model_path(&sub))?;
        let result = cmd_train(&sub, seed, false)?;
        let report = evaluate(
            &result.net,
            &model,
            &levels,
            cfg.eval_episodes,
            seed,
            EvalOptions::default(),
        )?;
        let labels: Vec<String> = report
            .rows
            .iter()
            .map(|r| format!("{}-{}", r.theta_first, r.theta_last))
            .collect();
        let rates: Vec<f64> = report.rows.iter().map(|r| r.solved_rate).collect();
        std::fs::write(
            sub.out_dir.join("solved_rate.svg"),
            solved_rate_svg(&labels, &rates, &format!("Solved rate, {k} edit(s)")),
        )?;
        per_count_reports.push(report);
    }

    let rows = levels
        .iter()
        .enumerate()
        .map(|(li, level)| {
            let label = format!("{}-{}", level.theta.first, level.theta.last);
            let cells = per_count_reports
                .iter()
                .map(|r| (r.rows[li].mean_det, r.rows[li].std_det))
                .collect();
            (label, cells)
        })
        .collect();
    let table = AblationTable {
        edit_counts: edit_counts.to_vec(),
        rows,
    };
    let ablate_dir = cfg.out_dir.join("ablate");
    std::fs::create_dir_all(&ablate_dir)?;
    std::fs::write(ablate_dir.join("ablation.csv"), ablation_csv(&table))?;
    Ok(table)
}

/// Convenience used by tests and the binary: load a config with an optional
/// output-directory override.
pub fn load_config(path: &Path, out_override: Option<&Path>) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(dir) = out_override {
        cfg.out_dir = dir.to_path_buf();
    }
    Ok(cfg)
}
