use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use histosurv_core::dataio::{generate_synthetic_cohort, write_matrix, Precision};
use histosurv_core::metrics::{concordance_index, format_mean_std, stratified_report};
use histosurv_core::model::model_gradient_check;
use histosurv_core::pipeline::{
    evaluate_fold, fit_mixture, loss_grid, module_grid, run_ablation, strategy_grid, train_fold,
    FoldEvaluation, TrainHistory,
};
use histosurv_core::{
    load_cohort, Error, ModelCheckpoint, ModelDims, SyntheticConfig, TrainConfig,
};
use serde::Serialize;
use serde_json::json;

use crate::{
    AblateArgs, CvArgs, EvalArgs, FitGmmArgs, GenArgs, GradcheckArgs, Grid, KmArgs, TrainCmd,
};

fn create_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// `config.json`: the verb, its arguments and the resolved training config.
fn echo(
    out: &Path,
    command: &str,
    args: &impl Serialize,
    config: Option<&TrainConfig>,
) -> Result<()> {
    create_dir(out)?;
    let mut v = json!({ "command": command, "args": args });
    if let Some(c) = config {
        v["train_config"] = serde_json::to_value(c)?;
        v["config_hash"] = json!(c.hash());
    }
    write(&out.join("config.json"), &serde_json::to_string_pretty(&v)?)
}

pub fn gen(a: &GenArgs) -> Result<()> {
    echo(&a.out, "gen", a, None)?;
    let cfg = SyntheticConfig {
        seed: a.seed,
        n_patients: a.n_patients,
        dim: a.dim,
        patch_range: (a.min_patches, a.max_patches),
        latent_clusters: a.latent_clusters,
        noise: a.noise,
        cluster_separation: a.cluster_separation,
        max_signal_fraction: a.max_signal_fraction,
        risk_scale: a.risk_scale,
        censor_horizon: a.censor_horizon,
        n_folds: a.folds,
    };
    let synth = generate_synthetic_cohort(&cfg)?;
    let manifest = synth.write(&a.out)?;
    println!(
        "wrote {} patients to {}",
        synth.cohort.len(),
        manifest.display()
    );
    Ok(())
}

pub fn fit_gmm(a: &FitGmmArgs) -> Result<()> {
    let config = a.train.resolve()?;
    echo(&a.out, "fit-gmm", a, Some(&config))?;
    let cohort = load_cohort(&a.manifest)?;
    let patients = match a.fold {
        Some(f) => {
            if f >= cohort.num_folds() {
                bail!(Error::Config(format!(
                    "fold {f} out of range, cohort has {}",
                    cohort.num_folds()
                )));
            }
            cohort.split(f).0
        }
        None => (0..cohort.len()).collect(),
    };
    let fit = fit_mixture(&cohort, &patients, a.fold, &config, true)?;
    let gmm = fit.gmm.expect("EM requested");
    gmm.save(&a.out.join("gmm.bin"))?;
    write_matrix(
        &a.out.join("centroids.bin"),
        &fit.centroids.vectors,
        Precision::F64,
    )?;
    write(
        &a.out.join("provenance.json"),
        &serde_json::to_string_pretty(&fit.provenance)?,
    )?;
    println!(
        "fitted {} components on {} patches from {} patients",
        gmm.components(),
        fit.provenance.corpus_rows,
        patients.len()
    );
    Ok(())
}

fn history_text(h: &TrainHistory) -> String {
    let mut s = String::from("epoch\tloss\tnll\treconstruction\n");
    for (e, ((l, n), r)) in h.loss.iter().zip(&h.nll).zip(&h.reconstruction).enumerate() {
        let _ = writeln!(s, "{e}\t{l}\t{n}\t{r}");
    }
    s
}

pub fn train(a: &TrainCmd) -> Result<()> {
    let config = a.train.resolve()?;
    echo(&a.out, "train", a, Some(&config))?;
    let cohort = load_cohort(&a.manifest)?;
    let (ckpt, history) = train_fold(&cohort, a.fold, &config)?;
    ckpt.save(&a.out.join("checkpoint.json"))?;
    write(&a.out.join("history.tsv"), &history_text(&history))?;
    println!(
        "fold {} trained for {} epochs, final loss {}, checkpoint {}",
        a.fold,
        config.epochs,
        history
            .loss
            .last()
            .map_or_else(|| "-".into(), |l| format!("{l:.4}")),
        ckpt.digest()
    );
    Ok(())
}

fn write_evaluation(out: &Path, eval: &FoldEvaluation) -> Result<()> {
    write(&out.join("risks.tsv"), &eval.risk_table())?;
    let mut attention = String::from("sample_id\tpatch\tweight\n");
    let mut selections = String::from("sample_id\tindex\tclass\tposterior\tprovenance\n");
    for row in &eval.rows {
        for (i, w) in row.attention.iter().enumerate() {
            let _ = writeln!(attention, "{}\t{i}\t{w}", row.record.sample_id);
        }
        for line in row.selection.to_text().lines().skip(1) {
            let _ = writeln!(selections, "{}\t{line}", row.record.sample_id);
        }
    }
    write(&out.join("attention.tsv"), &attention)?;
    write(&out.join("selections.tsv"), &selections)
}

pub fn eval(a: &EvalArgs) -> Result<()> {
    let ckpt = ModelCheckpoint::load(&a.checkpoint)?;
    echo(&a.out, "eval", a, Some(&ckpt.config))?;
    let cohort = load_cohort(&a.manifest)?;
    let fold = ckpt.artifacts.fold;
    let eval = evaluate_fold(&cohort, fold, &ckpt)?;
    write_evaluation(&a.out, &eval)?;
    write(
        &a.out.join("summary.json"),
        &serde_json::to_string_pretty(
            &json!({ "fold": fold, "c_index": eval.c_index, "patients": eval.rows.len() }),
        )?,
    )?;
    println!(
        "fold {fold}: C-index {:.4} over {} patients",
        eval.c_index,
        eval.rows.len()
    );
    Ok(())
}

pub fn cv(a: &CvArgs) -> Result<()> {
    let config = a.train.resolve()?;
    echo(&a.out, "cv", a, Some(&config))?;
    let cohort = load_cohort(&a.manifest)?;
    if cohort.num_folds() != config.folds {
        bail!(Error::Config(format!(
            "cohort has {} folds but the config asks for {}",
            cohort.num_folds(),
            config.folds
        )));
    }
    let mut summary = String::from("fold\tc_index\tcheckpoint_sha256\n");
    let mut c_indices = Vec::new();
    let mut all_rows = Vec::new();
    for fold in 0..config.folds {
        let dir = a.out.join(format!("fold{fold}"));
        create_dir(&dir)?;
        let (ckpt, history) = train_fold(&cohort, fold, &config)?;
        ckpt.save(&dir.join("checkpoint.json"))?;
        write(&dir.join("history.tsv"), &history_text(&history))?;
        let eval = evaluate_fold(&cohort, fold, &ckpt)?;
        write_evaluation(&dir, &eval)?;
        let _ = writeln!(summary, "{fold}\t{}\t{}", eval.c_index, ckpt.digest());
        println!("fold {fold}: C-index {:.4}", eval.c_index);
        c_indices.push(eval.c_index);
        all_rows.extend(eval.rows.into_iter().map(|r| (r.record, r.risk)));
    }
    write(&a.out.join("cindex.tsv"), &summary)?;
    write(
        &a.out.join("risks.tsv"),
        &histosurv_core::survival::risk_table_text(&all_rows),
    )?;
    println!("mean C-index {}", format_mean_std(&c_indices));
    Ok(())
}

pub fn ablate(a: &AblateArgs) -> Result<()> {
    let config = a.train.resolve()?;
    echo(&a.out, "ablate", a, Some(&config))?;
    if a.seeds.is_empty() {
        bail!(Error::Config("at least one seed is required".into()));
    }
    let cohort = load_cohort(&a.manifest)?;
    let grid = match a.grid {
        Grid::Modules => module_grid(&config),
        Grid::Strategies => strategy_grid(&config),
        Grid::Losses => loss_grid(&config),
    };
    let table = run_ablation(&cohort, &grid, &a.seeds)?;
    write(&a.out.join("ablation.txt"), &table.to_text())?;
    write(&a.out.join("ablation.tsv"), &table.to_tsv())?;
    print!("{}", table.to_text());
    Ok(())
}

struct RiskRow {
    risk: f64,
    time: f64,
    censored: bool,
}

fn parse_risk_table(path: &Path) -> Result<Vec<RiskRow>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let bad = |line: usize, why: &str| Error::Config(format!("{}:{line}: {why}", path.display()));
    let mut lines = text.lines().enumerate();
    let header: Vec<&str> = lines
        .next()
        .map(|(_, h)| h.split('\t').collect())
        .unwrap_or_default();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| *h == name)
            .ok_or_else(|| bad(1, &format!("missing `{name}` column")))
    };
    let (ri, ci, ti) = (col("risk")?, col("censor")?, col("time")?);
    let mut rows = Vec::new();
    for (n, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let get = |i: usize| f.get(i).copied().ok_or_else(|| bad(n + 1, "short row"));
        let num = |i: usize| -> Result<f64> {
            Ok(get(i)?
                .parse::<f64>()
                .map_err(|e| bad(n + 1, &e.to_string()))?)
        };
        let censored = match get(ci)? {
            "0" => false,
            "1" => true,
            other => bail!(bad(n + 1, &format!("censor must be 0 or 1, got `{other}`"))),
        };
        rows.push(RiskRow {
            risk: num(ri)?,
            time: num(ti)?,
            censored,
        });
    }
    if rows.len() < 2 {
        bail!(bad(1, "need at least two patients"));
    }
    Ok(rows)
}

pub fn km(a: &KmArgs) -> Result<()> {
    echo(&a.out, "km", a, None)?;
    let rows = parse_risk_table(&a.risks)?;
    let risks: Vec<f64> = rows.iter().map(|r| r.risk).collect();
    let times: Vec<f64> = rows.iter().map(|r| r.time).collect();
    let cens: Vec<bool> = rows.iter().map(|r| r.censored).collect();
    let report = stratified_report(&risks, &times, &cens)?;
    write(&a.out.join("km.tsv"), &report)?;
    if let Ok(c) = concordance_index(&risks, &times, &cens) {
        println!("C-index {c:.4}");
    }
    for line in report.lines().filter(|l| l.starts_with('#')) {
        println!("{line}");
    }
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<()> {
    echo(&a.out, "gradcheck", a, None)?;
    let dims = ModelDims {
        dim: a.dim,
        tokens: a.n_l,
    };
    let report = model_gradient_check(dims, a.lambda_kl, a.seed, a.tol)?;
    write(&a.out.join("gradcheck.txt"), &format!("{report}\n"))?;
    println!("{report}");
    if !report.passed() {
        bail!(Error::Loss(format!(
            "gradient check failed: max error {:e} > {:e}",
            report.max_error, a.tol
        )));
    }
    Ok(())
}
