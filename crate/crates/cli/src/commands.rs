use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context};
use iqpforge::circuit::{bind, CircuitFamily};
use iqpforge::diagnostics::{
    diagnose_instance, ensemble_study, summarize, DiagnosticsReport, ExternalSamples, TrialDiagnostics,
};
use iqpforge::statevector::{dqgm_sampling_distribution, simulate, DEFAULT_QUBIT_CAP};
use iqpforge::tn::complexity_sweep;
use iqpforge::trainer::{Checkpoint, StepRecord, Task, Trainer};
use iqpforge::verify::{self, Tamper};
use iqpforge::{rng, Error, ProbabilityTable};
use rand::Rng;
use serde::Deserialize;

use crate::config::{self, ComplexityFile, DiagnoseFile, OracleFile, TrainFile};
use crate::manifest::Run;
use crate::{Cli, Command};

pub fn dispatch(cli: &Cli, run: &mut Run) -> anyhow::Result<()> {
    match &cli.command {
        Command::Train { out, log, resume } => train(cli, out.as_deref(), log.as_deref(), resume.as_deref(), run),
        Command::Sample { checkpoint, shots, out } => sample(cli, checkpoint, *shots, out.as_deref(), run),
        Command::Diagnose => diagnose(cli, run),
        Command::Complexity { out } => complexity(cli, out.as_deref(), run),
        Command::Oracle { checkpoint, out } => oracle(cli, checkpoint.as_deref(), out.as_deref(), run),
        Command::Verify { level, out, tamper_rz_sign } => {
            let out = out_path(cli, out.as_deref(), "verify.json");
            let seed = cli.seed.unwrap_or(0);
            run.seed = Some(seed);
            let report = verify::run(*level, seed, Tamper { rz_sign: *tamper_rz_sign })?;
            std::fs::write(&out, serde_json::to_vec_pretty(&report)?)?;
            run.output(&out);
            let failed: Vec<_> = report.checks.iter().filter(|c| !c.passed).collect();
            for c in &failed {
                eprintln!("FAIL {} n={}: {:e} > {:e}", c.name, c.n, c.value, c.tolerance);
            }
            ensure!(failed.is_empty(), "{} of {} checks failed", failed.len(), report.checks.len());
            println!("all {} checks passed", report.checks.len());
            Ok(())
        }
    }
}

fn out_path(cli: &Cli, explicit: Option<&Path>, default: &str) -> PathBuf {
    explicit.map_or_else(|| cli.out_dir.join(default), Path::to_path_buf)
}

fn require_config(cli: &Cli) -> anyhow::Result<&Path> {
    cli.config.as_deref().context("this subcommand needs --config <file>")
}

fn train(
    cli: &Cli,
    out: Option<&Path>,
    log: Option<&Path>,
    resume: Option<&Path>,
    run: &mut Run,
) -> anyhow::Result<()> {
    let ck_path = out_path(cli, out, "checkpoint.json");
    let log_path = out_path(cli, log, "train_log.csv");
    let file = match &cli.config {
        Some(path) => {
            let (mut file, _) = config::load::<TrainFile>(path)?;
            if let Some(s) = cli.seed {
                file.train.seed = s;
            }
            run.config_digest = Some(config::digest(&file));
            Some(file)
        }
        None => None,
    };
    let mut trainer = match (resume, file) {
        (Some(path), file) => {
            let ck = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
            if let Some(file) = file {
                ensure!(
                    file.train.digest() == ck.config_digest && file.task == ck.task,
                    "--config does not match the configuration stored in {}",
                    path.display()
                );
            } else {
                ensure!(
                    cli.seed.is_none_or(|s| s == ck.config.seed),
                    "--seed differs from the checkpoint's seed {}",
                    ck.config.seed
                );
                run.config_digest = Some(ck.config_digest.clone());
            }
            Trainer::resume(ck)?
        }
        (None, Some(file)) => {
            let circuit = file.circuit.build()?;
            match file.task {
                Task::Dqgm => Trainer::dqgm(&circuit, &file.train)?,
                Task::Qcbm => Trainer::qcbm(&circuit, &file.train, &file.train.target_distribution()?)?,
            }
        }
        (None, None) => bail!("train needs --config <file> or --resume <checkpoint>"),
    };
    run.seed = Some(trainer.checkpoint().config.seed);

    let fresh = resume.is_none() || !log_path.exists();
    let log_file = OpenOptions::new()
        .create(true)
        .write(true)
        .append(resume.is_some())
        .truncate(resume.is_none())
        .open(&log_path)
        .with_context(|| format!("opening {}", log_path.display()))?;
    let mut log = csv::Writer::from_writer(log_file);
    if fresh {
        log.write_record(["step", "loss", "grad_norm", "wall_ms"])?;
    }
    run.output(&log_path);
    run.output(&ck_path);
    let mut write = |rec: &StepRecord| -> anyhow::Result<()> {
        log.write_record([
            rec.step.to_string(),
            rec.loss.to_string(),
            rec.grad_norm.to_string(),
            format!("{:.3}", rec.wall_ms),
        ])?;
        log.flush()?;
        Ok(())
    };
    if resume.is_none() {
        write(&trainer.initial_record())?;
        trainer.checkpoint().save(&ck_path)?;
    }
    while !trainer.done() {
        let rec = trainer.step()?;
        write(&rec)?;
        trainer.checkpoint().save(&ck_path)?;
    }
    let ck = trainer.checkpoint();
    println!("step {}: loss {:e} (initial {:e})", ck.step, ck.loss_history[ck.step], ck.loss_history[0]);
    Ok(())
}

/// Exact output distribution of a trained model: the DQGM sampling circuit or
/// the QCBM state.
fn model_table(ck: &Checkpoint) -> anyhow::Result<ProbabilityTable> {
    let n = ck.circuit.n();
    if n > DEFAULT_QUBIT_CAP {
        return Err(Error::CapacityExceeded { n, cap: DEFAULT_QUBIT_CAP }).context(
            "sampling needs the full output table, which is out of classical reach at this size; \
             drawing samples from large models is the quantum device's job",
        );
    }
    Ok(match ck.task {
        Task::Dqgm => dqgm_sampling_distribution(&ck.circuit, &ck.theta)?,
        Task::Qcbm => simulate(&bind(&ck.circuit, &ck.theta, None)?)?.full_distribution(),
    })
}

fn bitstring(x: u64, n: usize) -> String {
    (0..n).map(|q| if x >> q & 1 == 1 { '1' } else { '0' }).collect()
}

fn sample(cli: &Cli, checkpoint: &Path, shots: u64, out: Option<&Path>, run: &mut Run) -> anyhow::Result<()> {
    let ck = Checkpoint::load(checkpoint).with_context(|| format!("loading {}", checkpoint.display()))?;
    let seed = cli.seed.unwrap_or(ck.config.seed);
    run.seed = Some(seed);
    run.config_digest = Some(ck.config_digest.clone());
    let table = model_table(&ck)?;
    let counts = table.sample(shots, &mut rng::stream(seed, "sample"));
    let out = out_path(cli, out, "counts.csv");
    let mut w = csv::Writer::from_path(&out)?;
    w.write_record(["bitstring", "count", "frequency"])?;
    for (&x, &k) in &counts.counts {
        w.write_record([bitstring(x, table.n()), k.to_string(), counts.frequency(x).to_string()])?;
    }
    w.flush()?;
    run.output(&out);
    Ok(())
}

#[derive(Deserialize)]
struct SampleRow {
    family: CircuitFamily,
    n: usize,
    trial: usize,
    x: u64,
}

/// Reads `family,n,trial,x` rows of externally drawn samples.
fn read_samples(path: &Path) -> anyhow::Result<BTreeMap<CircuitFamily, ExternalSamples>> {
    let mut out: BTreeMap<CircuitFamily, ExternalSamples> = BTreeMap::new();
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    for row in r.deserialize() {
        let row: SampleRow = row.with_context(|| format!("parsing {}", path.display()))?;
        out.entry(row.family).or_default().entry((row.n, row.trial)).or_default().push(row.x);
    }
    Ok(out)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn diagnose(cli: &Cli, run: &mut Run) -> anyhow::Result<()> {
    let path = require_config(cli)?;
    let (mut file, _) = config::load::<DiagnoseFile>(path)?;
    if let Some(s) = cli.seed {
        file.seed = s;
    }
    run.seed = Some(file.seed);
    run.config_digest = Some(config::digest(&file));
    ensure!(file.trials >= 1, "trials must be at least 1");
    let external = match &file.samples {
        Some(p) => read_samples(&path.parent().unwrap_or(Path::new(".")).join(p))?,
        None => BTreeMap::new(),
    };

    let mut reports: Vec<DiagnosticsReport> = vec![];
    for &family in &file.families {
        let ext = external.get(&family);
        if file.trials >= 2 {
            reports.extend(ensemble_study(family, &file.ns, file.trials, file.seed, &file.study, ext)?);
        } else {
            for &n in &file.ns {
                let row = diagnose_instance(family, n, 0, file.seed, &file.study, ext)?;
                reports.push(summarize(family, n, vec![row]));
            }
        }
    }

    let rows: Vec<&TrialDiagnostics> = reports.iter().flat_map(|r| &r.rows).collect();
    let diag_path = cli.out_dir.join("diagnostics.csv");
    let mut w = csv::Writer::from_path(&diag_path)?;
    w.write_record([
        "family",
        "n",
        "trial",
        "anti_concentration",
        "tv_porter_thomas",
        "tv_half_bins",
        "tv_double_bins",
        "delta_h",
        "delta_h_stderr",
        "xeb_samples",
    ])?;
    for r in &rows {
        w.write_record([
            r.family.to_string(),
            r.n.to_string(),
            r.trial.to_string(),
            opt(r.anti_concentration),
            opt(r.tv_porter_thomas),
            opt(r.tv_half_bins),
            opt(r.tv_double_bins),
            r.delta_h.value.to_string(),
            r.delta_h.stderr.to_string(),
            r.delta_h.samples.to_string(),
        ])?;
    }
    w.flush()?;
    run.output(&diag_path);

    let ts_path = cli.out_dir.join("tsparse.csv");
    let mut w = csv::Writer::from_path(&ts_path)?;
    w.write_record(["family", "n", "trial", "inv_eps", "f"])?;
    for r in &rows {
        for (inv_eps, f) in &r.tsparse {
            w.write_record([r.family.to_string(), r.n.to_string(), r.trial.to_string(), inv_eps.to_string(), f.to_string()])?;
        }
    }
    w.flush()?;
    run.output(&ts_path);

    let summary_path = cli.out_dir.join("diagnostics_summary.json");
    std::fs::write(&summary_path, serde_json::to_vec_pretty(&reports)?)?;
    run.output(&summary_path);
    for r in &reports {
        let ac = r.anti_concentration.map_or_else(|| "-".into(), |m| format!("{:.4}", m.mean));
        let tv = r.tv_porter_thomas.map_or_else(|| "-".into(), |m| format!("{:.4}", m.mean));
        println!("{} n={}: anti-concentration {ac}, TV {tv}, delta_h {:.4}", r.family, r.n, r.delta_h.value);
    }
    Ok(())
}

fn complexity(cli: &Cli, out: Option<&Path>, run: &mut Run) -> anyhow::Result<()> {
    let file = match &cli.config {
        Some(path) => config::load::<ComplexityFile>(path)?.0,
        None => ComplexityFile { schema: config::SCHEMA, families: CircuitFamily::ALL.to_vec(), ns: (4..=24).collect() },
    };
    run.config_digest = Some(config::digest(&file));
    let rows = complexity_sweep(&file.families, &file.ns)?;
    let out = out_path(cli, out, "complexity.csv");
    let mut w = csv::Writer::from_path(&out)?;
    w.write_record(["family", "n", "max_rank", "est_log2_cost"])?;
    for r in &rows {
        w.write_record([r.family.to_string(), r.n.to_string(), r.max_rank.to_string(), r.est_log2_cost.to_string()])?;
    }
    w.flush()?;
    run.output(&out);
    Ok(())
}

fn oracle(cli: &Cli, checkpoint: Option<&Path>, out: Option<&Path>, run: &mut Run) -> anyhow::Result<()> {
    let table = match (checkpoint, &cli.config) {
        (Some(ck_path), _) => {
            let ck = Checkpoint::load(ck_path).with_context(|| format!("loading {}", ck_path.display()))?;
            run.config_digest = Some(ck.config_digest.clone());
            model_table(&ck)?
        }
        (None, Some(path)) => {
            let (mut file, _) = config::load::<OracleFile>(path)?;
            if let Some(s) = cli.seed {
                file.seed = s;
            }
            run.seed = Some(file.seed);
            run.config_digest = Some(config::digest(&file));
            let c = file.circuit.build()?;
            let theta = file.theta.clone().unwrap_or_else(|| {
                let mut r = rng::stream(file.seed, "oracle theta");
                (0..c.param_count()).map(|_| r.random_range(0..16) as f64 * PI / 8.0).collect()
            });
            simulate(&bind(&c, &theta, file.x)?)?.full_distribution()
        }
        (None, None) => bail!("oracle needs --config <file> or --checkpoint <file>"),
    };
    let out = out_path(cli, out, "probabilities.bin");
    std::fs::write(&out, table.to_le_bytes())?;
    run.output(&out);
    Ok(())
}
