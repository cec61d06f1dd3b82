use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ngpq::ngp::{
    export_trace, psnr, read_checkpoint, read_ppm, write_checkpoint, OracleError, RenderTarget,
    ToyNgpModel, Trainer,
};
use ngpq::search::{
    run_ptq_baseline, run_qat_baseline, run_search, Environment, EvalResult, OracleEnv,
    PsnrReference, Reference, SearchReport, EPISODE_CSV_HEADER,
};
use ngpq::sim::{read_trace, simulate, write_trace, SimError, SimReport};
use ngpq::QuantPolicy;
use serde::Serialize;

use crate::config::RunConfig;
use crate::CliError;

pub const CHECKPOINT_FILE: &str = "oracle.hngp";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";
pub const TRACE_FILE: &str = "trace.htrc";
pub const REPORT_FILE: &str = "report.json";
pub const EPISODE_FILE: &str = "episodes.csv";
pub const BEST_POLICY_FILE: &str = "best_policy.txt";
pub const SIM_REPORT_FILE: &str = "sim_report.json";
pub const PARETO_FILE: &str = "pareto.csv";
pub const REWARD_CURVE_FILE: &str = "reward_curve.csv";

fn runtime(e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(e.to_string())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes).map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(runtime)?;
    bytes.push(b'\n');
    Ok(bytes)
}

/// Writes `header` and then one record per row, so empty tables still get
/// their header line.
fn write_csv<T: Serialize>(
    path: &Path,
    header: &str,
    rows: impl IntoIterator<Item = T>,
) -> Result<(), CliError> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
    w.write_record(header.split(',')).map_err(runtime)?;
    for row in rows {
        w.serialize(row).map_err(runtime)?;
    }
    w.flush().map_err(runtime)
}

fn open(path: &Path, what: &str) -> Result<BufReader<File>, CliError> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| CliError::Usage(format!("cannot open {what} {}: {e}", path.display())))
}

fn oracle_error(path: &Path, e: OracleError) -> CliError {
    match e {
        OracleError::Format { .. } => CliError::Malformed(format!("{}: {e}", path.display())),
        e => CliError::Runtime(format!("{}: {e}", path.display())),
    }
}

fn sim_error(path: &Path, e: SimError) -> CliError {
    match e {
        SimError::Format(_) | SimError::Trace(_) | SimError::UnresolvedUnit(_) => {
            CliError::Malformed(format!("{}: {e}", path.display()))
        }
        SimError::Config(_) => CliError::Usage(e.to_string()),
        SimError::Io(_) => CliError::Runtime(format!("{}: {e}", path.display())),
    }
}

/// The training target named by the config.
pub fn load_image(config: &RunConfig) -> Result<RenderTarget, CliError> {
    let o = &config.oracle;
    let channels = o.model.output_channels;
    match &o.image {
        Some(path) => {
            let image = read_ppm(open(path, "image")?).map_err(|e| oracle_error(path, e))?;
            if image.channels != channels {
                return Err(CliError::Usage(format!(
                    "{} has {} channels, the model outputs {channels}",
                    path.display(),
                    image.channels
                )));
            }
            Ok(image)
        }
        None => Ok(RenderTarget::checkerboard(
            o.width, o.height, channels, o.cell,
        )),
    }
}

pub fn train_oracle(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let image = load_image(config)?;
    let model =
        ToyNgpModel::new(config.oracle.model.clone(), config.oracle.seed).map_err(runtime)?;
    let mut log = Vec::new();
    let model = Trainer::new(model, &image, None, config.train_options())
        .and_then(|t| t.run(|r| log.push(r)))
        .map_err(runtime)?;

    let mut bytes = Vec::new();
    write_checkpoint(&model, &mut bytes).map_err(runtime)?;
    write_file(&out.join(CHECKPOINT_FILE), &bytes)?;
    write_csv(&out.join(TRAIN_LOG_FILE), "step,loss,psnr", log)?;

    let trace = export_trace(&model, image.width, image.height).map_err(runtime)?;
    let mut bytes = Vec::new();
    write_trace(&trace, &mut bytes).map_err(runtime)?;
    write_file(&out.join(TRACE_FILE), &bytes)?;

    let rendered = model
        .render(None, image.width, image.height)
        .map_err(runtime)?;
    let quality = psnr(&rendered, &image).map_err(runtime)?;
    println!(
        "trained {} steps, PSNR {quality:.2} dB",
        config.oracle.steps
    );
    println!("wrote {}", out.join(CHECKPOINT_FILE).display());
    Ok(())
}

/// Trained model, target and simulator for the search-side commands.
fn load_env(config: &RunConfig, out: &Path) -> Result<OracleEnv, CliError> {
    let path = out.join(CHECKPOINT_FILE);
    if !path.is_file() {
        return Err(CliError::Usage(format!(
            "checkpoint not found: {} (run train-oracle first)",
            path.display()
        )));
    }
    let model = read_checkpoint(open(&path, "checkpoint")?).map_err(|e| oracle_error(&path, e))?;
    let image = load_image(config)?;
    if model.config().output_channels != image.channels {
        return Err(CliError::Usage(format!(
            "{} does not match the image channels",
            path.display()
        )));
    }
    let trace = export_trace(&model, image.width, image.height).map_err(runtime)?;
    OracleEnv::new(
        model,
        image,
        Arc::new(trace),
        config.hardware.clone(),
        config.finetune_options(),
    )
    .map_err(runtime)
}

pub fn search(config: &RunConfig, out: &Path) -> Result<(), CliError> {
    let mut env = load_env(config, out)?;
    let report = run_search(&mut env, &config.search_config()).map_err(runtime)?;
    write_file(&out.join(REPORT_FILE), &to_json(&report)?)?;
    write_csv(&out.join(EPISODE_FILE), EPISODE_CSV_HEADER, &report.history)?;
    write_file(
        &out.join(BEST_POLICY_FILE),
        format!("{}\n", report.best.policy_text).as_bytes(),
    )?;

    let best = &report.best;
    println!("best policy {} ({})", best.policy_text, best.source);
    println!(
        "reward {:.4}  PSNR {:.2} dB  latency {} cycles  FQR {:.2}",
        best.eval.reward, best.eval.psnr, best.eval.latency_cycles, best.eval.fqr
    );
    if let Some(b) = &report.budget {
        println!(
            "budget {} cycles: {}",
            b.budget_cycles,
            if b.satisfied {
                "satisfied"
            } else {
                "unreachable"
            }
        );
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BaselineKind {
    Ptq,
    Qat,
}

#[derive(Debug, Serialize)]
struct BaselineOutput {
    kind: BaselineKind,
    bits: u8,
    policy: String,
    eval: EvalResult,
}

pub fn baseline(
    config: &RunConfig,
    out: &Path,
    kind: BaselineKind,
    bits: u8,
) -> Result<(), CliError> {
    if !(1..=8).contains(&bits) {
        return Err(CliError::Usage(format!("bits {bits} outside [1, 8]")));
    }
    let mut env = load_env(config, out)?;
    let search = config.search_config();
    let (levels, layers) = env.shape();
    let uniform8 = QuantPolicy::uniform(levels, layers, 8);
    let original_cost = env.latency(&uniform8).map_err(runtime)?;
    let psnr_org = match search.psnr_reference {
        PsnrReference::EightBit => env.quality(&uniform8, search.finetune_steps),
        PsnrReference::Float => env.float_quality(),
    }
    .map_err(runtime)?;
    let reference = Reference {
        psnr_org,
        original_cost,
        lambda: search.lambda,
    };
    let eval = match kind {
        BaselineKind::Ptq => run_ptq_baseline(&mut env, bits, &reference),
        BaselineKind::Qat => run_qat_baseline(&mut env, bits, search.finetune_steps, &reference),
    }
    .map_err(runtime)?;
    let output = BaselineOutput {
        kind,
        bits,
        policy: QuantPolicy::uniform(levels, layers, bits).to_string(),
        eval,
    };
    let json = to_json(&output)?;
    let name = format!(
        "baseline_{}{bits}.json",
        if kind == BaselineKind::Ptq {
            "ptq"
        } else {
            "qat"
        }
    );
    write_file(&out.join(name), &json)?;
    print!("{}", String::from_utf8_lossy(&json));
    Ok(())
}

pub fn simulate_cmd(
    config: &RunConfig,
    out: &Path,
    trace_path: &Path,
    policy_path: &Path,
    breakdown: bool,
) -> Result<(), CliError> {
    let layout = config.oracle.model.trace_layout();
    let trace =
        read_trace(open(trace_path, "trace")?, layout).map_err(|e| sim_error(trace_path, e))?;
    let text = fs::read_to_string(policy_path).map_err(|e| {
        CliError::Usage(format!("cannot open policy {}: {e}", policy_path.display()))
    })?;
    let policy: QuantPolicy = text
        .trim()
        .parse()
        .map_err(|e| CliError::Malformed(format!("{}: {e}", policy_path.display())))?;
    let report =
        simulate(&trace, &policy, &config.hardware).map_err(|e| sim_error(policy_path, e))?;
    write_file(&out.join(SIM_REPORT_FILE), &to_json(&report)?)?;
    print!("{}", render_sim_report(&report, breakdown));
    Ok(())
}

fn render_sim_report(r: &SimReport, breakdown: bool) -> String {
    let mut s = format!(
        "total_cycles {}\ncycles_per_ray {:.3}\n",
        r.total_cycles, r.cycles_per_ray
    );
    if breakdown {
        s += &format!(
            "encoding_cycles {}\nsubgrid_prefetch_cycles {}\nmlp_cycles {}\ncache_hits {}\ncache_misses {}\n\
             subgrid_prefetch_bytes {}\ndram_bytes {}\n",
            r.encoding_cycles,
            r.subgrid_prefetch_cycles,
            r.mlp_cycles,
            r.cache_hits,
            r.cache_misses,
            r.subgrid_prefetch_bytes,
            r.dram_bytes
        );
    }
    s
}

#[derive(Debug, Serialize)]
struct ParetoRow<'a> {
    source: String,
    policy: &'a str,
    psnr: f64,
    latency_cycles: u64,
    cost_efficiency: f64,
}

#[derive(Debug, Serialize)]
struct RewardRow {
    episode: usize,
    reward: f64,
    best_reward: f64,
}

pub fn plotdata(out: &Path, report_path: &Path) -> Result<(), CliError> {
    let report: SearchReport = serde_json::from_reader(open(report_path, "report")?)
        .map_err(|e| CliError::Malformed(format!("{}: {e}", report_path.display())))?;

    let texts: Vec<String> = report
        .baselines
        .iter()
        .map(|b| b.policy.to_string())
        .collect();
    let baselines = report
        .baselines
        .iter()
        .zip(&texts)
        .map(|(b, text)| ParetoRow {
            source: b.name.clone(),
            policy: text,
            psnr: b.eval.psnr,
            latency_cycles: b.eval.latency_cycles,
            cost_efficiency: b.eval.cost_efficiency,
        });
    let episodes = report.history.iter().map(|h| ParetoRow {
        source: format!("episode {}", h.episode),
        policy: &h.policy,
        psnr: h.psnr,
        latency_cycles: h.latency_cycles,
        cost_efficiency: h.cost_efficiency,
    });
    write_csv(
        &out.join(PARETO_FILE),
        "source,policy,psnr,latency_cycles,cost_efficiency",
        baselines.chain(episodes),
    )?;

    let mut best = f64::NEG_INFINITY;
    let curve: Vec<RewardRow> = report
        .history
        .iter()
        .map(|h| {
            best = best.max(h.reward);
            RewardRow {
                episode: h.episode,
                reward: h.reward,
                best_reward: best,
            }
        })
        .collect();
    write_csv(
        &out.join(REWARD_CURVE_FILE),
        "episode,reward,best_reward",
        curve,
    )?;
    println!(
        "wrote {} and {}",
        out.join(PARETO_FILE).display(),
        out.join(REWARD_CURVE_FILE).display()
    );
    Ok(())
}

/// `--out`, else the config's `out_dir`, else `./out`.
pub fn out_dir(cli_out: Option<PathBuf>, config: &RunConfig) -> Result<PathBuf, CliError> {
    let dir = cli_out
        .or_else(|| config.out_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&dir).map_err(|e| CliError::Runtime(format!("{}: {e}", dir.display())))?;
    Ok(dir)
}
