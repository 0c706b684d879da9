//! `trajsim`: drives the whole similarity pipeline from the shell.
//!
//! A typical run over a synthetic corpus:
//!
//! ```text
//! trajsim synth corpus.csv --clusters 10 --per-cluster 30 --len 48
//! trajsim --config run.cfg preprocess corpus.csv clean.csv
//! trajsim --config run.cfg --planar distmatrix clean.csv sspd truth.tsdm
//! trajsim --config run.cfg pretrain clean.csv pre.tsps
//! trajsim --config run.cfg finetune clean.csv truth.tsdm model.tsps --init pre.tsps
//! trajsim --config run.cfg evaluate clean.csv truth.tsdm model.tsps --out report.csv
//! trajsim --config run.cfg query model.tsps clean.csv c3_m7 5
//! ```
//!
//! Exit codes: 0 ok, 2 config error, 3 bad data or IO, 4 numeric or shape
//! failure. Every output file is written to a temp file next to its
//! destination and renamed into place, so an aborted run leaves no partial
//! artifacts behind.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};

use trajsim_core::autodiff::ParamStore;
use trajsim_core::heuristics::build_matrix;
use trajsim_core::ranking::score_between;
use trajsim_core::retrieval::{evaluate_suite, rank_candidates};
use trajsim_core::sam::validate_params;
use trajsim_core::synth::random_walk_clusters;
use trajsim_core::traj::{
    load_trajectories, make_grid, preprocess, split_dataset, write_trajectories,
};
use trajsim_core::train::{encode_all, finetune, index_by_id, pretrain, EpochLog};
use trajsim_core::{
    BoundingBox, DistanceMatrix, DistanceMode, Error, GridSpec, MetricTag, Result, RunConfig,
    Trajectory,
};

#[derive(Parser)]
#[command(name = "trajsim", version, about = "Trajectory similarity pipeline")]
struct Cli {
    /// `key = value` config file; defaults apply when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Overrides the config `seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Size of the thread pool (default: one thread per core).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Treat (lon, lat) as raw planar (x, y) in the distance kernels.
    #[arg(long, global = true)]
    planar: bool,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Write a clustered random-walk corpus (synthetic stand-in for a real dataset)
    Synth {
        out_csv: PathBuf,
        #[arg(long, default_value_t = 10)]
        clusters: usize,
        #[arg(long, default_value_t = 30)]
        per_cluster: usize,
        /// Points per trajectory.
        #[arg(long, default_value_t = 48)]
        len: usize,
    },
    /// Drop trajectories outside the bounds or length limits, write the rest plus a split manifest
    Preprocess { in_csv: PathBuf, out_csv: PathBuf },
    /// Build and save the all-pairs ground-truth distance matrix
    Distmatrix {
        csv: PathBuf,
        #[arg(value_enum)]
        metric: MetricArg,
        out: PathBuf,
    },
    /// Pretrain the encoder on bridge reconstruction
    Pretrain { csv: PathBuf, out_ckpt: PathBuf },
    /// Fine-tune against a ground-truth matrix; cold-starts unless --init is given
    Finetune {
        csv: PathBuf,
        matrix: PathBuf,
        out_ckpt: PathBuf,
        /// Pretrained checkpoint to warm-start from.
        #[arg(long, value_name = "CKPT")]
        init: Option<PathBuf>,
    },
    /// Retrieval metrics of a checkpoint on the test split
    Evaluate {
        csv: PathBuf,
        matrix: PathBuf,
        ckpt: PathBuf,
        /// Also write the report as `name,k,value` lines.
        #[arg(long, value_name = "PATH")]
        out: Option<PathBuf>,
    },
    /// Print the top-k most similar trajectories for one query id
    Query {
        ckpt: PathBuf,
        csv: PathBuf,
        query_id: String,
        #[arg(default_value_t = 5)]
        k: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum MetricArg {
    Sspd,
    Hausdorff,
    Frechet,
}

impl From<MetricArg> for MetricTag {
    fn from(m: MetricArg) -> MetricTag {
        match m {
            MetricArg::Sspd => MetricTag::Sspd,
            MetricArg::Hausdorff => MetricTag::Hausdorff,
            MetricArg::Frechet => MetricTag::Frechet,
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("trajsim: {e}");
            ExitCode::from(match e {
                Error::Config(_) => 2,
                Error::Data(_) | Error::Io(_) => 3,
                Error::Numeric(_) | Error::Shape(_) => 4,
            })
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("cannot size the thread pool: {e}")))?;
    }
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let mode = if cli.planar {
        DistanceMode::Planar
    } else {
        DistanceMode::Geographic
    };

    match cli.cmd {
        Cmd::Synth {
            out_csv,
            clusters,
            per_cluster,
            len,
        } => cmd_synth(&cfg, &out_csv, clusters, per_cluster, len),
        Cmd::Preprocess { in_csv, out_csv } => cmd_preprocess(&cfg, &in_csv, &out_csv),
        Cmd::Distmatrix { csv, metric, out } => cmd_distmatrix(&csv, metric.into(), mode, &out),
        Cmd::Pretrain { csv, out_ckpt } => cmd_pretrain(&cfg, &csv, &out_ckpt),
        Cmd::Finetune {
            csv,
            matrix,
            out_ckpt,
            init,
        } => cmd_finetune(&cfg, &csv, &matrix, init.as_deref(), &out_ckpt),
        Cmd::Evaluate {
            csv,
            matrix,
            ckpt,
            out,
        } => cmd_evaluate(&cfg, &csv, &matrix, &ckpt, out.as_deref()),
        Cmd::Query {
            ckpt,
            csv,
            query_id,
            k,
        } => cmd_query(&cfg, &ckpt, &csv, &query_id, k),
    }
}

// ---------------------------------------------------------------------------
// shared plumbing

/// The config bounding box when any corner is set, otherwise the data's own
/// bounds. Set the box explicitly when checkpoints must transfer between
/// different CSV files: the grid is derived from it.
fn resolve_bbox(cfg: &RunConfig, trajs: &[Trajectory]) -> Result<BoundingBox> {
    let configured = [cfg.lon_min, cfg.lon_max, cfg.lat_min, cfg.lat_max];
    if configured.iter().any(Option::is_some) {
        cfg.bounding_box()
    } else {
        BoundingBox::around(trajs)
            .ok_or_else(|| Error::Data("no points to take bounds from".into()))
    }
}

fn grid_for(cfg: &RunConfig, trajs: &[Trajectory]) -> Result<GridSpec> {
    make_grid(resolve_bbox(cfg, trajs)?, cfg.cell_size)
}

fn load_checkpoint(cfg: &RunConfig, path: &Path) -> Result<ParamStore> {
    let store = ParamStore::load(path)?;
    validate_params(&cfg.sam_config(), &store)?;
    Ok(store)
}

fn ids_of(trajs: &[Trajectory]) -> Vec<String> {
    trajs.iter().map(|t| t.id.clone()).collect()
}

/// Write via a temp file in the destination directory plus rename.
fn atomic_write(path: &Path, put: impl FnOnce(&Path) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::Builder::new()
        .prefix(".trajsim-")
        .tempfile_in(dir)
        .map_err(Error::Io)?;
    put(tmp.path())?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

fn atomic_write_text(path: &Path, text: &str) -> Result<()> {
    atomic_write(path, |tmp| Ok(std::fs::write(tmp, text)?))
}

/// `<base>` with an extra suffix appended after the existing extension.
fn sibling(base: &Path, suffix: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn loss_series(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch,train_loss,eval_loss\n");
    for e in log {
        let _ = writeln!(out, "{},{},{}", e.epoch, e.train_loss, e.eval_loss);
    }
    out
}

// ---------------------------------------------------------------------------
// commands

fn cmd_synth(
    cfg: &RunConfig,
    out_csv: &Path,
    clusters: usize,
    per_cluster: usize,
    len: usize,
) -> Result<()> {
    let trajs = random_walk_clusters(clusters, per_cluster, len, cfg.seed)?;
    atomic_write(out_csv, |tmp| write_trajectories(tmp, &trajs))?;
    println!("wrote {} trajectories to {}", trajs.len(), out_csv.display());
    Ok(())
}

fn cmd_preprocess(cfg: &RunConfig, in_csv: &Path, out_csv: &Path) -> Result<()> {
    let raw = load_trajectories(in_csv)?;
    let bbox = resolve_bbox(cfg, &raw)?;
    let kept = preprocess(&raw, &bbox, cfg.min_len, cfg.max_len)?;
    if kept.is_empty() {
        return Err(Error::Data(format!(
            "none of the {} trajectories survive the filters",
            raw.len()
        )));
    }
    let split = split_dataset(&ids_of(&kept), cfg.split_seed)?;

    atomic_write(out_csv, |tmp| write_trajectories(tmp, &kept))?;
    let manifest = sibling(out_csv, ".splits.csv");
    let mut text = String::from("traj_id,split\n");
    for (name, ids) in [
        ("train", &split.train),
        ("eval", &split.eval),
        ("test", &split.test),
    ] {
        for id in ids {
            let _ = writeln!(text, "{id},{name}");
        }
    }
    atomic_write_text(&manifest, &text)?;

    println!(
        "{} read, {} removed, {} kept ({} train / {} eval / {} test)",
        raw.len(),
        raw.len() - kept.len(),
        kept.len(),
        split.train.len(),
        split.eval.len(),
        split.test.len(),
    );
    Ok(())
}

fn cmd_distmatrix(csv: &Path, metric: MetricTag, mode: DistanceMode, out: &Path) -> Result<()> {
    let trajs = load_trajectories(csv)?;
    let start = Instant::now();
    let matrix = build_matrix(&trajs, metric, mode)?;
    let secs = start.elapsed().as_secs_f64();
    atomic_write(out, |tmp| matrix.save(tmp))?;

    let n = matrix.len();
    let pairs = n * (n - 1) / 2;
    println!(
        "{n}x{n} {metric} matrix in {secs:.2}s ({:.0} pairs/s) -> {}",
        pairs as f64 / secs.max(1e-9),
        out.display()
    );
    Ok(())
}

fn cmd_pretrain(cfg: &RunConfig, csv: &Path, out_ckpt: &Path) -> Result<()> {
    let trajs = load_trajectories(csv)?;
    let grid = grid_for(cfg, &trajs)?;
    let split = split_dataset(&ids_of(&trajs), cfg.split_seed)?;
    let run = pretrain(&trajs, &split, &grid, cfg)?;

    atomic_write(out_ckpt, |tmp| run.store.save(tmp))?;
    atomic_write_text(&sibling(out_ckpt, ".loss.csv"), &loss_series(&run.log))?;

    let best = &run.log[run.best_epoch];
    println!(
        "pretrained {} epochs, kept epoch {} (eval loss {:.6}) -> {}",
        run.log.len(),
        best.epoch,
        best.eval_loss,
        out_ckpt.display()
    );
    Ok(())
}

fn cmd_finetune(
    cfg: &RunConfig,
    csv: &Path,
    matrix: &Path,
    init: Option<&Path>,
    out_ckpt: &Path,
) -> Result<()> {
    let trajs = load_trajectories(csv)?;
    let truth = DistanceMatrix::load(matrix)?;
    let grid = grid_for(cfg, &trajs)?;
    let split = split_dataset(&ids_of(&trajs), cfg.split_seed)?;
    let start = match init {
        Some(path) => Some(load_checkpoint(cfg, path)?),
        None => None,
    };
    let run = finetune(&trajs, &truth, &split, &grid, cfg, start)?;

    atomic_write(out_ckpt, |tmp| run.store.save(tmp))?;
    atomic_write_text(&sibling(out_ckpt, ".loss.csv"), &loss_series(&run.log))?;

    let best = &run.log[run.best_epoch];
    println!(
        "fine-tuned {} epochs against {} ground truth (tau {:.6}), kept epoch {} (eval loss {:.6}) -> {}",
        run.log.len(),
        truth.metric(),
        run.tau,
        best.epoch,
        best.eval_loss,
        out_ckpt.display()
    );
    Ok(())
}

fn cmd_evaluate(
    cfg: &RunConfig,
    csv: &Path,
    matrix: &Path,
    ckpt: &Path,
    out: Option<&Path>,
) -> Result<()> {
    let trajs = load_trajectories(csv)?;
    let truth = DistanceMatrix::load(matrix)?;
    if truth.len() != trajs.len() {
        return Err(Error::Shape(format!(
            "{}x{} matrix for {} trajectories",
            truth.len(),
            truth.len(),
            trajs.len()
        )));
    }
    let store = load_checkpoint(cfg, ckpt)?;
    let grid = grid_for(cfg, &trajs)?;
    let split = split_dataset(&ids_of(&trajs), cfg.split_seed)?;
    let index = index_by_id(&trajs)?;
    let test_idx: Vec<usize> = split
        .test
        .iter()
        .map(|id| index[id.as_str()])
        .collect();
    if test_idx.len() < 2 {
        return Err(Error::Data(format!(
            "test split holds {} trajectories, need at least 2",
            test_idx.len()
        )));
    }

    let test: Vec<Trajectory> = test_idx.iter().map(|&i| trajs[i].clone()).collect();
    let embs = encode_all(&test, &grid, &cfg.sam_config(), &store)?;
    let sub = truth.submatrix(&test_idx)?;

    let max_k = test.len() - 1;
    let mut ks = Vec::new();
    for k in [1, 5, 20] {
        if k <= max_k {
            ks.push(k);
        } else {
            eprintln!("trajsim: dropping HR@{k}: only {max_k} candidates per query");
        }
    }
    let recall: Vec<(usize, usize)> = if 20 <= max_k { vec![(5, 20)] } else { Vec::new() };

    let report = evaluate_suite(&embs, &split.test, &sub, &ks, &recall)?;
    println!("# {} ground truth, {} test queries", report.metric, report.queries);
    print!("{}", report.to_lines());
    if let Some(path) = out {
        atomic_write_text(path, &report.to_lines())?;
    }
    Ok(())
}

fn cmd_query(cfg: &RunConfig, ckpt: &Path, csv: &Path, query_id: &str, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::Config("k must be at least 1".into()));
    }
    let trajs = load_trajectories(csv)?;
    let store = load_checkpoint(cfg, ckpt)?;
    let grid = grid_for(cfg, &trajs)?;
    let index = index_by_id(&trajs)?;
    let Some(&q) = index.get(query_id) else {
        return Err(Error::Data(format!("unknown trajectory id '{query_id}'")));
    };

    let ids = ids_of(&trajs);
    let embs = encode_all(&trajs, &grid, &cfg.sam_config(), &store)?;
    let ranking = rank_candidates(&embs, &ids, q)?;
    let k = if k > ranking.ordered.len() {
        eprintln!(
            "trajsim: k = {k} clamped to the {} available candidates",
            ranking.ordered.len()
        );
        ranking.ordered.len()
    } else {
        k
    };

    for id in &ranking.ordered[..k] {
        let score = score_between(embs.row(q), embs.row(index[id.as_str()]))?;
        println!("{id}\t{score:.6}");
    }
    Ok(())
}
