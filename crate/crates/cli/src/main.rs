//! Command-line driver: train a model, evaluate a checkpoint, emit
//! forecasts, inspect learned structure, and generate synthetic data.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use mkhnet_core::array::Array;
use mkhnet_core::checkpoint::Checkpoint;
use mkhnet_core::config::{MissingScheme, RunConfig};
use mkhnet_core::dataset::{
    self, invert_normalizer, load_csv, write_csv, MtsDataset, Split,
};
use mkhnet_core::error::{Error, Result};
use mkhnet_core::graph::{load_edge_list, ExplicitGraph};
use mkhnet_core::model::{hgi, LossKind, MkhNet, Mode};
use mkhnet_core::training::{self, PreparedData};
use mkhnet_core::{Rng, Tape64};

#[derive(Parser)]
#[command(
    name = "mkhnet",
    about = "Hypergraph-based multivariate time-series forecasting",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write checkpoint + history CSV to --out.
    Train {
        /// Time-series CSV (header row of variable names, one row per step).
        #[arg(long)]
        data: PathBuf,
        /// Edge-list CSV ("u,v" per line, 0-based ids).
        #[arg(long)]
        graph: PathBuf,
        /// Flat key = value config file; defaults used when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output directory for checkpoint.mkhn and history.csv.
        #[arg(long)]
        out: PathBuf,
        /// Run seed; overrides the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Training objective; overrides the config file.
        #[arg(long, value_parser = ["mae", "nll"])]
        loss: Option<String>,
        /// Missingness scheme simulated before training.
        #[arg(long, value_parser = ["none", "point", "block"])]
        missing: Option<String>,
        /// Missing ratio for the point/block schemes.
        #[arg(long)]
        missing_ratio: Option<f64>,
    },
    /// Evaluate a checkpoint on one split; prints MAE/RMSE/MAPE and writes
    /// the per-horizon CSV.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, value_parser = ["train", "val", "test"])]
        split: String,
        /// Directory for per_horizon_<split>.csv (default: current dir).
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Forecast the next horizon from the end of the series; CSV on stdout.
    Forecast {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        /// Add per-step sigma columns (NLL-trained checkpoints only).
        #[arg(long)]
        with_uncertainty: bool,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export learned structure or attention matrices as CSV.
    Inspect {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_parser = ["incidence", "alpha", "beta", "gates"])]
        emit: String,
        /// Required for alpha/beta/gates (attention is input-dependent).
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        graph: Option<PathBuf>,
        /// Write the CSV here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a synthetic graph-diffusion dataset and its graph.
    MakeSynth {
        #[arg(long)]
        nodes: usize,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        out_data: PathBuf,
        #[arg(long)]
        out_graph: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.1)]
        noise_std: f64,
        #[arg(long, default_value_t = 1.0)]
        seasonal_amplitude: f64,
    },
}

fn main() {
    if let Err(e) = run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Train { data, graph, config, out, seed, loss, missing, missing_ratio } => {
            cmd_train(&data, &graph, config.as_deref(), &out, seed, loss, missing, missing_ratio)
        }
        Command::Eval { checkpoint, data, graph, split, out } => {
            cmd_eval(&checkpoint, &data, &graph, &split, &out)
        }
        Command::Forecast { checkpoint, data, graph, with_uncertainty, out } => {
            cmd_forecast(&checkpoint, &data, &graph, with_uncertainty, out.as_deref())
        }
        Command::Inspect { checkpoint, emit, data, graph, out } => cmd_inspect(
            &checkpoint,
            &emit,
            data.as_deref(),
            graph.as_deref(),
            out.as_deref(),
        ),
        Command::MakeSynth {
            nodes,
            steps,
            out_data,
            out_graph,
            seed,
            noise_std,
            seasonal_amplitude,
        } => cmd_make_synth(nodes, steps, &out_data, &out_graph, seed, noise_std, seasonal_amplitude),
    }
}

/// Seed offset for the missingness stream so it can be replayed at
/// evaluation time independently of training randomness.
const MISSING_STREAM: u64 = 0x4D49_5353;

fn load_corrupted(
    data: &Path,
    graph: &Path,
    cfg: &RunConfig,
) -> Result<(MtsDataset<f64>, ExplicitGraph)> {
    let ds: MtsDataset<f64> = load_csv(data)?;
    let g = load_edge_list(graph, ds.n_variables())?;
    let ds = match cfg.missing {
        MissingScheme::None => ds,
        MissingScheme::Point => {
            let mut rng = Rng::new(cfg.seed.wrapping_add(MISSING_STREAM));
            dataset::simulate_point_missing(&ds, cfg.missing_ratio, &mut rng)?
        }
        MissingScheme::Block => {
            let mut rng = Rng::new(cfg.seed.wrapping_add(MISSING_STREAM));
            dataset::simulate_block_missing(
                &ds,
                cfg.missing_ratio,
                cfg.failure_prob,
                cfg.upsilon,
                &mut rng,
            )?
        }
    };
    Ok((ds, g))
}

#[allow(clippy::too_many_arguments)]
fn cmd_train(
    data: &Path,
    graph: &Path,
    config: Option<&Path>,
    out: &Path,
    seed: Option<u64>,
    loss: Option<String>,
    missing: Option<String>,
    missing_ratio: Option<f64>,
) -> Result<()> {
    let mut cfg = match config {
        Some(path) => RunConfig::parse(&std::fs::read_to_string(path)?)?,
        None => RunConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(l) = loss {
        cfg.loss = l.parse()?;
    }
    if let Some(m) = missing {
        cfg.missing = m.parse()?;
    }
    if let Some(r) = missing_ratio {
        cfg.missing_ratio = r;
    }

    let (ds, g) = load_corrupted(data, graph, &cfg)?;
    let prepared = training::prepare(&ds, cfg.split)?;
    let mut rng = Rng::new(cfg.seed);
    let mut model = MkhNet::<f64>::new(cfg.model_config(ds.n_variables()), g, &mut rng)?;
    let outcome = training::train(&mut model, &prepared, &cfg.train_config(), &mut rng)?;

    std::fs::create_dir_all(out)?;
    let ck = Checkpoint {
        config_text: cfg.to_text(),
        n_nodes: ds.n_variables(),
        params: model.params.clone(),
        stats: prepared.stats.clone(),
        seed: cfg.seed,
    };
    ck.save(&out.join("checkpoint.mkhn"))?;

    let mut hist = String::from("epoch,train_loss,val_mae,lr\n");
    for rec in &outcome.history {
        hist.push_str(&format!(
            "{},{:?},{:?},{:?}\n",
            rec.epoch, rec.train_loss, rec.val_mae, rec.lr
        ));
    }
    std::fs::write(out.join("history.csv"), hist)?;
    println!(
        "trained {} epochs, best validation MAE {:.6}",
        outcome.history.len() - 1,
        outcome.best_val_mae
    );
    Ok(())
}

struct Restored {
    model: MkhNet<f64>,
    prepared: PreparedData<f64>,
    cfg: RunConfig,
    variable_names: Vec<String>,
}

fn restore(checkpoint: &Path, data: &Path, graph: &Path) -> Result<Restored> {
    let ck = Checkpoint::<f64>::load(checkpoint)?;
    let cfg = RunConfig::parse(&ck.config_text)?;
    let (ds, g) = load_corrupted(data, graph, &cfg)?;
    if ds.n_variables() != ck.n_nodes {
        return Err(Error::Data(format!(
            "dataset has {} variables, checkpoint was trained on {}",
            ds.n_variables(),
            ck.n_nodes
        )));
    }
    let model = MkhNet::with_params(cfg.model_config(ck.n_nodes), g, ck.params.clone())?;
    // normalize with the checkpoint's statistics, not refit ones
    let split = dataset::chronological_split(&ds, cfg.split)?;
    let normalized = dataset::apply_normalizer(&ds, &ck.stats);
    let prepared = PreparedData {
        normalized,
        mask: ds.mask.clone(),
        split,
        stats: ck.stats.clone(),
        original: ds.values.clone(),
    };
    Ok(Restored { model, prepared, cfg, variable_names: ds.variable_names })
}

fn cmd_eval(checkpoint: &Path, data: &Path, graph: &Path, split: &str, out: &Path) -> Result<()> {
    let Restored { model, prepared, cfg, .. } = restore(checkpoint, data, graph)?;
    let split: Split = split.parse()?;
    let result = training::evaluate(&model, &prepared, split, cfg.batch_size)?;
    let m = &result.metrics;
    println!("MAE {} RMSE {} MAPE {}", m.mae, m.rmse, m.mape);

    std::fs::create_dir_all(out)?;
    let name = match split {
        Split::Train => "train",
        Split::Validation => "val",
        Split::Test => "test",
    };
    let mut csv = String::from("step,mae,rmse,mape\n");
    for h in 0..m.per_step_mae.len() {
        csv.push_str(&format!(
            "{},{:?},{:?},{:?}\n",
            h + 1,
            m.per_step_mae[h],
            m.per_step_rmse[h],
            m.per_step_mape[h]
        ));
    }
    std::fs::write(out.join(format!("per_horizon_{name}.csv")), csv)?;
    Ok(())
}

fn emit(text: String, out: Option<&Path>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn cmd_forecast(
    checkpoint: &Path,
    data: &Path,
    graph: &Path,
    with_uncertainty: bool,
    out: Option<&Path>,
) -> Result<()> {
    let Restored { model, prepared, cfg, variable_names } = restore(checkpoint, data, graph)?;
    if with_uncertainty && cfg.loss != LossKind::GaussianNll {
        return Err(Error::Capability(
            "this checkpoint was trained with the MAE objective and has no \
             uncertainty head; retrain with --loss nll"
                .into(),
        ));
    }
    let (n, t) = (prepared.normalized.rows(), prepared.normalized.cols());
    let tau = model.cfg.tau;
    if t < tau {
        return Err(Error::Data(format!("need at least {tau} steps, got {t}")));
    }
    let mut window = Array::zeros(vec![n, tau]);
    for v in 0..n {
        for k in 0..tau {
            window.set2(v, k, prepared.normalized.at2(v, t - tau + k));
        }
    }

    let mut tape = Tape64::new();
    let bound = model.bind(&mut tape)?;
    let mut rng = Rng::new(0);
    let structure = model.sample_structure(&mut tape, &bound, Mode::Eval, &mut rng)?;
    let fwd = model.forward_window(&mut tape, &bound, &structure, &window, Mode::Eval, &mut rng)?;
    let mean = invert_normalizer(tape.value(fwd.point), &prepared.stats);

    let upsilon = model.cfg.upsilon;
    let mut csv = String::from("node");
    for h in 1..=upsilon {
        csv.push_str(&format!(",step_{h}"));
    }
    if with_uncertainty {
        for h in 1..=upsilon {
            csv.push_str(&format!(",sigma_{h}"));
        }
    }
    csv.push('\n');
    let var = fwd.variance.map(|v| tape.value(v).clone());
    for (v, name) in variable_names.iter().enumerate() {
        csv.push_str(name);
        for h in 0..upsilon {
            csv.push_str(&format!(",{:?}", mean.at2(v, h)));
        }
        if with_uncertainty {
            let var = var.as_ref().expect("nll model produces variances");
            let scale = prepared.stats.std[v];
            for h in 0..upsilon {
                csv.push_str(&format!(",{:?}", var.at2(v, h).sqrt() * scale));
            }
        }
        csv.push('\n');
    }
    emit(csv, out)
}

fn cmd_inspect(
    checkpoint: &Path,
    what: &str,
    data: Option<&Path>,
    graph: Option<&Path>,
    out: Option<&Path>,
) -> Result<()> {
    let ck = Checkpoint::<f64>::load(checkpoint)?;
    let cfg = RunConfig::parse(&ck.config_text)?;

    if what == "incidence" {
        // structure depends only on the learned embeddings
        let mut tape = Tape64::new();
        let zn = tape.leaf(ck.params["hgi.z_node"].clone())?;
        let ze = tape.leaf(ck.params["hgi.z_edge"].clone())?;
        let sim = hgi::pairwise_similarity(&mut tape, zn, ze)?;
        let (p0, p1) = hgi::hyperedge_probabilities(&mut tape, sim)?;
        let sample = hgi::gumbel_sample_incidence(&mut tape, p0, p1, cfg.gamma, true, None)?;
        let inc = sample.support;
        let mut csv = String::new();
        for i in 0..inc.rows() {
            for j in 0..inc.cols() {
                if j > 0 {
                    csv.push(',');
                }
                csv.push(if inc.at2(i, j) { '1' } else { '0' });
            }
            csv.push('\n');
        }
        return emit(csv, out);
    }

    let (data, graph) = match (data, graph) {
        (Some(d), Some(g)) => (d, g),
        _ => {
            return Err(Error::Config(format!(
                "--emit {what} needs --data and --graph: attention and gates \
                 are input-dependent"
            )))
        }
    };
    let Restored { model, prepared, .. } = restore(checkpoint, data, graph)?;
    let tau = model.cfg.tau;
    if prepared.normalized.cols() < tau {
        return Err(Error::Data("series shorter than the look-back window".into()));
    }
    let mut window = Array::zeros(vec![model.cfg.n_nodes, tau]);
    for v in 0..model.cfg.n_nodes {
        for k in 0..tau {
            window.set2(v, k, prepared.normalized.at2(v, k));
        }
    }
    let mut tape = Tape64::new();
    let bound = model.bind(&mut tape)?;
    let mut rng = Rng::new(0);
    let structure = model.sample_structure(&mut tape, &bound, Mode::Eval, &mut rng)?;
    let fwd = model.forward_window(&mut tape, &bound, &structure, &window, Mode::Eval, &mut rng)?;

    let head_mean = |ids: &[mkhnet_core::autodiff::VarId]| -> Result<Array<f64>> {
        let first = tape.value(ids[0]).clone();
        let mut acc = first;
        for id in &ids[1..] {
            acc = acc.zip(tape.value(*id), |a, b| a + b)?;
        }
        Ok(acc.map(|v| v / ids.len() as f64))
    };
    let matrix = match what {
        "alpha" => head_mean(&fwd.alphas)?,
        "beta" => head_mean(&fwd.betas)?,
        "gates" => tape.value(fwd.moe_gate).clone(),
        other => return Err(Error::Config(format!("unknown inspect target {other:?}"))),
    };
    let mut csv = String::new();
    for i in 0..matrix.rows() {
        for j in 0..matrix.cols() {
            if j > 0 {
                csv.push(',');
            }
            csv.push_str(&format!("{:?}", matrix.at2(i, j)));
        }
        csv.push('\n');
    }
    emit(csv, out)
}

fn cmd_make_synth(
    nodes: usize,
    steps: usize,
    out_data: &Path,
    out_graph: &Path,
    seed: u64,
    noise_std: f64,
    seasonal_amplitude: f64,
) -> Result<()> {
    if nodes < 2 {
        return Err(Error::Config("need at least 2 nodes".into()));
    }
    let mut rng = Rng::new(seed);
    // ring plus random chords: connected, average degree ~3
    let mut edges: Vec<(usize, usize)> = (0..nodes).map(|i| (i, (i + 1) % nodes)).collect();
    for _ in 0..nodes / 2 {
        let u = rng.index(nodes);
        let v = rng.index(nodes);
        if u != v {
            edges.push((u.min(v), u.max(v)));
        }
    }
    let graph = ExplicitGraph::new(nodes, edges)?;
    let ds: MtsDataset<f64> =
        dataset::make_synthetic(nodes, steps, &graph, noise_std, seasonal_amplitude, &mut rng)?;

    write_csv(&ds, out_data)?;
    let mut gl = String::new();
    for &(u, v) in &graph.edges {
        gl.push_str(&format!("{u},{v}\n"));
    }
    std::fs::write(out_graph, gl)?;
    println!(
        "wrote {} variables x {} steps to {} and {} edges to {}",
        nodes,
        steps,
        out_data.display(),
        graph.n_edges(),
        out_graph.display()
    );
    Ok(())
}
