use std::path::PathBuf;

use anyhow::{Context, Result};
use tightbox::bounds::certify;
use tightbox::data::{gen_lowrank, gen_toy2d, load_mnist_split, DatasetHandle, Split};
use tightbox::dln::{
    global_tightness, is_propagation_invariant_2layer, non_invariance_witness, pi_factors, synthesize_pi_signs,
    Dln,
};
use tightbox::init_theory::{mc_init_tightness_dln, mc_relu_init_factor};
use tightbox::net::{io, ReluNet};
use tightbox::numerics::{per_sample, sample_gaussian_matrix, Matrix, Rng};
use tightbox::reconstruction::{mc_reconstruction, theory_optimal_growth};
use tightbox::train::{
    certified_accuracy, mean_local_tightness, pgd_attack, standard_accuracy, train, Method, Optimizer, PgdParams,
    TrainConfig,
};

use crate::spec::{usage, ExperimentSpec, UsageError};
use crate::table::{Cell, Table};

pub const DATA_DIR_VAR: &str = "TIGHTBOX_DATA_DIR";
const DEFAULT_DATA_DIR: &str = "data/mnist-subset";

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    InitWidthSweep,
    InitDepthSweep,
    ReluFactor,
    ReconstructionSweep,
    Train,
    TightnessEval,
    SabrXiSweep,
    PiAudit,
    CertifyBatch,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::InitWidthSweep => "init-width-sweep",
            Command::InitDepthSweep => "init-depth-sweep",
            Command::ReluFactor => "relu-factor",
            Command::ReconstructionSweep => "reconstruction-sweep",
            Command::Train => "train",
            Command::TightnessEval => "tightness-eval",
            Command::SabrXiSweep => "sabr-xi-sweep",
            Command::PiAudit => "pi-audit",
            Command::CertifyBatch => "certify-batch",
        }
    }

    pub fn from_name(name: &str) -> Option<Command> {
        use clap::ValueEnum;
        Command::value_variants().iter().copied().find(|c| c.name() == name)
    }

    pub fn defaults(self) -> Vec<(&'static str, &'static str)> {
        let own: &[(&str, &str)] = match self {
            Command::InitWidthSweep => &[("d0", "32"), ("d1", "2,8,32,128"), ("d2", "32"), ("sigma", "1"), ("samples", "20000")],
            Command::InitDepthSweep => &[("width", "16"), ("depths", "2,3,4,5,6"), ("sigma", "1"), ("samples", "10000")],
            Command::ReluFactor => &[("d0", "64"), ("d1", "64"), ("d2", "64"), ("samples", "5000")],
            Command::ReconstructionSweep => &[("d", "200"), ("k", "5,20,50"), ("samples", "1000")],
            Command::Train => &[("save", "")],
            Command::TightnessEval => &[("model", ""), ("split", "test"), ("limit", "1000"), ("eps", "0.01,0.05,0.1")],
            Command::SabrXiSweep => &[("lambdas", "0.1,0.2,0.4,0.7,1.0")],
            Command::PiAudit => &[
                ("random", "1000"),
                ("synthesized", "100"),
                ("forced", "100"),
                ("max_dim", "4"),
                ("tol", "1e-12"),
                ("tau_tol", "1e-9"),
            ],
            Command::CertifyBatch => &[
                ("model", ""),
                ("split", "test"),
                ("limit", "200"),
                ("eps", "0.1"),
                ("attack_steps", "200"),
                ("attack_restarts", "5"),
                ("attack_step_size", ""),
            ],
        };
        let mut all = own.to_vec();
        match self {
            Command::Train => all.extend_from_slice(TRAIN_KEYS),
            Command::SabrXiSweep => all.extend(TRAIN_KEYS.iter().filter(|(k, _)| *k != "method" && *k != "lambda")),
            Command::TightnessEval | Command::CertifyBatch => all.extend_from_slice(DATA_KEYS),
            _ => {}
        }
        all
    }

    pub fn run(self, spec: &ExperimentSpec) -> Result<Table> {
        match self {
            Command::InitWidthSweep => init_width_sweep(spec),
            Command::InitDepthSweep => init_depth_sweep(spec),
            Command::ReluFactor => relu_factor(spec),
            Command::ReconstructionSweep => reconstruction_sweep(spec),
            Command::Train => train_cmd(spec),
            Command::TightnessEval => tightness_eval(spec),
            Command::SabrXiSweep => sabr_xi_sweep(spec),
            Command::PiAudit => pi_audit(spec),
            Command::CertifyBatch => certify_batch(spec),
        }
    }
}

const DATA_KEYS: &[(&str, &str)] = &[("dataset", "mnist"), ("lowrank_d", "20"), ("lowrank_k", "3")];

const TRAIN_KEYS: &[(&str, &str)] = &[
    ("dataset", "mnist"),
    ("lowrank_d", "20"),
    ("lowrank_k", "3"),
    ("train_limit", "4000"),
    ("test_limit", "1000"),
    ("arch", "mlp"),
    ("hidden", "64,64"),
    ("method", "ibp"),
    ("eps", "0.1"),
    ("lambda", ""),
    ("epochs", "10"),
    ("batch", "32"),
    ("lr", "0.005"),
    ("optimizer", "sgd"),
    ("anneal_epochs", "4"),
    ("lr_decay_epochs", ""),
    ("lr_decay_factor", "0.2"),
    ("grad_clip", "10"),
    ("pgd_steps", "8"),
    ("pgd_step_size", ""),
    ("pgd_restarts", "1"),
    ("metrics_samples", "500"),
];

/// Independent seeds for data, initialisation and training, in that order.
fn seeds(spec: &ExperimentSpec) -> [u64; 3] {
    let mut root = Rng::new(spec.seed, u64::MAX);
    [root.derive_seed(), root.derive_seed(), root.derive_seed()]
}

fn row_seeds(spec: &ExperimentSpec, n: usize) -> Vec<u64> {
    let mut root = Rng::new(spec.seed, u64::MAX);
    (0..n).map(|_| root.derive_seed()).collect()
}

fn positive(spec: &ExperimentSpec, key: &str) -> std::result::Result<usize, UsageError> {
    let v: usize = spec.get(key)?;
    if v == 0 {
        return Err(usage!("{key} must be positive"));
    }
    Ok(v)
}

fn init_width_sweep(spec: &ExperimentSpec) -> Result<Table> {
    let d0 = positive(spec, "d0")?;
    let d2 = positive(spec, "d2")?;
    let widths: Vec<usize> = spec.get_list("d1")?;
    let sigma: f64 = spec.get("sigma")?;
    let samples = positive(spec, "samples")?;
    let mut t = Table::new(&["d1", "tau_analytic", "tau_mc", "stderr"]);
    for (d1, seed) in widths.iter().zip(row_seeds(spec, widths.len())) {
        let est = mc_init_tightness_dln(&Rng::new(seed, 0), &[d0, *d1, d2], &[sigma, sigma], samples)?;
        t.push(vec![(*d1).into(), est.analytic.into(), est.mc_mean.into(), est.mc_stderr.into()]);
    }
    Ok(t)
}

fn init_depth_sweep(spec: &ExperimentSpec) -> Result<Table> {
    let width = positive(spec, "width")?;
    let depths: Vec<usize> = spec.get_list("depths")?;
    if depths.iter().any(|&l| l < 2) {
        return Err(usage!("depths must be at least 2").into());
    }
    let sigma: f64 = spec.get("sigma")?;
    let samples = positive(spec, "samples")?;
    let mut t = Table::new(&["depth", "tau_bound", "tau_mc", "stderr"]);
    for (&l, seed) in depths.iter().zip(row_seeds(spec, depths.len())) {
        let dims = vec![width; l + 1];
        let est = mc_init_tightness_dln(&Rng::new(seed, 0), &dims, &vec![sigma; l], samples)?;
        t.push(vec![l.into(), est.analytic.into(), est.mc_mean.into(), est.mc_stderr.into()]);
    }
    Ok(t)
}

fn relu_factor(spec: &ExperimentSpec) -> Result<Table> {
    let d0 = positive(spec, "d0")?;
    let d2 = positive(spec, "d2")?;
    let widths: Vec<usize> = spec.get_list("d1")?;
    let samples = positive(spec, "samples")?;
    let mut t = Table::new(&["d1", "ratio_mc", "stderr", "ratio_theory", "per_sample_ratio"]);
    for (&d1, seed) in widths.iter().zip(row_seeds(spec, widths.len())) {
        let est = mc_relu_init_factor(&Rng::new(seed, 0), d0, d1, d2, samples)?;
        t.push(vec![
            d1.into(),
            est.mc_mean.into(),
            est.mc_stderr.into(),
            est.analytic.into(),
            est.per_sample_mean.into(),
        ]);
    }
    Ok(t)
}

fn reconstruction_sweep(spec: &ExperimentSpec) -> Result<Table> {
    let d = positive(spec, "d")?;
    let ks: Vec<usize> = spec.get_list("k")?;
    let samples = positive(spec, "samples")?;
    let mut t = Table::new(&[
        "k",
        "layerwise_growth",
        "optimal_growth",
        "c_estimate",
        "theory_optimal",
        "layerwise_stderr",
        "optimal_stderr",
        "c_stderr",
    ]);
    for (&k, seed) in ks.iter().zip(row_seeds(spec, ks.len())) {
        let r = mc_reconstruction(&Rng::new(seed, 0), d, k, samples)?;
        t.push(vec![
            k.into(),
            r.layerwise_growth.into(),
            r.optimal_growth.into(),
            r.c_estimate.into(),
            theory_optimal_growth(k).into(),
            r.layerwise_stderr.into(),
            r.optimal_stderr.into(),
            r.c_stderr.into(),
        ]);
    }
    Ok(t)
}

pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_VAR)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_DATA_DIR))
}

fn slice(data: &DatasetHandle, from: usize, to: usize) -> DatasetHandle {
    DatasetHandle {
        inputs: data.inputs[from..to].to_vec(),
        labels: data.labels[from..to].to_vec(),
        ..data.clone()
    }
}

/// Train and test sets. Synthetic sets are drawn once and split so both
/// halves share the generating distribution.
fn load_data(spec: &ExperimentSpec, n_train: usize, n_test: usize, seed: u64) -> Result<(DatasetHandle, DatasetHandle)> {
    let mut rng = Rng::new(seed, 0);
    let all = match spec.get_str("dataset") {
        "mnist" => {
            let dir = data_dir();
            let tr = load_mnist_split(&dir, Split::Train, Some(n_train))
                .with_context(|| format!("loading MNIST from {} (set {DATA_DIR_VAR})", dir.display()))?;
            let te = load_mnist_split(&dir, Split::Test, Some(n_test))?;
            return Ok((tr, te));
        }
        "toy2d" => gen_toy2d(&mut rng, (n_train + n_test).max(2))?,
        "lowrank" => {
            let d = positive(spec, "lowrank_d")?;
            let k = positive(spec, "lowrank_k")?;
            gen_lowrank(&mut rng, (n_train + n_test).max(2), d, k)?
        }
        other => return Err(usage!("unknown dataset {other:?} (mnist, toy2d, lowrank)").into()),
    };
    let n_train = n_train.min(all.len());
    Ok((slice(&all, 0, n_train), slice(&all, n_train, all.len())))
}

fn build_net(spec: &ExperimentSpec, data: &DatasetHandle, seed: u64) -> Result<(ReluNet, DatasetHandle)> {
    let mut rng = Rng::new(seed, 0);
    match spec.get_str("arch") {
        "mlp" => {
            let hidden: Vec<usize> = spec.get_list("hidden")?;
            let mut dims = vec![data.input_len()];
            dims.extend(hidden);
            dims.push(data.classes);
            Ok((ReluNet::mlp(&dims, &mut rng)?, data.flattened()))
        }
        "cnn3" => match data.input_shape {
            tightbox::net::Shape::Image { channels, height, width } if height == width => {
                Ok((ReluNet::cnn3(channels, height, data.classes, &mut rng)?, data.clone()))
            }
            _ => Err(usage!("arch=cnn3 needs square image data").into()),
        },
        other => Err(usage!("unknown arch {other:?} (mlp, cnn3)").into()),
    }
}

fn train_config(spec: &ExperimentSpec, method: Method, lambda: Option<f64>, seed: u64) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::new(method, spec.get("eps")?);
    cfg.lambda = lambda;
    cfg.epochs = spec.get("epochs")?;
    cfg.batch_size = spec.get("batch")?;
    cfg.lr = spec.get("lr")?;
    cfg.optimizer = spec
        .get_str("optimizer")
        .parse::<Optimizer>()
        .map_err(|e| usage!("{e}"))?;
    cfg.anneal_epochs = spec.get("anneal_epochs")?;
    cfg.lr_decay_epochs = spec.get_list("lr_decay_epochs")?;
    cfg.lr_decay_factor = spec.get("lr_decay_factor")?;
    cfg.grad_clip_l2 = spec.get("grad_clip")?;
    cfg.pgd_steps = spec.get("pgd_steps")?;
    cfg.pgd_step_size = spec.get_opt("pgd_step_size")?;
    cfg.pgd_restarts = spec.get("pgd_restarts")?;
    cfg.metrics_samples = spec.get("metrics_samples")?;
    cfg.seed = seed;
    cfg.validate().map_err(|e| usage!("{e}"))?;
    Ok(cfg)
}

struct Trained {
    report: tightbox::train::TrainReport,
    test: DatasetHandle,
}

fn run_training(spec: &ExperimentSpec, method: Method, lambda: Option<f64>) -> Result<Trained> {
    let [data_seed, init_seed, train_seed] = seeds(spec);
    let cfg = train_config(spec, method, lambda, train_seed)?;
    let (tr, te) = load_data(spec, spec.get("train_limit")?, spec.get("test_limit")?, data_seed)?;
    let (net, tr) = build_net(spec, &tr, init_seed)?;
    let te = if matches!(net.input_shape(), tightbox::net::Shape::Flat(_)) {
        te.flattened()
    } else {
        te
    };
    let report = train(&net, &tr, &cfg)?;
    Ok(Trained { report, test: te })
}

fn train_cmd(spec: &ExperimentSpec) -> Result<Table> {
    let method: Method = spec.get_str("method").parse().map_err(|e| usage!("{e}"))?;
    let lambda = spec.get_opt("lambda")?;
    let eps: f64 = spec.get("eps")?;
    let run = run_training(spec, method, lambda)?;
    let mut t = Table::new(&["split", "epoch", "eps", "lr", "loss", "std_acc", "cert_acc", "tightness"]);
    for e in &run.report.epochs {
        t.push(vec![
            "train".into(),
            e.epoch.into(),
            e.eps.into(),
            e.lr.into(),
            e.train_loss.into(),
            e.standard_accuracy.into(),
            e.certified_accuracy.into(),
            e.mean_local_tightness.into(),
        ]);
    }
    let net = &run.report.net;
    t.push(vec![
        "test".into(),
        run.report.epochs.len().into(),
        eps.into(),
        Cell::Empty,
        Cell::Empty,
        standard_accuracy(net, &run.test)?.into(),
        certified_accuracy(net, &run.test, eps)?.into(),
        mean_local_tightness(net, &run.test)?.into(),
    ]);
    let save = spec.get_str("save");
    if !save.is_empty() {
        io::save(net, save).with_context(|| format!("writing model to {save}"))?;
    }
    Ok(t)
}

fn sabr_xi_sweep(spec: &ExperimentSpec) -> Result<Table> {
    let lambdas: Vec<f64> = spec.get_list("lambdas")?;
    let eps: f64 = spec.get("eps")?;
    let mut t = Table::new(&["lambda", "xi", "std_acc", "cert_acc", "tightness"]);
    for &lambda in &lambdas {
        let run = run_training(spec, Method::Sabr, Some(lambda))?;
        let net = &run.report.net;
        t.push(vec![
            lambda.into(),
            (lambda * eps).into(),
            standard_accuracy(net, &run.test)?.into(),
            certified_accuracy(net, &run.test, eps)?.into(),
            mean_local_tightness(net, &run.test)?.into(),
        ]);
    }
    Ok(t)
}

fn load_model_and_data(spec: &ExperimentSpec) -> Result<(ReluNet, DatasetHandle)> {
    let path = spec.get_str("model");
    if path.is_empty() {
        return Err(usage!("model=<path> is required").into());
    }
    let net = io::load(path).with_context(|| format!("reading model {path}"))?;
    let limit: usize = spec.get("limit")?;
    let split = match spec.get_str("split") {
        "train" => Split::Train,
        "test" => Split::Test,
        other => return Err(usage!("split must be train or test, got {other:?}").into()),
    };
    let [data_seed, _, _] = seeds(spec);
    let data = match spec.get_str("dataset") {
        "mnist" => {
            let dir = data_dir();
            load_mnist_split(&dir, split, Some(limit))
                .with_context(|| format!("loading MNIST from {} (set {DATA_DIR_VAR})", dir.display()))?
        }
        _ => {
            let (tr, te) = load_data(spec, limit, limit, data_seed)?;
            if split == Split::Train {
                tr
            } else {
                te
            }
        }
    };
    if data.input_len() != net.input_len() {
        anyhow::bail!("model expects {} inputs, data has {}", net.input_len(), data.input_len());
    }
    let data = if matches!(net.input_shape(), tightbox::net::Shape::Flat(_)) {
        data.flattened()
    } else {
        data
    };
    Ok((net, data))
}

fn tightness_eval(spec: &ExperimentSpec) -> Result<Table> {
    let (net, data) = load_model_and_data(spec)?;
    let tau = mean_local_tightness(&net, &data)?;
    let std = standard_accuracy(&net, &data)?;
    let mut t = Table::new(&["eps", "std_acc", "cert_acc", "tightness"]);
    t.note("points", data.len());
    for eps in spec.get_list::<f64>("eps")? {
        t.push(vec![eps.into(), std.into(), certified_accuracy(&net, &data, eps)?.into(), tau.into()]);
    }
    Ok(t)
}

fn certify_batch(spec: &ExperimentSpec) -> Result<Table> {
    let (net, data) = load_model_and_data(spec)?;
    let eps: f64 = spec.get("eps")?;
    let params = PgdParams {
        steps: spec.get("attack_steps")?,
        step_size: spec.get_opt("attack_step_size")?.unwrap_or(eps / 4.0),
        restarts: positive(spec, "attack_restarts")?,
        domain: data.domain,
    };
    let rng = Rng::new(spec.seed, 0);
    let rows = per_sample(&rng, data.len(), |mut r| -> tightbox::Result<(usize, bool, bool)> {
        let i = r.stream() as usize;
        let (x, y) = (&data.inputs[i], data.labels[i]);
        let pred = net.predict(x)?;
        let cert = certify(&net, x, eps, y)?;
        let adv = pgd_attack(&net, x, eps, y, &params, &mut r)?;
        Ok((pred, cert, net.predict(&adv)? != y))
    });
    let mut t = Table::new(&["index", "label", "predicted", "certified", "attacked", "violation"]);
    for (i, row) in rows.into_iter().enumerate() {
        let (pred, cert, attacked) = row?;
        t.push(vec![
            i.into(),
            data.labels[i].into(),
            pred.into(),
            cert.into(),
            attacked.into(),
            (cert && attacked).into(),
        ]);
    }
    Ok(t)
}

fn sign_vec(rng: &mut Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sign()).collect()
}

fn tau_is_one(w2: &Matrix, w1: &Matrix, tol: f64) -> Result<bool> {
    let f = Dln::new(vec![w1.clone(), w2.clone()])?;
    let report = global_tightness(&f, &vec![1.0; f.input_dim()])?;
    Ok(report.tau.iter().all(|&t| (t - 1.0).abs() <= tol))
}

fn pi_audit(spec: &ExperimentSpec) -> Result<Table> {
    let max_dim: usize = spec.get("max_dim")?;
    if max_dim < 2 {
        return Err(usage!("max_dim must be at least 2").into());
    }
    let tol: f64 = spec.get("tol")?;
    let tau_tol: f64 = spec.get("tau_tol")?;
    let mut rng = Rng::new(spec.seed, 0);
    let mut t = Table::new(&["kind", "instances", "pi_count", "tau_one_count", "disagreements", "witness_failures"]);
    let dims = |rng: &mut Rng, min_inner: usize| {
        (
            1 + rng.below(max_dim),
            min_inner + rng.below(max_dim + 1 - min_inner),
            1 + rng.below(max_dim),
        )
    };

    for kind in ["random", "synthesized", "forced"] {
        let n: usize = spec.get(kind)?;
        let (mut pi, mut one, mut disagree, mut witness) = (0usize, 0usize, 0usize, 0usize);
        for _ in 0..n {
            let (w2, w1) = match kind {
                "random" => {
                    let (d0, d1, d2) = dims(&mut rng, 1);
                    let w1 = sample_gaussian_matrix(&mut rng, d1, d0, 1.0);
                    (sample_gaussian_matrix(&mut rng, d2, d1, 1.0), w1)
                }
                "synthesized" => {
                    let (d0, d1, d2) = dims(&mut rng, 1);
                    let row = sign_vec(&mut rng, d0);
                    let mut col = sign_vec(&mut rng, d2);
                    col[0] = row[0];
                    let signs = synthesize_pi_signs(&row, &col)?;
                    if non_invariance_witness(&signs).is_some() {
                        witness += 1;
                    }
                    let g2 = sample_gaussian_matrix(&mut rng, d2, d1, 1.0);
                    let g1 = sample_gaussian_matrix(&mut rng, d1, d0, 1.0);
                    pi_factors(&signs, &g2, &g1)?
                }
                _ => {
                    // one output/input pair gets two inner paths of opposite sign
                    let (d0, d1, d2) = dims(&mut rng, 2);
                    let mut w1 = sample_gaussian_matrix(&mut rng, d1, d0, 1.0);
                    let w2 = sample_gaussian_matrix(&mut rng, d2, d1, 1.0);
                    let (i, j) = (rng.below(d2), rng.below(d0));
                    let k = rng.below(d1);
                    let k2 = (k + 1 + rng.below(d1 - 1)) % d1;
                    w1[(k, j)] = w1[(k, j)].abs() * w2[(i, k)].signum();
                    w1[(k2, j)] = -w1[(k2, j)].abs() * w2[(i, k2)].signum();
                    (w2, w1)
                }
            };
            let claimed = is_propagation_invariant_2layer(&w2, &w1, tol)?.overall;
            let exact = tau_is_one(&w2, &w1, tau_tol)?;
            pi += claimed as usize;
            one += exact as usize;
            disagree += (claimed != exact) as usize;
        }
        t.push(vec![
            kind.into(),
            n.into(),
            pi.into(),
            one.into(),
            disagree.into(),
            if kind == "synthesized" { witness.into() } else { Cell::Empty },
        ]);
    }
    Ok(t)
}
