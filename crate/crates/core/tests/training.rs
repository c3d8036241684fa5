use tightbox::bounds::certify;
use tightbox::data::{gen_toy2d, DatasetHandle};
use tightbox::dln::Dln;
use tightbox::net::{io, ReluNet};
use tightbox::numerics::Rng;
use tightbox::train::{
    certified_accuracy, gradient_alignment_probe, loss_robust_ce, standard_accuracy, train, Method, Optimizer,
    TrainConfig,
};

fn toy() -> DatasetHandle {
    gen_toy2d(&mut Rng::new(11, 0), 200).unwrap()
}

fn toy_net(seed: u64) -> ReluNet {
    ReluNet::mlp(&[2, 16, 16, 2], &mut Rng::new(seed, 0)).unwrap()
}

// a perceptron that converges certifies linear separability
fn perceptron_separates(data: &DatasetHandle) -> bool {
    let mut w = [0.0; 3];
    for _ in 0..1000 {
        let mut mistakes = 0;
        for (x, &y) in data.inputs.iter().zip(&data.labels) {
            let s = if y == 1 { 1.0 } else { -1.0 };
            if s * (w[0] * x[0] + w[1] * x[1] + w[2]) <= 0.0 {
                w[0] += s * x[0];
                w[1] += s * x[1];
                w[2] += s;
                mistakes += 1;
            }
        }
        if mistakes == 0 {
            return true;
        }
    }
    false
}

#[test]
fn toy_data_is_linearly_separable() {
    for seed in 0..5 {
        assert!(perceptron_separates(&gen_toy2d(&mut Rng::new(seed, 0), 200).unwrap()));
    }
}

#[test]
fn std_training_fits_toy_data() {
    let data = toy();
    let mut cfg = TrainConfig::new(Method::Std, 0.0);
    cfg.epochs = 50;
    cfg.anneal_epochs = 0;
    cfg.lr = 0.05;
    cfg.batch_size = 16;
    let report = train(&toy_net(1), &data, &cfg).unwrap();
    assert_eq!(standard_accuracy(&report.net, &data).unwrap(), 1.0);
    assert_eq!(report.epochs.last().unwrap().standard_accuracy, 1.0);
}

#[test]
fn ibp_training_certifies_toy_data() {
    let data = toy();
    let mut cfg = TrainConfig::new(Method::Ibp, 0.05);
    cfg.epochs = 50;
    cfg.anneal_epochs = 20;
    cfg.lr = 0.05;
    cfg.batch_size = 16;
    let report = train(&toy_net(2), &data, &cfg).unwrap();
    let cert = certified_accuracy(&report.net, &data, 0.05).unwrap();
    assert!(cert >= 0.95, "certified train accuracy {cert}");
}

#[test]
fn training_time_certificates_hold_at_evaluation() {
    let data = toy();
    let mut cfg = TrainConfig::new(Method::Ibp, 0.05);
    cfg.epochs = 5;
    cfg.anneal_epochs = 2;
    cfg.lr = 0.05;
    let net = train(&toy_net(3), &data, &cfg).unwrap().net;
    let mut certified = 0;
    for (x, &y) in data.inputs.iter().zip(&data.labels) {
        let during = loss_robust_ce(&net, x, 0.05, y).unwrap().certified();
        if during {
            certified += 1;
            assert!(certify(&net, x, 0.05, y).unwrap());
        }
    }
    assert!(certified > 0);
}

#[test]
fn every_method_reports_valid_metrics_and_round_trips() {
    let data = toy();
    for (method, lambda) in [(Method::Std, None), (Method::Ibp, None), (Method::Pgd, None), (Method::Sabr, Some(0.3))] {
        let eps = if method == Method::Std { 0.0 } else { 0.05 };
        let mut cfg = TrainConfig::new(method, eps);
        cfg.lambda = lambda;
        cfg.epochs = 3;
        cfg.anneal_epochs = 1;
        cfg.lr = 0.01;
        cfg.optimizer = Optimizer::Adam;
        let report = train(&toy_net(4), &data, &cfg).unwrap();
        assert_eq!(report.epochs.len(), 3);
        for e in &report.epochs {
            for v in [e.standard_accuracy, e.certified_accuracy] {
                assert!((0.0..=1.0).contains(&v));
            }
            assert!(e.mean_local_tightness > 0.0 && e.mean_local_tightness <= 1.0 + 1e-12);
            assert!(e.train_loss.is_finite());
        }
        let back = io::from_bytes(&io::to_bytes(&report.net)).unwrap();
        for x in data.inputs.iter().take(20) {
            assert_eq!(back.forward(x).unwrap(), report.net.forward(x).unwrap());
        }
    }
}

#[test]
fn alignment_probe_distribution() {
    // informational: the sign is not asserted
    let mut rng = Rng::new(21, 0);
    let mut nonpositive = 0;
    let n = 500;
    for _ in 0..n {
        let f = Dln::gaussian(&[4, 8, 3], &[0.5, 0.5], &mut rng).unwrap();
        let p = gradient_alignment_probe(&f, 0.1).unwrap();
        assert!(p.is_finite());
        if p <= 0.0 {
            nonpositive += 1;
        }
    }
    println!("alignment probe <= 0 on {nonpositive}/{n} random two-layer networks");
}
