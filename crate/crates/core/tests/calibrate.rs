// Manual calibration probe, not part of the suite: run with
//   cargo test -p sparsebm --test calibrate -- --ignored --nocapture
use sparsebm::data::load_idx;
use sparsebm::evaluation::{avg_test_log_prob, exact_log_partition};
use sparsebm::io::load_rbm;
use sparsebm::pruning::{percentile_mask, PruneMask};
use sparsebm::rbm::{train_rbm, Schedule, TrainConfig};
use std::path::Path;

#[test]
#[ignore]
fn retrain_trajectory() {
    let train = load_idx(
        Path::new("/root/data/mnist/train-images-idx3-ubyte"),
        None,
    )
    .unwrap();
    let test = load_idx(Path::new("/root/data/mnist/t10k-images-idx3-ubyte"), None).unwrap();
    let (baseline, _) = load_rbm(Path::new("/tmp/mnistcal/cal/model.rbm")).unwrap();
    let base_lz = exact_log_partition(&baseline, 25).unwrap();
    let base_lp = avg_test_log_prob(&baseline, base_lz, &test).unwrap();
    eprintln!("baseline: {base_lp:.3}");

    // Compose the 66% mask the way the iterative runs do, with short
    // intermediate retrains.
    let mut params = baseline.clone();
    let mut mask = PruneMask::ones(784, 20);
    let mut cfg = TrainConfig::new(777);
    cfg.epochs = 8;
    cfg.learning_rate = Schedule::Constant(0.05);
    for step in 0..3 {
        mask = percentile_mask(&params.weights, &mask, 0.3).unwrap();
        mask.zero_dropped(&mut params.weights);
        cfg.seed = 777 + step;
        let (p, _) = train_rbm(&train, 20, &cfg, Some(&params), Some(&mask)).unwrap();
        params = p;
    }
    eprintln!("mask survivors: {}", mask.surviving());

    // Long final retraining, scored every 10 epochs.
    let mut cur = params.clone();
    for block in 0..8 {
        let mut c = TrainConfig::new(900 + block);
        c.epochs = 10;
        c.learning_rate = Schedule::Constant(0.05);
        let (p, _) = train_rbm(&train, 20, &c, Some(&cur), Some(&mask)).unwrap();
        cur = p;
        let lz = exact_log_partition(&cur, 25).unwrap();
        let lp = avg_test_log_prob(&cur, lz, &test).unwrap();
        eprintln!("after {} extra epochs: {lp:.3} (gap {:.3})", (block + 1) * 10, base_lp - lp);
    }
}
