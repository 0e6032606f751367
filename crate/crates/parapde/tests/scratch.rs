use parapde::pipeline::{train, ProblemKind, ProblemSpec};

#[test]
fn train_hats_probe() {
    let mut spec = ProblemSpec::new(ProblemKind::TransportHats, 4);
    spec.net.rank = 15;
    spec.net.total_layers = 15;
    spec.n_train = 1000;
    spec.n_test = 100;
    spec.train.max_iters = 3500;
    let t0 = std::time::Instant::now();
    let (_, _, report) = train(&spec).unwrap();
    println!(
        "hats L4 warmup-sched: eps_ref={:.4} eps_pred={:.4} ratio={:.3} wall={:.1}s final_loss={:.6}",
        report.eps_ref, report.eps_pred, report.eps_pred / report.eps_ref,
        t0.elapsed().as_secs_f64(), report.loss_history.last().unwrap()
    );
}
