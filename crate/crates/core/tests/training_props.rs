use flagfed_core::data::{generate_synthetic, LabelMatrix, MultiLabelDataset, SynthSpec};
use flagfed_core::federate::{
    aggregate_fedavg, aggregate_flag, run_federation, AggregationStrategy, FederationConfig, Parallelism,
};
use flagfed_core::metrics::{average_precision, convergence, mean_average_precision, RoundRecord};
use flagfed_core::model::{asl_loss, loss_and_grad, AslConfig, ModelParams, ModelShape, TrainConfig};
use flagfed_core::partition::{ClientShard, Partitioner};
use ndarray::Array2;
use proptest::prelude::*;

fn params_strategy() -> impl Strategy<Value = (ModelShape, Vec<f64>, Array2<f64>, Array2<f64>)> {
    (1usize..5, 1usize..4, 1usize..5, prop::option::of(1usize..4)).prop_flat_map(|(d, l, b, h)| {
        let shape = match h {
            Some(h) => ModelShape::with_hidden(d, l, h),
            None => ModelShape::linear(d, l),
        };
        (
            Just(shape),
            prop::collection::vec(-1.0f64..1.0, shape.param_count()),
            prop::collection::vec(-2.0f64..2.0, b * d).prop_map(move |v| Array2::from_shape_vec((b, d), v).unwrap()),
            prop::collection::vec(0u8..2, b * l)
                .prop_map(move |v| Array2::from_shape_vec((b, l), v.into_iter().map(f64::from).collect()).unwrap()),
        )
    })
}

fn central_difference(shape: ModelShape, values: &[f64], x: &Array2<f64>, y: &Array2<f64>, cfg: &AslConfig) -> Vec<f64> {
    let h = 1e-6;
    (0..values.len())
        .map(|i| {
            let mut plus = values.to_vec();
            let mut minus = values.to_vec();
            plus[i] += h;
            minus[i] -= h;
            let lp = loss_and_grad(&ModelParams::new(shape, plus).unwrap(), x.view(), y.view(), cfg).unwrap().0;
            let lm = loss_and_grad(&ModelParams::new(shape, minus).unwrap(), x.view(), y.view(), cfg).unwrap().0;
            (lp - lm) / (2.0 * h)
        })
        .collect()
}

fn shards_from(ds: &MultiLabelDataset, n: usize) -> Vec<ClientShard> {
    Partitioner::Random.split(ds, ds, n, 3).unwrap()
}

fn small_data() -> MultiLabelDataset {
    let spec = SynthSpec { n_samples: 240, n_labels: 6, n_features: 5, n_themes: 2, ..SynthSpec::default() };
    generate_synthetic(&spec).unwrap().dataset
}

fn quick_config(parallelism: Parallelism) -> FederationConfig {
    FederationConfig {
        rounds: 3,
        train: TrainConfig { batch_size: 16, learning_rate: 1e-2, local_epochs: 1, ..TrainConfig::default() },
        parallelism,
        ..FederationConfig::default()
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn analytic_gradient_matches_finite_differences((shape, values, x, y) in params_strategy(), bce in any::<bool>()) {
        let cfg = if bce { AslConfig::bce() } else { AslConfig::default() };
        let params = ModelParams::new(shape, values.clone()).unwrap();
        let (_, grad) = loss_and_grad(&params, x.view(), y.view(), &cfg).unwrap();
        let fd = central_difference(shape, &values, &x, &y, &cfg);
        for (a, n) in grad.iter().zip(&fd) {
            prop_assert!((a - n).abs() <= 1e-4 * a.abs().max(n.abs()).max(1e-3), "{} vs {}", a, n);
        }
    }

    #[test]
    fn asl_without_focusing_is_bce(p in prop::collection::vec(1e-6f64..1.0 - 1e-6, 1..20), bits in prop::collection::vec(0u8..2, 20)) {
        let n = p.len();
        let probs = Array2::from_shape_vec((1, n), p.clone()).unwrap();
        let targets = Array2::from_shape_vec((1, n), bits[..n].iter().map(|&b| f64::from(b)).collect()).unwrap();
        let (loss, _) = asl_loss(probs.view(), targets.view(), &AslConfig::bce()).unwrap();
        let bce = -p.iter().zip(&bits).map(|(&q, &t)| if t == 1 { q.ln() } else { (1.0 - q).ln() }).sum::<f64>() / n as f64;
        prop_assert!((loss - bce).abs() <= 1e-12 * bce.abs().max(1.0));
    }

    #[test]
    fn aggregation_is_a_convex_combination(
        a in prop::collection::vec(-5.0f64..5.0, 4),
        b in prop::collection::vec(-5.0f64..5.0, 4),
        wa in 0.01f64..10.0,
        wb in 0.01f64..10.0,
        scale in 0.1f64..100.0,
    ) {
        let shape = ModelShape::linear(3, 1);
        let (pa, pb) = (ModelParams::new(shape, a.clone()).unwrap(), ModelParams::new(shape, b.clone()).unwrap());
        let g = aggregate_flag(&[&pa, &pb], &[wa, wb]).unwrap();
        let scaled = aggregate_flag(&[&pa, &pb], &[wa * scale, wb * scale]).unwrap();
        for i in 0..4 {
            let (lo, hi) = (a[i].min(b[i]), a[i].max(b[i]));
            prop_assert!(g.values()[i] >= lo - 1e-12 && g.values()[i] <= hi + 1e-12);
            prop_assert!((g.values()[i] - scaled.values()[i]).abs() <= 1e-12);
        }
        let same = aggregate_fedavg(&[&pa, &pb], &[7, 7]).unwrap();
        let equal = aggregate_flag(&[&pa, &pb], &[1.0, 1.0]).unwrap();
        prop_assert_eq!(same, equal);
    }

    #[test]
    fn map_is_invariant_to_label_order(bits in prop::collection::vec(0u8..2, 24), scores in prop::collection::vec(0.0f64..1.0, 24), shift in 0usize..4) {
        let (rows, cols) = (6, 4);
        let targets = LabelMatrix::new(rows, cols, bits.clone()).unwrap();
        prop_assume!(targets.total_positives() > 0);
        let probs = Array2::from_shape_vec((rows, cols), scores.clone()).unwrap();
        let perm: Vec<usize> = (0..cols).map(|j| (j + shift) % cols).collect();
        let pt = LabelMatrix::new(rows, cols, (0..rows * cols).map(|k| bits[(k / cols) * cols + perm[k % cols]]).collect()).unwrap();
        let pp = Array2::from_shape_fn((rows, cols), |(i, j)| probs[[i, perm[j]]]);
        let a = mean_average_precision(probs.view(), &targets).unwrap();
        let b = mean_average_precision(pp.view(), &pt).unwrap();
        prop_assert!((a - b).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn ap_is_one_when_positives_lead(n_pos in 1usize..10, n_neg in 0usize..10) {
        let scores: Vec<f64> = (0..n_pos + n_neg).map(|i| 1.0 - i as f64 / 100.0).collect();
        let targets: Vec<u8> = (0..n_pos + n_neg).map(|i| u8::from(i < n_pos)).collect();
        prop_assert_eq!(average_precision(&scores, &targets), Some(1.0));
    }

    #[test]
    fn rounds_to_target_grow_with_the_target(maps in prop::collection::vec(0.0f64..1.0, 1..10), f1 in 0.05f64..1.0, f2 in 0.05f64..1.0) {
        let log: Vec<RoundRecord> = maps
            .iter()
            .enumerate()
            .map(|(i, &m)| RoundRecord {
                round: i + 1,
                per_client_map: vec![m],
                global_map_per_client: None,
                client_losses: vec![0.0],
                mean_train_loss: 0.0,
                wall_seconds: 0.0,
            })
            .collect();
        let (lo, hi) = (f1.min(f2), f1.max(f2));
        let a = convergence(&log, lo, 1.0, 4).unwrap().rounds_to_target;
        let b = convergence(&log, hi, 1.0, 4).unwrap().rounds_to_target;
        match (a, b) {
            (Some(x), Some(y)) => prop_assert!(x <= y),
            (None, Some(_)) => prop_assert!(false, "easier target missed"),
            _ => {}
        }
    }
}

#[test]
fn flag_equals_fedavg_when_weights_coincide() {
    let ds = small_data();
    // identical label sets and sizes: both weightings are uniform
    let shards: Vec<ClientShard> = (0..3)
        .map(|c| {
            let mut features = ds.features().clone();
            features.mapv_inplace(|v| v + c as f64 * 0.1);
            let shifted = MultiLabelDataset::new(features, ds.labels().clone(), ds.label_names().to_vec()).unwrap();
            ClientShard { client_id: c, train: shifted.clone(), val: shifted }
        })
        .collect();
    let cfg = quick_config(Parallelism::Serial);
    let flag = run_federation(&shards, AggregationStrategy::Flag { alpha: 0.3 }, &cfg).unwrap();
    let fedavg = run_federation(&shards, AggregationStrategy::FedAvg, &cfg).unwrap();
    for (a, b) in flag.global_params.values().iter().zip(fedavg.global_params.values()) {
        assert!((a - b).abs() <= 1e-12);
    }
}

#[test]
fn local_only_first_round_matches_flag_clients() {
    let shards = shards_from(&small_data(), 3);
    let cfg = FederationConfig { rounds: 1, ..quick_config(Parallelism::Serial) };
    let local = run_federation(&shards, AggregationStrategy::LocalOnly, &cfg).unwrap();
    let flag = run_federation(&shards, AggregationStrategy::Flag { alpha: 0.3 }, &cfg).unwrap();
    assert_eq!(local.client_params, flag.client_params);
    assert_eq!(local.log[0].per_client_map, flag.log[0].per_client_map);
    assert!(local.log[0].gmap().is_none());
}

#[test]
fn scheduling_does_not_change_results() {
    let shards = shards_from(&small_data(), 4);
    for strategy in [AggregationStrategy::FedAvg, AggregationStrategy::Flag { alpha: 0.5 }, AggregationStrategy::LocalOnly] {
        let serial = run_federation(&shards, strategy, &quick_config(Parallelism::Serial)).unwrap();
        let pooled = run_federation(&shards, strategy, &quick_config(Parallelism::Threads(3))).unwrap();
        assert_eq!(serial.global_params, pooled.global_params);
        assert_eq!(serial.client_params, pooled.client_params);
        for (a, b) in serial.log.iter().zip(&pooled.log) {
            assert_eq!((&a.per_client_map, &a.global_map_per_client, &a.client_losses), (&b.per_client_map, &b.global_map_per_client, &b.client_losses));
        }
    }
}

#[test]
fn centralized_training_improves_on_initialization() {
    let shards = shards_from(&small_data(), 3);
    let cfg = FederationConfig { rounds: 5, ..quick_config(Parallelism::Serial) };
    let state = run_federation(&shards, AggregationStrategy::Centralized, &cfg).unwrap();
    let first = state.log.first().unwrap().mean_train_loss;
    let last = state.log.last().unwrap().mean_train_loss;
    assert!(last < first);
}
