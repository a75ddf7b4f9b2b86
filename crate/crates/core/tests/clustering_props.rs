use std::collections::BTreeMap;

use flagfed_core::data::{generate_synthetic, LabelMatrix, MultiLabelDataset, SynthSpec};
use flagfed_core::kmodes::{self, dissimilarity};
use flagfed_core::partition::{heterogeneity_report, kl_divergence, Partitioner};
use proptest::prelude::*;

fn label_matrix(max_rows: usize, max_cols: usize) -> impl Strategy<Value = LabelMatrix> {
    (2usize..max_rows, 1usize..max_cols).prop_flat_map(|(r, c)| {
        proptest::collection::vec(0u8..2, r * c).prop_map(move |bits| LabelMatrix::new(r, c, bits).unwrap())
    })
}

fn dataset(labels: LabelMatrix, seed: u64) -> MultiLabelDataset {
    let features = ndarray::Array2::from_shape_fn((labels.rows(), 2), |(i, j)| (i * 2 + j) as f64 + seed as f64);
    let names = MultiLabelDataset::default_label_names(labels.cols());
    MultiLabelDataset::new(features, labels, names).unwrap()
}

// (features, labels) rendered as a sortable key
fn digest(ds: &MultiLabelDataset, i: usize) -> String {
    format!("{:?}|{:?}", ds.feature_row(i).to_vec(), ds.labels().row(i))
}

fn multiset(parts: impl Iterator<Item = String>) -> BTreeMap<String, usize> {
    let mut m = BTreeMap::new();
    for p in parts {
        *m.entry(p).or_insert(0) += 1;
    }
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn fit_objective_never_increases(labels in label_matrix(30, 8), k in 1usize..5, seed in any::<u64>()) {
        let k = k.min(labels.rows());
        let (model, asg) = kmodes::fit(&labels, k, seed, kmodes::DEFAULT_MAX_ITER).unwrap();
        prop_assert!(model.objective_trace().windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(asg.len(), labels.rows());
        prop_assert!(asg.indices.iter().all(|&c| c < k));
        let total: u64 = (0..labels.rows())
            .map(|i| dissimilarity(labels.row(i), model.center(asg.indices[i])).unwrap() as u64)
            .sum();
        prop_assert_eq!(total, model.total_dissimilarity());
    }

    #[test]
    fn transform_reproduces_converged_assignment(labels in label_matrix(30, 8), k in 1usize..5, seed in any::<u64>()) {
        let k = k.min(labels.rows());
        let (model, asg) = kmodes::fit(&labels, k, seed, kmodes::DEFAULT_MAX_ITER).unwrap();
        let again = kmodes::transform(&model, &labels).unwrap();
        // a fit that stops on convergence leaves every row at its nearest center
        if model.iterations_run() < kmodes::DEFAULT_MAX_ITER {
            prop_assert_eq!(&again, &asg);
        }
        prop_assert_eq!(kmodes::transform(&model, &labels).unwrap(), again);
    }

    #[test]
    fn single_restart_matches_fit(labels in label_matrix(20, 6), seed in any::<u64>()) {
        let a = kmodes::fit(&labels, 2, seed, 50).unwrap();
        let b = kmodes::fit_restarts(&labels, 2, seed, 50, 1).unwrap();
        prop_assert_eq!(&a, &b);
        let best = kmodes::fit_restarts(&labels, 2, seed, 50, 5).unwrap();
        prop_assert!(best.0.total_dissimilarity() <= b.0.total_dissimilarity());
    }

    #[test]
    fn splits_conserve_rows(labels in label_matrix(40, 6), n in 2usize..5, seed in any::<u64>(), cmda in any::<bool>()) {
        prop_assume!(labels.rows() >= n);
        let train = dataset(labels.clone(), 0);
        let val = dataset(labels, 1);
        let method = if cmda { Partitioner::Cmda } else { Partitioner::Random };
        let shards = method.split(&train, &val, n, seed).unwrap();
        prop_assert_eq!(shards.len(), n);
        prop_assert!(shards.iter().all(|s| !s.train.is_empty() && !s.val.is_empty()));
        let whole = multiset((0..train.len()).map(|i| digest(&train, i)));
        let parts = multiset(shards.iter().flat_map(|s| (0..s.train.len()).map(move |i| digest(&s.train, i))));
        prop_assert_eq!(whole, parts);
        let whole_val = multiset((0..val.len()).map(|i| digest(&val, i)));
        let parts_val = multiset(shards.iter().flat_map(|s| (0..s.val.len()).map(move |i| digest(&s.val, i))));
        prop_assert_eq!(whole_val, parts_val);
    }

    #[test]
    fn kl_is_symmetric_and_non_negative(
        p in proptest::collection::vec(0.0f64..1.0, 2..8),
        q in proptest::collection::vec(0.0f64..1.0, 2..8),
    ) {
        let n = p.len().min(q.len());
        let norm = |v: &[f64]| {
            let s: f64 = v[..n].iter().sum::<f64>() + 1e-3;
            v[..n].iter().map(|x| (x + 1e-3 / n as f64) / s).collect::<Vec<_>>()
        };
        let (p, q) = (norm(&p), norm(&q));
        let pq = kl_divergence(&p, &q, 1e-6).unwrap();
        let qp = kl_divergence(&q, &p, 1e-6).unwrap();
        prop_assert!(pq >= 0.0);
        prop_assert!((pq - qp).abs() <= 1e-12 * pq.max(1.0));
        prop_assert!(kl_divergence(&p, &p, 1e-6).unwrap().abs() < 1e-15);
    }
}

#[test]
fn fixed_initial_centers_are_permutation_equivariant() {
    let labels = LabelMatrix::from_rows(&[[1u8, 1, 0, 0], [1, 0, 0, 0], [0, 0, 1, 1], [0, 0, 0, 1], [1, 1, 0, 1]]).unwrap();
    let init = LabelMatrix::from_rows(&[[1u8, 1, 0, 0], [0, 0, 1, 1]]).unwrap();
    let swapped = LabelMatrix::from_rows(&[[0u8, 0, 1, 1], [1, 1, 0, 0]]).unwrap();
    let (_, a) = kmodes::fit_from_centers(&labels, init, 100).unwrap();
    let (_, b) = kmodes::fit_from_centers(&labels, swapped, 100).unwrap();
    let relabeled: Vec<usize> = b.indices.iter().map(|&c| 1 - c).collect();
    assert_eq!(a.indices, relabeled);
}

#[test]
fn planted_themes_are_recovered() {
    for seed in 0..3 {
        let spec = SynthSpec {
            n_samples: 600,
            n_labels: 12,
            n_themes: 3,
            theme_overlap: 0.0,
            label_density: 3,
            seed,
            ..SynthSpec::default()
        };
        let synth = generate_synthetic(&spec).unwrap();
        let (_, asg) = kmodes::fit_restarts(synth.dataset.labels(), 3, seed, 100, kmodes::DEFAULT_RESTARTS).unwrap();
        // each cluster holds exactly one theme
        let mut owner = [None; 3];
        for (c, t) in asg.indices.iter().zip(&synth.themes) {
            assert_eq!(*owner[*c].get_or_insert(*t), *t, "seed {seed}: cluster {c} mixes themes");
        }
    }
}

#[test]
fn cmda_gives_disjoint_supports_without_overlap() {
    let spec = SynthSpec {
        n_samples: 900,
        n_labels: 12,
        n_themes: 3,
        theme_overlap: 0.0,
        label_density: 3,
        ..SynthSpec::default()
    };
    let train = generate_synthetic(&spec).unwrap().dataset;
    let val = flagfed_core::data::generate_synthetic_stream(&spec, 1).unwrap().dataset;
    let shards = Partitioner::Cmda.split(&train, &val, 3, 0).unwrap();
    let supports: Vec<Vec<bool>> =
        shards.iter().map(|s| s.train.labels().column_counts().iter().map(|&c| c > 0).collect()).collect();
    for a in 0..3 {
        for b in a + 1..3 {
            assert!(!(0..12).any(|j| supports[a][j] && supports[b][j]), "clients {a} and {b} share a label");
        }
    }
    let random = Partitioner::Random.split(&train, &val, 3, 0).unwrap();
    let skew = heterogeneity_report(&shards, 1e-6).unwrap().total_kl;
    let flat = heterogeneity_report(&random, 1e-6).unwrap().total_kl;
    assert!(skew > 10.0 * flat);
}
