use std::fs;
use std::path::Path;

use proptest::prelude::*;
use xgoal_core::graphdata::{generate_synthetic, load_bundle, normalize_adjacency, save_bundle, AttrFormat, SynthSpec};
use xgoal_core::numkit::{spmm, write_dense, DenseMatrix, Precision, Rng, SparseMatrix};
use xgoal_core::Error;

fn write(dir: &Path, name: &str, text: &str) {
    fs::write(dir.join(name), text).unwrap();
}

fn tiny_bundle(dir: &Path) {
    write(
        dir,
        "meta.json",
        r#"{"n_nodes": 3, "attr_dim": 2, "layers": [{"name": "L", "k_clusters": 2}]}"#,
    );
    write(dir, "attributes.tsv", "1\t0\n0\t1\n0.5\t0.5\n");
    write(dir, "edges-L.tsv", "0\t1\n1\t2\n");
}

#[test]
fn tiny_bundle_symmetrizes() {
    let dir = tempfile::tempdir().unwrap();
    tiny_bundle(dir.path());
    let g = load_bundle(dir.path()).unwrap();
    assert_eq!(g.n_nodes(), 3);
    let a = g.layers()[0].adjacency_raw();
    assert_eq!(a.nnz(), 4);
    assert!(a.is_symmetric());
    assert_eq!(a.get(1, 0), 1.0);
}

#[test]
fn missing_attributes_is_a_load_error() {
    let dir = tempfile::tempdir().unwrap();
    tiny_bundle(dir.path());
    fs::remove_file(dir.path().join("attributes.tsv")).unwrap();
    let err = load_bundle(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Load { .. } | Error::Io { .. }), "{err}");
    assert!(err.to_string().contains("attributes.tsv"), "{err}");
}

#[test]
fn bad_lines_are_named() {
    let cases = [
        ("edges-L.tsv", "0\t1\n1\t3\n", "edges-L.tsv:2"),
        ("attributes.tsv", "1\t0\n0\tx\n0.5\t0.5\n", "attributes.tsv:2"),
        ("edges-L.tsv", "0\t1\t1.0\n1\t0\t2.0\n", "edges-L.tsv:2"),
    ];
    for (file, body, want) in cases {
        let dir = tempfile::tempdir().unwrap();
        tiny_bundle(dir.path());
        write(dir.path(), file, body);
        let err = load_bundle(dir.path()).unwrap_err().to_string();
        assert!(err.contains(want), "{err} lacks {want}");
    }
}

#[test]
fn save_and_reload_is_idempotent() {
    let spec = SynthSpec {
        n_nodes: 60,
        attr_dim: 8,
        ..SynthSpec::default()
    };
    let g = generate_synthetic(&spec, &mut Rng::new(4)).unwrap();
    for format in [AttrFormat::Tsv, AttrFormat::Bin] {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        save_bundle(&g, a.path(), format).unwrap();
        let g1 = load_bundle(a.path()).unwrap();
        assert_eq!(g1, g);
        save_bundle(&g1, b.path(), format).unwrap();
        for entry in fs::read_dir(a.path()).unwrap() {
            let name = entry.unwrap().file_name();
            assert_eq!(
                fs::read(a.path().join(&name)).unwrap(),
                fs::read(b.path().join(&name)).unwrap()
            );
        }
    }
}

#[test]
fn normalization_examples() {
    let pair = SparseMatrix::from_triplets(2, 2, &[(0, 1, 1.0), (1, 0, 1.0)]).unwrap();
    assert_eq!(normalize_adjacency(&pair).unwrap().values(), &[1.0, 1.0]);
    let tri: Vec<(usize, usize, f64)> = (0..3)
        .flat_map(|i| (0..3).filter(move |&j| j != i).map(move |j| (i, j, 1.0)))
        .collect();
    let n = normalize_adjacency(&SparseMatrix::from_triplets(4, 4, &tri).unwrap()).unwrap();
    assert!(n.values().iter().all(|&v| (v - 0.5).abs() < 1e-15));
    assert_eq!(n.row(3).count(), 0);
    let neg = SparseMatrix::from_triplets(2, 2, &[(0, 1, -1.0), (1, 0, -1.0)]).unwrap();
    assert!(normalize_adjacency(&neg).is_err());
}

fn spectral_radius(a: &SparseMatrix, rng: &mut Rng) -> f64 {
    let mut v = DenseMatrix::from_fn(a.rows(), 1, |_, _| rng.normal());
    let mut est = 0.0;
    for _ in 0..500 {
        // squaring makes the iteration converge for a symmetric matrix with ±λ
        let w = spmm(a, &spmm(a, &v).unwrap()).unwrap();
        let nw = w.frobenius_norm();
        if nw == 0.0 {
            return 0.0;
        }
        est = (nw / v.frobenius_norm()).sqrt();
        v = w.scaled(1.0 / nw);
    }
    est
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn normalized_spectral_radius_at_most_one(seed in any::<u64>(), n in 2usize..=64, density in 0.02f64..0.6) {
        let mut rng = Rng::new(seed);
        let mut trip = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if rng.bernoulli(density) {
                    let w = rng.uniform_range(0.1, 3.0);
                    trip.push((i, j, w));
                    trip.push((j, i, w));
                }
            }
        }
        let a = normalize_adjacency(&SparseMatrix::from_triplets(n, n, &trip).unwrap()).unwrap();
        prop_assert!(spectral_radius(&a, &mut rng) <= 1.0 + 1e-9);
    }
}

#[test]
fn extreme_sbm_gives_cliques() {
    let spec = SynthSpec {
        n_nodes: 9,
        n_layers: 1,
        n_communities: 3,
        p_in: 1.0,
        p_out: 0.0,
        attr_dim: 3,
        noise: 0.0,
    };
    let g = generate_synthetic(&spec, &mut Rng::new(0)).unwrap();
    let a = g.layers()[0].adjacency_raw();
    for i in 0..9 {
        for j in 0..9 {
            let want = if i != j && i / 3 == j / 3 { 1.0 } else { 0.0 };
            assert_eq!(a.get(i, j), want, "({i},{j})");
        }
    }
    let labels: Vec<usize> = g.labels().unwrap().iter().map(|l| l.unwrap()).collect();
    assert_eq!(labels, vec![0, 0, 0, 1, 1, 1, 2, 2, 2]);
    // σ = 0: same community, same attribute row
    assert_eq!(g.attributes().row(0), g.attributes().row(2));
    assert_ne!(g.attributes().row(0), g.attributes().row(3));
}

#[test]
fn p_out_zero_is_block_diagonal() {
    let spec = SynthSpec {
        n_nodes: 90,
        p_in: 0.3,
        p_out: 0.0,
        ..SynthSpec::default()
    };
    let g = generate_synthetic(&spec, &mut Rng::new(3)).unwrap();
    for layer in g.layers() {
        for i in 0..90 {
            for (j, _) in layer.adjacency_raw().row(i) {
                assert_eq!(spec.community_of(i), spec.community_of(j));
            }
        }
    }
}

#[test]
fn sbm_density_seed42() {
    let spec = SynthSpec::default();
    let g = generate_synthetic(&spec, &mut Rng::new(42)).unwrap();
    for layer in g.layers() {
        let (mut within, mut pairs) = (0usize, 0usize);
        for i in 0..spec.n_nodes {
            for j in i + 1..spec.n_nodes {
                if spec.community_of(i) == spec.community_of(j) {
                    pairs += 1;
                    within += (layer.adjacency_raw().get(i, j) != 0.0) as usize;
                }
            }
        }
        let density = within as f64 / pairs as f64;
        assert!((density - spec.p_in).abs() <= 0.2 * spec.p_in, "{density}");
    }
}

#[test]
fn synthetic_rejects_weak_signal() {
    let spec = SynthSpec {
        p_in: 0.05,
        p_out: 0.05,
        ..SynthSpec::default()
    };
    assert!(generate_synthetic(&spec, &mut Rng::new(0)).is_err());
}

#[test]
fn acm_shaped_bundle_loads_with_meta_counts() {
    let (n, d, labeled) = (3025, 1830, 600);
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let mut rng = Rng::new(77);
    write(
        p,
        "meta.json",
        &format!(
            r#"{{"n_nodes": {n}, "attr_dim": {d}, "attr_format": "bin",
               "layers": [{{"name": "PAP", "k_clusters": 5}}, {{"name": "PSP", "k_clusters": 30}}]}}"#
        ),
    );
    let x = DenseMatrix::from_fn(n, d, |_, _| if rng.bernoulli(0.01) { 1.0 } else { 0.0 });
    write_dense(&p.join("attributes.bin"), &x, Precision::F32).unwrap();
    for name in ["PAP", "PSP"] {
        let mut edges = String::new();
        for _ in 0..20_000 {
            let (i, j) = (rng.below(n), rng.below(n));
            if i != j {
                edges.push_str(&format!("{i}\t{j}\n"));
            }
        }
        write(p, &format!("edges-{name}.tsv"), &edges);
    }
    let mut labels = String::new();
    let ids: Vec<usize> = rng.permutation(n)[..labeled].to_vec();
    for (r, &i) in ids.iter().enumerate() {
        labels.push_str(&format!("{i}\t{}\n", r % 3));
    }
    write(p, "labels.tsv", &labels);
    let split = serde_json::json!({"train": ids[..60], "val": ids[60..120], "test": ids[120..]});
    write(p, "split.json", &split.to_string());

    let g = load_bundle(p).unwrap();
    assert_eq!(
        (g.n_nodes(), g.n_layers(), g.attr_dim(), g.n_labeled()),
        (n, 2, d, labeled)
    );
    assert_eq!(g.layer("PSP").unwrap().k_clusters(), 30);
    assert_eq!(g.layer("PAP").unwrap().k_clusters(), 5);
    assert_eq!(g.n_classes(), Some(3));
    assert_eq!(g.split().unwrap().test.len(), 480);
    assert_eq!(g.attributes(), &x);
}
