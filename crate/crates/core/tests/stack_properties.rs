use faer::Mat;
use msda::highdim::*;
use msda::matrix::DataMatrix;
use msda::mda::*;
use msda::stack::*;
use proptest::prelude::*;

fn matrix(max_d: usize, max_n: usize) -> impl Strategy<Value = DataMatrix> {
    (1..=max_d, 2..=max_n).prop_flat_map(|(d, n)| {
        proptest::collection::vec(proptest::collection::vec(0u32..=4, d), n).prop_map(move |cols| {
            let cols = cols
                .into_iter()
                .map(|c| {
                    c.into_iter()
                        .enumerate()
                        .filter(|(_, v)| *v > 0)
                        .map(|(i, v)| (i, v as f64))
                        .collect()
                })
                .collect::<Vec<Vec<_>>>();
            DataMatrix::from_sparse_columns(d, cols).unwrap()
        })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn greedy_prefix_is_bit_identical(x in matrix(8, 25), p in 0.0f64..1.0, l in 1usize..4) {
        let deep = train_stack(&x, p, l + 1, DEFAULT_RIDGE).unwrap();
        let shallow = train_stack(&x, p, l, DEFAULT_RIDGE).unwrap();
        prop_assert_eq!(&deep.layers()[..l], shallow.layers());
        prop_assert_eq!(deep.truncated(l).unwrap(), shallow);
    }

    #[test]
    fn representation_layout(x in matrix(8, 25), p in 0.0f64..1.0, l in 1usize..4) {
        let model = train_stack(&x, p, l, DEFAULT_RIDGE).unwrap();
        let r = model.represent(&x).unwrap();
        let d = x.dim();
        prop_assert_eq!(r.dim(), (l + 1) * d);
        prop_assert_eq!(r.ncols(), x.ncols());
        let rows: Vec<usize> = (0..d).collect();
        prop_assert_eq!(r.select_rows(&rows), x.to_dense().with_kind(r.kind()));
        for j in 0..x.ncols() {
            for i in d..r.dim() {
                prop_assert!(r.get(i, j).abs() < 1.0);
            }
        }
    }

    #[test]
    fn first_block_is_squashed_single_layer(x in matrix(8, 25), p in 0.0f64..1.0) {
        let spec = CorruptionSpec::new(p).unwrap();
        let map = solve_mda(&expected_scatter(&x, spec).unwrap(), DEFAULT_RIDGE).unwrap();
        let model = train_stack(&x, p, 1, DEFAULT_RIDGE).unwrap();
        prop_assert_eq!(&model.layers()[0], &map);
        let h = model.hidden(&x).unwrap();
        prop_assert_eq!(&h[0], &transform(&map, &x, true).unwrap());
    }

    #[test]
    fn plan_covers_every_feature(d in 1usize..200, bs in 1usize..50, seed in any::<u64>()) {
        let bs = bs.min(d);
        let plan = make_plan(d, d.min(3), bs, seed).unwrap();
        let mut seen = vec![0; d];
        for block in plan.blocks() {
            prop_assert!(!block.is_empty());
            for &f in block {
                seen[f] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        prop_assert_eq!(plan.n_blocks(), d.div_ceil(bs));
    }

    #[test]
    fn block_output_dimension_is_r(x in matrix(12, 20), r in 1usize..5, bs in 1usize..6, p in 0.0f64..1.0) {
        let d = x.dim();
        let r = r.min(d);
        let plan = make_plan(d, r, bs.min(d), 11).unwrap();
        let targets: Vec<usize> = (0..r).collect();
        let layer = train_block_layer(&x, &targets, &plan, CorruptionSpec::new(p).unwrap(), DEFAULT_RIDGE).unwrap();
        let h = block_forward(&layer, &x).unwrap();
        prop_assert_eq!(h.dim(), r);
        prop_assert!(h.dense_values().unwrap().iter().all(|v| v.abs() < 1.0));
        let again = train_block_layer(&x, &targets, &plan, CorruptionSpec::new(p).unwrap(), DEFAULT_RIDGE).unwrap();
        prop_assert_eq!(again, layer);
    }
}

/// Six count features over twenty documents.
fn toy() -> DataMatrix {
    let cols = (0..20)
        .map(|j: usize| {
            (0..6)
                .filter(|&i| (i * 5 + j * 3) % 4 != 1)
                .map(|i| (i, ((i * 7 + j * 11) % 5 + 1) as f64))
                .collect()
        })
        .collect::<Vec<Vec<_>>>();
    DataMatrix::from_sparse_columns(6, cols).unwrap()
}

#[test]
fn single_block_reduces_to_standard_layer() {
    let x = toy();
    for p in [0.0, 0.3, 0.7] {
        let spec = CorruptionSpec::new(p).unwrap();
        let plan = make_plan(6, 6, 6, 99).unwrap();
        let layer = train_block_layer(&x, &[0, 1, 2, 3, 4, 5], &plan, spec, DEFAULT_RIDGE).unwrap();
        let standard = solve_mda(&expected_scatter(&x, spec).unwrap(), DEFAULT_RIDGE).unwrap();
        let a = block_forward(&layer, &x).unwrap();
        let b = transform(&standard, &x, true).unwrap();
        for (u, v) in a
            .dense_values()
            .unwrap()
            .iter()
            .zip(b.dense_values().unwrap())
        {
            assert!((u - v).abs() <= 1e-12, "p = {p}: {u} vs {v}");
        }
    }
}

#[test]
fn each_block_matches_enumeration() {
    let x = toy();
    let spec = CorruptionSpec::new(0.5).unwrap();
    let plan = make_plan(6, 2, 3, 5).unwrap();
    assert_eq!(plan.n_blocks(), 2);
    let targets = [0, 1];
    let layer = train_block_layer(&x, &targets, &plan, spec, DEFAULT_RIDGE).unwrap();
    for (s, block) in plan.blocks().enumerate() {
        let xs = x.select_rows(block);
        // rows past the block are the uncorrupted targets
        let z = x.select_rows(&targets);
        let stacked = DataMatrix::vstack(&[&xs, &z]).unwrap();
        let exact = enumerate_targets(&stacked, block.len(), spec.p(), DEFAULT_RIDGE);
        let got = layer.maps()[s].weights();
        for a in 0..2 {
            for b in 0..=block.len() {
                assert!(
                    (got[(a, b)] - exact[(a, b)]).abs() <= 1e-8,
                    "block {s} entry ({a},{b})"
                );
            }
        }
    }
}

/// Exact expectation over dropout masks of the first `k` rows of `x` only;
/// rows past `k` are uncorrupted reconstruction targets. Solved by plain
/// Gaussian elimination.
fn enumerate_targets(x: &DataMatrix, k: usize, p: f64, ridge: f64) -> Mat<f64> {
    let r = x.dim() - k;
    let mut q = vec![vec![0.0; k + 1]; k + 1];
    let mut pm = vec![vec![0.0; k + 1]; r];
    for j in 0..x.ncols() {
        let col = x.column(j).to_dense(x.dim());
        for mask in 0..1usize << k {
            let kept = mask.count_ones() as i32;
            let w = p.powi(k as i32 - kept) * (1.0 - p).powi(kept);
            let mut c: Vec<f64> = (0..k)
                .map(|a| if mask >> a & 1 == 1 { col[a] } else { 0.0 })
                .collect();
            c.push(1.0);
            for a in 0..=k {
                for b in 0..=k {
                    q[a][b] += w * c[a] * c[b];
                }
            }
            for t in 0..r {
                for b in 0..=k {
                    pm[t][b] += w * col[k + t] * c[b];
                }
            }
        }
    }
    for (a, row) in q.iter_mut().enumerate() {
        row[a] += ridge;
    }
    // each row w_t solves q w_t = pm_t (q symmetric)
    Mat::from_fn(r, k + 1, |t, b| gauss(&q, &pm[t])[b])
}

fn gauss(a: &[Vec<f64>], rhs: &[f64]) -> Vec<f64> {
    let n = rhs.len();
    let mut m: Vec<Vec<f64>> = a
        .iter()
        .zip(rhs)
        .map(|(row, &v)| row.iter().copied().chain([v]).collect())
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .unwrap();
        m.swap(col, pivot);
        let pivot_row = m[col].clone();
        for row in &mut m[col + 1..] {
            let f = row[col] / pivot_row[col];
            for (entry, p) in row[col..].iter_mut().zip(&pivot_row[col..]) {
                *entry -= f * p;
            }
        }
    }
    let mut out = vec![0.0; n];
    for row in (0..n).rev() {
        let s: f64 = (row + 1..n).map(|c| m[row][c] * out[c]).sum();
        out[row] = (m[row][n] - s) / m[row][row];
    }
    out
}

#[test]
fn block_forward_is_average_of_block_products() {
    let x = toy();
    let plan = make_plan(6, 2, 3, 5).unwrap();
    let layer = train_block_layer(
        &x,
        &[0, 1],
        &plan,
        CorruptionSpec::new(0.5).unwrap(),
        DEFAULT_RIDGE,
    )
    .unwrap();
    let h = block_forward(&layer, &x).unwrap();
    for j in 0..x.ncols() {
        let col = x.column(j).to_dense(6);
        for t in 0..2 {
            let mut sum = 0.0;
            for (s, block) in plan.blocks().enumerate() {
                let w = layer.maps()[s].weights();
                sum += w[(t, block.len())];
                for (k, &f) in block.iter().enumerate() {
                    sum += w[(t, k)] * col[f];
                }
            }
            assert!((h.get(t, j) - (sum / 2.0).tanh()).abs() <= 1e-12);
        }
    }
}

#[test]
fn uncorrupted_layer_passes_input_through() {
    // [X; 1] full row rank, so layer 1 reconstructs X and layer 2 sees tanh(X)
    let x = toy();
    let model = StackModel::train(&x, &StackConfig::new(0.0, 2).ridge(0.0)).unwrap();
    let w1 = model.layers()[0].weights();
    for a in 0..6 {
        for b in 0..7 {
            let expected = if a == b { 1.0 } else { 0.0 };
            assert!((w1[(a, b)] - expected).abs() <= 1e-6);
        }
    }
    let h = model.hidden(&x).unwrap();
    for j in 0..x.ncols() {
        for i in 0..6 {
            assert!((h[0].get(i, j) - x.get(i, j).tanh()).abs() <= 1e-6);
        }
    }
    let tanh_x = DataMatrix::from_dense(
        6,
        x.ncols(),
        (0..x.ncols())
            .flat_map(|j| (0..6).map(move |i| (i, j)))
            .map(|(i, j)| x.get(i, j).tanh())
            .collect(),
    )
    .unwrap();
    let layer2 = solve_mda(
        &expected_scatter(&tanh_x, CorruptionSpec::new(0.0).unwrap()).unwrap(),
        0.0,
    )
    .unwrap();
    assert!(
        (layer2.weights().to_owned() - model.layers()[1].weights().to_owned()).norm_l2() <= 1e-6
    );
}

#[test]
fn blockwise_stack_dimensions() {
    let x = toy();
    let config = StackConfig::new(0.5, 3).blockwise(BlockwiseConfig {
        targets: vec![0, 1, 2],
        block_size: 3,
        seed: 1,
    });
    let model = StackModel::train(&x, &config).unwrap();
    assert_eq!(model.layer_count(), 3);
    assert_eq!(model.layer_dims(), [3, 3, 3]);
    assert_eq!(model.represent(&x).unwrap().dim(), 6 + 9);
    let shallow = StackModel::train(
        &x,
        &StackConfig {
            layers: 2,
            ..config
        },
    )
    .unwrap();
    assert_eq!(model.truncated(2).unwrap(), shallow);
}
