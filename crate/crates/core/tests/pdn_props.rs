// SPDX-License-Identifier: Apache-2.0

use proptest::prelude::*;

use prosim_core::pdn::{solve_dc, transient_step, CurrentMap, GridSpec, Node};

fn grid_and_loads() -> impl Strategy<Value = (GridSpec, Vec<f64>)> {
    (1usize..=6, 1usize..=6, 0.01f64..0.2, 0.02f64..0.5).prop_flat_map(|(rows, cols, r_mesh, r_supply)| {
        let mut g = GridSpec::with_defaults(rows, cols);
        g.r_mesh = r_mesh;
        g.r_supply = r_supply;
        (Just(g), prop::collection::vec(0.0f64..2.0, rows * cols))
    })
}

fn map(g: &GridSpec, loads: &[f64]) -> CurrentMap {
    let mut m = CurrentMap::for_grid(g);
    for (n, &a) in g.nodes().collect::<Vec<_>>().into_iter().zip(loads) {
        m.add_at(n, a);
    }
    m
}

fn drops(g: &GridSpec, loads: &[f64]) -> Vec<f64> {
    let v = solve_dc(g, &map(g, loads)).unwrap();
    g.nodes().map(|n| g.v_supply - v.at(n)).collect()
}

fn close(a: &[f64], b: &[f64]) -> bool {
    let scale = a.iter().chain(b).fold(1e-12f64, |m, x| m.max(x.abs()));
    a.iter().zip(b).all(|(x, y)| (x - y).abs() <= 1e-9 * scale)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn drops_superpose((g, a) in grid_and_loads(), seed in any::<u64>(), k in 0.1f64..3.0) {
        let b: Vec<f64> = a.iter().enumerate().map(|(i, x)| ((seed >> (i % 64)) & 1) as f64 * (2.0 - x)).collect();
        let sum: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x + y).collect();
        let expect: Vec<f64> = drops(&g, &a).iter().zip(drops(&g, &b)).map(|(x, y)| x + y).collect();
        prop_assert!(close(&drops(&g, &sum), &expect));
        let scaled: Vec<f64> = a.iter().map(|x| k * x).collect();
        let expect: Vec<f64> = drops(&g, &a).iter().map(|x| k * x).collect();
        prop_assert!(close(&drops(&g, &scaled), &expect));
    }

    #[test]
    fn more_load_never_raises_voltage((g, a) in grid_and_loads(), at in any::<prop::sample::Index>(), extra in 0.01f64..1.0) {
        let mut b = a.clone();
        b[at.index(a.len())] += extra;
        let (da, db) = (drops(&g, &a), drops(&g, &b));
        prop_assert!(da.iter().zip(&db).all(|(x, y)| *y >= *x - 1e-12));
    }

    /// A single load's drop is largest at the loaded node and non-negative everywhere.
    #[test]
    fn point_load_peaks_at_its_node((g, _) in grid_and_loads(), at in any::<prop::sample::Index>(), amps in 0.1f64..5.0) {
        let mut loads = vec![0.0; g.len()];
        let i = at.index(g.len());
        loads[i] = amps;
        let d = drops(&g, &loads);
        prop_assert!(d.iter().all(|&x| x >= -1e-15 && x <= d[i] * (1.0 + 1e-12)));
    }

    #[test]
    fn transient_adds_inductive_drop((g, a) in grid_and_loads(), dt in 1e-9f64..1e-6) {
        let none = CurrentMap::for_grid(&g);
        let loads = map(&g, &a);
        let dc = solve_dc(&g, &loads).unwrap();
        let tr = transient_step(&g, &none, &loads, dt).unwrap();
        for (n, &i) in g.nodes().zip(&a) {
            let want = (dc.at(n) - g.l_node * i / dt).max(0.0);
            prop_assert!((tr.at(n) - want).abs() <= 1e-9);
        }
        let steady = transient_step(&g, &loads, &loads, dt).unwrap();
        for n in g.nodes() {
            prop_assert_eq!(steady.at(n), dc.at(n));
        }
    }
}

#[test]
fn symmetric_grid_gives_symmetric_drops() {
    let g = GridSpec::with_defaults(5, 5);
    let mut loads = CurrentMap::for_grid(&g);
    loads.add_at(Node::new(2, 2), 3.0);
    let v = solve_dc(&g, &loads).unwrap();
    for (a, b) in [((1, 2), (3, 2)), ((2, 1), (2, 3)), ((1, 1), (3, 3)), ((0, 2), (2, 0))] {
        let (x, y) = (v.at(Node::new(a.0, a.1)), v.at(Node::new(b.0, b.1)));
        assert!((x - y).abs() < 1e-12, "{a:?} {b:?}");
    }
}
