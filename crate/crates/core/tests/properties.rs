use std::collections::HashSet;

use pimflow::analytics::{energy_report, operational_intensity, roofline_attainable, yield_cost, PlatformRoofline};
use pimflow::cli::{write_csv, BreakdownRow, E2eRow};
use pimflow::config::{preset_scenario, workload, ScenarioConfig};
use pimflow::engine::{comm_time, message_train_time, schedule, systolic_gemm_cycles, AccessStats, ComputeModel, SimEdge, SimTask};
use pimflow::memsys::{build_memory_system, AddressMap, UnitId};
use pimflow::model_alloc::GemmShape;
use proptest::prelude::*;

fn d1() -> ScenarioConfig {
    preset_scenario("D1", "llama2-7b", workload(1, 128, 128)).unwrap()
}

/// FLOPs and distinct elements touched by a naive triple loop.
fn counted_oi(m: usize, k: usize, n: usize, elem: u64) -> f64 {
    let mut flops = 0u64;
    let mut touched = HashSet::new();
    for i in 0..m {
        for j in 0..n {
            for x in 0..k {
                flops += 2;
                touched.insert((0u8, i, x));
                touched.insert((1u8, x, j));
            }
            touched.insert((2u8, i, j));
        }
    }
    flops as f64 / (touched.len() as u64 * elem) as f64
}

fn stats_strategy() -> impl Strategy<Value = AccessStats> {
    prop::array::uniform9(0.0f64..1e9).prop_map(|v| AccessStats {
        activations: v[0],
        read_bytes: v[1],
        mac_ops: v[2],
        simd_ops: v[3],
        exp_ops: v[4],
        max_ops: v[5],
        aggregate_bytes: v[6],
        pcie_bytes: v[7],
        chip_link_bytes: v[8],
        max_sram_passes: 0.0,
    })
}

fn sum_stats(parts: &[AccessStats]) -> AccessStats {
    let mut s = AccessStats::default();
    for p in parts {
        s.activations += p.activations;
        s.read_bytes += p.read_bytes;
        s.mac_ops += p.mac_ops;
        s.simd_ops += p.simd_ops;
        s.exp_ops += p.exp_ops;
        s.max_ops += p.max_ops;
        s.aggregate_bytes += p.aggregate_bytes;
        s.pcie_bytes += p.pcie_bytes;
        s.chip_link_bytes += p.chip_link_bytes;
    }
    s
}

fn close(a: f64, b: f64, rel: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()).max(1e-300)
}

prop_compose! {
    fn dag()(n in 1usize..20, units in 1usize..4)
        (durs in prop::collection::vec(0.0f64..3.0, n),
         unit_of in prop::collection::vec(0..units, n),
         links in prop::collection::vec((0..n, 0..n, 0.0f64..1.0), 0..3 * n))
        -> (Vec<SimTask>, Vec<SimEdge>)
    {
        let tasks: Vec<SimTask> = durs.iter().zip(&unit_of).map(|(&d, &u)| SimTask { unit: u, duration: d }).collect();
        let edges = links
            .into_iter()
            .filter(|(a, b, _)| a < b)
            .map(|(a, b, d)| SimEdge { src: a, dsts: vec![b], delay: d })
            .collect();
        (tasks, edges)
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn oi_is_symmetric_and_matches_counting(m in 1usize..12, k in 1usize..12, n in 1usize..12, e in 1u64..5) {
        let a = operational_intensity(GemmShape::new(m, k, n), e);
        prop_assert!(close(a, operational_intensity(GemmShape::new(n, k, m), e), 1e-12));
        prop_assert!(close(a, counted_oi(m, k, n, e), 1e-12));
    }

    #[test]
    fn roofline_is_monotone_and_bounded(flops in 1e12f64..1e16, bw in 1e11f64..1e14, a in 1e-3f64..1e4, b in 1e-3f64..1e4) {
        let p = PlatformRoofline::new("x", flops, bw);
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let (ya, yb) = (roofline_attainable(&p, lo, None), roofline_attainable(&p, hi, None));
        prop_assert!(ya <= yb);
        prop_assert!(yb <= flops && yb <= bw * hi * (1.0 + 1e-12));
        if hi >= p.ridge() {
            prop_assert_eq!(yb, flops);
        }
    }

    #[test]
    fn gpu_util_curve_is_monotone(m1 in 1usize..5000, m2 in 1usize..5000) {
        let cfg = d1();
        let h100 = PlatformRoofline::from_platform(cfg.platform("H100").unwrap());
        let (lo, hi) = if m1 < m2 { (m1, m2) } else { (m2, m1) };
        prop_assert!(h100.util(Some(lo)) <= h100.util(Some(hi)));
        prop_assert!(h100.util(Some(hi)) <= 1.0);
    }

    #[test]
    fn energy_is_additive_and_order_free(parts in prop::collection::vec(stats_strategy(), 1..6), rot in 0usize..6) {
        let cfg = d1();
        let whole = energy_report(&sum_stats(&parts), &cfg).unwrap();
        let mut rotated = parts.clone();
        rotated.rotate_left(rot % parts.len());
        rotated.reverse();
        let again = energy_report(&sum_stats(&rotated), &cfg).unwrap();
        let piecewise: f64 = parts.iter().map(|p| energy_report(p, &cfg).unwrap().total).sum();
        prop_assert!(close(whole.total, again.total, 1e-9));
        prop_assert!(close(whole.total, piecewise, 1e-9));
        let f = whole.data_access_fraction + whole.computation_fraction + whole.communication_fraction;
        prop_assert!(whole.total == 0.0 || close(f, 1.0, 1e-9));
    }

    #[test]
    fn yield_falls_and_cost_rises_with_chiplets(extra in 1usize..8) {
        let cfg = d1();
        let base = yield_cost(&cfg.cost, &cfg.dram);
        let mut more = cfg.cost.clone();
        more.yields.chiplets_per_mcooi += extra;
        more.dram_chiplets_per_mcooi += extra;
        let r = yield_cost(&more, &cfg.dram);
        prop_assert!(r.die_yield < base.die_yield);
        prop_assert!(r.overall_yield < base.overall_yield);
        prop_assert!(r.cost_per_mcooi > base.cost_per_mcooi);
    }

    #[test]
    fn address_maps_round_trip(widths in prop::array::uniform8(0u32..4), seed in any::<u64>()) {
        let map = AddressMap {
            row_bits: widths[0], channel_bits: widths[1], rank_bits: widths[2], column_bits: widths[3],
            bank_group_bits: widths[4], bank_bits: widths[5], chip_bits: widths[6], byte_bits: widths[7],
        };
        let addr = seed % map.capacity();
        let loc = map.decode(addr).unwrap();
        prop_assert_eq!(map.encode(&loc).unwrap(), addr);
        prop_assert!(map.decode(map.capacity()).is_err());
    }

    #[test]
    fn schedules_respect_fifo_invariants((tasks, edges) in dag()) {
        let s = schedule(&tasks, &edges, 0.0).unwrap();
        for (i, t) in tasks.iter().enumerate() {
            prop_assert!(s.start[i] >= s.ready[i]);
            prop_assert!(close(s.end[i], s.start[i] + t.duration, 1e-12) || s.end[i] == s.start[i] + t.duration);
        }
        for e in &edges {
            for &d in &e.dsts {
                prop_assert!(s.ready[d] >= s.end[e.src] + e.delay - 1e-12);
            }
        }
        let units = tasks.iter().map(|t| t.unit + 1).max().unwrap_or(0);
        for u in 0..units {
            let mut mine: Vec<usize> = (0..tasks.len()).filter(|&i| tasks[i].unit == u).collect();
            mine.sort_by(|&a, &b| s.start[a].total_cmp(&s.start[b]).then(a.cmp(&b)));
            for w in mine.windows(2) {
                prop_assert!(s.start[w[1]] >= s.end[w[0]] - 1e-12);
            }
            // No waiting task while its unit sits idle.
            for &i in &mine {
                if s.start[i] > s.ready[i] {
                    let busy = mine.iter().any(|&j| j != i && s.start[j] <= s.ready[i] + 1e-12 && s.end[j] >= s.start[i] - 1e-12);
                    let chained = mine.iter().any(|&j| j != i && (s.end[j] - s.start[i]).abs() < 1e-12);
                    prop_assert!(busy || chained);
                }
            }
            let load: f64 = mine.iter().map(|&i| tasks[i].duration).sum();
            prop_assert!(s.makespan >= load - 1e-9);
        }
    }

    #[test]
    fn systolic_cycles_grow_with_every_dim(m in 1usize..100, k in 1usize..100, n in 1usize..100) {
        let cm = ComputeModel::from_config(&d1());
        let c = systolic_gemm_cycles(GemmShape::new(m, k, n), &cm);
        prop_assert!(systolic_gemm_cycles(GemmShape::new(m + 1, k, n), &cm) >= c);
        prop_assert!(systolic_gemm_cycles(GemmShape::new(m, k + 1, n), &cm) >= c);
        prop_assert!(systolic_gemm_cycles(GemmShape::new(m, k, n + 1), &cm) > c);
    }

    #[test]
    fn message_trains_never_lose_to_whole_messages(bytes in 1u64..50_000_000, max_msg in 1u64..100_000, a in 0usize..4096, b in 0usize..4096) {
        let sys = build_memory_system(&d1()).unwrap();
        let chips: Vec<UnitId> = sys.chip_units().map(|u| u.id).collect();
        let route = sys.route(chips[a % chips.len()], chips[b % chips.len()]);
        let whole = comm_time(bytes, &route, &sys).unwrap();
        let train = message_train_time(bytes, max_msg, &route, &sys).unwrap();
        prop_assert!(train <= whole * (1.0 + 1e-12));
        prop_assert_eq!(message_train_time(bytes, bytes, &route, &sys).unwrap(), whole);
        prop_assert_eq!(message_train_time(bytes, 0, &route, &sys).unwrap(), whole);
        prop_assert!(comm_time(bytes + 1, &route, &sys).unwrap() >= whole);
    }

    #[test]
    fn csv_rows_round_trip(vals in prop::collection::vec((1usize..64, 1usize..4096, 0.0f64..10.0, 0.0f64..1.0, prop::option::of(0.01f64..100.0)), 0..8)) {
        let rows: Vec<BreakdownRow> = vals.iter().map(|&(b, i, s, f, _)| BreakdownRow {
            schema_version: 1, scenario: format!("D1/llama2-7b/b{b}/i{i}/o1"), arch: "D1".into(),
            batch: b, input_len: i, output_len: 1,
            compute_s: s, communication_s: s * f, queueing_s: s * (1.0 - f),
            compute: f, communication: 1.0 - f, queueing: 0.0,
        }).collect();
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        let back: Vec<BreakdownRow> = csv::Reader::from_reader(&buf[..]).deserialize().collect::<Result<_, _>>().unwrap();
        prop_assert_eq!(back, rows);

        let rows: Vec<E2eRow> = vals.iter().map(|&(b, i, _, _, sp)| E2eRow {
            schema_version: 1, scenario: "s,with comma".into(), arch: "D2".into(), batch: b, input_len: i, output_len: 2,
            baseline_platform: sp.map(|_| "H100".to_string()), e2e_speedup: sp,
        }).collect();
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        let back: Vec<E2eRow> = csv::Reader::from_reader(&buf[..]).deserialize().collect::<Result<_, _>>().unwrap();
        prop_assert_eq!(back, rows);
    }
}
