//! Reference models shared by the oracle tests and the acceptance harness.
#![allow(dead_code)]

use std::collections::VecDeque;

use pimflow::engine::{ComputeModel, SimEdge, SimTask};
use pimflow::memsys::{AddressMap, Location};
use rand::rngs::StdRng;
use rand::Rng;

// Systolic array, stepped one clock at a time.

/// Fixed-length delay line. Zero length passes values through in the same
/// cycle.
struct Delay<T> {
    q: VecDeque<Option<T>>,
}

impl<T> Delay<T> {
    fn new(len: usize) -> Self {
        Self {
            q: (0..len).map(|_| None).collect(),
        }
    }

    fn step(&mut self, v: Option<T>) -> Option<T> {
        self.q.push_back(v);
        self.q.pop_front().flatten()
    }
}

/// Runs `a (m x k) * w (k x n)` through a rows x cols input-stationary
/// array and returns (cycles, result). Inputs are loaded one array row per
/// cycle; weight row r enters r cycles late; partial sums move down one row
/// per cycle; column sums then pass the output adder pipeline.
pub fn systolic_reference(a: &[Vec<f64>], w: &[Vec<f64>], cm: &ComputeModel) -> (u64, Vec<Vec<f64>>) {
    let (m, k, n) = (a.len(), w.len(), w[0].len());
    let (rows, cols) = (cm.systolic_rows, cm.systolic_cols);
    let mut out = vec![vec![0.0; n]; m];
    let mut cycles = 0u64;
    for mt in 0..m.div_ceil(cols) {
        for kt in 0..k.div_ceil(rows) {
            let mut stationary = vec![vec![0.0; cols]; rows];
            for (r, row) in stationary.iter_mut().enumerate() {
                for (c, v) in row.iter_mut().enumerate() {
                    let (mi, ki) = (mt * cols + c, kt * rows + r);
                    if mi < m && ki < k {
                        *v = a[mi][ki];
                    }
                }
                cycles += 1;
            }
            let mut mul: Vec<Vec<Delay<(usize, f64)>>> = (0..rows)
                .map(|_| (0..cols).map(|_| Delay::new(cm.mul_pipe_stages)).collect())
                .collect();
            let mut add: Vec<Delay<(usize, f64)>> = (0..cols).map(|_| Delay::new(cm.add_pipe_stages)).collect();
            let mut psum: Vec<Vec<Option<(usize, f64)>>> = vec![vec![None; cols]; rows];
            let mut emerged = 0usize;
            let mut t = 0usize;
            while emerged < cols * n {
                // Bottom row results from the previous cycle enter the adders.
                for c in 0..cols {
                    if let Some((j, s)) = add[c].step(psum[rows - 1][c]) {
                        let mi = mt * cols + c;
                        if mi < m {
                            out[mi][j] += s;
                        }
                        emerged += 1;
                    }
                }
                let mut next = vec![vec![None; cols]; rows];
                for r in 0..rows {
                    let weight = t.checked_sub(r).filter(|&j| j < n).map(|j| {
                        let ki = kt * rows + r;
                        (j, if ki < k { w[ki][j] } else { 0.0 })
                    });
                    for c in 0..cols {
                        let prod = mul[r][c].step(weight.map(|(j, wv)| (j, wv * stationary[r][c])));
                        next[r][c] = prod.map(|(j, p)| {
                            let above = if r == 0 {
                                0.0
                            } else {
                                let (ja, s) = psum[r - 1][c].expect("partial sum arrives with its product");
                                assert_eq!(ja, j, "skew mismatch");
                                s
                            };
                            (j, above + p)
                        });
                    }
                }
                psum = next;
                t += 1;
            }
            cycles += t as u64;
        }
    }
    (cycles, out)
}

pub fn random_matrix(rng: &mut StdRng, r: usize, c: usize) -> Vec<Vec<f64>> {
    (0..r).map(|_| (0..c).map(|_| rng.gen_range(-4..=4) as f64).collect()).collect()
}

// FIFO scheduling by exhaustive enumeration of per-unit service orders.

fn permutations(items: &[usize]) -> Vec<Vec<usize>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut p in permutations(&rest) {
            p.insert(0, head);
            out.push(p);
        }
    }
    out
}

/// As-soon-as-possible times for fixed per-unit orders, or `None` when the
/// orders deadlock against the dependencies.
fn timed(tasks: &[SimTask], edges: &[SimEdge], orders: &[Vec<usize>]) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = tasks.len();
    let mut incoming: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n];
    for e in edges {
        for &d in &e.dsts {
            incoming[d].push((e.src, e.delay));
        }
    }
    let mut end = vec![f64::NAN; n];
    let mut start = vec![f64::NAN; n];
    let mut ready = vec![f64::NAN; n];
    let mut pos = vec![0usize; orders.len()];
    let mut unit_free = vec![0.0f64; orders.len()];
    let mut done = 0;
    while done < n {
        let mut progressed = false;
        for u in 0..orders.len() {
            let Some(&t) = orders[u].get(pos[u]) else { continue };
            if incoming[t].iter().any(|&(s, _)| end[s].is_nan()) {
                continue;
            }
            let r = incoming[t].iter().map(|&(s, d)| end[s] + d).fold(0.0, f64::max);
            ready[t] = r;
            start[t] = r.max(unit_free[u]);
            end[t] = start[t] + tasks[t].duration;
            unit_free[u] = end[t];
            pos[u] += 1;
            done += 1;
            progressed = true;
        }
        if !progressed {
            return None;
        }
    }
    Some((ready, start, end))
}

/// Each service must pick the earliest-ready (then lowest id) task among
/// those already ready when it starts.
fn is_fifo(orders: &[Vec<usize>], ready: &[f64], start: &[f64]) -> bool {
    orders.iter().all(|order| {
        order.iter().enumerate().all(|(i, &t)| {
            order[i..]
                .iter()
                .filter(|&&o| ready[o] <= start[t])
                .min_by(|&&x, &&y| ready[x].total_cmp(&ready[y]).then(x.cmp(&y)))
                == Some(&t)
        })
    })
}

pub fn random_dag(rng: &mut StdRng) -> (Vec<SimTask>, Vec<SimEdge>, usize) {
    loop {
        let n = rng.gen_range(1..=12);
        let units = rng.gen_range(1..=3);
        let tasks: Vec<SimTask> = (0..n)
            .map(|_| SimTask {
                unit: rng.gen_range(0..units),
                duration: rng.gen_range(1..=4) as f64 * 0.5,
            })
            .collect();
        let orderings: f64 = (0..units)
            .map(|u| {
                let c = tasks.iter().filter(|t| t.unit == u).count();
                (1..=c).map(|x| x as f64).product::<f64>()
            })
            .product();
        if orderings > 30_000.0 {
            continue;
        }
        let mut edges = Vec::new();
        for src in 0..n {
            let dsts: Vec<usize> = (src + 1..n).filter(|_| rng.gen_bool(0.3)).collect();
            if dsts.is_empty() {
                continue;
            }
            // Sometimes one multicast edge, sometimes one edge per target.
            if rng.gen_bool(0.5) {
                edges.push(SimEdge {
                    src,
                    dsts,
                    delay: rng.gen_range(0..=2) as f64 * 0.5,
                });
            } else {
                for d in dsts {
                    edges.push(SimEdge {
                        src,
                        dsts: vec![d],
                        delay: rng.gen_range(0..=2) as f64 * 0.5,
                    });
                }
            }
        }
        let used = tasks.iter().map(|t| t.unit + 1).max().unwrap();
        return (tasks, edges, used);
    }
}

// Address decoding by plain bit slicing in Row|Ch|Ra|Co|Bg|Ba|Chip|Byte order.

pub fn sliced(addr: u64, map: &AddressMap) -> Location {
    let widths = [
        map.row_bits,
        map.channel_bits,
        map.rank_bits,
        map.column_bits,
        map.bank_group_bits,
        map.bank_bits,
        map.chip_bits,
        map.byte_bits,
    ];
    let total: u32 = widths.iter().sum();
    let bits = format!("{addr:0width$b}", width = total as usize);
    let mut at = 0usize;
    let mut f = [0u64; 8];
    for (i, w) in widths.iter().enumerate() {
        let s = &bits[at..at + *w as usize];
        f[i] = if s.is_empty() { 0 } else { u64::from_str_radix(s, 2).unwrap() };
        at += *w as usize;
    }
    Location {
        row: f[0],
        channel: f[1],
        rank: f[2],
        column: f[3],
        bank_group: f[4],
        bank: f[5],
        chip: f[6],
        byte: f[7],
    }
}


/// Every per-unit service order that is FIFO-consistent, as (start, end)
/// vectors. A deterministic FIFO policy admits exactly one.
pub fn fifo_reference(tasks: &[SimTask], edges: &[SimEdge]) -> Vec<(Vec<f64>, Vec<f64>)> {
    let units = tasks.iter().map(|t| t.unit + 1).max().unwrap_or(0);
    let mut combos: Vec<Vec<Vec<usize>>> = vec![Vec::new()];
    for u in 0..units {
        let list: Vec<usize> = (0..tasks.len()).filter(|&t| tasks[t].unit == u).collect();
        let perms = permutations(&list);
        combos = combos
            .into_iter()
            .flat_map(|c| {
                perms.iter().map(move |p| {
                    let mut c = c.clone();
                    c.push(p.clone());
                    c
                })
            })
            .collect();
    }
    combos
        .iter()
        .filter_map(|orders| {
            let (ready, start, end) = timed(tasks, edges, orders)?;
            is_fifo(orders, &ready, &start).then_some((start, end))
        })
        .collect()
}
