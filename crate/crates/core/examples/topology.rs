//! Unit tree, a few routes with their transfer times, and address decoding.

use pimflow::config::{preset_scenario, workload, Level};
use pimflow::engine::{comm_time, message_train_time};
use pimflow::memsys::{build_memory_system, RankCoord};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = preset_scenario("D1", "llama2-7b", workload(1, 128, 128))?;
    let sys = build_memory_system(&cfg)?;
    for level in Level::ALL {
        println!("{:<8} {}", level.name(), sys.count(level));
    }

    let a = sys.chip(RankCoord { module: 0, rank: 0 }, 0);
    let pairs = [
        ("same rank", sys.chip(RankCoord { module: 0, rank: 0 }, 5)),
        ("other rank", sys.chip(RankCoord { module: 0, rank: 1 }, 0)),
        ("other module", sys.chip(RankCoord { module: 3, rank: 2 }, 7)),
    ];
    let bytes = 1 << 20;
    let msg = cfg.network.max_message_bytes;
    for (what, b) in pairs {
        let route = sys.route(a, b);
        let labels: Vec<String> = route.iter().map(|u| sys.unit(*u).label()).collect();
        println!(
            "{what:<12} {:<40} 1 MiB whole {:>8.2} us, in {msg} B messages {:>8.2} us",
            labels.join(" > "),
            comm_time(bytes, &route, &sys)? * 1e6,
            message_train_time(bytes, msg, &route, &sys)? * 1e6
        );
    }

    let map = &sys.address_map;
    println!("address bits {} ({} GiB)", map.total_bits(), map.capacity() >> 30);
    for addr in [0u64, 0x1234_5678, map.capacity() - 1] {
        println!("{addr:#012x} -> {:?}", map.decode(addr)?);
    }
    Ok(())
}
