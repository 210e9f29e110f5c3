//! Parameter counts of the 512-unit GRU for every combination of compressed
//! recurrent matrices, on both sequence tasks.

use wavegru::recurrent::CompressSet;
use wavegru::training::model::count_for_config;
use wavegru::training::{TaskKind, TrainConfig};

fn main() -> wavegru::Result<()> {
    let sets =
        ["none", "state", "reset", "update", "state,reset", "state,update", "reset,update", "state,reset,update"];
    println!("{:<20} {:>10} {:>10}", "compressed", "adding", "copy");
    for s in sets {
        let compress: CompressSet = s.parse()?;
        let count = |task| count_for_config(&TrainConfig { task, hidden: 512, compress, ..TrainConfig::default() });
        println!("{s:<20} {:>10} {:>10}", count(TaskKind::Adding)?, count(TaskKind::Copy)?);
    }
    Ok(())
}
