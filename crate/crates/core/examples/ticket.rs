//! Retrain the final mask of a dynamic run from the original and from
//! fresh initial values.

use sparsetrain::harness::ticket::{run_ticket, InitSource, TicketSpec};
use sparsetrain::harness::{load_data, presets, train, Method};

fn main() -> sparsetrain::Result<()> {
    let cfg = presets::synthetic(Method::DynamicSparse, 6);
    let data = load_data(&cfg.data, cfg.seed, None)?;
    let source = train(cfg, &data, None)?;
    println!("source: acc {:.3}", source.log.final_accuracy());
    for init in [InitSource::OriginalSnapshot, InitSource::FreshRandom] {
        let spec = TicketSpec { init, epoch_multiplier: 2 };
        let t = run_ticket(&source, &spec, &data, None)?;
        println!("{init:?}: acc {:.3} after {} epochs", t.log.final_accuracy(), t.epoch);
    }
    Ok(())
}
