// Flat `key = value` configs: load the shipped desk config, override a key,
// and print the fully resolved settings.

use lrem::experiment::ExperimentConfig;

pub const DESK_CONFIG: &str = include_str!("../../../configs/desk.conf");

pub fn run_example() -> lrem::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::parse(DESK_CONFIG)?;
    cfg.apply("epochs_cold = 2  # quicker\n")?;
    print!("{}", cfg.render());
    match ExperimentConfig::parse("learning_rate = 1") {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!("unknown keys are errors"),
    }
    Ok(cfg)
}

fn main() -> lrem::Result<()> {
    run_example()?;
    Ok(())
}
