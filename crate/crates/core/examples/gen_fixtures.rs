//! Writes a synthetic fixture directory.
//!
//! ```text
//! cargo run -p transboot --example gen_fixtures -- [DIR] [small|standard] [SEED]
//! ```

use std::path::PathBuf;

use transboot::synth::{generate_fixture, write_fixture, FixtureSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let dir = PathBuf::from(args.next().unwrap_or_else(|| "fixtures".into()));
    let size = args.next().unwrap_or_else(|| "small".into());
    let seed: u64 = args.next().map(|s| s.parse()).transpose()?.unwrap_or(7);
    let spec = match size.as_str() {
        "small" => FixtureSpec::small(seed),
        "standard" => FixtureSpec::standard(seed),
        other => return Err(format!("unknown fixture size `{other}`").into()),
    };
    let config = write_fixture(&generate_fixture(&spec), &dir, seed)?;
    println!("{}", config.display());
    Ok(())
}
