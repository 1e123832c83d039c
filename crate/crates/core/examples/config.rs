//! Prints the default configuration as TOML, the starting point for a
//! `--config` file.

fn main() {
    print!("{}", planartrack::config::Config::default().to_toml());
}
