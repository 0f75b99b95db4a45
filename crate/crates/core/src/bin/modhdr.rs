use std::process::exit;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    exit(modhdr::cli::cli_dispatch(&args));
}
