use std::process::exit;

fn main() {
    exit(ngransac::cli::run(std::env::args()));
}
