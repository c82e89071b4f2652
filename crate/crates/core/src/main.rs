fn main() { std::process::exit(bridgeflow::cli::main_entry()) }
