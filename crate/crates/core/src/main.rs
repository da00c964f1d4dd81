fn main() { std::process::exit(dan_core::cli::main()) }
