fn main() {
    std::process::exit(condenser::cli::run(std::env::args_os()));
}
