fn main() {
    std::process::exit(logbench::cli::run(std::env::args_os()));
}
