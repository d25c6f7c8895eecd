fn main() {
    std::process::exit(twinflow::cli::run(std::env::args_os()));
}
