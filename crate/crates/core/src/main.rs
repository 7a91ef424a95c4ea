fn main() {
    std::process::exit(histoexpr::cli::run(std::env::args_os()));
}
