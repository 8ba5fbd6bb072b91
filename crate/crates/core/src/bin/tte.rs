fn main() {
    std::process::exit(tte_core::cli::run(std::env::args_os()));
}
