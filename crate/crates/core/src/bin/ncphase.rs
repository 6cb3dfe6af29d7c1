fn main() {
    std::process::exit(ncphase::cli::run(std::env::args_os()));
}
