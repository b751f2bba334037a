fn main() {
    std::process::exit(rlfr::cli::run(std::env::args_os()));
}
