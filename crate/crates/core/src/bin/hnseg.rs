fn main() {
    std::process::exit(hnseg::cli::run(std::env::args_os()));
}
