fn main() {
    std::process::exit(parasdm::bench::cli::run(std::env::args_os()));
}
