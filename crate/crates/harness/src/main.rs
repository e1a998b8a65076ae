fn main() {
    std::process::exit(seedmem_harness::cli::run(std::env::args().collect()));
}
