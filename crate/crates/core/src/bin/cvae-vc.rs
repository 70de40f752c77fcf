fn main() {
    std::process::exit(cvae_vc::harness::cli::run(std::env::args_os()));
}
