fn main() {
    std::process::exit(resonance_spde::cli::run(std::env::args_os()));
}
