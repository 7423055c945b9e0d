fn main() {
    std::process::exit(forgecon::cli::run(std::env::args_os()));
}
