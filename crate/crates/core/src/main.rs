fn main() {
    std::process::exit(hebbsal::cli::run(std::env::args_os()));
}
