fn main() {
    std::process::exit(sid_forge::cli::run(std::env::args_os()));
}
