fn main() {
    std::process::exit(romshaper_cli::run(std::env::args_os()));
}
