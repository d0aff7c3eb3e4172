fn main() {
    std::process::exit(helivort::cli::run(std::env::args_os()));
}
