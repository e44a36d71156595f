fn main() {
    std::process::exit(dilacount_cli::run(std::env::args_os()));
}
