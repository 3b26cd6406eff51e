fn main() {
    std::process::exit(spanlab_cli::run(std::env::args_os()));
}
