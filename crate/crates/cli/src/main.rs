fn main() {
    std::process::exit(interference_cli::cli_main(std::env::args_os()));
}
