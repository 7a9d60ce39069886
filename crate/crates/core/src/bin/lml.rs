fn main() {
    std::process::exit(lml::cli::cli_main(std::env::args_os()));
}
