fn main() {
    std::process::exit(convbss_cli::main_with_args(std::env::args_os()));
}
