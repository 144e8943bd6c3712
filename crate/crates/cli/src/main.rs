fn main() {
    std::process::exit(fairshare_cli::main_with_args(std::env::args_os()));
}
