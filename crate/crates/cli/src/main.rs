fn main() {
    std::process::exit(llp_cli::parse_and_dispatch(std::env::args_os()));
}
