fn main() {
    std::process::exit(bandit_transfer::harness::cli_dispatch(std::env::args_os()))
}
