fn main() {
    std::process::exit(stqn_core::cli::run_from_args(std::env::args_os()));
}
