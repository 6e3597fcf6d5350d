fn main() {
    std::process::exit(phmm_monitor::cli::main_with_args(std::env::args_os()));
}
