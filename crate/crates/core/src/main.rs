fn main() {
    std::process::exit(mrfv_core::cli::main_with_args(std::env::args_os()));
}
