fn main() {
    std::process::exit(cybershield::cli::main_with_args(std::env::args_os()));
}
