fn main() {
    std::process::exit(mobflow::cli::main_with_args(std::env::args_os()));
}
