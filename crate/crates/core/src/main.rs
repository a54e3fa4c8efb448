fn main() {
    std::process::exit(twinbeam::cli::main_with_args(std::env::args_os()));
}
