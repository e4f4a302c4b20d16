fn main() {
    std::process::exit(lasso_ann::cli::main_with_args(std::env::args_os()));
}
