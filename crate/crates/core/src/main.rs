fn main() {
    let code = habitree::cli::run_from_args(std::env::args_os(), &mut std::io::stdout(), &mut std::io::stderr());
    std::process::exit(code);
}
