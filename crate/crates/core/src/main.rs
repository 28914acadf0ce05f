fn main() {
    let code = conformal_shift::cli::run(std::env::args_os());
    std::process::exit(code);
}
