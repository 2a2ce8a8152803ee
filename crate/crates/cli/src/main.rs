fn main() {
    let code = onticity_cli::run(std::env::args_os());
    std::process::exit(code);
}
