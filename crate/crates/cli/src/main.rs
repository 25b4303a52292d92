fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(umamba_cli::run(&argv));
}
