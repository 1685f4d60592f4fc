fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(memssl::cli::dispatch(&argv));
}
