fn main() {
    let cli = camshap::cli::parse_or_exit(std::env::args_os());
    if let Err(e) = camshap::cli::run(cli) {
        eprintln!("camshap: {e}");
        std::process::exit(1);
    }
}
