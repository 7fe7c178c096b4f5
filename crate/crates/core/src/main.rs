fn main() {
    std::process::exit(bazaar_tax_sim::cli::run_cli(std::env::args_os()));
}
