fn main() {
    std::process::exit(ewclab::cli::main_entry());
}
