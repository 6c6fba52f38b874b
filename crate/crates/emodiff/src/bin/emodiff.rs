fn main() {
    std::process::exit(emodiff::cli::main_entry());
}
