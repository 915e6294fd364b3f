fn main() {
    std::process::exit(sfevc::cli::main_entry(std::env::args().collect()));
}
