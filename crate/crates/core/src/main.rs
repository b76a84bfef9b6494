fn main() {
    std::process::exit(cmax_camel::cli::main_entry());
}
