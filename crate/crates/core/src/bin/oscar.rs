fn main() {
    std::process::exit(oscar_core::cli::main());
}
