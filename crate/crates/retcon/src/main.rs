fn main() {
    std::process::exit(retcon::cli::main_from_env());
}
