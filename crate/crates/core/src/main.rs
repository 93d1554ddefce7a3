fn main() {
    std::process::exit(rasa::cli::main_with(std::env::args_os()));
}
