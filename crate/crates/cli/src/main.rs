fn main() {
    std::process::exit(uprop_cli::execute(std::env::args_os()));
}
