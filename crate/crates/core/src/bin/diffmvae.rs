fn main() {
    std::process::exit(diffmvae::cli_persistence::cli_main(std::env::args_os()));
}
