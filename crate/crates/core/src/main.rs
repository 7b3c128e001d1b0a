fn main() {
    std::process::exit(ortho_nmf::cli::cli_main(std::env::args_os()));
}
