fn main() {
    std::process::exit(tgl_cli::run(std::env::args_os()));
}
