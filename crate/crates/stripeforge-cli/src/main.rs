fn main() {
    std::process::exit(stripeforge_cli::execute(std::env::args_os()));
}
