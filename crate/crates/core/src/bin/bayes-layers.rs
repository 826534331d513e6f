fn main() {
    env_logger::init();
    std::process::exit(bayes_layers::train::cli::run(std::env::args_os()));
}
