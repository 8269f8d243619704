fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter("SATISRANK_LOG")).init();
    std::process::exit(satisrank::cli::main_with_args(std::env::args_os()));
}
