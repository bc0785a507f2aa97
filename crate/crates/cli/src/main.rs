fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("TREEFORMER_LOG", "warn")).init();
    std::process::exit(treeformer_cli::run(std::env::args_os()));
}
