fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SLACKDOWN_LOG", "warn")).init();
    std::process::exit(slackdown_cli::run(std::env::args_os()));
}
