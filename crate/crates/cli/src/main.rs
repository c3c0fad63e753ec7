use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("FAIRSHARE_LOG", "warn"))
        .format_timestamp(None)
        .init();
    fairshare_cli::app::main_with(std::env::args_os())
}
