use std::process::ExitCode;

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "mce=info".into()))
        .with_writer(std::io::stderr)
        .init();
    mce::cli::main_with(std::env::args_os())
}
