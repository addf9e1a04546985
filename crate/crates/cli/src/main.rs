use clap::Parser;
use dao_align_cli::{exit_code, run, Cli, LogFormat};
use tracing_subscriber::EnvFilter;

fn main() {
    let cli = Cli::parse();
    let filter = EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info"));
    let builder = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr);
    match cli.global.log_format {
        LogFormat::Json => builder.json().flatten_event(true).init(),
        LogFormat::Text => builder.init(),
    }

    if let Err(err) = run(&cli) {
        let code = exit_code(&err);
        tracing::error!(
            exit_code = code,
            error = format!("{err:#}"),
            "command failed"
        );
        eprintln!("error: {err:#}");
        std::process::exit(code);
    }
}
