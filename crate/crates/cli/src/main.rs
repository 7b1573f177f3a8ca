use std::io;

use clap::Parser;

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = dwols_cli::Cli::parse();
    if let Err(e) = dwols_cli::run(cli) {
        // a closed downstream pipe (`dwols ... | head`) is not a failure
        let broken_pipe = e.chain().any(|c| {
            let kind = c.downcast_ref::<io::Error>().map(io::Error::kind).or_else(|| {
                c.downcast_ref::<serde_json::Error>()
                    .and_then(serde_json::Error::io_error_kind)
            });
            kind == Some(io::ErrorKind::BrokenPipe)
        });
        if broken_pipe {
            return;
        }
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}
