use clap::Parser;
use smv_cli::{error_exit_code, run, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let code = match run(cli) {
        Ok(outcome) => {
            if outcome.failures > 0 {
                eprintln!("smv: {} record(s) failed", outcome.failures);
            }
            outcome.exit_code()
        }
        Err(e) => {
            eprintln!("smv: {e:#}");
            error_exit_code(&e)
        }
    };
    std::process::exit(code);
}
