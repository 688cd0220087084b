use clap::Parser;
use foreshap::cli::{self, Cli};

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Cli::parse();
    let result = cli::execute(&args);
    let code = cli::exit_code(&result);
    if let Err(e) = result {
        let err = anyhow::Error::from(e).context(format!("`{:?}` failed", args.command).to_lowercase());
        eprintln!("error: {err:#}");
    }
    std::process::exit(code);
}
