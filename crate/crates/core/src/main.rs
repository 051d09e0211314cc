use clap::Parser;
use weightforge::cli::{run, Cli};

fn main() {
    let cli = Cli::parse();
    if let Ok(v) = std::env::var("WEIGHTFORGE_THREADS") {
        match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    eprintln!("warning: could not size the thread pool: {e}");
                }
            }
            _ => eprintln!("warning: ignoring WEIGHTFORGE_THREADS={v:?}"),
        }
    }
    match run(cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(2);
        }
    }
}
