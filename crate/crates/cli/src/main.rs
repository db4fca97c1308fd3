use accel_eval_cli::commands::Cli;
use clap::Parser;

fn main() {
    let cli = Cli::parse();
    let code = match cli.command.execute() {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {f}");
            f.code
        }
    };
    std::process::exit(code);
}
