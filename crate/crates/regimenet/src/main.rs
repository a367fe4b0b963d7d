fn main() {
    let result = regimenet::cli::run_with_args(std::env::args_os());
    if let Err(err) = result {
        match err {
            regimenet::cli::CliError::Usage(e) => e.exit(),
            other => {
                eprintln!("error: {other}");
                std::process::exit(other.exit_code());
            }
        }
    }
}
