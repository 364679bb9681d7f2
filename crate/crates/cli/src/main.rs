use std::process::ExitCode;

fn main() -> ExitCode {
    let code = match qcbundle_cli::parse_config(std::env::args_os()) {
        Ok(config) => qcbundle_cli::run_command(&config, &mut std::io::stdout().lock()),
        Err(err) => err.report(),
    };
    ExitCode::from(code)
}
