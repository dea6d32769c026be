use std::process::ExitCode;

fn main() -> ExitCode {
    match cim_cli::run_cli(std::env::args_os()) {
        Ok(code) => ExitCode::from(code.clamp(0, 255) as u8),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}
