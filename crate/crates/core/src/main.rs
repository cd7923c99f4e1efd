use std::process::ExitCode;

fn main() -> ExitCode {
    match corgan::cli::run(std::env::args_os()) {
        Ok(_) => ExitCode::SUCCESS,
        Err(e) => match e.downcast_ref::<clap::Error>() {
            Some(ce) => ce.exit(),
            None => {
                eprintln!("error: {e:#}");
                ExitCode::FAILURE
            }
        },
    }
}
