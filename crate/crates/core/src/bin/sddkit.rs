use std::process::ExitCode;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let r = sddkit::cli::run(std::env::args_os());
    if let Some(msg) = &r.message {
        if r.code == 0 {
            print!("{msg}");
        } else {
            eprint!("{msg}");
        }
    }
    if let Some(v) = &r.payload {
        println!("{}", serde_json::to_string_pretty(v).unwrap_or_else(|_| v.to_string()));
    }
    ExitCode::from(r.code as u8)
}
