use clap::error::ErrorKind;
use clap::Parser;

fn fail(class: &str, message: &str, code: i32) -> ! {
    let body = serde_json::json!({ "error_class": class, "message": message });
    eprintln!("{body}");
    std::process::exit(code);
}

fn main() {
    let cli = match angof_cli::Cli::try_parse() {
        Ok(c) => c,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) if e.kind() == ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => e.exit(),
        Err(e) => fail("invalid_config", e.to_string().trim(), 2),
    };
    match angof_cli::run(&cli) {
        Ok(code) => std::process::exit(code),
        Err(e) => fail(e.class(), &e.to_string(), e.exit_code()),
    }
}
