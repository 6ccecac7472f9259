fn main() {
    let env: Vec<(String, String)> = std::env::vars().collect();
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    let code = flatsim_cli::run_cli(std::env::args_os(), &env, &mut stdout.lock(), &mut stderr.lock());
    std::process::exit(code);
}
