fn main() -> std::process::ExitCode {
    rwtrack::app::main()
}
