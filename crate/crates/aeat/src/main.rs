fn main() {
    // CLI wired up in cli module; placeholder until subcommands land.
}
