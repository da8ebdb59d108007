//! The built-in self-checks.

fn main() -> sparsetrain::Result<()> {
    for r in sparsetrain::verify::run_all(1)? {
        println!("{r}");
    }
    Ok(())
}
