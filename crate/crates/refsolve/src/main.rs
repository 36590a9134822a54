use std::process::ExitCode;

use engiweave::interchange::{parse_interchange, write_solution_file};

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [model, solution] = &args[..] else {
        eprintln!("usage: engiweave-refsolve <model.ewm> <solution.txt>");
        return ExitCode::from(2);
    };
    let text = match std::fs::read_to_string(model) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read {model}: {e}");
            return ExitCode::from(1);
        }
    };
    let m = match parse_interchange(&text) {
        Ok(m) => m,
        Err(e) => {
            eprintln!("{model}: {e}");
            return ExitCode::from(1);
        }
    };
    let out = refsolve::solve_interchange(&m);
    if let Err(e) = std::fs::write(solution, write_solution_file(&out)) {
        eprintln!("cannot write {solution}: {e}");
        return ExitCode::from(1);
    }
    ExitCode::SUCCESS
}
