//! Fixtures shared by the kernel benchmarks.

use std::sync::Arc;

use eigenpath::paths::exp_path;
use eigenpath::{CVector, Generator, GroverInstance, Schedule, SharedPath};

/// Jump generator of the exponentiated Grover path (reduced space) at a
/// constant rate, with its initial state.
pub fn grover_jump(n: usize, rate: f64) -> eigenpath::Result<(Generator, CVector)> {
    let inst = GroverInstance::new(n, vec![0])?;
    let source = Arc::new(inst.reduced_path()?.affine(0.5, 1.0)?);
    let u: SharedPath = Arc::new(exp_path(source)?);
    let gen = Generator::jump(u, Schedule::constant(rate)?)?;
    let p0 = gen.projector(0.0)?;
    let k = (0..p0.nrows())
        .max_by(|&a, &b| p0[(a, a)].re.total_cmp(&p0[(b, b)].re))
        .expect("nonempty projector");
    let psi = p0.column(k).into_owned();
    let norm = psi.norm();
    Ok((gen, psi.unscale(norm)))
}
