use std::io::Write;
use std::time::Instant;
use stableheat::drift::rotational_field;
use stableheat::series::{duhamel_solve, p1, p2, QuadConfig};
use stableheat::StableParams;

fn out(s: String) { println!("{s}"); std::io::stdout().flush().unwrap(); }

fn main() {
    let params = StableParams::new(1.5, 2).unwrap();
    let unit = rotational_field(1.5).unwrap();
    let x = [0.3, 0.0];
    let y = vec![-0.4, 0.5];
    let lean = QuadConfig { time_nodes: 8, space_res: 25, space_extent: 30.0, ..QuadConfig::default() };
    let mid = QuadConfig { time_nodes: 12, space_res: 33, space_extent: 40.0, ..QuadConfig::default() };
    let t0 = Instant::now();
    let v1l = p1(&params, &unit, 1.0, &x, &y, &lean).unwrap();
    out(format!("p1 lean {:.6e} +- {:.1e} ({:.2?})", v1l.value, v1l.error, t0.elapsed()));
    let t0 = Instant::now();
    let v1m = p1(&params, &unit, 1.0, &x, &y, &mid).unwrap();
    out(format!("p1 mid  {:.6e} +- {:.1e} ({:.2?})", v1m.value, v1m.error, t0.elapsed()));
    let t0 = Instant::now();
    let v2l = p2(&params, &unit, 1.0, &x, &y, &lean).unwrap();
    out(format!("p2 lean {:.6e} +- {:.1e} ({:.2?})", v2l.value, v2l.error, t0.elapsed()));
    let r = 0.05;
    let d = unit.clone().with_r(r);
    let t0 = Instant::now();
    let s1 = duhamel_solve(&params, &d, 1.0, &x, &[y.clone()], 2, Some(1.0), &lean).unwrap();
    out(format!("duhamel lean 2 terms ({:.2?}) p1 rel {:.3e} p2 rel {:.3e}",
        t0.elapsed(),
        (s1.terms[1][0].value - r * v1m.value).abs() / (r * v1m.value).abs(),
        (s1.terms[2][0].value - r * r * v2l.value).abs() / (r * r * v2l.value).abs()));
    let t0 = Instant::now();
    let s2 = duhamel_solve(&params, &d, 1.0, &x, &[y.clone()], 3, Some(1.0), &mid).unwrap();
    out(format!("duhamel mid 3 terms ({:.2?}) p1 rel {:.3e} p2 rel {:.3e} p3 {:.3e}",
        t0.elapsed(),
        (s2.terms[1][0].value - r * v1m.value).abs() / (r * v1m.value).abs(),
        (s2.terms[2][0].value - r * r * v2l.value).abs() / (r * r * v2l.value).abs(),
        s2.terms[3][0].value));
}
